#include "ctxintel/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <unordered_set>

#include "ctxintel/retrieval.hpp"
#include "ctxintel/text.hpp"

namespace ctxintel {

namespace {

const std::vector<PromptTemplate>& templates() {
    static const std::vector<PromptTemplate> kTemplates = {
        {TemplateId::NerExtraction,
         "You are a named entity recognition (NER) tool. Given the following classes, perform NER "
         "for the provided Input text.\n"
         "Classes: {classes} ...",
         "Respond with a single flat JSON object mapping a class name to the entity text found, "
         "for example {\"device\": \"<entity>\"}. Use only the listed classes and omit classes "
         "without an entity.\n\n"
         "Input Threat Intelligence:\n"
         "{input}\n\n"
         "Output Keywords:\n",
         {"classes", "input"}},
        {TemplateId::Contextualize,
         "You are an honest network security analyst. Given public threat intelligence reports "
         "fetched from trusted cybersecurity sources and organizational infrastructure and "
         "operations details. Generate a cyber threat intelligence report with all details, "
         "including the impact and mitigation strategies. Do not include any information that is "
         "not provided as additional knowledge.",
         "Retrieved Global Knowledge:\n"
         "{global_knowledge}\n\n"
         "Retrieved Local Knowledge:\n"
         "{local_knowledge}\n\n"
         "Contextualized Completion:\n",
         {"global_knowledge", "local_knowledge"}},
        {TemplateId::CorrectnessJudge,
         "You are a strict evaluator of cyber threat intelligence reports. Compare the candidate "
         "report against the reference report written by a subject matter expert.\n"
         "Criterion: factual consistency with the reference. Every claim in the candidate must be "
         "supported by the reference, and the reference's key facts (affected asset, impact, "
         "mitigation, timing) must be present in the candidate.\n"
         "Scale: 1 = contradicts or misses the reference entirely; 2 = mostly incorrect; "
         "3 = partially correct with notable errors or omissions; 4 = correct with minor "
         "omissions; 5 = fully consistent and complete.\n"
         "Respond with a single integer from 1 to 5 and nothing else.",
         "Reference Report:\n"
         "{ground_truth}\n\n"
         "Candidate Report:\n"
         "{answer}\n\n"
         "Score:\n",
         {"ground_truth", "answer"}},
    };
    return kTemplates;
}

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> kWords = {
        "a",    "an",   "and",  "are",  "as",   "at",   "be",   "by",    "can",  "could",
        "for",  "from", "has",  "have", "in",   "into", "is",   "it",    "its",  "may",
        "might", "of",  "on",   "or",   "such", "that", "the",  "their", "there", "these",
        "this", "to",   "via",  "was",  "were", "which", "will", "with", "within", "would"};
    return kWords;
}

bool is_slot_char(char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_'; }

// Turns an HTTP failure into the gateway error family; 400s mentioning the
// context window are reported as overflow.
[[noreturn]] void throw_http_failure(const HttpResponse& r, std::string_view what) {
    if (r.status == 400 && (r.body.find("context_length") != std::string::npos ||
                            r.body.find("maximum context") != std::string::npos))
        throw ContextOverflow(std::string(what) + ": " + r.body);
    if (r.transport_failed())
        throw BackendUnavailable(std::string(what) + ": " + r.error);
    throw BackendUnavailable(std::string(what) + ": HTTP " + std::to_string(r.status) + " " +
                             r.body.substr(0, 512));
}

HttpResponse send_with_retries(HttpTransport& transport, Clock& clock, const HttpRequest& request,
                               int max_attempts, std::chrono::milliseconds backoff) {
    HttpResponse response;
    for (int attempt = 1; attempt <= std::max(1, max_attempts); ++attempt) {
        response = transport.send(request);
        if (!response.transient()) return response;
        if (attempt < max_attempts) {
            clock.sleep_for(backoff);
            backoff *= 2;
        }
    }
    return response;
}

}  // namespace

std::string_view to_string(TemplateId id) {
    switch (id) {
        case TemplateId::NerExtraction: return "ner_extraction";
        case TemplateId::Contextualize: return "contextualize";
        case TemplateId::CorrectnessJudge: return "correctness_judge";
    }
    return "unknown";
}

TemplateId parse_template_id(std::string_view name) {
    for (const auto& t : templates())
        if (to_string(t.id) == name) return t.id;
    throw UnknownTemplate("unknown prompt template '" + std::string(name) + "'");
}

const PromptTemplate& prompt_template(TemplateId id) {
    for (const auto& t : templates())
        if (t.id == id) return t;
    throw UnknownTemplate("unknown prompt template id");
}

std::string render_prompt(TemplateId id, const Bindings& bindings) {
    const auto& tmpl = prompt_template(id);
    for (const auto& slot : tmpl.slot_names)
        if (!bindings.contains(slot))
            throw MissingSlot("template " + std::string(to_string(id)) + " requires slot '" + slot + "'");
    for (const auto& [name, _] : bindings)
        if (std::find(tmpl.slot_names.begin(), tmpl.slot_names.end(), name) == tmpl.slot_names.end())
            throw UnexpectedSlot("template " + std::string(to_string(id)) + " has no slot '" + name + "'");

    const std::string source = tmpl.instruction + "\n\n" + tmpl.body;
    std::string out;
    out.reserve(source.size() + 256);
    std::size_t i = 0;
    while (i < source.size()) {
        if (source[i] == '{') {
            std::size_t j = i + 1;
            while (j < source.size() && is_slot_char(source[j])) ++j;
            if (j < source.size() && source[j] == '}' && j > i + 1) {
                const auto it = bindings.find(source.substr(i + 1, j - i - 1));
                if (it != bindings.end()) {
                    out += it->second;
                    i = j + 1;
                    continue;
                }
            }
        }
        out.push_back(source[i++]);
    }
    return out;
}

std::string render_prompt(std::string_view template_name, const Bindings& bindings) {
    return render_prompt(parse_template_id(template_name), bindings);
}

std::string bindings_digest(const Bindings& bindings) {
    return text::sha256_hex(Json(bindings).dump());
}

std::size_t estimate_tokens(std::string_view t) { return (t.size() + 3) / 4; }

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
    if (dimension_ == 0) throw InvalidArgument("embedding dimension must be positive");
}

std::string HashingEmbedder::model_id() const {
    return "offline-hash-" + std::to_string(dimension_) + "-v1";
}

std::size_t HashingEmbedder::bucket(std::string_view token) const {
    return static_cast<std::size_t>(text::fnv1a64(token) % dimension_);
}

Vector HashingEmbedder::embed_one(std::string_view input) const {
    Vector v(dimension_, 0.0);
    for (const auto& token : text::tokenize(input)) {
        if (stopwords().contains(token)) continue;
        const auto h = text::fnv1a64(token);
        v[h % dimension_] += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    double norm = retrieval::l2_norm(v);
    if (norm == 0.0) {
        v[text::fnv1a64(input) % dimension_] = 1.0;
        norm = 1.0;
    }
    for (auto& x : v) x /= norm;
    return v;
}

std::vector<Vector> HashingEmbedder::embed(std::span<const std::string> texts) {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

ScriptedCompletionBackend::ScriptedCompletionBackend(std::string model_id,
                                                     std::size_t context_budget_tokens)
    : model_id_(std::move(model_id)), budget_(context_budget_tokens) {}

std::shared_ptr<ScriptedCompletionBackend> ScriptedCompletionBackend::from_json(const Json& script) {
    auto backend = std::make_shared<ScriptedCompletionBackend>(
        script.value("model_id", std::string("scripted-offline")),
        script.value("context_budget_tokens", std::size_t{32768}));
    for (const auto& entry : script.value("responses", Json::array())) {
        const auto id = parse_template_id(entry.at("template").get<std::string>());
        auto text = entry.at("text").get<std::string>();
        if (entry.contains("bindings_digest")) {
            backend->add_response(id, entry.at("bindings_digest").get<std::string>(), std::move(text));
        } else {
            std::vector<std::string> needles;
            if (entry.contains("when_contains")) {
                const auto& w = entry.at("when_contains");
                if (w.is_string()) needles.push_back(w.get<std::string>());
                else needles = w.get<std::vector<std::string>>();
            }
            backend->add_rule(id, std::move(needles), std::move(text));
        }
    }
    const auto defaults = script.value("defaults", Json::object());
    for (auto it = defaults.begin(); it != defaults.end(); ++it)
        backend->set_default(parse_template_id(it.key()), it.value().get<std::string>());
    return backend;
}

std::shared_ptr<ScriptedCompletionBackend> ScriptedCompletionBackend::load(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot read completion script " + path.string());
    const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return from_json(parse_json(raw));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("", std::string("completion script ") + path.string() + ": " + e.what());
    }
}

void ScriptedCompletionBackend::add_response(TemplateId id, std::string digest, std::string text) {
    exact_[{id, std::move(digest)}] = std::move(text);
}

void ScriptedCompletionBackend::add_rule(TemplateId id, std::vector<std::string> when_contains,
                                         std::string text) {
    rules_.push_back({id, std::move(when_contains), std::move(text)});
}

void ScriptedCompletionBackend::set_default(TemplateId id, std::string text) {
    defaults_[id] = std::move(text);
}

GenerationResult ScriptedCompletionBackend::complete(const GenerationRequest& request) {
    ++calls_;
    auto result = [&](const std::string& text) {
        return GenerationResult{text,
                                {static_cast<int>(estimate_tokens(request.prompt)),
                                 static_cast<int>(estimate_tokens(text))},
                                std::chrono::milliseconds{0},
                                model_id_};
    };
    if (const auto it = exact_.find({request.template_id, request.bindings_digest}); it != exact_.end())
        return result(it->second);
    for (const auto& rule : rules_) {
        if (rule.id != request.template_id) continue;
        const bool all = std::all_of(rule.when_contains.begin(), rule.when_contains.end(),
                                     [&](const std::string& needle) {
                                         return request.prompt.find(needle) != std::string::npos;
                                     });
        if (all) return result(rule.text);
    }
    if (const auto it = defaults_.find(request.template_id); it != defaults_.end())
        return result(it->second);
    return result("[scripted placeholder] no fixture response for " +
                  std::string(to_string(request.template_id)) + " " +
                  request.bindings_digest.substr(0, 12));
}

RemoteBackendConfig RemoteBackendConfig::from_env() {
    RemoteBackendConfig c;
    auto get = [](const char* name) -> std::string {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    c.base_url = get("LLM_BASE_URL");
    c.api_key = get("LLM_API_KEY");
    c.model_id = get("LLM_MODEL_ID");
    c.embed_model_id = get("EMBED_MODEL_ID");
    return c;
}

std::string join_api_url(std::string_view base_url, std::string_view api_path) {
    std::string base(base_url);
    while (!base.empty() && base.back() == '/') base.pop_back();
    if (base.size() >= 3 && base.compare(base.size() - 3, 3, "/v1") == 0) base.resize(base.size() - 3);
    return base + std::string(api_path);
}

RemoteCompletionBackend::RemoteCompletionBackend(RemoteBackendConfig config,
                                                 std::shared_ptr<HttpTransport> transport,
                                                 std::shared_ptr<Clock> clock)
    : config_(std::move(config)), transport_(std::move(transport)), clock_(std::move(clock)) {
    if (config_.base_url.empty()) throw InvalidArgument("LLM base url is not configured");
    if (config_.model_id.empty()) throw InvalidArgument("LLM model id is not configured");
}

GenerationResult RemoteCompletionBackend::complete(const GenerationRequest& request) {
    const std::string model = request.model_id.empty() ? config_.model_id : request.model_id;
    Json body{{"model", model},
              {"messages", Json::array({Json{{"role", "user"}, {"content", request.prompt}}})}};
    if (request.decoding.temperature) body["temperature"] = *request.decoding.temperature;
    if (request.decoding.max_tokens) body["max_tokens"] = *request.decoding.max_tokens;

    HttpRequest http{"POST", join_api_url(config_.base_url, "/v1/chat/completions"),
                     {{"Content-Type", "application/json"}}, body.dump(), config_.timeout};
    if (!config_.api_key.empty()) http.headers.emplace_back("Authorization", "Bearer " + config_.api_key);

    const auto started = clock_->now();
    const auto response =
        send_with_retries(*transport_, *clock_, http, config_.max_attempts, config_.initial_backoff);
    if (response.status != 200) throw_http_failure(response, "chat completion");

    GenerationResult result;
    try {
        const auto j = Json::parse(response.body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        result.text = content.is_null() ? std::string() : content.get<std::string>();
        if (j.contains("usage")) {
            result.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
            result.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
        }
        result.model_id = j.value("model", model);
    } catch (const nlohmann::json::exception& e) {
        throw BackendUnavailable(std::string("malformed chat completion response: ") + e.what());
    }
    result.latency = clock_->now() - started;
    return result;
}

RemoteEmbeddingBackend::RemoteEmbeddingBackend(RemoteBackendConfig config,
                                               std::shared_ptr<HttpTransport> transport,
                                               std::shared_ptr<Clock> clock)
    : config_(std::move(config)), transport_(std::move(transport)), clock_(std::move(clock)),
      dimension_(config_.embed_dimension) {
    if (config_.base_url.empty()) throw InvalidArgument("embedding base url is not configured");
    if (config_.embed_model_id.empty()) throw InvalidArgument("embedding model id is not configured");
}

std::vector<Vector> RemoteEmbeddingBackend::embed(std::span<const std::string> texts) {
    const Json body{{"model", config_.embed_model_id}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
    HttpRequest http{"POST", join_api_url(config_.base_url, "/v1/embeddings"),
                     {{"Content-Type", "application/json"}}, body.dump(), config_.timeout};
    if (!config_.api_key.empty()) http.headers.emplace_back("Authorization", "Bearer " + config_.api_key);

    const auto response =
        send_with_retries(*transport_, *clock_, http, config_.max_attempts, config_.initial_backoff);
    if (response.status != 200) throw_http_failure(response, "embeddings");

    std::vector<Vector> out(texts.size());
    try {
        const auto j = Json::parse(response.body);
        const auto& data = j.at("data");
        if (data.size() != texts.size()) throw BackendUnavailable("embeddings response has wrong item count");
        for (std::size_t i = 0; i < data.size(); ++i) {
            const auto index = data[i].value("index", i);
            if (index >= out.size()) throw BackendUnavailable("embeddings response index out of range");
            out[index] = data[i].at("embedding").get<Vector>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw BackendUnavailable(std::string("malformed embeddings response: ") + e.what());
    }

    std::lock_guard lock(mu_);
    for (const auto& v : out) {
        if (!dimension_) dimension_ = v.size();
        if (v.size() != *dimension_)
            throw BackendUnavailable("embedding dimension " + std::to_string(v.size()) +
                                     " differs from " + std::to_string(*dimension_));
    }
    return out;
}

std::size_t RemoteEmbeddingBackend::dimension() {
    {
        std::lock_guard lock(mu_);
        if (dimension_) return *dimension_;
    }
    const std::vector<std::string> probe{"dimension probe"};
    return embed(probe).front().size();
}

GenerationGateway::GenerationGateway(std::shared_ptr<CompletionBackend> completion,
                                     std::shared_ptr<EmbeddingBackend> embedding,
                                     std::shared_ptr<Clock> clock, GatewayOptions options)
    : completion_(std::move(completion)), embedding_(std::move(embedding)), clock_(std::move(clock)),
      options_(std::move(options)), slots_(std::max<std::ptrdiff_t>(1, options_.max_in_flight)) {}

GenerationResult GenerationGateway::complete(GenerationRequest request) {
    if (request.model_id.empty()) request.model_id = completion_->model_id();
    const auto tokens = estimate_tokens(request.prompt);
    if (tokens > completion_->context_budget_tokens()) {
        log_exchange(request, nullptr, "ContextOverflow");
        throw ContextOverflow("prompt of ~" + std::to_string(tokens) + " tokens exceeds budget of " +
                              std::to_string(completion_->context_budget_tokens()));
    }

    ++completion_calls_;
    slots_.acquire();
    GenerationResult result;
    try {
        const auto started = clock_->now();
        result = completion_->complete(request);
        if (result.latency == std::chrono::milliseconds{0}) result.latency = clock_->now() - started;
    } catch (const Error& e) {
        slots_.release();
        log_exchange(request, nullptr, e.what());
        throw;
    }
    slots_.release();
    if (result.model_id.empty()) result.model_id = request.model_id;
    log_exchange(request, &result, {});
    if (text::trim(result.text).empty())
        throw EmptyCompletion("backend returned an empty completion for " +
                              std::string(to_string(request.template_id)));
    return result;
}

std::vector<Vector> GenerationGateway::embed(std::span<const std::string> texts) {
    if (texts.empty()) throw InvalidArgument("embed requires at least one text");
    ++embed_calls_;
    slots_.acquire();
    std::vector<Vector> out;
    try {
        out = embedding_->embed(texts);
    } catch (...) {
        slots_.release();
        throw;
    }
    slots_.release();
    if (out.size() != texts.size()) throw BackendUnavailable("embedding backend returned wrong count");
    return out;
}

Vector GenerationGateway::embed_one(std::string_view t) {
    const std::vector<std::string> one{std::string(t)};
    return embed(one).front();
}

std::size_t GenerationGateway::dimension() { return embedding_->dimension(); }

void GenerationGateway::log_exchange(const GenerationRequest& request, const GenerationResult* result,
                                     std::string_view error) {
    if (!options_.exchange_log) return;
    Json record{{"template", to_string(request.template_id)},
                {"model_id", request.model_id},
                {"requested_at", format_timestamp(clock_->now())},
                {"prompt", request.prompt}};
    if (result) {
        record["response"] = result->text;
        record["usage"] = {{"prompt_tokens", result->usage.prompt_tokens},
                           {"completion_tokens", result->usage.completion_tokens}};
    }
    if (!error.empty()) record["error"] = error;
    std::string line = record.dump();
    for (const auto& secret : options_.redact) {
        if (secret.empty()) continue;
        for (std::size_t pos = line.find(secret); pos != std::string::npos; pos = line.find(secret, pos + 3))
            line.replace(pos, secret.size(), "***");
    }
    std::lock_guard lock(log_mu_);
    if (const auto dir = options_.exchange_log->parent_path(); !dir.empty())
        std::filesystem::create_directories(dir);
    std::ofstream out(*options_.exchange_log, std::ios::app | std::ios::binary);
    out << line << '\n';
}

}  // namespace ctxintel
