#include "ctxintel/agent.hpp"

#include <algorithm>
#include <fstream>

#include "ctxintel/text.hpp"

namespace ctxintel {

namespace fs = std::filesystem;

std::string_view to_string(RunOutcome::Kind kind) {
    switch (kind) {
        case RunOutcome::Kind::Contextualized: return "contextualized";
        case RunOutcome::Kind::Discarded: return "discarded";
        case RunOutcome::Kind::Failed: return "failed";
    }
    return "failed";
}

void to_json(Json& j, const GateResult& v) {
    j = Json{{"pass", v.pass}, {"score", v.score}, {"initial_hits", v.initial_hits}};
}

void to_json(Json& j, const IterationRecord& v) {
    j = Json{{"iteration", v.iteration},
             {"queries", v.queries},
             {"entities", v.entities},
             {"added_global", v.added_global},
             {"added_local", v.added_local},
             {"global_queries", v.global_logs},
             {"errors", v.errors},
             {"started_at", format_timestamp(v.started_at)},
             {"elapsed_ms", v.elapsed.count()}};
}

void to_json(Json& j, const RunTrace& v) {
    j = Json{{"trigger_id", v.trigger_id},
             {"gate", {{"score", v.gate_score}, {"threshold", v.relevance_threshold}, {"passed", v.gate_passed}}},
             {"initial_hits", v.initial_hits},
             {"initial_local", v.initial_local},
             {"iterations", v.iterations},
             {"stop_reason", v.stop_reason},
             {"started_at", format_timestamp(v.started_at)},
             {"finished_at", format_timestamp(v.finished_at)}};
}

void to_json(Json& j, const RunOutcome& v) {
    j = Json{{"outcome", to_string(v.kind)}};
    switch (v.kind) {
        case RunOutcome::Kind::Contextualized: j["intel"] = *v.intel; break;
        case RunOutcome::Kind::Discarded:
            j["reason"] = v.reason;
            j["gate_score"] = v.gate_score;
            break;
        case RunOutcome::Kind::Failed:
            j["error"] = {{"kind", v.failure ? v.failure->kind : "unknown"},
                          {"message", v.failure ? v.failure->message : ""}};
            break;
    }
}

void to_json(Json& j, const RenderedPrompt& v) {
    j = Json{{"template", to_string(v.template_id)}, {"iteration", v.iteration}, {"prompt", v.text}};
}

namespace {

std::string normalize_quotes(std::string_view s) {
    static const std::pair<std::string_view, std::string_view> kMap[] = {
        {"“", "\""}, {"”", "\""}, {"„", "\""}, {"‘", "'"}, {"’", "'"}};
    std::string out(s);
    for (const auto& [from, to] : kMap)
        for (auto pos = out.find(from); pos != std::string::npos; pos = out.find(from, pos + to.size()))
            out.replace(pos, from.size(), to);
    return out;
}

std::string normalize_label(std::string_view label) {
    std::string out = text::to_lower(text::trim(label));
    std::replace(out.begin(), out.end(), ' ', '_');
    std::replace(out.begin(), out.end(), '-', '_');
    return out;
}

std::string chunk_label(const KnowledgeChunk& c) {
    return std::string(display_name(c.source_kind)) + " (" + c.chunk_id + ")";
}

}  // namespace

std::vector<Entity> parse_ner_output(std::string_view output, const std::vector<std::string>& classes) {
    const std::string cleaned = normalize_quotes(output);
    const auto open = cleaned.find('{');
    const auto close = cleaned.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open)
        throw NerParseError("no JSON object in NER output");
    nlohmann::ordered_json obj;  // keeps the model's class order
    try {
        obj = nlohmann::ordered_json::parse(cleaned.substr(open, close - open + 1));
    } catch (const nlohmann::json::exception& e) {
        throw NerParseError(std::string("NER output is not valid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw NerParseError("NER output is not a mapping");

    std::vector<std::string> allowed;
    for (const auto& c : classes) allowed.push_back(normalize_label(c));

    std::vector<Entity> entities;
    for (const auto& [key, value] : obj.items()) {
        const auto label = normalize_label(key);
        if (std::find(allowed.begin(), allowed.end(), label) == allowed.end()) continue;
        auto take = [&](const nlohmann::ordered_json& v) {
            if (!v.is_string()) throw NerParseError("value for '" + key + "' is not a string");
            const auto raw = v.get<std::string>();
            const auto surface = text::trim(raw);
            if (!surface.empty()) entities.push_back({label, std::string(surface)});
        };
        if (value.is_array())
            for (const auto& v : value) take(v);
        else if (!value.is_null())
            take(value);
    }
    return entities;
}

std::string render_state_for_ner(const KnowledgeState& state) {
    std::string out;
    for (const auto& g : state.global_docs()) out += g.report_id + ": " + std::string(text::trim(g.description)) + "\n";
    for (const auto& c : state.local_chunks()) out += c.chunk_id + ": " + std::string(text::trim(c.text)) + "\n";
    if (!out.empty()) out.pop_back();
    return out;
}

Agent::Agent(EngineConfig config, std::shared_ptr<GlobalRepository> global,
             std::shared_ptr<const LocalKnowledgeStore> store, std::shared_ptr<GenerationGateway> gateway,
             std::shared_ptr<Clock> clock)
    : config_(validate_config(config)),
      global_(std::move(global)),
      store_(std::move(store)),
      gateway_(std::move(gateway)),
      clock_(std::move(clock)) {}

GateResult Agent::relevance_gate(const ThreatReport& trigger) const {
    GateResult gate;
    if (store_->chunk_count() == 0) return gate;
    const auto embedding = gateway_->embed_one(trigger.description);
    gate.score = store_->top_relevance(trigger.description, embedding, config_);
    gate.pass = gate.score >= config_.relevance_threshold;
    if (gate.pass) gate.initial_hits = store_->ensemble_search(trigger.description, embedding, config_);
    return gate;
}

QuerySet Agent::generate_queries(const KnowledgeState& state, const std::vector<std::string>& already_queried,
                                 std::vector<RenderedPrompt>* prompts) const {
    if (state.size() == 0) throw InvalidArgument("knowledge state is empty");
    std::string classes;
    for (const auto& c : config_.entity_classes) classes += (classes.empty() ? "" : ", ") + c;
    Bindings bindings{{"classes", classes}, {"input", render_state_for_ner(state)}};
    GenerationRequest request;
    request.template_id = TemplateId::NerExtraction;
    request.prompt = render_prompt(TemplateId::NerExtraction, bindings);
    request.bindings_digest = bindings_digest(bindings);
    if (prompts) prompts->push_back({request.template_id, state.iteration(), request.prompt});

    auto first = gateway_->complete(request);
    std::vector<Entity> entities;
    try {
        entities = parse_ner_output(first.text, config_.entity_classes);
    } catch (const NerParseError&) {
        GenerationRequest retry = request;
        retry.prompt += "\n\nThe previous answer could not be parsed:\n" + first.text +
                        "\n\nReturn only the mapping, as one flat JSON object and nothing else.\n";
        bindings["previous_output"] = first.text;
        retry.bindings_digest = bindings_digest(bindings);
        if (prompts) prompts->push_back({retry.template_id, state.iteration(), retry.prompt});
        const auto second = gateway_->complete(retry);
        try {
            entities = parse_ner_output(second.text, config_.entity_classes);
        } catch (const NerParseError& e) {
            throw NerParseError(std::string("NER output unparsable after re-ask: ") + e.what());
        }
    }
    return make_query_set(entities, already_queried);
}

std::vector<RankedHit> Agent::local_search(std::string_view text, std::span<const double> embedding) const {
    const auto fused = store_->ensemble_search(text, embedding, config_);
    if (fused.empty()) return {};
    return store_->mmr_rerank(fused, embedding, config_.mmr_lambda, config_.fused_top_k);
}

int Agent::admit_local(KnowledgeState& state, const std::vector<RankedHit>& hits, std::span<const double> query,
                       std::vector<std::string>* added) const {
    int count = 0;
    for (const auto& hit : hits) {
        if (state.has_local(hit.chunk_id)) continue;
        if (store_->relevance(hit.chunk_id, query) < config_.local_min_relevance) continue;
        auto chunk = store_->chunk(hit.chunk_id);
        if (!chunk) continue;
        if (state.add_local(std::move(*chunk))) {
            ++count;
            if (added) added->push_back(hit.chunk_id);
        }
    }
    return count;
}

ExpandResult Agent::expand_once(KnowledgeState& state, const QuerySet& queries) const {
    ExpandResult out;
    if (queries.empty()) return out;

    auto global = global_->search_keywords(queries, config_.global_fetch_limit);
    std::string new_global_text;
    for (auto& report : global.reports) {
        const std::string id = report.report_id;
        const std::string desc = report.description;
        if (state.add_global(std::move(report))) {
            out.added_global_ids.push_back(id);
            new_global_text += (new_global_text.empty() ? "" : "\n") + desc;
        }
    }
    for (const auto& log : global.logs)
        if (log.error) out.errors.push_back("global search '" + log.keyword + "': " + *log.error);
    out.global_logs = std::move(global.logs);

    if (store_->chunk_count() > 0) {
        std::vector<std::string> seeds = queries.keywords;
        if (!new_global_text.empty()) seeds.push_back(new_global_text);
        const auto embeddings = gateway_->embed(seeds);
        for (std::size_t i = 0; i < seeds.size(); ++i)
            admit_local(state, local_search(seeds[i], embeddings[i]), embeddings[i], &out.added_local_ids);
    }
    out.added_global = static_cast<int>(out.added_global_ids.size());
    out.added_local = static_cast<int>(out.added_local_ids.size());
    return out;
}

ContextualizedIntel Agent::contextualize(const KnowledgeState& state, std::vector<RenderedPrompt>* prompts) const {
    ContextualizedIntel intel;
    std::string global_block;
    for (const auto& g : state.global_docs()) {
        global_block += "-- " + g.report_id + ": " + std::string(text::trim(g.description)) + "\n";
        intel.cited_global.push_back(g.report_id);
    }
    std::string local_block;
    for (const auto& c : state.local_chunks()) {
        local_block += "-- " + chunk_label(c) + ": " + std::string(text::trim(c.text)) + "\n";
        intel.cited_local.push_back(c.chunk_id);
    }
    if (!global_block.empty()) global_block.pop_back();
    if (!local_block.empty()) local_block.pop_back();
    const Bindings bindings{{"global_knowledge", global_block}, {"local_knowledge", local_block}};

    GenerationRequest request;
    request.template_id = TemplateId::Contextualize;
    request.prompt = render_prompt(TemplateId::Contextualize, bindings);
    request.bindings_digest = bindings_digest(bindings);
    if (prompts) prompts->push_back({request.template_id, state.iteration(), request.prompt});
    const auto result = gateway_->complete(request);

    intel.text = result.text;
    intel.trigger_id = state.trigger_id();
    intel.model_id = result.model_id;
    intel.generated_at = clock_->now();
    intel.iterations_used = state.iteration();
    return intel;
}

RunResult Agent::run(const ThreatReport& trigger) const {
    RunResult result;
    auto& trace = result.trace;
    trace.trigger_id = trigger.report_id;
    trace.relevance_threshold = config_.relevance_threshold;
    trace.started_at = clock_->now();

    auto fail = [&](std::string kind, std::string message) {
        result.outcome = RunOutcome{};
        result.outcome.kind = RunOutcome::Kind::Failed;
        result.outcome.failure = RunFailure{std::move(kind), std::move(message)};
        trace.stop_reason = "failed";
        trace.finished_at = clock_->now();
    };

    try {
        result.state.emplace(trigger);
        auto& state = *result.state;

        const auto gate = relevance_gate(trigger);
        trace.gate_score = gate.score;
        trace.gate_passed = gate.pass;
        trace.initial_hits = gate.initial_hits;
        if (!gate.pass) {
            result.outcome.kind = RunOutcome::Kind::Discarded;
            result.outcome.reason = "below relevance threshold";
            result.outcome.gate_score = gate.score;
            trace.stop_reason = "discarded";
            trace.finished_at = clock_->now();
            return result;
        }
        if (!gate.initial_hits.empty()) {
            const auto embedding = gateway_->embed_one(trigger.description);
            admit_local(state, gate.initial_hits, embedding, &trace.initial_local);
        }

        std::vector<std::string> queried;
        trace.stop_reason = "max_iterations";
        while (state.iteration() < config_.max_iterations) {
            state.advance_iteration();
            IterationRecord record;
            record.iteration = state.iteration();
            record.started_at = clock_->now();

            const auto queries = generate_queries(state, queried, &result.prompts);
            record.queries = queries.keywords;
            record.entities = queries.entities;
            queried.insert(queried.end(), queries.keywords.begin(), queries.keywords.end());

            auto expanded = expand_once(state, queries);
            record.added_global = std::move(expanded.added_global_ids);
            record.added_local = std::move(expanded.added_local_ids);
            record.global_logs = std::move(expanded.global_logs);
            record.errors = std::move(expanded.errors);
            record.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - record.started_at);
            const bool nothing_new = record.added_global.empty() && record.added_local.empty();
            trace.iterations.push_back(std::move(record));
            if (queries.empty()) {
                trace.stop_reason = "no_queries";
                break;
            }
            if (nothing_new) {
                trace.stop_reason = "no_new_knowledge";
                break;
            }
        }

        result.outcome.intel = contextualize(state, &result.prompts);
        result.outcome.kind = RunOutcome::Kind::Contextualized;
        trace.finished_at = clock_->now();
    } catch (const Error& e) {
        fail(e.kind(), e.what());
    } catch (const std::exception& e) {
        fail("internal", e.what());
    }
    return result;
}

void write_run_artifacts(const fs::path& dir, const RunResult& result) {
    fs::create_directories(dir);
    auto write = [&](const std::string& name, const Json& j) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write " + (dir / name).string());
        out << j.dump(2) << '\n';
    };
    write("report.json", result.outcome);
    write("trace.json", result.trace);
    write("prompts.json", result.prompts);
    if (result.state) write("state.json", to_json(*result.state));
}

}  // namespace ctxintel
