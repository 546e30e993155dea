#include "ctxintel/app.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ctxintel/evaluation.hpp"
#include "ctxintel/text.hpp"

namespace ctxintel {

namespace fs = std::filesystem;

KeyValues parse_key_values(std::string_view content) {
    KeyValues out;
    std::size_t line_no = 0;
    std::istringstream in{std::string(content)};
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        const auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("line " + std::to_string(line_no), "expected `key = value`");
        const auto key = text::trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
        out.emplace_back(std::string(key), std::string(text::trim(t.substr(eq + 1))));
    }
    return out;
}

namespace {

bool parse_bool(std::string_view key, std::string_view v) {
    const auto s = text::to_lower(v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw ConfigError(std::string(key), "expected a boolean, got '" + std::string(v) + "'");
}

std::size_t parse_count(std::string_view key, std::string_view v) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || out == 0)
        throw ConfigError(std::string(key), "expected a positive integer, got '" + std::string(v) + "'");
    return out;
}

std::string one_of(std::string_view key, std::string_view v, std::initializer_list<std::string_view> allowed) {
    for (auto a : allowed)
        if (v == a) return std::string(v);
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
    throw ConfigError(std::string(key), "expected one of " + list + ", got '" + std::string(v) + "'");
}

std::optional<fs::path> optional_path(std::string_view v) {
    if (v.empty()) return std::nullopt;
    return fs::path(std::string(v));
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError(p.string(), "cannot read file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_json(const fs::path& p, const Json& j) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

std::string mask(const std::string& secret) { return secret.empty() ? "" : "***"; }

}  // namespace

void apply_setting(Settings& s, std::string_view key, std::string_view value) {
    auto& b = s.backends;
    if (key == "llm") b.llm = one_of(key, value, {"offline", "remote"});
    else if (key == "embedder") b.embedder = one_of(key, value, {"offline", "remote"});
    else if (key == "llm_base_url") b.llm_base_url = value;
    else if (key == "llm_api_key") b.llm_api_key = value;
    else if (key == "llm_model_id") b.llm_model_id = value;
    else if (key == "embed_model_id") b.embed_model_id = value;
    else if (key == "script") b.script = optional_path(value);
    else if (key == "feed") b.feed = one_of(key, value, {"stub", "nvd"});
    else if (key == "feed_fixtures") b.feed_fixtures = optional_path(value);
    else if (key == "nvd_base_url") b.nvd_base_url = value;
    else if (key == "nvd_api_key") b.nvd_api_key = value;
    else if (key == "cache_dir") b.cache_dir = optional_path(value);
    else if (key == "frozen_clock") b.frozen_clock = parse_bool(key, value);
    else if (key == "frozen_time") {
        if (!parse_timestamp(value))
            throw ConfigError("frozen_time", "not a UTC timestamp: '" + std::string(value) + "'");
        b.frozen_time = value;
    } else if (key == "debug_log") b.debug_log = parse_bool(key, value);
    else if (key == "workers") b.workers = parse_count(key, value);
    else if (key == "queue_depth") b.queue_depth = parse_count(key, value);
    else apply_config_setting(s.engine, key, value);
}

std::optional<std::string> process_env(const char* name) {
    if (const char* v = std::getenv(name)) return std::string(v);
    return std::nullopt;
}

Settings resolve_settings(const std::optional<fs::path>& config_file, const KeyValues& flags, const EnvLookup& env) {
    Settings s;
    if (config_file)
        for (const auto& [k, v] : parse_key_values(read_text(*config_file))) apply_setting(s, k, v);
    for (const auto& [k, v] : flags) apply_setting(s, k, v);
    static const std::pair<const char*, const char*> kEnv[] = {{"NVD_API_KEY", "nvd_api_key"},
                                                               {"LLM_BASE_URL", "llm_base_url"},
                                                               {"LLM_API_KEY", "llm_api_key"},
                                                               {"LLM_MODEL_ID", "llm_model_id"},
                                                               {"EMBED_MODEL_ID", "embed_model_id"}};
    for (const auto& [var, key] : kEnv)
        if (const auto v = env(var); v && !v->empty()) apply_setting(s, key, *v);
    validate_config(s.engine);
    return s;
}

Json settings_snapshot(const Settings& s) {
    const auto& b = s.backends;
    auto path_or_null = [](const std::optional<fs::path>& p) { return p ? Json(p->generic_string()) : Json(); };
    return Json{{"engine", s.engine},
                {"backends",
                 {{"llm", b.llm},
                  {"embedder", b.embedder},
                  {"llm_base_url", b.llm_base_url},
                  {"llm_api_key", mask(b.llm_api_key)},
                  {"llm_model_id", b.llm_model_id},
                  {"embed_model_id", b.embed_model_id},
                  {"script", path_or_null(b.script)},
                  {"feed", b.feed},
                  {"feed_fixtures", path_or_null(b.feed_fixtures)},
                  {"nvd_base_url", b.nvd_base_url},
                  {"nvd_api_key", mask(b.nvd_api_key)},
                  {"cache_dir", path_or_null(b.cache_dir)},
                  {"frozen_clock", b.frozen_clock},
                  {"frozen_time", b.frozen_clock ? Json(b.frozen_time) : Json()},
                  {"prompt_set", kPromptSetVersion}}}};
}

void Engine::open_index(const fs::path& dir, LocalKnowledgeStore::Mode mode) {
    store = LocalKnowledgeStore::open(dir, gateway, settings.engine.chunk_size, settings.engine.chunk_overlap, mode);
    agent = std::make_shared<Agent>(settings.engine, global, store, gateway, clock);
}

std::unique_ptr<Engine> build_engine(const Settings& settings, const EngineOverrides& overrides) {
    auto engine = std::make_unique<Engine>();
    engine->settings = settings;
    const auto& b = settings.backends;

    if (overrides.clock) engine->clock = overrides.clock;
    else if (b.frozen_clock) engine->clock = std::make_shared<ManualClock>(*parse_timestamp(b.frozen_time), true);
    else engine->clock = std::make_shared<SystemClock>();
    // Rate limiting and retry backoff need real time even when reports are stamped by a frozen clock.
    std::shared_ptr<Clock> wait_clock = overrides.clock ? overrides.clock : std::make_shared<SystemClock>();

    std::shared_ptr<HttpTransport> transport = overrides.transport;
    auto http = [&]() {
        if (!transport) transport = make_http_transport();
        return transport;
    };

    RemoteBackendConfig remote;
    remote.base_url = b.llm_base_url;
    remote.api_key = b.llm_api_key;
    remote.model_id = b.llm_model_id;
    remote.embed_model_id = b.embed_model_id;

    std::shared_ptr<CompletionBackend> completion;
    if (b.llm == "remote") completion = std::make_shared<RemoteCompletionBackend>(remote, http(), wait_clock);
    else if (b.script) completion = ScriptedCompletionBackend::load(*b.script);
    else completion = std::make_shared<ScriptedCompletionBackend>();

    std::shared_ptr<EmbeddingBackend> embedding;
    if (b.embedder == "remote") {
        if (remote.embed_model_id.empty()) throw ConfigError("embed_model_id", "required when embedder=remote");
        embedding = std::make_shared<RemoteEmbeddingBackend>(remote, http(), wait_clock);
    } else {
        embedding = std::make_shared<HashingEmbedder>();
    }

    GatewayOptions gateway_options;
    gateway_options.exchange_log = overrides.exchange_log;
    for (const auto& secret : {b.llm_api_key, b.nvd_api_key})
        if (!secret.empty()) gateway_options.redact.push_back(secret);
    engine->gateway = std::make_shared<GenerationGateway>(completion, embedding, engine->clock, gateway_options);

    if (b.feed == "nvd") {
        NvdOptions nvd;
        nvd.base_url = b.nvd_base_url;
        nvd.api_key = b.nvd_api_key;
        nvd.cache_dir = b.cache_dir;
        engine->feed = std::make_shared<NvdFeed>(nvd, http(), wait_clock);
    } else if (b.feed_fixtures) {
        engine->feed = std::make_shared<StubFeed>(*b.feed_fixtures);
    } else {
        engine->feed = std::make_shared<StubFeed>(std::vector<ThreatReport>{});
    }
    engine->global = std::make_shared<GlobalRepository>(engine->feed, engine->clock);
    return engine;
}

void to_json(Json& j, const RunManifest& v) {
    j = Json{{"config", v.config},
             {"corpus_fingerprint", v.corpus_fingerprint},
             {"backends",
              {{"completion_model", v.completion_model},
               {"embedding_model", v.embedding_model},
               {"feed", v.feed},
               {"prompt_set", v.prompt_set}}},
             {"started_at", format_timestamp(v.started_at)},
             {"finished_at", format_timestamp(v.finished_at)}};
}

int cmd_ingest(const Settings& settings, const IngestOptions& options, std::ostream& out, std::ostream& err,
               IngestSummary* summary_out, const EngineOverrides& overrides) {
    IngestSummary summary;
    try {
        const auto engine = build_engine(settings, overrides);
        const auto started = engine->clock->now();
        auto corpus = load_corpus(options.corpus_dir);
        summary.errors = corpus.errors;
        summary.corpus_fingerprint = corpus.fingerprint;

        IndexLock lock(options.index_dir, IndexLock::Kind::Exclusive);
        engine->open_index(options.index_dir, LocalKnowledgeStore::Mode::ReadWrite);
        for (const auto& doc : corpus.documents) {
            try {
                summary.chunks += engine->store->ingest_document(doc).size();
                ++summary.docs;
            } catch (const Error& e) {
                summary.errors.push_back({doc.doc_id, e.what()});
            }
        }
        Json report{{"corpus_dir", options.corpus_dir.generic_string()},
                    {"corpus_fingerprint", summary.corpus_fingerprint},
                    {"docs", summary.docs},
                    {"chunks", summary.chunks},
                    {"index_documents", engine->store->document_count()},
                    {"index_chunks", engine->store->chunk_count()},
                    {"embedding_model", engine->gateway->embedding_model_id()},
                    {"config", settings_snapshot(settings)},
                    {"errors", Json::array()},
                    {"started_at", format_timestamp(started)},
                    {"finished_at", format_timestamp(engine->clock->now())}};
        for (const auto& e : summary.errors) report["errors"].push_back({{"path", e.path}, {"message", e.message}});
        write_json(options.index_dir / "ingest.json", report);
    } catch (const Error& e) {
        err << "ingest failed: " << e.what() << '\n';
        if (summary_out) *summary_out = summary;
        return kExitFailed;
    }
    out << "docs=" << summary.docs << " chunks=" << summary.chunks << '\n';
    for (const auto& e : summary.errors) err << "error: " << e.path << ": " << e.message << '\n';
    if (summary_out) *summary_out = summary;
    return summary.errors.empty() ? kExitOk : kExitFailed;
}

namespace {

std::string read_fingerprint(const fs::path& index_dir) {
    std::ifstream in(index_dir / "ingest.json", std::ios::binary);
    if (!in) return "";
    try {
        return Json::parse(in).value("corpus_fingerprint", "");
    } catch (const nlohmann::json::exception&) {
        return "";
    }
}

}  // namespace

std::string safe_dir_name(std::string_view id) {
    std::string out;
    for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    if (out.empty() || out == "." || out == "..") out = "_" + out;
    return out;
}

namespace {

std::string missing_index_message(const fs::path& dir) {
    return "no index at " + dir.string() + "; build it first with `ctxintel ingest --corpus <dir> --index " +
           dir.string() + "`";
}

}  // namespace

std::string format_run_report(const RunResult& result, const EngineConfig& config) {
    std::ostringstream os;
    const auto& o = result.outcome;
    os << std::fixed << std::setprecision(4);
    switch (o.kind) {
        case RunOutcome::Kind::Contextualized: {
            const auto& intel = *o.intel;
            os << "Contextualized threat intelligence for " << intel.trigger_id << "\n"
               << "model: " << intel.model_id << ", iterations: " << intel.iterations_used
               << ", gate score: " << result.trace.gate_score << "\n\n"
               << intel.text << "\n\n";
            os << "Global sources:";
            for (const auto& id : intel.cited_global) os << ' ' << id;
            os << "\nLocal sources:";
            for (const auto& id : intel.cited_local) os << ' ' << id;
            os << '\n';
            break;
        }
        case RunOutcome::Kind::Discarded:
            os << "Discarded " << result.trace.trigger_id << ": " << o.reason << " (score " << o.gate_score
               << " < " << config.relevance_threshold << ")\n";
            break;
        case RunOutcome::Kind::Failed:
            os << "Run failed for " << result.trace.trigger_id << ": "
               << (o.failure ? o.failure->kind + ": " + o.failure->message : std::string("unknown error")) << '\n';
            break;
    }
    return os.str();
}

int cmd_run(const Settings& settings, const RunOptions& options, std::ostream& out, std::ostream& err,
            RunResult* result_out, const EngineOverrides& overrides) {
    if (options.trigger_file.has_value() == options.cve_id.has_value()) {
        err << "run: give exactly one of --trigger or --cve-id\n";
        return kExitUsage;
    }
    if (!LocalKnowledgeStore::exists(options.index_dir)) {
        err << missing_index_message(options.index_dir) << '\n';
        return kExitFailed;
    }
    try {
        std::optional<ThreatReport> trigger;
        std::string trigger_id;
        if (options.trigger_file) {
            std::ifstream in(*options.trigger_file, std::ios::binary);
            if (!in) throw NotFound("trigger file not found: " + options.trigger_file->string());
            std::ostringstream ss;
            ss << in.rdbuf();
            trigger = decode<ThreatReport>(ss.str());
            trigger_id = trigger->report_id;
        } else {
            trigger_id = *options.cve_id;
        }
        const auto run_dir = options.runs_dir / safe_dir_name(trigger_id);

        EngineOverrides ov = overrides;
        if (settings.backends.debug_log && !ov.exchange_log) ov.exchange_log = run_dir / "exchanges.jsonl";
        const auto engine = build_engine(settings, ov);
        IndexLock lock(options.index_dir, IndexLock::Kind::Shared);
        engine->open_index(options.index_dir, LocalKnowledgeStore::Mode::ReadOnly);

        RunManifest manifest;
        manifest.started_at = engine->clock->now();
        if (!trigger) trigger = engine->global->fetch_by_id(trigger_id);

        auto result = engine->agent->run(*trigger);
        manifest.finished_at = engine->clock->now();
        manifest.config = settings_snapshot(settings);
        manifest.corpus_fingerprint = read_fingerprint(options.index_dir);
        manifest.completion_model = engine->gateway->completion_model_id();
        manifest.embedding_model = engine->gateway->embedding_model_id();
        manifest.feed = engine->feed->name();
        manifest.prompt_set = std::string(kPromptSetVersion);

        write_run_artifacts(run_dir, result);
        write_json(run_dir / "manifest.json", manifest);
        out << format_run_report(result, settings.engine);
        out << "artifacts: " << run_dir.generic_string() << '\n';

        const auto kind = result.outcome.kind;
        if (result_out) *result_out = std::move(result);
        switch (kind) {
            case RunOutcome::Kind::Contextualized: return kExitOk;
            case RunOutcome::Kind::Discarded: return kExitDiscarded;
            case RunOutcome::Kind::Failed: return kExitFailed;
        }
    } catch (const Error& e) {
        err << "run failed: " << e.kind() << ": " << e.what() << '\n';
    }
    return kExitFailed;
}

int cmd_eval(const Settings& settings, const EvalCommandOptions& options, std::ostream& out, std::ostream& err,
             const EngineOverrides& overrides) {
    if (!LocalKnowledgeStore::exists(options.index_dir)) {
        err << missing_index_message(options.index_dir) << '\n';
        return kExitFailed;
    }
    try {
        const auto dataset = load_dataset_lenient(options.dataset);
        for (const auto& e : dataset.errors) err << "dataset line " << e.line << ": " << e.message << '\n';
        if (dataset.scenarios.empty()) throw EmptyInput("dataset has no valid scenarios");

        const auto engine = build_engine(settings, overrides);
        IndexLock lock(options.index_dir, IndexLock::Kind::Shared);
        engine->open_index(options.index_dir, LocalKnowledgeStore::Mode::ReadOnly);

        EvalOptions eval_options;
        eval_options.judge = options.judge;
        eval_options.workers = settings.backends.workers;
        const auto started = engine->clock->now();
        auto report = evaluate(*engine->agent, *engine->gateway, dataset.scenarios, eval_options);
        report.dataset_errors = dataset.errors;
        write_eval_outputs(options.out_dir, report);

        for (std::size_t i = 0; i < report.runs.size(); ++i)
            write_run_artifacts(options.out_dir / "runs" / safe_dir_name(report.records[i].scenario_id), report.runs[i]);
        RunManifest manifest;
        manifest.config = settings_snapshot(settings);
        manifest.corpus_fingerprint = read_fingerprint(options.index_dir);
        manifest.completion_model = engine->gateway->completion_model_id();
        manifest.embedding_model = engine->gateway->embedding_model_id();
        manifest.feed = engine->feed->name();
        manifest.prompt_set = std::string(kPromptSetVersion);
        manifest.started_at = started;
        manifest.finished_at = engine->clock->now();
        write_json(options.out_dir / "manifest.json", manifest);

        std::size_t failed = 0, scored = 0, discarded = 0;
        for (const auto& r : report.records) {
            if (r.outcome_kind == RunOutcome::Kind::Failed) {
                ++failed;
                err << "scenario " << r.scenario_id << " failed: " << r.error.value_or("") << '\n';
            }
            if (r.similarity) ++scored;
            if (r.outcome_kind == RunOutcome::Kind::Discarded) ++discarded;
        }
        out << std::fixed << std::setprecision(4) << "scenarios=" << report.records.size() << " scored=" << scored
            << " discarded=" << discarded << " failed=" << failed << " gate_precision=" << report.gate.precision()
            << " gate_recall=" << report.gate.recall() << '\n';
        for (const auto& [metric, stats] : report.aggregate)
            out << metric << ": mean=" << stats.mean << " median=" << stats.median << " std=" << stats.std
                << " n=" << stats.count << '\n';
        return failed == report.records.size() ? kExitFailed : kExitOk;
    } catch (const Error& e) {
        err << "eval failed: " << e.kind() << ": " << e.what() << '\n';
        return kExitFailed;
    }
}

}  // namespace ctxintel
