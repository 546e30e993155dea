#pragma once

// Operator surface: layered settings, engine wiring and the ingest / run /
// eval commands. The `serve` command lives in service.hpp.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ctxintel/agent.hpp"
#include "ctxintel/clock.hpp"
#include "ctxintel/domain.hpp"
#include "ctxintel/feed.hpp"
#include "ctxintel/gateway.hpp"
#include "ctxintel/http.hpp"
#include "ctxintel/store.hpp"

namespace ctxintel {

/// Process exit codes; scripts may branch on them.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiscarded = 3;

/// Every setting that is not an EngineConfig field. Keys in the config file
/// use the member names.
struct BackendSettings {
    std::string llm = "offline";       // offline | remote
    std::string embedder = "offline";  // offline | remote
    std::string llm_base_url;
    std::string llm_api_key;
    std::string llm_model_id;
    std::string embed_model_id;
    std::optional<std::filesystem::path> script;  // scripted completions for llm=offline
    std::string feed = "stub";                     // stub | nvd
    std::optional<std::filesystem::path> feed_fixtures;
    std::string nvd_base_url = "https://services.nvd.nist.gov/rest/json/cves/2.0";
    std::string nvd_api_key;
    std::optional<std::filesystem::path> cache_dir;
    bool frozen_clock = false;
    std::string frozen_time = "2024-08-12T00:00:00.000Z";
    bool debug_log = false;
    std::size_t workers = 2;
    std::size_t queue_depth = 32;
};

struct Settings {
    EngineConfig engine;
    BackendSettings backends;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;
using EnvLookup = std::function<std::optional<std::string>(const char* name)>;

/// `key = value` lines; '#' starts a comment line; blank lines ignored.
/// Throws ConfigError naming the offending line.
KeyValues parse_key_values(std::string_view text);

/// Applies one setting by key, EngineConfig fields included. Throws ConfigError.
void apply_setting(Settings& settings, std::string_view key, std::string_view value);

/// Reads the process environment.
std::optional<std::string> process_env(const char* name);

/// Precedence, lowest to highest: built-in defaults, config file, command
/// line flags, environment (NVD_API_KEY, LLM_BASE_URL, LLM_API_KEY,
/// LLM_MODEL_ID, EMBED_MODEL_ID). The engine part is validated.
Settings resolve_settings(const std::optional<std::filesystem::path>& config_file, const KeyValues& flags,
                          const EnvLookup& env = process_env);

Json settings_snapshot(const Settings& settings);  // secrets masked

/// Components shared by commands and the service.
struct Engine {
    Settings settings;
    std::shared_ptr<Clock> clock;
    std::shared_ptr<GenerationGateway> gateway;
    std::shared_ptr<VulnerabilityFeed> feed;
    std::shared_ptr<GlobalRepository> global;
    std::shared_ptr<LocalKnowledgeStore> store;  // null until open_index
    std::shared_ptr<Agent> agent;                // null until open_index

    void open_index(const std::filesystem::path& dir, LocalKnowledgeStore::Mode mode);
};

struct EngineOverrides {
    std::shared_ptr<HttpTransport> transport;  // defaults to the real HTTP client
    std::shared_ptr<Clock> clock;              // defaults from frozen_clock
    std::optional<std::filesystem::path> exchange_log;
};

/// Builds backends, feed and gateway from settings; no index is opened.
std::unique_ptr<Engine> build_engine(const Settings& settings, const EngineOverrides& overrides = {});

struct RunManifest {
    Json config;
    std::string corpus_fingerprint;
    std::string completion_model;
    std::string embedding_model;
    std::string feed;
    std::string prompt_set;
    Timestamp started_at{};
    Timestamp finished_at{};
};

void to_json(Json& j, const RunManifest& v);

struct IngestOptions {
    std::filesystem::path corpus_dir;
    std::filesystem::path index_dir;
};

struct IngestSummary {
    std::size_t docs = 0;
    std::size_t chunks = 0;
    std::vector<CorpusError> errors;
    std::string corpus_fingerprint;
};

/// Writes `ingest.json` next to the index with the corpus fingerprint.
int cmd_ingest(const Settings& settings, const IngestOptions& options, std::ostream& out, std::ostream& err,
               IngestSummary* summary = nullptr, const EngineOverrides& overrides = {});

struct RunOptions {
    std::filesystem::path index_dir;
    std::optional<std::filesystem::path> trigger_file;
    std::optional<std::string> cve_id;
    std::filesystem::path runs_dir = "runs";
};

/// Artifacts land in runs_dir/<trigger_id>/. Exit 0 contextualized, 3
/// discarded, 1 failed.
int cmd_run(const Settings& settings, const RunOptions& options, std::ostream& out, std::ostream& err,
            RunResult* result = nullptr, const EngineOverrides& overrides = {});

struct EvalCommandOptions {
    std::filesystem::path index_dir;
    std::filesystem::path dataset;
    std::filesystem::path out_dir;
    bool judge = true;
};

/// Non-zero only when every scenario failed or the dataset is unusable.
int cmd_eval(const Settings& settings, const EvalCommandOptions& options, std::ostream& out, std::ostream& err,
             const EngineOverrides& overrides = {});

/// Maps an id to a directory name made of [A-Za-z0-9._-] only.
std::string safe_dir_name(std::string_view id);

/// Human-readable rendering of a run, as printed by `run`.
std::string format_run_report(const RunResult& result, const EngineConfig& config);

}  // namespace ctxintel
