#pragma once

// The agent loop: relevance gate, NER-driven query generation, dual-source
// expansion until no new knowledge arrives, then contextualization.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ctxintel/clock.hpp"
#include "ctxintel/domain.hpp"
#include "ctxintel/feed.hpp"
#include "ctxintel/gateway.hpp"
#include "ctxintel/retrieval.hpp"
#include "ctxintel/store.hpp"

namespace ctxintel {

struct GateResult {
    bool pass = false;
    double score = 0.0;
    std::vector<RankedHit> initial_hits;  // empty unless pass
};

struct ExpandResult {
    int added_global = 0;
    int added_local = 0;
    std::vector<std::string> added_global_ids;
    std::vector<std::string> added_local_ids;
    std::vector<GlobalQueryLog> global_logs;
    std::vector<std::string> errors;
};

struct IterationRecord {
    int iteration = 0;
    std::vector<std::string> queries;
    std::vector<Entity> entities;
    std::vector<std::string> added_global;
    std::vector<std::string> added_local;
    std::vector<GlobalQueryLog> global_logs;
    std::vector<std::string> errors;
    Timestamp started_at{};
    std::chrono::milliseconds elapsed{0};
};

struct RunTrace {
    std::string trigger_id;
    double gate_score = 0.0;
    double relevance_threshold = 0.0;
    bool gate_passed = false;
    std::vector<RankedHit> initial_hits;
    std::vector<std::string> initial_local;  // chunks admitted from the gate search
    std::vector<IterationRecord> iterations;
    std::string stop_reason;  // "discarded", "no_new_knowledge", "no_queries", "max_iterations", "failed"
    Timestamp started_at{};
    Timestamp finished_at{};
};

struct RunFailure {
    std::string kind;
    std::string message;
};

struct RunOutcome {
    enum class Kind { Contextualized, Discarded, Failed };

    Kind kind = Kind::Failed;
    std::optional<ContextualizedIntel> intel;
    std::string reason;        // Discarded
    double gate_score = 0.0;   // Discarded
    std::optional<RunFailure> failure;
};

std::string_view to_string(RunOutcome::Kind kind);

struct RenderedPrompt {
    TemplateId template_id = TemplateId::NerExtraction;
    int iteration = 0;
    std::string text;
};

struct RunResult {
    RunOutcome outcome;
    RunTrace trace;
    std::optional<KnowledgeState> state;
    std::vector<RenderedPrompt> prompts;
};

void to_json(Json& j, const GateResult& v);
void to_json(Json& j, const IterationRecord& v);
void to_json(Json& j, const RunTrace& v);
void to_json(Json& j, const RunOutcome& v);
void to_json(Json& j, const RenderedPrompt& v);

/// Parses a flat JSON object of class→surface (a value may also be a list of
/// surfaces). Tolerates surrounding prose and typographic quotes; drops
/// classes outside `classes`. Throws NerParseError.
std::vector<Entity> parse_ner_output(std::string_view text, const std::vector<std::string>& classes);

/// Knowledge listing handed to the NER prompt: one "id: text" line per item,
/// global reports first, each group in retrieval order.
std::string render_state_for_ner(const KnowledgeState& state);

class Agent {
public:
    Agent(EngineConfig config, std::shared_ptr<GlobalRepository> global,
          std::shared_ptr<const LocalKnowledgeStore> store, std::shared_ptr<GenerationGateway> gateway,
          std::shared_ptr<Clock> clock);

    GateResult relevance_gate(const ThreatReport& trigger) const;

    /// `already_queried` is excluded from the result (case-insensitive).
    QuerySet generate_queries(const KnowledgeState& state, const std::vector<std::string>& already_queried,
                              std::vector<RenderedPrompt>* prompts = nullptr) const;

    ExpandResult expand_once(KnowledgeState& state, const QuerySet& queries) const;

    ContextualizedIntel contextualize(const KnowledgeState& state, std::vector<RenderedPrompt>* prompts = nullptr) const;

    /// Never throws for module errors: they become a Failed outcome and the
    /// trace collected so far is returned.
    RunResult run(const ThreatReport& trigger) const;

    const EngineConfig& config() const noexcept { return config_; }

private:
    int admit_local(KnowledgeState& state, const std::vector<RankedHit>& hits, std::span<const double> query,
                    std::vector<std::string>* added) const;
    std::vector<RankedHit> local_search(std::string_view text, std::span<const double> embedding) const;

    EngineConfig config_;
    std::shared_ptr<GlobalRepository> global_;
    std::shared_ptr<const LocalKnowledgeStore> store_;
    std::shared_ptr<GenerationGateway> gateway_;
    std::shared_ptr<Clock> clock_;
};

/// Writes report.json, trace.json and prompts.json under `dir`.
void write_run_artifacts(const std::filesystem::path& dir, const RunResult& result);

}  // namespace ctxintel
