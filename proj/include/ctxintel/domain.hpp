#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctxintel/clock.hpp"
#include "ctxintel/errors.hpp"

namespace ctxintel {

using Json = nlohmann::json;
using Vector = std::vector<double>;

enum class ReportSource { NvdCve, ManualTrigger, Other };
enum class SourceKind { ConfigurationWiki, MaintenanceTracker, TrustedCtiReport, Other };
enum class SimilarityMetric { Cosine, Euclidean, Dot };
enum class Retriever { Dense, Sparse, Fused, Mmr };

std::string_view to_string(ReportSource v);
std::string_view to_string(SourceKind v);
std::string_view to_string(SimilarityMetric v);
std::string_view to_string(Retriever v);

// Inverse of to_string; throw InvalidArgument on unknown names.
ReportSource parse_report_source(std::string_view s);
SourceKind parse_source_kind(std::string_view s);
SimilarityMetric parse_similarity_metric(std::string_view s);
Retriever parse_retriever(std::string_view s);

/// Label used for local items in prompts, e.g. "Configuration Wiki".
std::string_view display_name(SourceKind v);

/// `CVE-<4 digits>-<4+ digits>`
bool is_cve_id(std::string_view id);

struct ThreatReport {
    std::string report_id;
    ReportSource source = ReportSource::Other;
    std::string description;
    std::optional<Timestamp> published_at;
    std::vector<std::string> references;
    std::map<std::string, std::string> extra;

    bool operator==(const ThreatReport&) const = default;
};

/// Throws InvalidArgument when a ThreatReport invariant does not hold.
void validate(const ThreatReport& report);

struct TextSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const noexcept { return end - start; }
    bool operator==(const TextSpan&) const = default;
};

struct KnowledgeChunk {
    std::string chunk_id;
    std::string parent_doc_id;
    std::string text;
    TextSpan span;
    SourceKind source_kind = SourceKind::Other;
    Vector embedding;

    bool operator==(const KnowledgeChunk&) const = default;
};

/// Deterministic chunk identifier: `<doc_id>#<start_char>`.
std::string make_chunk_id(std::string_view doc_id, std::size_t start_char);

struct Entity {
    std::string label;
    std::string surface;

    bool operator==(const Entity&) const = default;
};

struct QuerySet {
    std::vector<Entity> entities;
    std::vector<std::string> keywords;

    bool empty() const noexcept { return keywords.empty(); }
    bool operator==(const QuerySet&) const = default;
};

/// Builds a QuerySet from raw entities: trims surfaces, drops empties,
/// dedups keywords case-insensitively keeping first occurrence, and skips any
/// keyword contained (case-insensitively) in `exclude`.
QuerySet make_query_set(const std::vector<Entity>& entities,
                        const std::vector<std::string>& exclude = {});

/// The retrieved union of global reports and local chunks for one run.
/// Insertion order is retrieval order. There is no removal API: key sets only
/// grow, and inserting an id that is already held is a no-op.
class KnowledgeState {
public:
    explicit KnowledgeState(ThreatReport trigger);

    bool add_global(ThreatReport report);
    bool add_local(KnowledgeChunk chunk);
    void advance_iteration() noexcept { ++iteration_; }

    const std::vector<ThreatReport>& global_docs() const noexcept { return global_; }
    const std::vector<KnowledgeChunk>& local_chunks() const noexcept { return local_; }
    bool has_global(std::string_view id) const;
    bool has_local(std::string_view id) const;
    const ThreatReport& trigger() const { return global_.front(); }
    const std::string& trigger_id() const noexcept { return global_.front().report_id; }
    int iteration() const noexcept { return iteration_; }
    std::size_t size() const noexcept { return global_.size() + local_.size(); }

    bool operator==(const KnowledgeState& other) const {
        return global_ == other.global_ && local_ == other.local_ && iteration_ == other.iteration_;
    }

private:
    std::vector<ThreatReport> global_;
    std::vector<KnowledgeChunk> local_;
    std::unordered_map<std::string, std::size_t> global_index_;
    std::unordered_map<std::string, std::size_t> local_index_;
    int iteration_ = 0;
};

struct ContextualizedIntel {
    std::string text;
    std::vector<std::string> cited_global;
    std::vector<std::string> cited_local;
    std::string trigger_id;
    std::string model_id;
    Timestamp generated_at{};
    int iterations_used = 0;

    bool operator==(const ContextualizedIntel&) const = default;
};

struct EngineConfig {
    int chunk_size = 1500;
    int chunk_overlap = 150;
    int dense_top_k = 8;
    int sparse_top_k = 8;
    int fused_top_k = 6;
    double mmr_lambda = 0.5;
    int rrf_k = 60;
    double relevance_threshold = 0.25;
    // Minimum relevance for a local hit to be admitted into the knowledge state.
    double local_min_relevance = 0.25;
    int max_iterations = 3;
    int global_fetch_limit = 5;
    SimilarityMetric similarity_metric = SimilarityMetric::Cosine;
    std::vector<std::string> entity_classes = {"software",      "device",        "library",
                                               "functionality", "attack_vector", "vulnerability"};

    bool operator==(const EngineConfig&) const = default;
};

/// Returns `config` unchanged or throws ConfigError naming the first bad field.
const EngineConfig& validate_config(const EngineConfig& config);

/// Applies one `key = value` setting by EngineConfig field name. Throws
/// ConfigError for unknown keys or unparsable values. Does not validate.
void apply_config_setting(EngineConfig& config, std::string_view key, std::string_view value);

// Canonical JSON form, snake_case keys.
void to_json(Json& j, const ThreatReport& v);
void from_json(const Json& j, ThreatReport& v);
void to_json(Json& j, const KnowledgeChunk& v);
void from_json(const Json& j, KnowledgeChunk& v);
void to_json(Json& j, const Entity& v);
void from_json(const Json& j, Entity& v);
void to_json(Json& j, const QuerySet& v);
void from_json(const Json& j, QuerySet& v);
void to_json(Json& j, const ContextualizedIntel& v);
void from_json(const Json& j, ContextualizedIntel& v);
void to_json(Json& j, const EngineConfig& v);
void from_json(const Json& j, EngineConfig& v);
Json to_json(const KnowledgeState& v);
KnowledgeState knowledge_state_from_json(const Json& j);

/// Parses `payload` as JSON and converts to T; any syntax, type or invariant
/// failure becomes ParseError.
template <typename T>
T decode(std::string_view payload);

/// Syntax errors become ParseError carrying the parser's byte offset.
Json parse_json(std::string_view payload);

template <typename T>
T decode(std::string_view payload) {
    const Json j = parse_json(payload);
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("", e.what());
    } catch (const InvalidArgument& e) {
        throw ParseError("", e.what());
    }
}

}  // namespace ctxintel
