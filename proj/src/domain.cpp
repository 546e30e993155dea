#include "ctxintel/domain.hpp"

#include <algorithm>
#include <charconv>
#include <regex>
#include <unordered_set>

#include "ctxintel/text.hpp"

namespace ctxintel {

namespace {

template <typename E, std::size_t N>
struct EnumNames {
    std::array<std::pair<E, std::string_view>, N> entries;

    std::string_view name(E v) const {
        for (const auto& [e, n] : entries)
            if (e == v) return n;
        return "unknown";
    }

    E parse(std::string_view s, std::string_view what) const {
        for (const auto& [e, n] : entries)
            if (n == s) return e;
        throw InvalidArgument("unknown " + std::string(what) + " '" + std::string(s) + "'");
    }
};

constexpr EnumNames<ReportSource, 3> kReportSources{{{
    {ReportSource::NvdCve, "nvd_cve"},
    {ReportSource::ManualTrigger, "manual_trigger"},
    {ReportSource::Other, "other"},
}}};

constexpr EnumNames<SourceKind, 4> kSourceKinds{{{
    {SourceKind::ConfigurationWiki, "configuration_wiki"},
    {SourceKind::MaintenanceTracker, "maintenance_tracker"},
    {SourceKind::TrustedCtiReport, "trusted_cti_report"},
    {SourceKind::Other, "other"},
}}};

constexpr EnumNames<SimilarityMetric, 3> kMetrics{{{
    {SimilarityMetric::Cosine, "cosine"},
    {SimilarityMetric::Euclidean, "euclidean"},
    {SimilarityMetric::Dot, "dot"},
}}};

constexpr EnumNames<Retriever, 4> kRetrievers{{{
    {Retriever::Dense, "dense"},
    {Retriever::Sparse, "sparse"},
    {Retriever::Fused, "fused"},
    {Retriever::Mmr, "mmr"},
}}};

Json optional_timestamp(const std::optional<Timestamp>& t) {
    return t ? Json(format_timestamp(*t)) : Json(nullptr);
}

Timestamp required_timestamp(const Json& j, const char* field) {
    const auto parsed = parse_timestamp(j.at(field).get<std::string>());
    if (!parsed) throw ParseError(field, "malformed timestamp");
    return *parsed;
}

}  // namespace

std::string_view to_string(ReportSource v) { return kReportSources.name(v); }
std::string_view to_string(SourceKind v) { return kSourceKinds.name(v); }
std::string_view to_string(SimilarityMetric v) { return kMetrics.name(v); }
std::string_view to_string(Retriever v) { return kRetrievers.name(v); }

ReportSource parse_report_source(std::string_view s) { return kReportSources.parse(s, "report source"); }
SourceKind parse_source_kind(std::string_view s) { return kSourceKinds.parse(s, "source kind"); }
SimilarityMetric parse_similarity_metric(std::string_view s) { return kMetrics.parse(s, "similarity metric"); }
Retriever parse_retriever(std::string_view s) { return kRetrievers.parse(s, "retriever"); }

std::string_view display_name(SourceKind v) {
    switch (v) {
        case SourceKind::ConfigurationWiki: return "Configuration Wiki";
        case SourceKind::MaintenanceTracker: return "Maintenance Tracker";
        case SourceKind::TrustedCtiReport: return "Trusted CTI Report";
        case SourceKind::Other: break;
    }
    return "Local Knowledge";
}

bool is_cve_id(std::string_view id) {
    static const std::regex kPattern(R"(CVE-\d{4}-\d{4,})");
    return std::regex_match(id.begin(), id.end(), kPattern);
}

void validate(const ThreatReport& report) {
    if (text::trim(report.report_id).empty()) throw InvalidArgument("report_id is empty");
    if (text::trim(report.description).empty())
        throw InvalidArgument("description of " + report.report_id + " is empty");
    if (report.source == ReportSource::NvdCve && !is_cve_id(report.report_id))
        throw InvalidArgument("report_id '" + report.report_id + "' is not a CVE identifier");
}

std::string make_chunk_id(std::string_view doc_id, std::size_t start_char) {
    return std::string(doc_id) + "#" + std::to_string(start_char);
}

QuerySet make_query_set(const std::vector<Entity>& entities,
                        const std::vector<std::string>& exclude) {
    std::unordered_set<std::string> seen;
    for (const auto& e : exclude) seen.insert(text::to_lower(text::trim(e)));

    QuerySet out;
    std::unordered_set<std::string> kept;
    for (const auto& entity : entities) {
        const auto surface = std::string(text::trim(entity.surface));
        if (surface.empty()) continue;
        const auto key = text::to_lower(surface);
        if (kept.contains(key)) {
            out.entities.push_back({entity.label, surface});
            continue;
        }
        if (seen.contains(key)) continue;
        seen.insert(key);
        kept.insert(key);
        out.keywords.push_back(surface);
        out.entities.push_back({entity.label, surface});
    }
    return out;
}

KnowledgeState::KnowledgeState(ThreatReport trigger) {
    validate(trigger);
    global_index_.emplace(trigger.report_id, 0);
    global_.push_back(std::move(trigger));
}

bool KnowledgeState::add_global(ThreatReport report) {
    if (global_index_.contains(report.report_id)) return false;
    global_index_.emplace(report.report_id, global_.size());
    global_.push_back(std::move(report));
    return true;
}

bool KnowledgeState::add_local(KnowledgeChunk chunk) {
    if (local_index_.contains(chunk.chunk_id)) return false;
    local_index_.emplace(chunk.chunk_id, local_.size());
    local_.push_back(std::move(chunk));
    return true;
}

bool KnowledgeState::has_global(std::string_view id) const {
    return global_index_.contains(std::string(id));
}

bool KnowledgeState::has_local(std::string_view id) const {
    return local_index_.contains(std::string(id));
}

const EngineConfig& validate_config(const EngineConfig& c) {
    if (c.chunk_size < 1) throw ConfigError("chunk_size", "must be >= 1");
    if (c.chunk_overlap <= 0 || c.chunk_overlap >= c.chunk_size)
        throw ConfigError("chunk_overlap", "must satisfy 0 < chunk_overlap < chunk_size");
    if (c.dense_top_k < 1) throw ConfigError("dense_top_k", "must be >= 1");
    if (c.sparse_top_k < 1) throw ConfigError("sparse_top_k", "must be >= 1");
    if (c.fused_top_k < 1) throw ConfigError("fused_top_k", "must be >= 1");
    if (!(c.mmr_lambda >= 0.0 && c.mmr_lambda <= 1.0))
        throw ConfigError("mmr_lambda", "must lie in [0, 1]");
    if (c.rrf_k < 0) throw ConfigError("rrf_k", "must be >= 0");
    if (!(c.relevance_threshold >= 0.0 && c.relevance_threshold <= 1.0))
        throw ConfigError("relevance_threshold", "must lie in [0, 1]");
    if (!(c.local_min_relevance >= 0.0 && c.local_min_relevance <= 1.0))
        throw ConfigError("local_min_relevance", "must lie in [0, 1]");
    if (c.max_iterations < 1) throw ConfigError("max_iterations", "must be >= 1");
    if (c.global_fetch_limit < 1) throw ConfigError("global_fetch_limit", "must be >= 1");
    if (c.entity_classes.empty()) throw ConfigError("entity_classes", "must not be empty");
    for (const auto& label : c.entity_classes)
        if (text::trim(label).empty()) throw ConfigError("entity_classes", "contains an empty label");
    return c;
}

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    value = text::trim(value);
    T out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size())
        throw ConfigError(std::string(key), "cannot parse '" + std::string(value) + "'");
    return out;
}

}  // namespace

void apply_config_setting(EngineConfig& c, std::string_view key, std::string_view value) {
    const std::string k(text::trim(key));
    if (k == "chunk_size") c.chunk_size = parse_number<int>(k, value);
    else if (k == "chunk_overlap") c.chunk_overlap = parse_number<int>(k, value);
    else if (k == "dense_top_k") c.dense_top_k = parse_number<int>(k, value);
    else if (k == "sparse_top_k") c.sparse_top_k = parse_number<int>(k, value);
    else if (k == "fused_top_k") c.fused_top_k = parse_number<int>(k, value);
    else if (k == "mmr_lambda") c.mmr_lambda = parse_number<double>(k, value);
    else if (k == "rrf_k") c.rrf_k = parse_number<int>(k, value);
    else if (k == "relevance_threshold") c.relevance_threshold = parse_number<double>(k, value);
    else if (k == "local_min_relevance") c.local_min_relevance = parse_number<double>(k, value);
    else if (k == "max_iterations") c.max_iterations = parse_number<int>(k, value);
    else if (k == "global_fetch_limit") c.global_fetch_limit = parse_number<int>(k, value);
    else if (k == "similarity_metric") {
        try {
            c.similarity_metric = parse_similarity_metric(text::trim(value));
        } catch (const InvalidArgument& e) {
            throw ConfigError(k, e.what());
        }
    } else if (k == "entity_classes") {
        c.entity_classes.clear();
        std::string_view rest = value;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = text::trim(rest.substr(0, comma));
            if (!item.empty()) c.entity_classes.emplace_back(item);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    } else {
        throw ConfigError(k, "unknown configuration key");
    }
}

Json parse_json(std::string_view payload) {
    try {
        return Json::parse(payload.begin(), payload.end());
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("", e.what(), e.byte);
    }
}

void to_json(Json& j, const ThreatReport& v) {
    j = Json{{"report_id", v.report_id},
             {"source", to_string(v.source)},
             {"description", v.description},
             {"published_at", optional_timestamp(v.published_at)},
             {"references", v.references},
             {"extra", v.extra}};
}

void from_json(const Json& j, ThreatReport& v) {
    v.report_id = j.at("report_id").get<std::string>();
    v.source = j.contains("source") ? parse_report_source(j.at("source").get<std::string>())
                                    : ReportSource::Other;
    v.description = j.at("description").get<std::string>();
    v.published_at.reset();
    if (j.contains("published_at") && !j.at("published_at").is_null())
        v.published_at = required_timestamp(j, "published_at");
    v.references = j.value("references", std::vector<std::string>{});
    v.extra = j.value("extra", std::map<std::string, std::string>{});
    validate(v);
}

void to_json(Json& j, const KnowledgeChunk& v) {
    j = Json{{"chunk_id", v.chunk_id},
             {"parent_doc_id", v.parent_doc_id},
             {"text", v.text},
             {"span", {{"start", v.span.start}, {"end", v.span.end}}},
             {"source_kind", to_string(v.source_kind)},
             {"embedding", v.embedding}};
}

void from_json(const Json& j, KnowledgeChunk& v) {
    v.chunk_id = j.at("chunk_id").get<std::string>();
    v.parent_doc_id = j.at("parent_doc_id").get<std::string>();
    v.text = j.at("text").get<std::string>();
    v.span.start = j.at("span").at("start").get<std::size_t>();
    v.span.end = j.at("span").at("end").get<std::size_t>();
    v.source_kind = parse_source_kind(j.at("source_kind").get<std::string>());
    v.embedding = j.at("embedding").get<Vector>();
    if (v.text.empty()) throw InvalidArgument("chunk " + v.chunk_id + " has empty text");
    if (v.span.end < v.span.start || v.span.length() != text::code_point_length(v.text))
        throw InvalidArgument("chunk " + v.chunk_id + " span does not match its text");
}

void to_json(Json& j, const Entity& v) { j = Json{{"label", v.label}, {"surface", v.surface}}; }

void from_json(const Json& j, Entity& v) {
    v.label = j.at("label").get<std::string>();
    v.surface = j.at("surface").get<std::string>();
}

void to_json(Json& j, const QuerySet& v) {
    j = Json{{"entities", v.entities}, {"keywords", v.keywords}};
}

void from_json(const Json& j, QuerySet& v) {
    v.entities = j.at("entities").get<std::vector<Entity>>();
    v.keywords = j.at("keywords").get<std::vector<std::string>>();
}

void to_json(Json& j, const ContextualizedIntel& v) {
    j = Json{{"text", v.text},
             {"cited_global", v.cited_global},
             {"cited_local", v.cited_local},
             {"trigger_id", v.trigger_id},
             {"model_id", v.model_id},
             {"generated_at", format_timestamp(v.generated_at)},
             {"iterations_used", v.iterations_used}};
}

void from_json(const Json& j, ContextualizedIntel& v) {
    v.text = j.at("text").get<std::string>();
    v.cited_global = j.at("cited_global").get<std::vector<std::string>>();
    v.cited_local = j.at("cited_local").get<std::vector<std::string>>();
    v.trigger_id = j.at("trigger_id").get<std::string>();
    v.model_id = j.at("model_id").get<std::string>();
    v.generated_at = required_timestamp(j, "generated_at");
    v.iterations_used = j.at("iterations_used").get<int>();
    if (text::trim(v.text).empty()) throw InvalidArgument("contextualized text is empty");
}

void to_json(Json& j, const EngineConfig& v) {
    j = Json{{"chunk_size", v.chunk_size},
             {"chunk_overlap", v.chunk_overlap},
             {"dense_top_k", v.dense_top_k},
             {"sparse_top_k", v.sparse_top_k},
             {"fused_top_k", v.fused_top_k},
             {"mmr_lambda", v.mmr_lambda},
             {"rrf_k", v.rrf_k},
             {"relevance_threshold", v.relevance_threshold},
             {"local_min_relevance", v.local_min_relevance},
             {"max_iterations", v.max_iterations},
             {"global_fetch_limit", v.global_fetch_limit},
             {"similarity_metric", to_string(v.similarity_metric)},
             {"entity_classes", v.entity_classes}};
}

void from_json(const Json& j, EngineConfig& v) {
    v = EngineConfig{};
    for (const auto& [key, value] : j.items()) {
        if (key == "entity_classes") {
            v.entity_classes = value.get<std::vector<std::string>>();
        } else if (value.is_string()) {
            apply_config_setting(v, key, value.get<std::string>());
        } else {
            apply_config_setting(v, key, value.dump());
        }
    }
}

Json to_json(const KnowledgeState& v) {
    return Json{{"trigger_id", v.trigger_id()},
                {"iteration", v.iteration()},
                {"global_docs", v.global_docs()},
                {"local_chunks", v.local_chunks()}};
}

KnowledgeState knowledge_state_from_json(const Json& j) {
    const auto globals = j.at("global_docs").get<std::vector<ThreatReport>>();
    if (globals.empty() || globals.front().report_id != j.at("trigger_id").get<std::string>())
        throw InvalidArgument("trigger_id must be the first global document");
    KnowledgeState state(globals.front());
    for (std::size_t i = 1; i < globals.size(); ++i)
        if (!state.add_global(globals[i]))
            throw InvalidArgument("duplicate report_id " + globals[i].report_id);
    for (auto& chunk : j.at("local_chunks").get<std::vector<KnowledgeChunk>>()) {
        const auto id = chunk.chunk_id;
        if (!state.add_local(std::move(chunk))) throw InvalidArgument("duplicate chunk_id " + id);
    }
    const int iteration = j.at("iteration").get<int>();
    if (iteration < 0) throw InvalidArgument("iteration must be nonnegative");
    for (int i = 0; i < iteration; ++i) state.advance_iteration();
    return state;
}

}  // namespace ctxintel
