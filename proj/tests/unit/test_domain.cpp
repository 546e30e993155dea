#include <gtest/gtest.h>

#include "ctxintel/domain.hpp"

using namespace ctxintel;

namespace {

ThreatReport sample_report() {
    ThreatReport r;
    r.report_id = "CVE-2024-2414";
    r.source = ReportSource::NvdCve;
    r.description = "The primary channel is unprotected on Movistar 4G router.";
    r.published_at = parse_timestamp("2024-03-12T15:15:47.663");
    r.references = {"https://www.incibe.es/en/incibe-cert/notices/aviso/multiple-vulnerabilities-movistar-4g-router"};
    r.extra = {{"vuln_status", "Analyzed"}};
    return r;
}

KnowledgeChunk chunk_of(const std::string& doc, std::size_t start, const std::string& text) {
    KnowledgeChunk c;
    c.chunk_id = make_chunk_id(doc, start);
    c.parent_doc_id = doc;
    c.text = text;
    c.span = {start, start + text.size()};
    c.source_kind = SourceKind::ConfigurationWiki;
    c.embedding = {0.6, 0.8};
    return c;
}

}  // namespace

TEST(EnumNames, RoundTrip) {
    for (auto v : {ReportSource::NvdCve, ReportSource::ManualTrigger, ReportSource::Other})
        EXPECT_EQ(parse_report_source(to_string(v)), v);
    for (auto v : {SourceKind::ConfigurationWiki, SourceKind::MaintenanceTracker, SourceKind::TrustedCtiReport,
                   SourceKind::Other})
        EXPECT_EQ(parse_source_kind(to_string(v)), v);
    for (auto v : {SimilarityMetric::Cosine, SimilarityMetric::Euclidean, SimilarityMetric::Dot})
        EXPECT_EQ(parse_similarity_metric(to_string(v)), v);
    for (auto v : {Retriever::Dense, Retriever::Sparse, Retriever::Fused, Retriever::Mmr})
        EXPECT_EQ(parse_retriever(to_string(v)), v);
    EXPECT_THROW(parse_source_kind("bogus"), InvalidArgument);
    EXPECT_EQ(display_name(SourceKind::ConfigurationWiki), "Configuration Wiki");
}

TEST(CveId, Pattern) {
    EXPECT_TRUE(is_cve_id("CVE-2024-2414"));
    EXPECT_TRUE(is_cve_id("CVE-2021-123456"));
    EXPECT_FALSE(is_cve_id("CVE-2024-241"));
    EXPECT_FALSE(is_cve_id("cve-2024-2414"));
    EXPECT_FALSE(is_cve_id("ADV-2024-0419"));
}

TEST(ThreatReportJson, RoundTripIsLossless) {
    const auto r = sample_report();
    const Json j = r;
    EXPECT_EQ(j["published_at"], "2024-03-12T15:15:47.663Z");
    EXPECT_EQ(j["source"], to_string(ReportSource::NvdCve));
    EXPECT_EQ(j.get<ThreatReport>(), r);
    EXPECT_EQ(decode<ThreatReport>(j.dump()), r);
}

TEST(ThreatReportJson, InvariantsEnforcedOnDecode) {
    auto r = sample_report();
    r.description = "   ";
    EXPECT_THROW(decode<ThreatReport>(Json(r).dump()), ParseError);
    r = sample_report();
    r.report_id = "not-a-cve";
    EXPECT_THROW(validate(r), InvalidArgument);
    r.source = ReportSource::ManualTrigger;
    EXPECT_NO_THROW(validate(r));
}

TEST(ThreatReportJson, SyntaxErrorCarriesOffset) {
    try {
        decode<ThreatReport>("{\"report_id\": ");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_TRUE(e.byte_offset().has_value());
    }
}

TEST(KnowledgeChunkJson, RoundTrip) {
    const auto c = chunk_of("wiki/a.md", 0, "Movistar 4G router");
    EXPECT_EQ(c.chunk_id, "wiki/a.md#0");
    EXPECT_EQ(Json(c).get<KnowledgeChunk>(), c);
}

TEST(QuerySetBuild, TrimsDedupsAndExcludes) {
    const std::vector<Entity> raw = {{"device", " Movistar 4G "}, {"software", "movistar 4g"},
                                     {"functionality", ""},       {"attack_vector", "port 5555"},
                                     {"functionality", "adb"}};
    const auto q = make_query_set(raw);
    EXPECT_EQ(q.keywords, (std::vector<std::string>{"Movistar 4G", "port 5555", "adb"}));
    const auto excluded = make_query_set(raw, {"ADB", "Movistar 4G"});
    EXPECT_EQ(excluded.keywords, (std::vector<std::string>{"port 5555"}));
    EXPECT_TRUE(make_query_set(raw, {"movistar 4g", "port 5555", "adb"}).empty());
}

TEST(KnowledgeStateBehavior, GrowsOnlyAndIgnoresDuplicates) {
    KnowledgeState s(sample_report());
    EXPECT_EQ(s.size(), 1u);
    EXPECT_EQ(s.trigger_id(), "CVE-2024-2414");
    EXPECT_FALSE(s.add_global(sample_report()));
    auto other = sample_report();
    other.report_id = "CVE-2024-2415";
    EXPECT_TRUE(s.add_global(other));
    EXPECT_TRUE(s.add_local(chunk_of("a.md", 0, "abc")));
    EXPECT_FALSE(s.add_local(chunk_of("a.md", 0, "abc")));
    EXPECT_EQ(s.size(), 3u);
    s.advance_iteration();
    EXPECT_EQ(s.iteration(), 1);
    EXPECT_TRUE(s.has_global("CVE-2024-2415"));
    EXPECT_TRUE(s.has_local("a.md#0"));

    const Json j = to_json(s);
    EXPECT_EQ(knowledge_state_from_json(j), s);
}

TEST(KnowledgeStateBehavior, RejectsDuplicateIdsInSerializedForm) {
    KnowledgeState s(sample_report());
    s.add_local(chunk_of("a.md", 0, "abc"));
    Json j = to_json(s);
    j["local_chunks"].push_back(j["local_chunks"][0]);
    EXPECT_THROW(knowledge_state_from_json(j), InvalidArgument);
}

TEST(ContextualizedIntelJson, RoundTrip) {
    ContextualizedIntel intel;
    intel.text = "close port 22";
    intel.cited_global = {"CVE-2024-2414"};
    intel.cited_local = {"a.md#0"};
    intel.trigger_id = "CVE-2024-2414";
    intel.model_id = "m";
    intel.generated_at = *parse_timestamp("2024-08-12T00:00:00.000Z");
    intel.iterations_used = 2;
    EXPECT_EQ(Json(intel).get<ContextualizedIntel>(), intel);
}

TEST(EngineConfigValidation, Examples) {
    EngineConfig c;
    EXPECT_EQ(c.chunk_size, 1500);
    EXPECT_EQ(c.chunk_overlap, 150);
    EXPECT_NO_THROW(validate_config(c));

    EngineConfig bad = c;
    bad.chunk_overlap = 1500;
    try {
        validate_config(bad);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "chunk_overlap");
    }

    EngineConfig lambda_one = c;
    lambda_one.mmr_lambda = 1.0;
    EXPECT_NO_THROW(validate_config(lambda_one));
    lambda_one.mmr_lambda = 1.01;
    EXPECT_THROW(validate_config(lambda_one), ConfigError);
}

TEST(EngineConfigValidation, SettingsByKey) {
    EngineConfig c;
    apply_config_setting(c, "similarity_metric", "euclidean");
    apply_config_setting(c, "max_iterations", "5");
    apply_config_setting(c, "relevance_threshold", "0.4");
    EXPECT_EQ(c.similarity_metric, SimilarityMetric::Euclidean);
    EXPECT_EQ(c.max_iterations, 5);
    EXPECT_DOUBLE_EQ(c.relevance_threshold, 0.4);
    EXPECT_THROW(apply_config_setting(c, "max_iterations", "five"), ConfigError);
    EXPECT_THROW(apply_config_setting(c, "no_such_key", "1"), ConfigError);
    EXPECT_EQ(Json(c).get<EngineConfig>(), c);
}
