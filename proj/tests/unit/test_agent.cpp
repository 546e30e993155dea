#include <gtest/gtest.h>

#include "ctxintel/agent.hpp"
#include "ctxintel/text.hpp"
#include "helpers.hpp"

using namespace ctxintel;
using namespace testing_support;

namespace {

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

struct Rig {
    std::shared_ptr<CountingCompletion> completion;
    std::shared_ptr<CountingFeed> feed;
    std::shared_ptr<GenerationGateway> gateway;
    std::shared_ptr<LocalKnowledgeStore> store;
    std::shared_ptr<Agent> agent;
};

Rig make_rig(const std::string& wiki = "movistar_wiki", std::shared_ptr<CompletionBackend> completion = nullptr,
             EngineConfig config = {}) {
    Rig rig;
    if (!completion) completion = ScriptedCompletionBackend::load(fixture("scripts/offline.json"));
    rig.completion = std::make_shared<CountingCompletion>(completion);
    rig.feed = std::make_shared<CountingFeed>(std::make_shared<StubFeed>(fixture("feed")));
    rig.gateway = offline_gateway(rig.completion);
    rig.store = std::make_shared<LocalKnowledgeStore>(rig.gateway, config.chunk_size, config.chunk_overlap);
    if (!wiki.empty())
        for (const auto& d : load_corpus(fixture(wiki)).documents) rig.store->ingest_document(d);
    auto clock = std::make_shared<ManualClock>(epoch_2024(), true);
    auto global = std::make_shared<GlobalRepository>(rig.feed, clock);
    rig.agent = std::make_shared<Agent>(config, global, rig.store, rig.gateway, clock);
    return rig;
}

ThreatReport movistar() { return load_trigger("movistar_trigger.json"); }

ThreatReport fixture_report(const std::string& id) {
    return parse_feed_record(read_file(fixture("feed/" + id + ".json")));
}

const std::vector<std::string> kClasses = EngineConfig{}.entity_classes;

}  // namespace

TEST(NerParse, FlatMappingInModelOrder) {
    const auto e = parse_ner_output(R"({"device": "Movistar 4G", "attack_vector": "port 5555", "functionality": "adb"})",
                                    kClasses);
    ASSERT_EQ(e.size(), 3u);
    EXPECT_EQ(e[0], (Entity{"device", "Movistar 4G"}));
    EXPECT_EQ(e[1], (Entity{"attack_vector", "port 5555"}));
    EXPECT_EQ(e[2], (Entity{"functionality", "adb"}));
}

TEST(NerParse, ToleratesProseQuotesListsAndUnknownLabels) {
    const auto e = parse_ner_output("Here you go:\n{“Device”: “Movistar 4G”, \"Attack Vector\": [\"port 5555\", \" \"], "
                                    "\"colour\": \"red\", \"software\": null}\nThanks",
                                    kClasses);
    ASSERT_EQ(e.size(), 2u);
    EXPECT_EQ(e[0], (Entity{"device", "Movistar 4G"}));
    EXPECT_EQ(e[1], (Entity{"attack_vector", "port 5555"}));
}

TEST(NerParse, Failures) {
    EXPECT_THROW(parse_ner_output("no mapping here", kClasses), NerParseError);
    EXPECT_THROW(parse_ner_output("{device: Movistar}", kClasses), NerParseError);
    EXPECT_THROW(parse_ner_output(R"({"device": 4})", kClasses), NerParseError);
    EXPECT_TRUE(parse_ner_output("{}", kClasses).empty());
}

TEST(NerInput, GlobalsThenLocals) {
    KnowledgeState s(movistar());
    KnowledgeChunk c;
    c.chunk_id = "a.md#0";
    c.parent_doc_id = "a.md";
    c.text = " local text \n";
    c.span = {0, c.text.size()};
    s.add_local(c);
    s.add_global(fixture_report("CVE-2024-2415"));
    const auto rendered = render_state_for_ner(s);
    EXPECT_EQ(rendered.find("CVE-2024-2414: "), 0u);
    EXPECT_LT(rendered.find("CVE-2024-2415: "), rendered.find("a.md#0: local text"));
}

TEST(Gate, EmptyIndex) {
    auto rig = make_rig("");
    const auto g = rig.agent->relevance_gate(movistar());
    EXPECT_FALSE(g.pass);
    EXPECT_DOUBLE_EQ(g.score, 0.0);
    EXPECT_TRUE(g.initial_hits.empty());
}

TEST(Gate, MovistarPassesWithConfigurationChunk) {
    auto rig = make_rig();
    const auto g = rig.agent->relevance_gate(movistar());
    EXPECT_TRUE(g.pass);
    // Regression value under the offline hashing embedder.
    EXPECT_NEAR(g.score, 0.4629, 1e-4);
    bool has_cfg = false;
    for (const auto& h : g.initial_hits) has_cfg |= h.chunk_id == "configuration_wiki.md#0";
    EXPECT_TRUE(has_cfg);
}

TEST(Gate, NegativeTriggerDiscarded) {
    auto rig = make_rig("desk_wiki");
    const auto g = rig.agent->relevance_gate(load_trigger("negative_trigger.json"));
    EXPECT_FALSE(g.pass);
    EXPECT_LT(g.score, EngineConfig{}.relevance_threshold);
}

TEST(Queries, MovistarEntities) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    const auto q = rig.agent->generate_queries(s, {});
    EXPECT_EQ(q.keywords, (std::vector<std::string>{"Movistar 4G", "port 5555", "adb"}));
}

TEST(Queries, AllPreviouslyQueriedGivesEmptySet) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    EXPECT_TRUE(rig.agent->generate_queries(s, {"movistar 4g", "PORT 5555", "adb"}).empty());
}

TEST(Queries, ReaskOnceThenSucceed) {
    int call = 0;
    std::string second_prompt;
    auto backend = std::make_shared<LambdaCompletion>([&](const GenerationRequest& r) -> std::string {
        if (++call == 1) return "I think the device is a router.";
        second_prompt = r.prompt;
        return R"({"device": "Movistar 4G"})";
    });
    auto rig = make_rig("movistar_wiki", backend);
    KnowledgeState s(movistar());
    std::vector<RenderedPrompt> prompts;
    const auto q = rig.agent->generate_queries(s, {}, &prompts);
    EXPECT_EQ(q.keywords, (std::vector<std::string>{"Movistar 4G"}));
    EXPECT_EQ(call, 2);
    EXPECT_EQ(prompts.size(), 2u);
    EXPECT_NE(second_prompt.find("I think the device is a router."), std::string::npos);
    EXPECT_NE(second_prompt.find("Return only the mapping"), std::string::npos);
}

TEST(Queries, NonConformingTwiceFails) {
    auto backend = std::make_shared<LambdaCompletion>([](const GenerationRequest&) { return "prose only"; });
    auto rig = make_rig("movistar_wiki", backend);
    KnowledgeState s(movistar());
    EXPECT_THROW(rig.agent->generate_queries(s, {}), NerParseError);
    EXPECT_EQ(backend->calls, 2);
}

TEST(Expand, MovistarKeywordAddsGlobalsAndMaintenanceChunk) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    const auto r = rig.agent->expand_once(s, make_query_set({{"device", "Movistar 4G"}}));
    EXPECT_EQ(r.added_global_ids, (std::vector<std::string>{"CVE-2024-2415", "CVE-2024-2416"}));
    EXPECT_TRUE(s.has_global("CVE-2024-2415"));
    EXPECT_TRUE(s.has_global("CVE-2024-2416"));
    EXPECT_TRUE(s.has_local("maintenance_tracker.md#0"));
    EXPECT_EQ(r.added_global, 2);
    EXPECT_EQ(r.added_local, static_cast<int>(r.added_local_ids.size()));
}

TEST(Expand, EmptyQueriesAddNothingAndCallNothing) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    const int feed_before = rig.feed->calls;
    const auto r = rig.agent->expand_once(s, QuerySet{});
    EXPECT_EQ(r.added_global + r.added_local, 0);
    EXPECT_EQ(rig.feed->calls, feed_before);
    EXPECT_EQ(s.size(), 1u);
}

TEST(Expand, HeldDocumentsAreNotReadded) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    const auto q = make_query_set({{"device", "Movistar 4G"}});
    rig.agent->expand_once(s, q);
    const auto size = s.size();
    const auto again = rig.agent->expand_once(s, q);
    EXPECT_EQ(again.added_global, 0);
    EXPECT_EQ(again.added_local, 0);
    EXPECT_EQ(s.size(), size);
}

TEST(Contextualize, TriggerAndOneChunkGiveTwoBullets) {
    auto rig = make_rig();
    KnowledgeState s(movistar());
    s.add_local(*rig.store->chunk("configuration_wiki.md#0"));
    std::vector<RenderedPrompt> prompts;
    const auto intel = rig.agent->contextualize(s, &prompts);
    ASSERT_EQ(prompts.size(), 1u);
    EXPECT_EQ(count_of(prompts[0].text, "\n-- "), 2u);
    EXPECT_EQ(intel.cited_global, (std::vector<std::string>{"CVE-2024-2414"}));
    EXPECT_EQ(intel.cited_local, (std::vector<std::string>{"configuration_wiki.md#0"}));
    EXPECT_NE(intel.text.find("close port 22"), std::string::npos);
}

TEST(Run, MovistarEndToEnd) {
    auto rig = make_rig();
    const auto result = rig.agent->run(movistar());
    ASSERT_EQ(result.outcome.kind, RunOutcome::Kind::Contextualized) << (result.outcome.failure ? result.outcome.failure->message : "");
    const auto& intel = *result.outcome.intel;
    EXPECT_NE(intel.text.find("close port 22"), std::string::npos);
    EXPECT_NE(intel.text.find("suspended for scheduled maintenance"), std::string::npos);
    EXPECT_EQ(intel.cited_global, (std::vector<std::string>{"CVE-2024-2414", "CVE-2024-2415", "CVE-2024-2416"}));
    EXPECT_EQ(intel.cited_local.size(), 3u);

    const auto& final_prompt = result.prompts.back();
    ASSERT_EQ(final_prompt.template_id, TemplateId::Contextualize);
    for (const auto* id : {"CVE-2024-2414", "CVE-2024-2415", "CVE-2024-2416"}) {
        EXPECT_EQ(count_of(final_prompt.text, std::string("-- ") + id + ": "), 1u) << id;
        EXPECT_EQ(count_of(final_prompt.text, std::string(text::trim(fixture_report(id).description))), 1u) << id;
    }
    for (const auto& c : result.state->local_chunks()) EXPECT_EQ(count_of(final_prompt.text, std::string(text::trim(c.text))), 1u);

    // The second NER pass yields only already-queried keywords, so the loop
    // stops at iteration 2 of 3.
    ASSERT_EQ(result.trace.iterations.size(), 2u);
    EXPECT_TRUE(result.trace.iterations[1].queries.empty());
    EXPECT_EQ(result.trace.stop_reason, "no_queries");
    EXPECT_EQ(intel.iterations_used, 2);
}

TEST(Run, ZeroGateDiscardsWithoutIterations) {
    auto rig = make_rig("");
    const auto result = rig.agent->run(movistar());
    EXPECT_EQ(result.outcome.kind, RunOutcome::Kind::Discarded);
    EXPECT_EQ(result.outcome.reason, "below relevance threshold");
    EXPECT_TRUE(result.trace.iterations.empty());
    EXPECT_EQ(rig.completion->calls, 0);
    EXPECT_EQ(rig.feed->calls, 0);
}

TEST(Run, MaxIterationsBoundsTheLoop) {
    int n = 0;
    auto backend = std::make_shared<LambdaCompletion>([&](const GenerationRequest& r) -> std::string {
        if (r.template_id == TemplateId::Contextualize) return "done";
        return Json{{"device", "Movistar 4G variant " + std::to_string(n++)}}.dump();
    });
    EngineConfig config;
    config.max_iterations = 2;
    auto rig = make_rig("movistar_wiki", backend, config);
    const auto result = rig.agent->run(movistar());
    ASSERT_EQ(result.outcome.kind, RunOutcome::Kind::Contextualized);
    EXPECT_LE(result.trace.iterations.size(), 2u);
}

TEST(Run, BackendFailureBecomesFailedOutcome) {
    auto backend = std::make_shared<LambdaCompletion>([](const GenerationRequest&) -> std::string {
        throw BackendUnavailable("llm down");
    });
    auto rig = make_rig("movistar_wiki", backend);
    const auto result = rig.agent->run(movistar());
    EXPECT_EQ(result.outcome.kind, RunOutcome::Kind::Failed);
    ASSERT_TRUE(result.outcome.failure);
    EXPECT_EQ(result.outcome.failure->kind, "BackendUnavailable");
    EXPECT_EQ(result.trace.stop_reason, "failed");
    EXPECT_TRUE(result.trace.gate_passed);
}

TEST(Artifacts, WritesReportTraceAndPrompts) {
    TempDir tmp;
    auto rig = make_rig();
    const auto result = rig.agent->run(movistar());
    write_run_artifacts(tmp / "run", result);
    for (const auto* f : {"report.json", "trace.json", "prompts.json"}) EXPECT_TRUE(fs::exists(tmp / "run" / f)) << f;
    const auto report = Json::parse(read_file(tmp / "run/report.json"));
    EXPECT_EQ(report["outcome"], "contextualized");
    const auto trace = Json::parse(read_file(tmp / "run/trace.json"));
    EXPECT_EQ(trace["stop_reason"], "no_queries");
    EXPECT_EQ(trace["gate"]["passed"], true);
}
