#include <gtest/gtest.h>

#include <sstream>

#include "ctxintel/app.hpp"
#include "helpers.hpp"

using namespace ctxintel;
using namespace testing_support;

namespace {

EnvLookup no_env() {
    return [](const char*) -> std::optional<std::string> { return std::nullopt; };
}

int ingest(const fs::path& corpus, const fs::path& index, std::string* out_text = nullptr,
           std::string* err_text = nullptr) {
    std::ostringstream out, err;
    const int rc = cmd_ingest(offline_settings(), {corpus, index}, out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rc;
}

}  // namespace

TEST(Config, KeyValueParsing) {
    const auto kv = parse_key_values("# comment\n\nllm = remote\n  max_iterations=4  \n");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"llm", "remote"}));
    EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"max_iterations", "4"}));
    try {
        parse_key_values("ok = 1\nbroken line\n");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Config, PrecedenceFileThenFlagsThenEnv) {
    TempDir tmp;
    write_file(tmp / "c.conf", "llm_model_id = from-file\nmax_iterations = 5\nrrf_k = 10\n");
    const KeyValues flags = {{"llm_model_id", "from-flag"}, {"max_iterations", "4"}};
    auto env = [](const char* name) -> std::optional<std::string> {
        if (std::string(name) == "LLM_MODEL_ID") return "from-env";
        return std::nullopt;
    };
    const auto s = resolve_settings(tmp / "c.conf", flags, env);
    EXPECT_EQ(s.backends.llm_model_id, "from-env");
    EXPECT_EQ(s.engine.max_iterations, 4);
    EXPECT_EQ(s.engine.rrf_k, 10);
    EXPECT_EQ(resolve_settings(tmp / "c.conf", {}, no_env()).backends.llm_model_id, "from-file");
}

TEST(Config, InvalidValuesRejected) {
    EXPECT_THROW(resolve_settings(std::nullopt, {{"chunk_overlap", "2000"}}, no_env()), ConfigError);
    EXPECT_THROW(resolve_settings(std::nullopt, {{"llm", "cloud"}}, no_env()), ConfigError);
    EXPECT_THROW(resolve_settings(std::nullopt, {{"unknown_key", "1"}}, no_env()), ConfigError);
}

TEST(Config, SnapshotMasksSecrets) {
    auto s = resolve_settings(std::nullopt, {{"llm_api_key", "sk-very-secret"}, {"nvd_api_key", "nvd-secret"}}, no_env());
    const auto dump = settings_snapshot(s).dump();
    EXPECT_EQ(dump.find("sk-very-secret"), std::string::npos);
    EXPECT_EQ(dump.find("nvd-secret"), std::string::npos);
}

TEST(SafeNames, OnlyPortableCharacters) {
    EXPECT_EQ(safe_dir_name("CVE-2024-2414"), "CVE-2024-2414");
    const auto odd = safe_dir_name("../a b/c");
    EXPECT_EQ(odd.find('/'), std::string::npos);
    EXPECT_EQ(odd.find(' '), std::string::npos);
    EXPECT_NE(odd, "..");
}

TEST(Ingest, FixtureWiki) {
    TempDir tmp;
    std::string out;
    EXPECT_EQ(ingest(fixture("desk_wiki"), tmp / "idx", &out), kExitOk);
    EXPECT_NE(out.find("docs=5"), std::string::npos);
    const auto meta = Json::parse(read_file(tmp / "idx/ingest.json"));
    EXPECT_EQ(meta["corpus_fingerprint"], load_corpus(fixture("desk_wiki")).fingerprint);
    IngestSummary summary;
    std::ostringstream o, e;
    cmd_ingest(offline_settings(), {fixture("desk_wiki"), tmp / "idx"}, o, e, &summary);
    EXPECT_EQ(summary.docs, 5u);
    EXPECT_GE(summary.chunks, 5u);
}

TEST(Ingest, EmptyDirectory) {
    TempDir tmp;
    fs::create_directories(tmp / "corpus");
    std::string out;
    EXPECT_EQ(ingest(tmp / "corpus", tmp / "idx", &out), kExitOk);
    EXPECT_NE(out.find("docs=0"), std::string::npos);
}

TEST(Ingest, UnreadableFileListed) {
    TempDir tmp;
    write_file(tmp / "corpus/good.md", "fine text");
    write_file(tmp / "corpus/bad.md", std::string("\xC3\x28 invalid"));
    std::string out, err;
    EXPECT_NE(ingest(tmp / "corpus", tmp / "idx", &out, &err), kExitOk);
    EXPECT_NE(err.find("bad.md"), std::string::npos);
    EXPECT_NE(out.find("docs=1"), std::string::npos);
}

TEST(Ingest, RefusedWhileServiceHoldsIndex) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("movistar_wiki"), tmp / "idx"), kExitOk);
    IndexLock held(tmp / "idx", IndexLock::Kind::Shared);
    std::string err;
    EXPECT_EQ(ingest(fixture("movistar_wiki"), tmp / "idx", nullptr, &err), kExitFailed);
    EXPECT_NE(err.find("in use"), std::string::npos);
}

TEST(Run, CveIdWithStubFeed) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("movistar_wiki"), tmp / "idx"), kExitOk);
    RunOptions opts;
    opts.index_dir = tmp / "idx";
    opts.cve_id = "CVE-2024-2414";
    opts.runs_dir = tmp / "runs";
    std::ostringstream out, err;
    RunResult result;
    EXPECT_EQ(cmd_run(offline_settings(), opts, out, err, &result), kExitOk) << err.str();
    for (const auto* f : {"report.json", "trace.json", "prompts.json", "manifest.json"})
        EXPECT_TRUE(fs::exists(tmp / "runs/CVE-2024-2414" / f)) << f;
    const auto manifest = Json::parse(read_file(tmp / "runs/CVE-2024-2414/manifest.json"));
    EXPECT_EQ(manifest["corpus_fingerprint"], load_corpus(fixture("movistar_wiki")).fingerprint);
    EXPECT_NE(out.str().find("close port 22"), std::string::npos);
}

TEST(Run, NegativeTriggerDiscarded) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("desk_wiki"), tmp / "idx"), kExitOk);
    RunOptions opts;
    opts.index_dir = tmp / "idx";
    opts.trigger_file = fixture("negative_trigger.json");
    opts.runs_dir = tmp / "runs";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run(offline_settings(), opts, out, err), kExitDiscarded);
    EXPECT_NE(out.str().find("below relevance threshold"), std::string::npos);
}

TEST(Run, MissingIndexNamesIngest) {
    TempDir tmp;
    RunOptions opts;
    opts.index_dir = tmp / "nope";
    opts.cve_id = "CVE-2024-2414";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run(offline_settings(), opts, out, err), kExitFailed);
    EXPECT_NE(err.str().find("ingest"), std::string::npos);
}

TEST(Run, RequiresExactlyOneTriggerSource) {
    TempDir tmp;
    RunOptions opts;
    opts.index_dir = tmp / "idx";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run(offline_settings(), opts, out, err), kExitUsage);
}

TEST(Run, UnknownCveFails) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("movistar_wiki"), tmp / "idx"), kExitOk);
    RunOptions opts;
    opts.index_dir = tmp / "idx";
    opts.cve_id = "CVE-0000-0000";
    opts.runs_dir = tmp / "runs";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_run(offline_settings(), opts, out, err), kExitFailed);
}

TEST(Eval, DeskDatasetWithMalformedLine) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("desk_wiki"), tmp / "idx"), kExitOk);
    write_file(tmp / "d.jsonl", read_file(fixture("desk_dataset.jsonl")) + "{this is not json}\n");
    EvalCommandOptions opts;
    opts.index_dir = tmp / "idx";
    opts.dataset = tmp / "d.jsonl";
    opts.out_dir = tmp / "out";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_eval(offline_settings(), opts, out, err), kExitOk) << err.str();
    EXPECT_NE(err.str().find("dataset line 7"), std::string::npos);
    EXPECT_NE(out.str().find("scenarios=6 scored=3 discarded=3"), std::string::npos);
    EXPECT_NE(out.str().find("gate_precision=1.0000"), std::string::npos);
    const auto agg = Json::parse(read_file(tmp / "out/aggregate.json"));
    EXPECT_EQ(agg["dataset_errors"].size(), 1u);
    EXPECT_TRUE(fs::exists(tmp / "out/runs/movistar-adb/report.json"));
}

TEST(Eval, EmptyDataset) {
    TempDir tmp;
    ASSERT_EQ(ingest(fixture("desk_wiki"), tmp / "idx"), kExitOk);
    write_file(tmp / "d.jsonl", "");
    EvalCommandOptions opts;
    opts.index_dir = tmp / "idx";
    opts.dataset = tmp / "d.jsonl";
    opts.out_dir = tmp / "out";
    std::ostringstream out, err;
    EXPECT_EQ(cmd_eval(offline_settings(), opts, out, err), kExitFailed);
    EXPECT_NE(err.str().find("EmptyInput"), std::string::npos);
}
