#include <gtest/gtest.h>

#include "ctxintel/store.hpp"
#include "ctxintel/text.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace ctxintel;
using namespace testing_support;

namespace {

constexpr int kSize = 1500;
constexpr int kOverlap = 150;

LocalDocument doc(std::string id, std::string body, SourceKind kind = SourceKind::ConfigurationWiki) {
    return LocalDocument{id, id, std::move(body), kind};
}

std::vector<LocalDocument> toy_docs() {
    return {
        doc("cfg.md", "Denver office complex has Installed Movistar 4G router with ADB service configured on port 22"),
        doc("nat.md", "Z-tier NAT server behind the router forwards traffic from port 5555"),
        doc("mnt.md", "Platform team maintenance window: services suspended on Saturday",
            SourceKind::MaintenanceTracker),
        doc("vpn.md", "Ivanti Connect Secure gateway sits on management VLAN 40"),
        doc("jen.md", "Jenkins controller with CLI enabled and anonymous read access"),
    };
}

/// Embedder of a fixed, small dimension for mismatch tests.
class TinyEmbedder final : public EmbeddingBackend {
public:
    std::vector<Vector> embed(std::span<const std::string> texts) override {
        return std::vector<Vector>(texts.size(), Vector{1, 0, 0, 0});
    }
    std::size_t dimension() override { return 4; }
    std::string model_id() const override { return "tiny-4"; }
};

}  // namespace

TEST(StoreIngest, ConfigurationWikiChunkContainsDevice) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    const auto body = read_file(fixture("movistar_wiki/configuration_wiki.md"));
    const auto ids = store.ingest_document(doc("configuration_wiki.md", body));
    ASSERT_GE(ids.size(), 1u);
    bool found = false;
    for (const auto& id : ids)
        if (store.chunk(id)->text.find("Movistar 4G router (DEN_MVS4_2023)") != std::string::npos) found = true;
    EXPECT_TRUE(found);
    EXPECT_EQ(ids[0], "configuration_wiki.md#0");
}

TEST(StoreIngest, EmptyBodyRecordsDocumentWithoutChunks) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    EXPECT_TRUE(store.ingest_document(doc("empty.md", "")).empty());
    EXPECT_EQ(store.document_count(), 1u);
    EXPECT_EQ(store.chunk_count(), 0u);
}

TEST(StoreIngest, ReingestReplaces) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    for (const auto& d : toy_docs()) store.ingest_document(d);
    const auto before = store.chunk_count();
    for (const auto& d : toy_docs()) store.ingest_document(d);
    EXPECT_EQ(store.chunk_count(), before);
    store.ingest_document(doc("cfg.md", "replacement text about printers"));
    EXPECT_EQ(store.chunk_count(), before);
    EXPECT_TRUE(store.sparse_search("Movistar", 5).empty());
    EXPECT_EQ(store.sparse_search("printers", 5).at(0).chunk_id, "cfg.md#0");
}

TEST(StoreSearch, SelfQueryRanksFirst) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    for (const auto& d : toy_docs()) store.ingest_document(d);
    const auto target = *store.chunk("vpn.md#0");
    const auto hits = store.dense_search(target.embedding, 3, SimilarityMetric::Cosine);
    ASSERT_FALSE(hits.empty());
    EXPECT_EQ(hits[0].chunk_id, "vpn.md#0");
    EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
    EXPECT_EQ(store.dense_search(target.embedding, 100, SimilarityMetric::Dot).size(), store.chunk_count());
    EXPECT_NEAR(store.relevance("vpn.md#0", target.embedding), 1.0, 1e-6);
    EXPECT_DOUBLE_EQ(store.relevance("missing#0", target.embedding), 0.0);
}

TEST(StoreSearch, DenseMatchesExhaustiveScan) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    for (const auto& d : toy_docs()) store.ingest_document(d);
    std::map<std::string, std::vector<double>> vectors;
    for (const auto& c : store.chunks()) vectors[c.chunk_id] = c.embedding;
    const auto q = HashingEmbedder().embed_one("router port maintenance");
    const std::pair<SimilarityMetric, oracle::Metric> metrics[] = {{SimilarityMetric::Cosine, oracle::Metric::Cosine},
                                                                   {SimilarityMetric::Dot, oracle::Metric::Dot},
                                                                   {SimilarityMetric::Euclidean, oracle::Metric::Euclidean}};
    for (const auto& [m, om] : metrics) {
        const auto got = store.dense_search(q, 10, m);
        const auto want = oracle::dense(vectors, q, om);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].chunk_id, want[i].first);
            EXPECT_NEAR(got[i].score, want[i].second, 1e-9);
        }
    }
}

TEST(StoreSearch, QueryDimensionChecked) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    store.ingest_document(toy_docs()[0]);
    const std::vector<double> wrong(7, 0.1);
    EXPECT_THROW(store.dense_search(wrong, 3, SimilarityMetric::Cosine), DimensionMismatch);
}

TEST(StoreSearch, TopRelevance) {
    LocalKnowledgeStore empty(offline_gateway(), kSize, kOverlap);
    EngineConfig config;
    const auto q = HashingEmbedder().embed_one("anything");
    EXPECT_DOUBLE_EQ(empty.top_relevance("anything", q, config), 0.0);

    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    for (const auto& d : toy_docs()) store.ingest_document(d);
    const auto text = toy_docs()[3].body;
    EXPECT_NEAR(store.top_relevance(text, HashingEmbedder().embed_one(text), config), 1.0, 1e-6);
}

TEST(StoreSearch, EnsembleAndMmr) {
    LocalKnowledgeStore store(offline_gateway(), kSize, kOverlap);
    for (const auto& d : toy_docs()) store.ingest_document(d);
    EngineConfig config;
    const std::string query = "Movistar router port";
    const auto q = HashingEmbedder().embed_one(query);
    const auto fused = store.ensemble_search(query, q, config);
    ASSERT_FALSE(fused.empty());
    EXPECT_LE(fused.size(), static_cast<std::size_t>(config.fused_top_k));
    EXPECT_EQ(fused[0].chunk_id, "cfg.md#0");
    const auto reranked = store.mmr_rerank(fused, q, 1.0, 3);
    EXPECT_EQ(reranked.size(), std::min<std::size_t>(3, fused.size()));
}

TEST(StorePersistence, ReopenRestoresEverything) {
    TempDir tmp;
    std::vector<KnowledgeChunk> before;
    {
        auto store = LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap);
        for (const auto& d : toy_docs()) store->ingest_document(d);
        store->ingest_document(doc("cfg.md", "second version of the configuration page mentioning Movistar"));
        before = store->chunks();
    }
    EXPECT_TRUE(LocalKnowledgeStore::exists(tmp / "idx"));
    auto reopened = LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap,
                                              LocalKnowledgeStore::Mode::ReadOnly);
    auto after = reopened->chunks();
    auto by_id = [](const KnowledgeChunk& a, const KnowledgeChunk& b) { return a.chunk_id < b.chunk_id; };
    std::sort(before.begin(), before.end(), by_id);
    std::sort(after.begin(), after.end(), by_id);
    EXPECT_EQ(after, before);
    EXPECT_EQ(reopened->document_count(), 5u);
    EXPECT_EQ(reopened->sparse_search("second version", 3).at(0).chunk_id, "cfg.md#0");
    EXPECT_THROW(reopened->ingest_document(toy_docs()[0]), StorageError);
}

TEST(StorePersistence, TornLastLineTolerated) {
    TempDir tmp;
    {
        auto store = LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap);
        for (const auto& d : toy_docs()) store->ingest_document(d);
    }
    {
        std::ofstream log(tmp / "idx/records.log", std::ios::app);
        log << "{\"op\":\"put\",\"doc\":{";
    }
    auto reopened = LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap);
    EXPECT_EQ(reopened->document_count(), 5u);
}

TEST(StorePersistence, MissingIndexReadOnly) {
    TempDir tmp;
    EXPECT_FALSE(LocalKnowledgeStore::exists(tmp / "none"));
    EXPECT_THROW(LocalKnowledgeStore::open(tmp / "none", offline_gateway(), kSize, kOverlap,
                                           LocalKnowledgeStore::Mode::ReadOnly),
                 StorageError);
}

TEST(StorePersistence, RefusesOtherVersionsAndEmbedders) {
    TempDir tmp;
    { LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap)->ingest_document(toy_docs()[0]); }
    EXPECT_THROW(LocalKnowledgeStore::open(tmp / "idx", offline_gateway(nullptr, std::make_shared<TinyEmbedder>()),
                                           kSize, kOverlap),
                 StorageError);

    auto manifest = Json::parse(read_file(tmp / "idx/manifest.json"));
    manifest["format_version"] = 99;
    write_file(tmp / "idx/manifest.json", manifest.dump());
    EXPECT_THROW(LocalKnowledgeStore::open(tmp / "idx", offline_gateway(), kSize, kOverlap), StorageError);
}

TEST(IndexLocking, SharedCoexistExclusiveRefused) {
    TempDir tmp;
    fs::create_directories(tmp / "idx");
    {
        IndexLock a(tmp / "idx", IndexLock::Kind::Shared);
        IndexLock b(tmp / "idx", IndexLock::Kind::Shared);
        EXPECT_THROW(IndexLock(tmp / "idx", IndexLock::Kind::Exclusive), StorageError);
    }
    IndexLock exclusive(tmp / "idx", IndexLock::Kind::Exclusive);
    EXPECT_THROW(IndexLock(tmp / "idx", IndexLock::Kind::Shared), StorageError);
}

TEST(Corpus, LoadsFixtureWikiWithSidecars) {
    const auto corpus = load_corpus(fixture("desk_wiki"));
    EXPECT_TRUE(corpus.errors.empty());
    ASSERT_EQ(corpus.documents.size(), 5u);
    EXPECT_EQ(corpus.documents[0].doc_id, "build_server.md");
    EXPECT_EQ(corpus.documents[0].source_kind, SourceKind::TrustedCtiReport);
    EXPECT_EQ(corpus.fingerprint.size(), 64u);
    EXPECT_EQ(load_corpus(fixture("desk_wiki")).fingerprint, corpus.fingerprint);
}

TEST(Corpus, ReportsBadFiles) {
    TempDir tmp;
    write_file(tmp / "ok.md", "fine");
    write_file(tmp / "sub/bad.txt", std::string("\xFF\xFE broken"));
    write_file(tmp / "ignored.bin", "x");
    fs::create_symlink(tmp / "nowhere.md", tmp / "dangling.md");
    const auto corpus = load_corpus(tmp.path());
    ASSERT_EQ(corpus.documents.size(), 1u);
    EXPECT_EQ(corpus.documents[0].doc_id, "ok.md");
    EXPECT_EQ(corpus.documents[0].title, "ok");
    ASSERT_EQ(corpus.errors.size(), 2u);
}

TEST(Corpus, FingerprintTracksContent) {
    TempDir tmp;
    write_file(tmp / "a.md", "one");
    const auto first = load_corpus(tmp.path()).fingerprint;
    write_file(tmp / "a.md", "two");
    EXPECT_NE(load_corpus(tmp.path()).fingerprint, first);
}
