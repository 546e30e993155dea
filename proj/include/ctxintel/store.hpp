#pragma once

// Local knowledge database: chunked, embedded organizational documents in a
// hybrid (BM25 + dense) index with optional on-disk persistence.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxintel/domain.hpp"
#include "ctxintel/gateway.hpp"
#include "ctxintel/retrieval.hpp"

namespace ctxintel {

struct LocalDocument {
    std::string doc_id;
    std::string title;
    std::string body;
    SourceKind source_kind = SourceKind::Other;
};

struct StoredDocument {
    std::string doc_id;
    std::string title;
    SourceKind source_kind = SourceKind::Other;
    std::vector<std::string> chunk_ids;
};

inline constexpr int kIndexFormatVersion = 1;

/// Index directory layout (format version 1):
///   manifest.json  {"format":"ctxintel-index","format_version":1,"dimension":D,"embedding_model":M}
///   records.log    one JSON line per ingested document (append-only; last write per doc_id wins)
///   vectors.bin    "CTXVEC01" + u64 dimension, then little-endian float64 rows, append-only
///   LOCK           advisory flock target, see IndexLock
class LocalKnowledgeStore {
public:
    enum class Mode { ReadOnly, ReadWrite };

    /// In-memory store; nothing touches disk.
    LocalKnowledgeStore(std::shared_ptr<GenerationGateway> gateway, int chunk_size, int chunk_overlap);

    /// Creates the directory if needed. Throws StorageError on a format or
    /// embedder mismatch, or when ReadOnly and the index does not exist.
    static std::unique_ptr<LocalKnowledgeStore> open(const std::filesystem::path& dir,
                                                     std::shared_ptr<GenerationGateway> gateway,
                                                     int chunk_size, int chunk_overlap,
                                                     Mode mode = Mode::ReadWrite);

    static bool exists(const std::filesystem::path& dir);

    /// Chunks, embeds and indexes `doc`, replacing any previous version with
    /// the same doc_id. Readers never observe a half-ingested document.
    std::vector<std::string> ingest_document(const LocalDocument& doc);

    std::vector<RankedHit> dense_search(std::span<const double> query_embedding, int k,
                                        SimilarityMetric metric) const;
    std::vector<RankedHit> sparse_search(std::string_view query_text, int k) const;
    /// RRF over sparse (sparse_top_k) and dense (dense_top_k) lists.
    std::vector<RankedHit> ensemble_search(std::string_view query_text,
                                           std::span<const double> query_embedding,
                                           const EngineConfig& config) const;
    std::vector<RankedHit> mmr_rerank(const std::vector<RankedHit>& candidates,
                                      std::span<const double> query_embedding, double lambda,
                                      int k) const;

    /// Best cosine between the query and any fused candidate, clamped to
    /// [0, 1]; 0 for an empty index.
    double top_relevance(std::string_view query_text, std::span<const double> query_embedding,
                         const EngineConfig& config) const;

    /// max(0, cosine(chunk, query)); 0 for unknown ids.
    double relevance(std::string_view chunk_id, std::span<const double> query_embedding) const;

    std::optional<KnowledgeChunk> chunk(std::string_view chunk_id) const;
    std::vector<KnowledgeChunk> chunks() const;
    std::vector<StoredDocument> documents() const;
    std::size_t chunk_count() const;
    std::size_t document_count() const;
    std::size_t dimension() const noexcept { return dimension_; }
    const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

private:
    void check_dimension(std::span<const double> v) const;
    void apply(const StoredDocument& doc, std::vector<KnowledgeChunk> chunks);
    void load();
    void persist(const StoredDocument& doc, const std::vector<KnowledgeChunk>& chunks);

    std::shared_ptr<GenerationGateway> gateway_;
    int chunk_size_;
    int chunk_overlap_;
    std::size_t dimension_ = 0;
    std::optional<std::filesystem::path> dir_;
    Mode mode_ = Mode::ReadWrite;

    mutable std::shared_mutex mu_;
    std::vector<KnowledgeChunk> chunks_;
    std::unordered_map<std::string, std::size_t> chunk_index_;
    std::map<std::string, StoredDocument> docs_;
    retrieval::Bm25Index bm25_;
    std::uint64_t vectors_written_ = 0;
};

/// Advisory inter-process lock on an index directory: the service holds it
/// shared, ingestion needs it exclusive. Released on destruction.
class IndexLock {
public:
    enum class Kind { Shared, Exclusive };

    /// Non-blocking; throws StorageError when the lock is held incompatibly.
    IndexLock(const std::filesystem::path& dir, Kind kind);
    ~IndexLock();
    IndexLock(const IndexLock&) = delete;
    IndexLock& operator=(const IndexLock&) = delete;

private:
    int fd_ = -1;
};

struct CorpusError {
    std::string path;
    std::string message;
};

struct Corpus {
    std::vector<LocalDocument> documents;  // sorted by doc_id
    std::vector<CorpusError> errors;
    std::string fingerprint;               // sha256 over relative paths and bytes
};

/// Loads every .txt / .md / .markdown file under `dir` (recursively). doc_id
/// is the path relative to `dir`. An optional sidecar `<file>.meta.json` may
/// carry "source_kind" and "title".
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace ctxintel
