#include "ctxintel/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "ctxintel/text.hpp"

namespace ctxintel {

namespace fs = std::filesystem;

namespace {

constexpr char kVectorMagic[8] = {'C', 'T', 'X', 'V', 'E', 'C', '0', '1'};
constexpr std::size_t kVectorHeader = sizeof(kVectorMagic) + sizeof(std::uint64_t);

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    const auto tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError("cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw StorageError("cannot flush " + tmp.string());
    }
    fs::rename(tmp, path);
}

}  // namespace

LocalKnowledgeStore::LocalKnowledgeStore(std::shared_ptr<GenerationGateway> gateway, int chunk_size,
                                         int chunk_overlap)
    : gateway_(std::move(gateway)), chunk_size_(chunk_size), chunk_overlap_(chunk_overlap) {
    if (chunk_size_ < 1 || chunk_overlap_ <= 0 || chunk_overlap_ >= chunk_size_)
        throw ConfigError("chunk_overlap", "must satisfy 0 < chunk_overlap < chunk_size");
    dimension_ = gateway_->dimension();
}

bool LocalKnowledgeStore::exists(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

std::unique_ptr<LocalKnowledgeStore> LocalKnowledgeStore::open(const fs::path& dir,
                                                               std::shared_ptr<GenerationGateway> gateway,
                                                               int chunk_size, int chunk_overlap, Mode mode) {
    auto store = std::make_unique<LocalKnowledgeStore>(std::move(gateway), chunk_size, chunk_overlap);
    store->dir_ = dir;
    store->mode_ = mode;
    const auto manifest_path = dir / "manifest.json";
    const std::string model = store->gateway_->embedding_model_id();

    if (!fs::exists(manifest_path)) {
        if (mode == Mode::ReadOnly)
            throw StorageError("no index at " + dir.string() + "; build one with `ctxintel ingest`");
        fs::create_directories(dir);
        const Json manifest{{"format", "ctxintel-index"},
                            {"format_version", kIndexFormatVersion},
                            {"dimension", store->dimension_},
                            {"embedding_model", model}};
        std::ofstream vec(dir / "vectors.bin", std::ios::binary | std::ios::trunc);
        const std::uint64_t dim = store->dimension_;
        vec.write(kVectorMagic, sizeof kVectorMagic);
        vec.write(reinterpret_cast<const char*>(&dim), sizeof dim);
        vec.close();
        std::ofstream(dir / "records.log", std::ios::binary | std::ios::trunc).close();
        write_file_atomic(manifest_path, manifest.dump(2) + "\n");
        return store;
    }

    Json manifest;
    try {
        manifest = Json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw StorageError("corrupt index manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "ctxintel-index")
        throw StorageError(dir.string() + " is not a ctxintel index");
    const int version = manifest.value("format_version", -1);
    if (version != kIndexFormatVersion)
        throw StorageError("index format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kIndexFormatVersion) + ")");
    const auto dim = manifest.value("dimension", std::size_t{0});
    if (dim != store->dimension_)
        throw StorageError("index dimension " + std::to_string(dim) + " differs from embedder dimension " +
                           std::to_string(store->dimension_));
    const auto built_with = manifest.value("embedding_model", std::string());
    if (built_with != model)
        throw StorageError("index was built with embedding model '" + built_with + "', current is '" + model + "'");
    store->load();
    return store;
}

void LocalKnowledgeStore::load() {
    const auto vec_path = *dir_ / "vectors.bin";
    const std::string raw = read_file(vec_path);
    if (raw.size() < kVectorHeader || std::memcmp(raw.data(), kVectorMagic, sizeof kVectorMagic) != 0)
        throw StorageError("corrupt vector file " + vec_path.string());
    std::uint64_t dim = 0;
    std::memcpy(&dim, raw.data() + sizeof kVectorMagic, sizeof dim);
    if (dim != dimension_) throw StorageError("vector file dimension mismatch");
    const std::size_t row_bytes = dimension_ * sizeof(double);
    const std::uint64_t rows = (raw.size() - kVectorHeader) / row_bytes;

    std::ifstream log(*dir_ / "records.log", std::ios::binary);
    if (!log) throw StorageError("missing records.log in " + dir_->string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(log, line);)
        if (!line.empty()) lines.push_back(std::move(line));

    for (std::size_t n = 0; n < lines.size(); ++n) {
        Json record;
        try {
            record = Json::parse(lines[n]);
        } catch (const nlohmann::json::exception&) {
            if (n + 1 == lines.size()) break;  // torn final append from an interrupted ingest
            throw StorageError("corrupt record at line " + std::to_string(n + 1) + " of records.log");
        }
        try {
            StoredDocument doc;
            const auto& d = record.at("doc");
            doc.doc_id = d.at("doc_id").get<std::string>();
            doc.title = d.at("title").get<std::string>();
            doc.source_kind = parse_source_kind(d.at("source_kind").get<std::string>());
            std::vector<KnowledgeChunk> chunks;
            for (const auto& c : record.at("chunks")) {
                KnowledgeChunk chunk;
                chunk.chunk_id = c.at("chunk_id").get<std::string>();
                chunk.parent_doc_id = doc.doc_id;
                chunk.text = c.at("text").get<std::string>();
                chunk.span = {c.at("start").get<std::size_t>(), c.at("end").get<std::size_t>()};
                chunk.source_kind = doc.source_kind;
                const auto row = c.at("vector").get<std::uint64_t>();
                if (row >= rows) throw StorageError("vector row " + std::to_string(row) + " out of range");
                chunk.embedding.resize(dimension_);
                std::memcpy(chunk.embedding.data(), raw.data() + kVectorHeader + row * row_bytes, row_bytes);
                doc.chunk_ids.push_back(chunk.chunk_id);
                chunks.push_back(std::move(chunk));
            }
            apply(doc, std::move(chunks));
        } catch (const nlohmann::json::exception& e) {
            throw StorageError("invalid record at line " + std::to_string(n + 1) + ": " + e.what());
        }
    }
    vectors_written_ = rows;
}

void LocalKnowledgeStore::persist(const StoredDocument& doc, const std::vector<KnowledgeChunk>& chunks) {
    {
        std::ofstream vec(*dir_ / "vectors.bin", std::ios::binary | std::ios::app);
        if (!vec) throw StorageError("cannot append to vectors.bin");
        for (const auto& c : chunks)
            vec.write(reinterpret_cast<const char*>(c.embedding.data()),
                      static_cast<std::streamsize>(c.embedding.size() * sizeof(double)));
        if (!vec.flush()) throw StorageError("cannot flush vectors.bin");
    }
    Json record{{"op", "put"},
                {"doc", {{"doc_id", doc.doc_id}, {"title", doc.title}, {"source_kind", to_string(doc.source_kind)}}},
                {"chunks", Json::array()}};
    auto row = vectors_written_;
    for (const auto& c : chunks)
        record["chunks"].push_back({{"chunk_id", c.chunk_id},
                                    {"text", c.text},
                                    {"start", c.span.start},
                                    {"end", c.span.end},
                                    {"vector", row++}});
    std::ofstream log(*dir_ / "records.log", std::ios::binary | std::ios::app);
    if (!log) throw StorageError("cannot append to records.log");
    log << record.dump() << '\n';
    if (!log.flush()) throw StorageError("cannot flush records.log");
    vectors_written_ = row;
}

void LocalKnowledgeStore::apply(const StoredDocument& doc, std::vector<KnowledgeChunk> chunks) {
    if (const auto old = docs_.find(doc.doc_id); old != docs_.end()) {
        for (const auto& id : old->second.chunk_ids) bm25_.remove(id);
        std::erase_if(chunks_, [&](const KnowledgeChunk& c) { return c.parent_doc_id == doc.doc_id; });
    }
    for (auto& c : chunks) {
        bm25_.add(c.chunk_id, c.text);
        chunks_.push_back(std::move(c));
    }
    chunk_index_.clear();
    for (std::size_t i = 0; i < chunks_.size(); ++i) chunk_index_[chunks_[i].chunk_id] = i;
    docs_[doc.doc_id] = doc;
}

std::vector<std::string> LocalKnowledgeStore::ingest_document(const LocalDocument& doc) {
    if (mode_ == Mode::ReadOnly) throw StorageError("index is open read-only");
    if (text::trim(doc.doc_id).empty()) throw InvalidArgument("doc_id is empty");

    const auto pieces = retrieval::chunk_text(doc.body, chunk_size_, chunk_overlap_);
    std::vector<std::string> texts;
    texts.reserve(pieces.size());
    for (const auto& p : pieces) texts.push_back(p.text);

    std::vector<Vector> vectors;
    if (!texts.empty()) {
        try {
            vectors = gateway_->embed(texts);
        } catch (const Error& e) {
            throw EmbeddingBackendError("embedding " + doc.doc_id + " failed: " + e.what());
        }
    }

    StoredDocument stored{doc.doc_id, doc.title, doc.source_kind, {}};
    std::vector<KnowledgeChunk> chunks;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        if (vectors[i].size() != dimension_)
            throw EmbeddingBackendError("embedding of " + doc.doc_id + " has dimension " +
                                        std::to_string(vectors[i].size()));
        KnowledgeChunk c{make_chunk_id(doc.doc_id, pieces[i].span.start), doc.doc_id, pieces[i].text,
                         pieces[i].span, doc.source_kind, std::move(vectors[i])};
        stored.chunk_ids.push_back(c.chunk_id);
        chunks.push_back(std::move(c));
    }

    std::unique_lock lock(mu_);
    if (dir_) persist(stored, chunks);
    apply(stored, std::move(chunks));
    return stored.chunk_ids;
}

void LocalKnowledgeStore::check_dimension(std::span<const double> v) const {
    if (v.size() != dimension_)
        throw DimensionMismatch("query has dimension " + std::to_string(v.size()) + ", index has " +
                                std::to_string(dimension_));
}

std::vector<RankedHit> LocalKnowledgeStore::dense_search(std::span<const double> query, int k,
                                                         SimilarityMetric metric) const {
    check_dimension(query);
    if (k < 1) throw InvalidArgument("k must be >= 1");
    std::shared_lock lock(mu_);
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(chunks_.size());
    for (const auto& c : chunks_) scored.emplace_back(c.chunk_id, retrieval::similarity(metric, c.embedding, query));
    return retrieval::rank_scores(std::move(scored), k, Retriever::Dense);
}

std::vector<RankedHit> LocalKnowledgeStore::sparse_search(std::string_view query, int k) const {
    std::shared_lock lock(mu_);
    return bm25_.search(query, k);
}

std::vector<RankedHit> LocalKnowledgeStore::ensemble_search(std::string_view query_text,
                                                            std::span<const double> query_embedding,
                                                            const EngineConfig& config) const {
    check_dimension(query_embedding);
    std::shared_lock lock(mu_);
    std::vector<std::pair<std::string, double>> scored;
    for (const auto& c : chunks_)
        scored.emplace_back(c.chunk_id, retrieval::similarity(config.similarity_metric, c.embedding, query_embedding));
    const std::vector<std::vector<RankedHit>> lists{
        bm25_.search(query_text, config.sparse_top_k),
        retrieval::rank_scores(std::move(scored), config.dense_top_k, Retriever::Dense)};
    return retrieval::reciprocal_rank_fusion(lists, config.rrf_k, config.fused_top_k);
}

std::vector<RankedHit> LocalKnowledgeStore::mmr_rerank(const std::vector<RankedHit>& candidates,
                                                       std::span<const double> query_embedding, double lambda,
                                                       int k) const {
    check_dimension(query_embedding);
    std::shared_lock lock(mu_);
    std::vector<retrieval::MmrCandidate> pool;
    pool.reserve(candidates.size());
    for (const auto& hit : candidates) {
        const auto it = chunk_index_.find(hit.chunk_id);
        if (it == chunk_index_.end()) throw InvalidArgument("unknown chunk " + hit.chunk_id);
        pool.push_back({hit, chunks_[it->second].embedding});
    }
    return retrieval::mmr_select(pool, query_embedding, lambda, k);
}

double LocalKnowledgeStore::top_relevance(std::string_view query_text, std::span<const double> query_embedding,
                                          const EngineConfig& config) const {
    if (chunk_count() == 0) return 0.0;
    double best = 0.0;
    for (const auto& hit : ensemble_search(query_text, query_embedding, config))
        best = std::max(best, relevance(hit.chunk_id, query_embedding));
    return best;
}

double LocalKnowledgeStore::relevance(std::string_view chunk_id, std::span<const double> query_embedding) const {
    check_dimension(query_embedding);
    std::shared_lock lock(mu_);
    const auto it = chunk_index_.find(std::string(chunk_id));
    if (it == chunk_index_.end()) return 0.0;
    return std::clamp(retrieval::cosine(chunks_[it->second].embedding, query_embedding), 0.0, 1.0);
}

std::optional<KnowledgeChunk> LocalKnowledgeStore::chunk(std::string_view chunk_id) const {
    std::shared_lock lock(mu_);
    const auto it = chunk_index_.find(std::string(chunk_id));
    if (it == chunk_index_.end()) return std::nullopt;
    return chunks_[it->second];
}

std::vector<KnowledgeChunk> LocalKnowledgeStore::chunks() const {
    std::shared_lock lock(mu_);
    return chunks_;
}

std::vector<StoredDocument> LocalKnowledgeStore::documents() const {
    std::shared_lock lock(mu_);
    std::vector<StoredDocument> out;
    for (const auto& [_, d] : docs_) out.push_back(d);
    return out;
}

std::size_t LocalKnowledgeStore::chunk_count() const {
    std::shared_lock lock(mu_);
    return chunks_.size();
}

std::size_t LocalKnowledgeStore::document_count() const {
    std::shared_lock lock(mu_);
    return docs_.size();
}

IndexLock::IndexLock(const fs::path& dir, Kind kind) {
    fs::create_directories(dir);
    const auto path = dir / "LOCK";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw StorageError("cannot open " + path.string() + ": " + std::strerror(errno));
    const int op = (kind == Kind::Shared ? LOCK_SH : LOCK_EX) | LOCK_NB;
    if (::flock(fd_, op) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw StorageError(kind == Kind::Exclusive
                               ? "index " + dir.string() + " is in use (is `ctxintel serve` running?)"
                               : "index " + dir.string() + " is locked by a running ingest");
    }
}

IndexLock::~IndexLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

Corpus load_corpus(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw StorageError("corpus directory not found: " + dir.string());
    Corpus corpus;
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        } else if (entry.is_symlink() && !fs::exists(entry.path())) {
            corpus.errors.push_back({fs::relative(entry.path(), dir).generic_string(), "dangling link"});
        }
    }
    std::sort(files.begin(), files.end());

    std::string fingerprint_input;
    for (const auto& path : files) {
        const auto rel = fs::relative(path, dir).generic_string();
        const auto ext = path.extension().string();
        const bool is_doc = ext == ".txt" || ext == ".md" || ext == ".markdown";
        const bool is_sidecar = rel.ends_with(".meta.json");
        if (!is_doc && !is_sidecar) continue;
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            if (!in) {
                corpus.errors.push_back({rel, "cannot read file"});
                continue;
            }
            std::ostringstream ss;
            ss << in.rdbuf();
            if (in.bad()) {
                corpus.errors.push_back({rel, "read error"});
                continue;
            }
            bytes = ss.str();
        }
        fingerprint_input += rel;
        fingerprint_input.push_back('\0');
        fingerprint_input += std::to_string(bytes.size());
        fingerprint_input.push_back('\0');
        fingerprint_input += bytes;
        if (!is_doc) continue;
        if (!text::is_valid_utf8(bytes)) {
            corpus.errors.push_back({rel, "not valid UTF-8"});
            continue;
        }

        LocalDocument doc{rel, path.stem().string(), std::move(bytes), SourceKind::Other};
        const auto sidecar = fs::path(path.string() + ".meta.json");
        if (fs::exists(sidecar)) {
            try {
                std::ifstream in(sidecar, std::ios::binary);
                if (!in) throw StorageError("cannot read sidecar");
                const auto meta = Json::parse(in);
                if (meta.contains("source_kind")) doc.source_kind = parse_source_kind(meta.at("source_kind").get<std::string>());
                if (meta.contains("title")) doc.title = meta.at("title").get<std::string>();
            } catch (const std::exception& e) {
                corpus.errors.push_back({rel + ".meta.json", e.what()});
                continue;
            }
        }
        corpus.documents.push_back(std::move(doc));
    }
    corpus.fingerprint = text::sha256_hex(fingerprint_input);
    return corpus;
}

}  // namespace ctxintel
