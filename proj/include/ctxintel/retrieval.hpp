#pragma once

// Index-free retrieval primitives: chunking, similarity metrics, BM25,
// reciprocal-rank fusion and MMR. The persistent store composes these.

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxintel/domain.hpp"

namespace ctxintel {

struct RankedHit {
    std::string chunk_id;
    double score = 0.0;
    int rank = 0;  // 1-based
    Retriever retriever = Retriever::Dense;

    bool operator==(const RankedHit&) const = default;
};

void to_json(Json& j, const RankedHit& v);
void from_json(const Json& j, RankedHit& v);

namespace retrieval {

struct TextChunk {
    TextSpan span;  // in code points
    std::string text;
};

/// Fixed-stride character chunking. Chunks start at 0 and advance by
/// `chunk_size - overlap` code points; the last chunk may be shorter and ends
/// exactly at the end of `body`. Empty body yields no chunks.
std::vector<TextChunk> chunk_text(std::string_view body, int chunk_size, int overlap);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
/// 0 when either vector has zero norm.
double cosine(std::span<const double> a, std::span<const double> b);
double euclidean(std::span<const double> a, std::span<const double> b);

/// Higher is better for every metric: euclidean distance is negated.
double similarity(SimilarityMetric metric, std::span<const double> a, std::span<const double> b);

/// Sorts (id, score) pairs by descending score, ties by ascending id, keeps
/// the first `k` and assigns ranks 1..n.
std::vector<RankedHit> rank_scores(std::vector<std::pair<std::string, double>> scored, int k,
                                   Retriever retriever);

/// Okapi BM25 over lowercased alphanumeric tokens. Query terms are
/// deduplicated; idf = ln(1 + (N - df + 0.5) / (df + 0.5)).
class Bm25Index {
public:
    static constexpr double kK1 = 1.2;
    static constexpr double kB = 0.75;

    void add(const std::string& chunk_id, std::string_view text);
    void remove(const std::string& chunk_id);
    void clear();

    /// Chunks sharing no term with the query are not returned.
    std::vector<RankedHit> search(std::string_view query, int k) const;

    std::size_t size() const noexcept { return doc_lengths_.size(); }

private:
    std::unordered_map<std::string, std::unordered_map<std::string, int>> postings_;
    std::unordered_map<std::string, std::size_t> doc_lengths_;
    std::unordered_map<std::string, std::vector<std::string>> doc_terms_;
    std::size_t total_length_ = 0;
};

/// fused(c) = sum over lists of 1 / (rrf_k + rank). Descending fused score,
/// ties by ascending chunk id; the top `top_k` are returned as Fused hits.
std::vector<RankedHit> reciprocal_rank_fusion(std::span<const std::vector<RankedHit>> lists,
                                              int rrf_k, int top_k);

struct MmrCandidate {
    RankedHit hit;
    std::span<const double> embedding;
};

/// Greedy maximal marginal relevance with cosine similarity:
/// argmax  lambda * sim(c, q) - (1 - lambda) * max_{s in selected} sim(c, s).
/// Ties go to the candidate with the better prior rank. Output scores are
/// the MMR objective at selection time.
std::vector<RankedHit> mmr_select(std::span<const MmrCandidate> candidates,
                                  std::span<const double> query, double lambda, int k);

}  // namespace retrieval
}  // namespace ctxintel
