#include "ctxintel/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "ctxintel/text.hpp"

namespace ctxintel {

void to_json(Json& j, const RankedHit& v) {
    j = Json{{"chunk_id", v.chunk_id},
             {"score", v.score},
             {"rank", v.rank},
             {"retriever", to_string(v.retriever)}};
}

void from_json(const Json& j, RankedHit& v) {
    v.chunk_id = j.at("chunk_id").get<std::string>();
    v.score = j.at("score").get<double>();
    v.rank = j.at("rank").get<int>();
    v.retriever = parse_retriever(j.at("retriever").get<std::string>());
}

namespace retrieval {

std::vector<TextChunk> chunk_text(std::string_view body, int chunk_size, int overlap) {
    if (chunk_size < 1 || overlap < 0 || overlap >= chunk_size)
        throw InvalidArgument("chunking requires 0 <= overlap < chunk_size");
    std::vector<TextChunk> chunks;
    const auto offsets = text::code_point_offsets(body);
    const std::size_t length = offsets.size() - 1;
    if (length == 0) return chunks;

    const auto size = static_cast<std::size_t>(chunk_size);
    const auto stride = size - static_cast<std::size_t>(overlap);
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(start + size, length);
        chunks.push_back({{start, end}, std::string(body.substr(offsets[start], offsets[end] - offsets[start]))});
        if (end == length) break;
    }
    return chunks;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

double similarity(SimilarityMetric metric, std::span<const double> a, std::span<const double> b) {
    switch (metric) {
        case SimilarityMetric::Cosine: return cosine(a, b);
        case SimilarityMetric::Dot: return dot(a, b);
        case SimilarityMetric::Euclidean: return -euclidean(a, b);
    }
    return 0.0;
}

std::vector<RankedHit> rank_scores(std::vector<std::pair<std::string, double>> scored, int k,
                                   Retriever retriever) {
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (k >= 0 && scored.size() > static_cast<std::size_t>(k)) scored.resize(static_cast<std::size_t>(k));
    std::vector<RankedHit> hits;
    hits.reserve(scored.size());
    int rank = 0;
    for (auto& [id, score] : scored) hits.push_back({std::move(id), score, ++rank, retriever});
    return hits;
}

void Bm25Index::add(const std::string& chunk_id, std::string_view body) {
    remove(chunk_id);
    const auto tokens = text::tokenize(body);
    std::vector<std::string> terms;
    for (const auto& t : tokens) {
        auto& tf = postings_[t][chunk_id];
        if (tf++ == 0) terms.push_back(t);
    }
    doc_lengths_[chunk_id] = tokens.size();
    doc_terms_[chunk_id] = std::move(terms);
    total_length_ += tokens.size();
}

void Bm25Index::remove(const std::string& chunk_id) {
    const auto it = doc_lengths_.find(chunk_id);
    if (it == doc_lengths_.end()) return;
    total_length_ -= it->second;
    for (const auto& term : doc_terms_[chunk_id]) {
        auto p = postings_.find(term);
        p->second.erase(chunk_id);
        if (p->second.empty()) postings_.erase(p);
    }
    doc_terms_.erase(chunk_id);
    doc_lengths_.erase(it);
}

void Bm25Index::clear() {
    postings_.clear();
    doc_lengths_.clear();
    doc_terms_.clear();
    total_length_ = 0;
}

std::vector<RankedHit> Bm25Index::search(std::string_view query, int k) const {
    if (k < 1) throw InvalidArgument("k must be >= 1");
    const double n = static_cast<double>(doc_lengths_.size());
    if (doc_lengths_.empty()) return {};
    const double avgdl = static_cast<double>(total_length_) / n;

    std::unordered_set<std::string> seen;
    std::unordered_map<std::string, double> scores;
    for (const auto& term : text::tokenize(query)) {
        if (!seen.insert(term).second) continue;
        const auto p = postings_.find(term);
        if (p == postings_.end()) continue;
        const double df = static_cast<double>(p->second.size());
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& [chunk_id, tf] : p->second) {
            const double len = static_cast<double>(doc_lengths_.at(chunk_id));
            const double norm = avgdl > 0.0 ? len / avgdl : 0.0;
            const double f = static_cast<double>(tf);
            scores[chunk_id] += idf * (f * (kK1 + 1.0)) / (f + kK1 * (1.0 - kB + kB * norm));
        }
    }
    return rank_scores({scores.begin(), scores.end()}, k, Retriever::Sparse);
}

std::vector<RankedHit> reciprocal_rank_fusion(std::span<const std::vector<RankedHit>> lists,
                                              int rrf_k, int top_k) {
    std::unordered_map<std::string, double> fused;
    for (const auto& list : lists)
        for (const auto& hit : list) fused[hit.chunk_id] += 1.0 / (rrf_k + hit.rank);
    return rank_scores({fused.begin(), fused.end()}, top_k, Retriever::Fused);
}

std::vector<RankedHit> mmr_select(std::span<const MmrCandidate> candidates,
                                  std::span<const double> query, double lambda, int k) {
    if (lambda < 0.0 || lambda > 1.0) throw InvalidArgument("mmr lambda must lie in [0, 1]");
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Prior rank decides ties, so scan in prior-rank order and only replace on a strict win.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return candidates[a].hit.rank < candidates[b].hit.rank;
    });

    std::vector<double> relevance(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        relevance[i] = cosine(candidates[i].embedding, query);

    std::vector<double> max_redundancy(candidates.size(), -std::numeric_limits<double>::infinity());
    std::vector<bool> taken(candidates.size(), false);
    std::unordered_set<std::string> taken_ids;
    std::vector<RankedHit> out;
    const std::size_t limit = std::min(candidates.size(), static_cast<std::size_t>(std::max(k, 0)));
    while (out.size() < limit) {
        std::size_t best = candidates.size();
        double best_score = -std::numeric_limits<double>::infinity();
        for (const auto i : order) {
            if (taken[i] || taken_ids.contains(candidates[i].hit.chunk_id)) continue;
            const double redundancy = out.empty() ? 0.0 : max_redundancy[i];
            const double score = lambda * relevance[i] - (1.0 - lambda) * redundancy;
            if (best == candidates.size() || score > best_score) {
                best = i;
                best_score = score;
            }
        }
        if (best == candidates.size()) break;
        taken[best] = true;
        taken_ids.insert(candidates[best].hit.chunk_id);
        out.push_back({candidates[best].hit.chunk_id, best_score, static_cast<int>(out.size()) + 1,
                       Retriever::Mmr});
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            if (taken[i]) continue;
            max_redundancy[i] =
                std::max(max_redundancy[i], cosine(candidates[i].embedding, candidates[best].embedding));
        }
    }
    return out;
}

}  // namespace retrieval
}  // namespace ctxintel
