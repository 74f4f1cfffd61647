#include "fusion_forge/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fusion_forge/error.hpp"

namespace fusion_forge {

namespace {

auto dot(std::span<const double> a, std::span<const double> b) -> double {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

void require_same_dim(const EmbeddingMatrix& q, const EmbeddingMatrix& p) {
    if (q.dim() != p.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(q.dim()) +
                                                      " differs from document dimension " + std::to_string(p.dim()));
    }
}

}  // namespace

auto cosine(const EmbeddingMatrix& q, const EmbeddingMatrix& p) -> double {
    if (q.rows() != 1 || p.rows() != 1) {
        throw Error(ErrorCode::InvalidParameter, "cosine similarity needs single-vector embeddings");
    }
    require_same_dim(q, p);
    const auto a = q.row(0);
    const auto b = p.row(0);
    const double na = std::sqrt(dot(a, a));
    const double nb = std::sqrt(dot(b, b));
    if (na == 0.0 || nb == 0.0) {
        throw Error(ErrorCode::ZeroNormVector, "cosine similarity of a zero vector");
    }
    return dot(a, b) / (na * nb);
}

auto maxsim(const EmbeddingMatrix& q, const EmbeddingMatrix& p) -> double {
    require_same_dim(q, p);
    double total = 0.0;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        const auto qi = q.row(i);
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p.rows(); ++j) best = std::max(best, dot(qi, p.row(j)));
        total += best;
    }
    return total;
}

auto score(ScorerKind kind, const EmbeddingMatrix& query, const EmbeddingMatrix& doc) -> double {
    return kind == ScorerKind::Cosine ? cosine(query, doc) : maxsim(query, doc);
}

auto search_top_k(const QueryId& query_id, const EmbeddingMatrix& query, const CorpusIndex& index,
                  std::size_t k) -> RankedList {
    if (k == 0) throw Error(ErrorCode::InvalidParameter, "top-k search needs k >= 1");
    if (query.dim() != index.dim()) {
        throw Error(ErrorCode::DimensionMismatch, "query '" + query_id + "' has dimension " +
                                                      std::to_string(query.dim()) + ", index has " +
                                                      std::to_string(index.dim()));
    }
    std::vector<ScoredDoc> scored;
    scored.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        scored.push_back({index.id(i), score(index.scorer(), query, index.embedding(i))});
    }
    const auto keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const ScoredDoc& a, const ScoredDoc& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.doc_id < b.doc_id;
                      });
    scored.resize(keep);
    return build_ranked_list(query_id, std::move(scored));
}

auto score_pool(const EmbeddingMatrix& query, const CandidatePool& pool, const CorpusIndex& index)
    -> std::vector<double> {
    std::vector<double> scores;
    scores.reserve(pool.size());
    for (const auto& id : pool.doc_ids) scores.push_back(score(index.scorer(), query, index.embedding(id)));
    return scores;
}

void softmax_into(std::span<const double> scores, std::span<double> out) {
    const double shift = *std::max_element(scores.begin(), scores.end());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - shift);
        total += out[i];
    }
    for (auto& p : out) p /= total;
}

auto softmax_distribution(std::span<const double> scores, const CandidatePool& pool) -> Distribution {
    if (pool.empty()) throw Error(ErrorCode::EmptyPool, "softmax over an empty pool");
    if (scores.size() != pool.size()) {
        throw Error(ErrorCode::InvalidParameter, "score vector is not aligned to the pool");
    }
    for (double s : scores) {
        if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteScore, "softmax of a non-finite score");
    }
    Distribution dist{pool, std::vector<double>(scores.size())};
    softmax_into(scores, dist.probs);
    return dist;
}

}  // namespace fusion_forge
