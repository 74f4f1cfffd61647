#include "fusion_forge/fusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "fusion_forge/error.hpp"
#include "fusion_forge/scoring.hpp"

namespace fusion_forge {

namespace {

using RankMap = std::unordered_map<std::string_view, std::size_t>;

auto rank_map(const RankedList& list) -> RankMap {
    RankMap ranks;
    ranks.reserve(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) ranks.emplace(list[i].doc_id, i + 1);
    return ranks;
}

auto rank_or_absent(const RankMap& ranks, const DocId& id, std::size_t k) -> double {
    auto it = ranks.find(id);
    return static_cast<double>(it == ranks.end() ? k + 1 : it->second);
}

auto value_map(const RankedList& list, const std::vector<double>& values)
    -> std::unordered_map<std::string_view, double> {
    std::unordered_map<std::string_view, double> out;
    out.reserve(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) out.emplace(list[i].doc_id, values[i]);
    return out;
}

template <typename ScoreFn>
auto fuse_over_pool(const RankedList& first, const RankedList& second, std::size_t k, ScoreFn&& score_of)
    -> RankedList {
    if (k < 1) throw Error(ErrorCode::InvalidParameter, "fusion cutoff k must be >= 1");
    const auto pool = union_pool({first, second});
    std::vector<ScoredDoc> scored;
    scored.reserve(pool.size());
    for (const auto& id : pool.doc_ids) scored.push_back({id, score_of(id)});
    return build_ranked_list(pool.query_id, std::move(scored)).truncated(k);
}

auto lowercase(std::string_view s) -> std::string {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

auto FusionWeights::make(double alpha) -> FusionWeights {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error(ErrorCode::InvalidParameter, "fusion weight alpha must lie in [0, 1]");
    }
    return FusionWeights{alpha};
}

auto fuse_rrf(const RankedList& first, const RankedList& second, double kappa, std::size_t k,
              FusionWeights weights) -> RankedList {
    if (!(kappa > 0.0)) throw Error(ErrorCode::InvalidParameter, "RRF kappa must be positive");
    const auto w = FusionWeights::make(weights.alpha);
    const auto r1 = rank_map(first);
    const auto r2 = rank_map(second);
    return fuse_over_pool(first, second, k, [&](const DocId& id) {
        return 2.0 * (w.alpha / (kappa + rank_or_absent(r1, id, k)) +
                      (1.0 - w.alpha) / (kappa + rank_or_absent(r2, id, k)));
    });
}

auto fuse_avg_rank(const RankedList& first, const RankedList& second, std::size_t k, FusionWeights weights)
    -> RankedList {
    const auto w = FusionWeights::make(weights.alpha);
    const auto r1 = rank_map(first);
    const auto r2 = rank_map(second);
    return fuse_over_pool(first, second, k, [&](const DocId& id) {
        return -(w.alpha * rank_or_absent(r1, id, k) + (1.0 - w.alpha) * rank_or_absent(r2, id, k));
    });
}

auto normalize_minmax(const RankedList& list) -> std::vector<double> {
    std::vector<double> out;
    if (list.empty()) return out;
    double lo = list[0].score;
    double hi = list[0].score;
    for (const auto& item : list.items()) {
        lo = std::min(lo, item.score);
        hi = std::max(hi, item.score);
    }
    out.reserve(list.size());
    for (const auto& item : list.items()) out.push_back((item.score - lo) / (hi - lo + kMinMaxEpsilon));
    return out;
}

auto normalize_softmax(const RankedList& list) -> std::vector<double> {
    std::vector<double> scores;
    scores.reserve(list.size());
    for (const auto& item : list.items()) scores.push_back(item.score);
    std::vector<double> out(scores.size());
    if (!scores.empty()) softmax_into(scores, out);
    return out;
}

auto fuse_scores(const RankedList& first, const RankedList& second, ScoreNormalization norm, std::size_t k,
                 FusionWeights weights) -> RankedList {
    const auto w = FusionWeights::make(weights.alpha);
    auto normalize = norm == ScoreNormalization::MinMax ? normalize_minmax : normalize_softmax;
    const auto n1 = value_map(first, normalize(first));
    const auto n2 = value_map(second, normalize(second));
    return fuse_over_pool(first, second, k, [&](const DocId& id) {
        auto a = n1.find(id);
        auto b = n2.find(id);
        return w.alpha * (a == n1.end() ? 0.0 : a->second) + (1.0 - w.alpha) * (b == n2.end() ? 0.0 : b->second);
    });
}

auto to_string(FusionMethod method) -> std::string {
    switch (method) {
        case FusionMethod::Rrf: return "rrf";
        case FusionMethod::AvgRank: return "avg-rank";
        case FusionMethod::ScoreMinMax: return "minmax";
        case FusionMethod::ScoreSoftmax: return "softmax";
    }
    return "unknown";
}

auto parse_fusion_method(std::string_view name) -> FusionMethod {
    const auto n = lowercase(name);
    if (n == "rrf") return FusionMethod::Rrf;
    if (n == "avg-rank" || n == "avgrank") return FusionMethod::AvgRank;
    if (n == "minmax" || n == "score-minmax") return FusionMethod::ScoreMinMax;
    if (n == "softmax" || n == "score-softmax") return FusionMethod::ScoreSoftmax;
    throw Error(ErrorCode::InvalidParameter, "unknown fusion method '" + std::string(name) + "'");
}

auto fuse(FusionMethod method, const RankedList& first, const RankedList& second, std::size_t k,
          FusionWeights weights, double kappa) -> RankedList {
    switch (method) {
        case FusionMethod::Rrf: return fuse_rrf(first, second, kappa, k, weights);
        case FusionMethod::AvgRank: return fuse_avg_rank(first, second, k, weights);
        case FusionMethod::ScoreMinMax: return fuse_scores(first, second, ScoreNormalization::MinMax, k, weights);
        case FusionMethod::ScoreSoftmax: return fuse_scores(first, second, ScoreNormalization::Softmax, k, weights);
    }
    throw Error(ErrorCode::InvalidParameter, "unknown fusion method");
}

}  // namespace fusion_forge
