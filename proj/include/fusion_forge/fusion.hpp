#pragma once

/** \file fusion.hpp
 *  \brief Rank-level and score-level hybrid baselines for two retrievers.
 *
 * Every method works over the union pool of the two top-K lists and returns
 * at most K documents. `FusionWeights::alpha` weighs retriever 1; retriever 2
 * receives `1 - alpha`. The uniform variants correspond to alpha = 0.5.
 */

#include <string>
#include <string_view>
#include <vector>

#include "fusion_forge/core.hpp"

namespace fusion_forge {

inline constexpr double kDefaultRrfKappa = 60.0;
inline constexpr double kMinMaxEpsilon = 1e-6;

struct FusionWeights {
    double alpha{0.5};

    /// Throws InvalidParameter outside [0, 1].
    static auto make(double alpha) -> FusionWeights;
};

enum class ScoreNormalization { MinMax, Softmax };

/// Weighted reciprocal rank fusion. score = 2 [alpha/(kappa+r1) + (1-alpha)/(kappa+r2)]
/// with rank k+1 for absent documents.
auto fuse_rrf(const RankedList& first, const RankedList& second, double kappa,
              std::size_t k, FusionWeights weights = {}) -> RankedList;

/// Weighted average rank; the score is the negated average so that a lower
/// average rank sorts first.
auto fuse_avg_rank(const RankedList& first, const RankedList& second, std::size_t k,
                   FusionWeights weights = {}) -> RankedList;

/// (s - min) / (max - min + eps) over the list's own items, aligned to list order.
auto normalize_minmax(const RankedList& list) -> std::vector<double>;
/// Softmax over the list's own items, aligned to list order.
auto normalize_softmax(const RankedList& list) -> std::vector<double>;

/// Weighted mean of per-retriever normalized scores; documents outside a
/// retriever's list contribute 0 for that retriever.
auto fuse_scores(const RankedList& first, const RankedList& second, ScoreNormalization norm,
                 std::size_t k, FusionWeights weights = {}) -> RankedList;

enum class FusionMethod { Rrf, AvgRank, ScoreMinMax, ScoreSoftmax };

auto to_string(FusionMethod method) -> std::string;
auto parse_fusion_method(std::string_view name) -> FusionMethod;

/// Dispatches to the method; `kappa` is only read by RRF.
auto fuse(FusionMethod method, const RankedList& first, const RankedList& second,
          std::size_t k, FusionWeights weights, double kappa = kDefaultRrfKappa) -> RankedList;

}  // namespace fusion_forge
