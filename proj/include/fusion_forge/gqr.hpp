#pragma once

/** \file gqr.hpp
 *  \brief Guided query refinement: test-time optimization of the primary
 *  retriever's query embedding toward a consensus with a complementary
 *  retriever, followed by re-scoring of the candidate pool.
 *
 * Per query:
 *   1. top-K search with each retriever, candidate pool from the lists;
 *   2. p2 = softmax of the complementary scores over the pool (held fixed);
 *   3. T Adam steps on the primary query z minimizing a divergence between
 *      p1(z) = softmax of primary scores and the guidance;
 *   4. re-score the pool with z and return the top K.
 *
 * Divergences use the natural logarithm with log arguments floored at
 * kProbabilityFloor.
 */

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fusion_forge/core.hpp"
#include "fusion_forge/scoring.hpp"

namespace fusion_forge {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kMinQueryNorm = 1e-12;

enum class LossVariant {
    KlConsensus,    ///< KL(p_avg || p1), p_avg = (p1 + p2) / 2
    JensenShannon,  ///< (KL(p2 || p_avg) + KL(p1 || p_avg)) / 2
    KlTarget,       ///< KL(p2 || p1)
};

enum class PoolPolicy {
    Union,        ///< both retrievers' top-K lists
    PrimaryOnly,  ///< the primary's top-K list only
};

auto to_string(LossVariant loss) -> std::string;
auto parse_loss_variant(std::string_view name) -> LossVariant;
auto to_string(PoolPolicy policy) -> std::string;
auto parse_pool_policy(std::string_view name) -> PoolPolicy;

struct AdamParams {
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

struct GqrConfig {
    std::size_t iterations{10};
    double step_size{1e-3};
    std::size_t top_k{10};
    LossVariant loss{LossVariant::KlConsensus};
    PoolPolicy pool_policy{PoolPolicy::Union};
    /// Re-search the full primary index with the refined query and add its
    /// top-K to the pool before final scoring.
    bool extra_search{false};
    AdamParams adam{};

    /// Throws InvalidParameter.
    void validate() const;
};

/// Sum P log(P/Q). Throws PoolMismatch when the pools differ.
auto kl_divergence(const Distribution& p, const Distribution& q) -> double;
/// Symmetric Jensen-Shannon divergence, in [0, ln 2].
auto js_divergence(const Distribution& p, const Distribution& q) -> double;

/// Refinement objective at query `z`. `guidance` is the fixed complementary
/// distribution over `pool`.
auto gqr_loss(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
              const Distribution& guidance, LossVariant loss) -> double;

/// Analytic gradient of gqr_loss with respect to every vector of `z`.
/// MaxSim routes each query vector's gradient to its best-matching document
/// vector (lowest index on ties). Cosine throws NearZeroQueryNorm when |z| < 1e-12.
auto gqr_grad(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
              const Distribution& guidance, LossVariant loss) -> EmbeddingMatrix;

/// gqr_loss evaluated in long double throughout. Reference for gradient
/// checks: its rounding error stays far below a central difference's resolution.
auto gqr_loss_extended(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
                       const Distribution& guidance, LossVariant loss) -> long double;

using LossFunction = std::function<double(const EmbeddingMatrix&)>;
using ExtendedLossFunction = std::function<long double(const EmbeddingMatrix&)>;

/// Central differences (L(z + h e_i) - L(z - h e_i)) / 2h for every coordinate.
/// The divisor is the perturbation actually representable in z's storage.
auto finite_diff_grad(const LossFunction& loss, const EmbeddingMatrix& z, double h) -> EmbeddingMatrix;
auto finite_diff_grad_extended(const ExtendedLossFunction& loss, const EmbeddingMatrix& z, double h)
    -> EmbeddingMatrix;

struct AdamState {
    EmbeddingMatrix m;
    EmbeddingMatrix v;
    std::size_t t{0};

    static auto fresh(const EmbeddingMatrix& like) -> AdamState;
};

struct AdamUpdate {
    EmbeddingMatrix z;
    AdamState state;
};

/// Bias-corrected Adam step. Throws DimensionMismatch when shapes disagree.
auto adam_step(const AdamState& state, const EmbeddingMatrix& z, const EmbeddingMatrix& grad,
               double step_size, const AdamParams& params = {}) -> AdamUpdate;

/// Query embeddings and indexes for one query, with roles assigned.
struct GqrProblem {
    QueryId query_id;
    EmbeddingMatrix primary_query;
    EmbeddingMatrix complementary_query;
    std::shared_ptr<const CorpusIndex> primary_index;
    std::shared_ptr<const CorpusIndex> complementary_index;
};

/// Exchanges which retriever is refined and which one guides.
auto swap_roles(GqrProblem problem) -> GqrProblem;

struct GqrTrace {
    RankedList ranking;
    CandidatePool pool;             ///< pool that was finally scored
    std::vector<double> losses;     ///< loss at z(0) .. z(T-1)
    EmbeddingMatrix refined_query;  ///< z(T)
};

/// Refinement and re-scoring given already retrieved top-K lists.
auto refine_query(const GqrProblem& problem, const RankedList& primary_list,
                  const RankedList& complementary_list, const GqrConfig& config) -> GqrTrace;

/// Full per-query pipeline including both top-K searches.
auto guided_query_refinement_traced(const GqrProblem& problem, const GqrConfig& config) -> GqrTrace;
auto guided_query_refinement(const GqrProblem& problem, const GqrConfig& config) -> RankedList;

/// Outcome of comparing an analytic gradient with a numeric one.
struct GradientComparison {
    double max_relative_error{0.0};  ///< over coordinates where either value >= abs_floor
    double max_small_abs_error{0.0}; ///< over coordinates where both values < abs_floor

    [[nodiscard]] auto passes(double rel_tolerance, double abs_tolerance) const -> bool {
        return max_relative_error <= rel_tolerance && max_small_abs_error <= abs_tolerance;
    }
};

auto compare_gradients(const EmbeddingMatrix& analytic, const EmbeddingMatrix& numeric,
                       double abs_floor = 1e-8) -> GradientComparison;

}  // namespace fusion_forge
