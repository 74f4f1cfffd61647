#pragma once

/** \file tune.hpp
 *  \brief Development-split hyperparameter selection.
 *
 * Grid search is exhaustive and selects by mean dev NDCG@5. Dev and test
 * query ids are distinct types so tuning entry points cannot be handed the
 * test split.
 */

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fusion_forge/core.hpp"
#include "fusion_forge/fusion.hpp"
#include "fusion_forge/gqr.hpp"

namespace fusion_forge {

inline constexpr std::size_t kTuningNdcgCutoff = 5;

class DevQueries {
public:
    explicit DevQueries(std::vector<QueryId> ids) : ids_(std::move(ids)) {}
    [[nodiscard]] auto ids() const noexcept -> const std::vector<QueryId>& { return ids_; }

private:
    std::vector<QueryId> ids_;
};

class TestQueries {
public:
    explicit TestQueries(std::vector<QueryId> ids) : ids_(std::move(ids)) {}
    [[nodiscard]] auto ids() const noexcept -> const std::vector<QueryId>& { return ids_; }

private:
    std::vector<QueryId> ids_;
};

struct DevTestSplit {
    DevQueries dev;
    TestQueries test;
    double fraction{0.0};
    std::uint64_t seed{0};
};

/// Seeded shuffle of the sorted ids; the first clamp(round(fraction * n), 1, n - 1)
/// become the dev split. Throws TooFewQueries or InvalidParameter.
auto split_dev(std::vector<QueryId> query_ids, double fraction, std::uint64_t seed) -> DevTestSplit;

struct TuningGrid {
    std::vector<double> alphas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::vector<double> step_sizes{1e-5, 5e-5, 1e-4, 5e-4, 1e-3, 5e-3};
    std::vector<std::size_t> iteration_counts{10, 25, 50};

    /// Throws InvalidParameter on empty lists or out-of-range values.
    void validate() const;
};

struct WeightPoint {
    double alpha{0.0};
    double dev_ndcg{0.0};
};

struct WeightSelection {
    double alpha{0.5};
    double dev_ndcg{0.0};
    std::vector<WeightPoint> grid;  ///< every evaluated point, in grid order
};

struct GqrPoint {
    double step_size{0.0};
    std::size_t iterations{0};
    double dev_ndcg{0.0};
};

struct GqrSelection {
    double step_size{0.0};
    std::size_t iterations{0};
    double dev_ndcg{0.0};
    std::vector<GqrPoint> grid;
};

/// Produces a ranking for one dev query under a fusion weight.
using WeightedRunner = std::function<RankedList(const QueryId&, FusionWeights)>;
/// Produces a ranking for one dev query under a refinement config.
using GqrRunner = std::function<RankedList(const QueryId&, const GqrConfig&)>;

/// Both retrievers' top-K lists for one query.
struct RetrievedLists {
    RankedList primary;
    RankedList complementary;
};
using ListSource = std::function<RetrievedLists(const QueryId&)>;

/// Mean NDCG@5 of `runner` over the dev queries that have relevant documents.
auto dev_ndcg(const DevQueries& dev, const Qrels& qrels,
              const std::function<RankedList(const QueryId&)>& runner) -> double;

/// Best alpha; ties go to the alpha closest to 0.5, then to the smaller alpha.
auto tune_weight(const DevQueries& dev, std::span<const double> alphas, const Qrels& qrels,
                 const WeightedRunner& runner) -> WeightSelection;

auto tune_weight(FusionMethod method, const DevQueries& dev, std::span<const double> alphas,
                 const Qrels& qrels, std::size_t k, const ListSource& lists,
                 double kappa = kDefaultRrfKappa) -> WeightSelection;

/// Best (step size, T) over the full Cartesian grid; ties go to smaller T,
/// then to smaller step size.
auto tune_gqr(const DevQueries& dev, const TuningGrid& grid, const Qrels& qrels,
              const GqrConfig& base, const GqrRunner& runner) -> GqrSelection;

}  // namespace fusion_forge
