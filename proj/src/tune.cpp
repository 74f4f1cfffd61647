#include "fusion_forge/tune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "fusion_forge/error.hpp"
#include "fusion_forge/eval.hpp"

namespace fusion_forge {

namespace {

// Uniform integer in [0, bound) from the raw generator output. Avoids
// std::uniform_int_distribution, whose algorithm differs between standard
// libraries, so splits are reproducible everywhere.
auto uniform_below(std::mt19937_64& rng, std::uint64_t bound) -> std::uint64_t {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return draw % bound;
}

constexpr double kAlphaDistanceSlack = 1e-12;

}  // namespace

auto split_dev(std::vector<QueryId> query_ids, double fraction, std::uint64_t seed) -> DevTestSplit {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw Error(ErrorCode::InvalidParameter, "dev fraction must lie in (0, 1)");
    }
    if (query_ids.size() < 2) {
        throw Error(ErrorCode::TooFewQueries, "a dev/test split needs at least two queries");
    }
    std::sort(query_ids.begin(), query_ids.end());
    if (std::adjacent_find(query_ids.begin(), query_ids.end()) != query_ids.end()) {
        throw Error(ErrorCode::InvalidParameter, "query ids must be unique");
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = query_ids.size() - 1; i > 0; --i) {
        std::swap(query_ids[i], query_ids[uniform_below(rng, i + 1)]);
    }
    const auto n = query_ids.size();
    auto dev_size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    dev_size = std::clamp<std::size_t>(dev_size, 1, n - 1);

    std::vector<QueryId> dev(query_ids.begin(), query_ids.begin() + static_cast<std::ptrdiff_t>(dev_size));
    std::vector<QueryId> test(query_ids.begin() + static_cast<std::ptrdiff_t>(dev_size), query_ids.end());
    std::sort(dev.begin(), dev.end());
    std::sort(test.begin(), test.end());
    return DevTestSplit{DevQueries(std::move(dev)), TestQueries(std::move(test)), fraction, seed};
}

void TuningGrid::validate() const {
    if (alphas.empty() || step_sizes.empty() || iteration_counts.empty()) {
        throw Error(ErrorCode::InvalidParameter, "tuning grids must not be empty");
    }
    for (double a : alphas) {
        if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::InvalidParameter, "grid alpha outside [0, 1]");
    }
    for (double s : step_sizes) {
        if (!(s > 0.0)) throw Error(ErrorCode::InvalidParameter, "grid step size must be positive");
    }
    for (auto t : iteration_counts) {
        if (t < 1) throw Error(ErrorCode::InvalidParameter, "grid iteration count must be >= 1");
    }
}

auto dev_ndcg(const DevQueries& dev, const Qrels& qrels, const std::function<RankedList(const QueryId&)>& runner)
    -> double {
    std::vector<RankedList> runs;
    runs.reserve(dev.ids().size());
    for (const auto& id : dev.ids()) runs.push_back(runner(id));
    return evaluate(runs, qrels, Metric::Ndcg, kTuningNdcgCutoff).mean;
}

auto tune_weight(const DevQueries& dev, std::span<const double> alphas, const Qrels& qrels,
                 const WeightedRunner& runner) -> WeightSelection {
    if (alphas.empty()) throw Error(ErrorCode::InvalidParameter, "alpha grid must not be empty");
    WeightSelection best;
    bool have = false;
    for (double alpha : alphas) {
        const auto weights = FusionWeights::make(alpha);
        const double score = dev_ndcg(dev, qrels, [&](const QueryId& id) { return runner(id, weights); });
        best.grid.push_back({alpha, score});

        bool better = !have || score > best.dev_ndcg;
        if (have && score == best.dev_ndcg) {
            // Distances within kAlphaDistanceSlack tie.
            const double d_new = std::abs(alpha - 0.5);
            const double d_old = std::abs(best.alpha - 0.5);
            better = std::abs(d_new - d_old) > kAlphaDistanceSlack ? d_new < d_old : alpha < best.alpha;
        }
        if (better) {
            best.alpha = alpha;
            best.dev_ndcg = score;
            have = true;
        }
    }
    return best;
}

auto tune_weight(FusionMethod method, const DevQueries& dev, std::span<const double> alphas, const Qrels& qrels,
                 std::size_t k, const ListSource& lists, double kappa) -> WeightSelection {
    std::map<QueryId, RetrievedLists> cache;
    for (const auto& id : dev.ids()) cache.emplace(id, lists(id));
    return tune_weight(dev, alphas, qrels, [&](const QueryId& id, FusionWeights w) {
        const auto& l = cache.at(id);
        return fuse(method, l.primary, l.complementary, k, w, kappa);
    });
}

auto tune_gqr(const DevQueries& dev, const TuningGrid& grid, const Qrels& qrels, const GqrConfig& base,
              const GqrRunner& runner) -> GqrSelection {
    if (grid.step_sizes.empty() || grid.iteration_counts.empty()) {
        throw Error(ErrorCode::InvalidParameter, "GQR grids must not be empty");
    }
    GqrSelection best;
    bool have = false;
    for (auto iterations : grid.iteration_counts) {
        for (double step : grid.step_sizes) {
            auto config = base;
            config.iterations = iterations;
            config.step_size = step;
            config.validate();
            const double score = dev_ndcg(dev, qrels, [&](const QueryId& id) { return runner(id, config); });
            best.grid.push_back({step, iterations, score});

            bool better = !have || score > best.dev_ndcg;
            if (have && score == best.dev_ndcg) {
                better = iterations < best.iterations || (iterations == best.iterations && step < best.step_size);
            }
            if (better) {
                best.step_size = step;
                best.iterations = iterations;
                best.dev_ndcg = score;
                have = true;
            }
        }
    }
    return best;
}

}  // namespace fusion_forge
