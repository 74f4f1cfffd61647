#include "fusion_forge/gqr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "fusion_forge/error.hpp"

namespace fusion_forge {

namespace {

auto lowercase(std::string_view s) -> std::string {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
        return c == '_' ? '-' : static_cast<char>(std::tolower(c));
    });
    return out;
}

auto dot(std::span<const double> a, std::span<const double> b) -> double {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

auto floored_log(double x) -> double { return std::log(std::max(x, kProbabilityFloor)); }

// a * d/dx log(max(x, floor)); written as a ratio so that x / x is exactly 1.
auto log_slope(double a, double x) -> double { return x > kProbabilityFloor ? a / x : 0.0; }

auto kl(std::span<const double> p, std::span<const double> q) -> double {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] * (floored_log(p[i]) - floored_log(q[i]));
    return sum;
}

void require_same_pool(const Distribution& p, const Distribution& q) {
    if (p.pool != q.pool || p.probs.size() != q.probs.size()) {
        throw Error(ErrorCode::PoolMismatch, "distributions are defined over different pools");
    }
}

// Primary-side view of a pool: document embeddings resolved once per query.
struct ResolvedPool {
    std::vector<const EmbeddingMatrix*> docs;
    ScorerKind scorer{ScorerKind::Cosine};
};

auto resolve(const CandidatePool& pool, const CorpusIndex& index) -> ResolvedPool {
    if (pool.empty()) throw Error(ErrorCode::EmptyPool, "refinement over an empty pool");
    ResolvedPool resolved;
    resolved.scorer = index.scorer();
    resolved.docs.reserve(pool.size());
    for (const auto& id : pool.doc_ids) {
        const auto& e = index.embedding(id);
        resolved.docs.push_back(&e);
    }
    return resolved;
}

// Scores of z against every pool document. For MaxSim also records, per
// (document, query vector), the index of the best document vector; the
// first maximum wins ties.
struct PoolScores {
    std::vector<double> scores;
    std::vector<std::size_t> routes;
    double query_norm{0.0};
    std::vector<double> doc_norms;
};

auto score_resolved(const EmbeddingMatrix& z, const ResolvedPool& pool) -> PoolScores {
    PoolScores out;
    const auto n = pool.docs.size();
    out.scores.resize(n);
    if (pool.scorer == ScorerKind::Cosine) {
        if (z.rows() != 1) throw Error(ErrorCode::InvalidParameter, "cosine scorer needs a single-vector query");
        out.query_norm = std::sqrt(dot(z.row(0), z.row(0)));
        if (out.query_norm < kMinQueryNorm) {
            throw Error(ErrorCode::NearZeroQueryNorm, "query embedding norm is below 1e-12");
        }
        out.doc_norms.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& d = *pool.docs[i];
            if (d.dim() != z.dim()) throw Error(ErrorCode::DimensionMismatch, "query and document dimensions differ");
            out.doc_norms[i] = std::sqrt(dot(d.row(0), d.row(0)));
            if (out.doc_norms[i] == 0.0) throw Error(ErrorCode::ZeroNormVector, "document with a zero vector");
            out.scores[i] = dot(z.row(0), d.row(0)) / (out.query_norm * out.doc_norms[i]);
        }
        return out;
    }
    out.routes.resize(n * z.rows());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& d = *pool.docs[i];
        if (d.dim() != z.dim()) throw Error(ErrorCode::DimensionMismatch, "query and document dimensions differ");
        double total = 0.0;
        for (std::size_t r = 0; r < z.rows(); ++r) {
            std::size_t best_j = 0;
            double best = dot(z.row(r), d.row(0));
            for (std::size_t j = 1; j < d.rows(); ++j) {
                const double v = dot(z.row(r), d.row(j));
                if (v > best) {
                    best = v;
                    best_j = j;
                }
            }
            out.routes[i * z.rows() + r] = best_j;
            total += best;
        }
        out.scores[i] = total;
    }
    return out;
}

auto loss_value(std::span<const double> p1, std::span<const double> p2, LossVariant loss) -> double {
    std::vector<double> avg(p1.size());
    for (std::size_t i = 0; i < p1.size(); ++i) avg[i] = 0.5 * (p1[i] + p2[i]);
    switch (loss) {
        case LossVariant::KlConsensus: return kl(avg, p1);
        case LossVariant::JensenShannon: return 0.5 * kl(p2, avg) + 0.5 * kl(p1, avg);
        case LossVariant::KlTarget: return kl(p2, p1);
    }
    return 0.0;
}

// dL/dp1 for each variant, differentiating through p_avg as well.
auto loss_prob_gradient(std::span<const double> p1, std::span<const double> p2, LossVariant loss)
    -> std::vector<double> {
    const auto n = p1.size();
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = p1[i];
        const double q = p2[i];
        const double m = 0.5 * (p + q);
        switch (loss) {
            case LossVariant::KlConsensus:
                // KL(m || p): dL/dm = log m - log p + 1, dL/dp (direct) = -m / p.
                g[i] = 0.5 * (floored_log(m) - floored_log(p) + log_slope(m, m)) - log_slope(m, p);
                break;
            case LossVariant::JensenShannon:
                g[i] = 0.25 * -log_slope(q, m) +
                       0.5 * (floored_log(p) - floored_log(m) + log_slope(p, p) - 0.5 * log_slope(p, m));
                break;
            case LossVariant::KlTarget:
                g[i] = -log_slope(q, p);
                break;
        }
    }
    return g;
}

// Chains dL/dp1 through the softmax. Constant offsets in dL/dp1 cancel, so
// they are removed first; a fixed point then yields an exactly zero gradient.
auto score_gradient(std::span<const double> p1, std::vector<double> g) -> std::vector<double> {
    const double offset = g.front();
    for (auto& v : g) v -= offset;
    double mean = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) mean += p1[i] * g[i];
    std::vector<double> ds(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ds[i] = p1[i] * (g[i] - mean);
    return ds;
}

struct LossAndGradient {
    double loss{0.0};
    EmbeddingMatrix grad;
};

auto evaluate(const EmbeddingMatrix& z, const ResolvedPool& pool, std::span<const double> guidance,
              LossVariant loss, bool want_gradient) -> LossAndGradient {
    const auto ps = score_resolved(z, pool);
    std::vector<double> p1(ps.scores.size());
    softmax_into(ps.scores, p1);
    LossAndGradient out{loss_value(p1, guidance, loss), EmbeddingMatrix::zeros(z.rows(), z.dim())};
    if (!want_gradient) return out;

    const auto ds = score_gradient(p1, loss_prob_gradient(p1, guidance, loss));
    std::vector<double> grad(z.size(), 0.0);
    const auto dim = z.dim();
    if (pool.scorer == ScorerKind::Cosine) {
        const auto zr = z.row(0);
        const double zn2 = ps.query_norm * ps.query_norm;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds[i] == 0.0) continue;
            const auto d = pool.docs[i]->row(0);
            const double inv = 1.0 / (ps.query_norm * ps.doc_norms[i]);
            const double radial = ps.scores[i] / zn2;
            for (std::size_t c = 0; c < dim; ++c) grad[c] += ds[i] * (d[c] * inv - radial * zr[c]);
        }
    } else {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds[i] == 0.0) continue;
            for (std::size_t r = 0; r < z.rows(); ++r) {
                const auto d = pool.docs[i]->row(ps.routes[i * z.rows() + r]);
                for (std::size_t c = 0; c < dim; ++c) grad[r * dim + c] += ds[i] * d[c];
            }
        }
    }
    out.grad = EmbeddingMatrix(z.rows(), dim, std::move(grad));
    return out;
}

void require_guidance(const CandidatePool& pool, const Distribution& guidance) {
    if (guidance.pool != pool || guidance.probs.size() != pool.size()) {
        throw Error(ErrorCode::PoolMismatch, "guidance distribution is not defined over the pool");
    }
}

}  // namespace

auto to_string(LossVariant loss) -> std::string {
    switch (loss) {
        case LossVariant::KlConsensus: return "kl-consensus";
        case LossVariant::JensenShannon: return "jensen-shannon";
        case LossVariant::KlTarget: return "kl-target";
    }
    return "unknown";
}

auto parse_loss_variant(std::string_view name) -> LossVariant {
    const auto n = lowercase(name);
    if (n == "kl-consensus" || n == "kl") return LossVariant::KlConsensus;
    if (n == "jensen-shannon" || n == "js") return LossVariant::JensenShannon;
    if (n == "kl-target") return LossVariant::KlTarget;
    throw Error(ErrorCode::InvalidParameter, "unknown loss '" + std::string(name) + "'");
}

auto to_string(PoolPolicy policy) -> std::string {
    return policy == PoolPolicy::Union ? "union" : "primary-only";
}

auto parse_pool_policy(std::string_view name) -> PoolPolicy {
    const auto n = lowercase(name);
    if (n == "union") return PoolPolicy::Union;
    if (n == "primary-only" || n == "primary") return PoolPolicy::PrimaryOnly;
    throw Error(ErrorCode::InvalidParameter, "unknown pool policy '" + std::string(name) + "'");
}

void GqrConfig::validate() const {
    if (iterations < 1) throw Error(ErrorCode::InvalidParameter, "GQR needs at least one iteration");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) {
        throw Error(ErrorCode::InvalidParameter, "GQR step size must be positive");
    }
    if (top_k < 1) throw Error(ErrorCode::InvalidParameter, "GQR top_k must be >= 1");
    if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
        throw Error(ErrorCode::InvalidParameter, "Adam betas must lie in (0, 1)");
    }
    if (!(adam.eps > 0.0)) throw Error(ErrorCode::InvalidParameter, "Adam epsilon must be positive");
}

auto kl_divergence(const Distribution& p, const Distribution& q) -> double {
    require_same_pool(p, q);
    return kl(p.probs, q.probs);
}

auto js_divergence(const Distribution& p, const Distribution& q) -> double {
    require_same_pool(p, q);
    std::vector<double> avg(p.probs.size());
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = 0.5 * (p.probs[i] + q.probs[i]);
    return 0.5 * kl(p.probs, avg) + 0.5 * kl(q.probs, avg);
}

auto gqr_loss(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
              const Distribution& guidance, LossVariant loss) -> double {
    require_guidance(pool, guidance);
    return evaluate(z, resolve(pool, primary), guidance.probs, loss, false).loss;
}

auto gqr_loss_extended(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
                       const Distribution& guidance, LossVariant loss) -> long double {
    using Real = long double;
    require_guidance(pool, guidance);
    const auto resolved = resolve(pool, primary);
    const auto n = resolved.docs.size();
    auto dot_ld = [](std::span<const double> a, std::span<const double> b) {
        Real sum = 0.0L;
        for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<Real>(a[i]) * static_cast<Real>(b[i]);
        return sum;
    };
    std::vector<Real> scores(n);
    if (resolved.scorer == ScorerKind::Cosine) {
        if (z.rows() != 1) throw Error(ErrorCode::InvalidParameter, "cosine scorer needs a single-vector query");
        const Real zn = std::sqrt(dot_ld(z.row(0), z.row(0)));
        if (zn < kMinQueryNorm) throw Error(ErrorCode::NearZeroQueryNorm, "query embedding norm is below 1e-12");
        for (std::size_t i = 0; i < n; ++i) {
            const auto d = resolved.docs[i]->row(0);
            if (d.size() != z.dim()) throw Error(ErrorCode::DimensionMismatch, "query and document dimensions differ");
            scores[i] = dot_ld(z.row(0), d) / (zn * std::sqrt(dot_ld(d, d)));
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& d = *resolved.docs[i];
            if (d.dim() != z.dim()) throw Error(ErrorCode::DimensionMismatch, "query and document dimensions differ");
            for (std::size_t r = 0; r < z.rows(); ++r) {
                Real best = dot_ld(z.row(r), d.row(0));
                for (std::size_t j = 1; j < d.rows(); ++j) best = std::max(best, dot_ld(z.row(r), d.row(j)));
                scores[i] += best;
            }
        }
    }
    const Real shift = *std::max_element(scores.begin(), scores.end());
    Real total = 0.0L;
    std::vector<Real> p1(n), p2(n), avg(n);
    for (std::size_t i = 0; i < n; ++i) total += p1[i] = std::exp(scores[i] - shift);
    for (std::size_t i = 0; i < n; ++i) {
        p1[i] /= total;
        p2[i] = guidance.probs[i];
        avg[i] = 0.5L * (p1[i] + p2[i]);
    }
    auto kl_ld = [](const std::vector<Real>& p, const std::vector<Real>& q) {
        const Real floor = kProbabilityFloor;
        Real sum = 0.0L;
        for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] * (std::log(std::max(p[i], floor)) - std::log(std::max(q[i], floor)));
        return sum;
    };
    switch (loss) {
        case LossVariant::KlConsensus: return kl_ld(avg, p1);
        case LossVariant::JensenShannon: return 0.5L * kl_ld(p2, avg) + 0.5L * kl_ld(p1, avg);
        case LossVariant::KlTarget: return kl_ld(p2, p1);
    }
    return 0.0L;
}

auto gqr_grad(const EmbeddingMatrix& z, const CandidatePool& pool, const CorpusIndex& primary,
              const Distribution& guidance, LossVariant loss) -> EmbeddingMatrix {
    require_guidance(pool, guidance);
    return evaluate(z, resolve(pool, primary), guidance.probs, loss, true).grad;
}

namespace {

template <typename Real, typename Loss>
auto central_differences(const Loss& loss, const EmbeddingMatrix& z, double h) -> EmbeddingMatrix {
    if (!(h > 0.0)) throw Error(ErrorCode::InvalidParameter, "finite-difference step must be positive");
    std::vector<double> base(z.values().begin(), z.values().end());
    std::vector<double> grad(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto shifted = base;
        shifted[i] = base[i] + h;
        const double hi = shifted[i];
        const Real up = loss(EmbeddingMatrix(z.rows(), z.dim(), shifted));
        shifted[i] = base[i] - h;
        const double lo = shifted[i];
        const Real down = loss(EmbeddingMatrix(z.rows(), z.dim(), shifted));
        grad[i] = static_cast<double>((up - down) / (static_cast<Real>(hi) - static_cast<Real>(lo)));
    }
    return EmbeddingMatrix(z.rows(), z.dim(), std::move(grad));
}

}  // namespace

auto finite_diff_grad(const LossFunction& loss, const EmbeddingMatrix& z, double h) -> EmbeddingMatrix {
    return central_differences<double>(loss, z, h);
}

auto finite_diff_grad_extended(const ExtendedLossFunction& loss, const EmbeddingMatrix& z, double h)
    -> EmbeddingMatrix {
    return central_differences<long double>(loss, z, h);
}

auto AdamState::fresh(const EmbeddingMatrix& like) -> AdamState {
    return AdamState{EmbeddingMatrix::zeros(like.rows(), like.dim()),
                     EmbeddingMatrix::zeros(like.rows(), like.dim()), 0};
}

auto adam_step(const AdamState& state, const EmbeddingMatrix& z, const EmbeddingMatrix& grad, double step_size,
               const AdamParams& params) -> AdamUpdate {
    if (!z.same_shape(grad) || !z.same_shape(state.m) || !z.same_shape(state.v)) {
        throw Error(ErrorCode::DimensionMismatch, "Adam state, query and gradient shapes differ");
    }
    const auto t = state.t + 1;
    const double correction1 = 1.0 - std::pow(params.beta1, static_cast<double>(t));
    const double correction2 = 1.0 - std::pow(params.beta2, static_cast<double>(t));
    const auto n = z.size();
    std::vector<double> m(n), v(n), next(n);
    const auto g = grad.values();
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = params.beta1 * state.m.values()[i] + (1.0 - params.beta1) * g[i];
        v[i] = params.beta2 * state.v.values()[i] + (1.0 - params.beta2) * g[i] * g[i];
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        next[i] = z.values()[i] - step_size * m_hat / (std::sqrt(v_hat) + params.eps);
    }
    return AdamUpdate{EmbeddingMatrix(z.rows(), z.dim(), std::move(next)),
                      AdamState{EmbeddingMatrix(z.rows(), z.dim(), std::move(m)),
                                EmbeddingMatrix(z.rows(), z.dim(), std::move(v)), t}};
}

auto swap_roles(GqrProblem problem) -> GqrProblem {
    std::swap(problem.primary_query, problem.complementary_query);
    std::swap(problem.primary_index, problem.complementary_index);
    return problem;
}

auto refine_query(const GqrProblem& problem, const RankedList& primary_list, const RankedList& complementary_list,
                  const GqrConfig& config) -> GqrTrace {
    config.validate();
    if (!problem.primary_index || !problem.complementary_index) {
        throw Error(ErrorCode::InvalidParameter, "GQR needs both indexes");
    }
    const auto& primary = *problem.primary_index;
    const auto& complementary = *problem.complementary_index;

    auto pool = config.pool_policy == PoolPolicy::Union ? union_pool({primary_list, complementary_list})
                                                        : pool_of(primary_list);
    if (pool.query_id != problem.query_id) {
        throw Error(ErrorCode::QueryMismatch, "top-K lists belong to query '" + pool.query_id + "', expected '" +
                                                  problem.query_id + "'");
    }
    const auto resolved = resolve(pool, primary);
    const auto guidance = softmax_distribution(score_pool(problem.complementary_query, pool, complementary), pool);

    GqrTrace trace{{}, {}, {}, problem.primary_query};
    auto& z = trace.refined_query;
    auto adam = AdamState::fresh(z);
    trace.losses.reserve(config.iterations);
    for (std::size_t t = 0; t < config.iterations; ++t) {
        auto step = evaluate(z, resolved, guidance.probs, config.loss, true);
        trace.losses.push_back(step.loss);
        auto update = adam_step(adam, z, step.grad, config.step_size, config.adam);
        z = std::move(update.z);
        adam = std::move(update.state);
    }

    if (config.extra_search) {
        const auto extra = search_top_k(problem.query_id, z, primary, config.top_k);
        std::unordered_set<std::string_view> seen(pool.doc_ids.begin(), pool.doc_ids.end());
        std::vector<DocId> added;
        for (const auto& item : extra.items()) {
            if (!seen.contains(item.doc_id)) added.push_back(item.doc_id);
        }
        pool.doc_ids.insert(pool.doc_ids.end(), added.begin(), added.end());
    }

    const auto final_scores = score_pool(z, pool, primary);
    std::vector<ScoredDoc> scored;
    scored.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) scored.push_back({pool.doc_ids[i], final_scores[i]});
    trace.ranking = build_ranked_list(problem.query_id, std::move(scored)).truncated(config.top_k);
    trace.pool = std::move(pool);
    return trace;
}

auto guided_query_refinement_traced(const GqrProblem& problem, const GqrConfig& config) -> GqrTrace {
    config.validate();
    if (!problem.primary_index || !problem.complementary_index) {
        throw Error(ErrorCode::InvalidParameter, "GQR needs both indexes");
    }
    const auto first = search_top_k(problem.query_id, problem.primary_query, *problem.primary_index, config.top_k);
    const auto second =
        config.pool_policy == PoolPolicy::Union
            ? search_top_k(problem.query_id, problem.complementary_query, *problem.complementary_index, config.top_k)
            : RankedList::from_ordered(problem.query_id, {});
    return refine_query(problem, first, second, config);
}

auto guided_query_refinement(const GqrProblem& problem, const GqrConfig& config) -> RankedList {
    return guided_query_refinement_traced(problem, config).ranking;
}

auto compare_gradients(const EmbeddingMatrix& analytic, const EmbeddingMatrix& numeric, double abs_floor)
    -> GradientComparison {
    if (!analytic.same_shape(numeric)) {
        throw Error(ErrorCode::DimensionMismatch, "gradients have different shapes");
    }
    GradientComparison out;
    const auto a = analytic.values();
    const auto f = numeric.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max(std::abs(a[i]), std::abs(f[i]));
        const double err = std::abs(a[i] - f[i]);
        if (scale < abs_floor) {
            out.max_small_abs_error = std::max(out.max_small_abs_error, err);
        } else {
            out.max_relative_error = std::max(out.max_relative_error, err / scale);
        }
    }
    return out;
}

}  // namespace fusion_forge
