#include <doctest.h>

#include <cmath>
#include <random>

#include "fusion_forge/error.hpp"
#include "fusion_forge/gqr.hpp"
#include "oracles.hpp"

using namespace fusion_forge;
using doctest::Approx;

namespace {

auto random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t dim, double sd = 1.0) -> EmbeddingMatrix {
    std::normal_distribution<double> n(0.0, sd);
    std::vector<double> v(rows * dim);
    for (auto& x : v) x = n(rng);
    return EmbeddingMatrix(rows, dim, std::move(v));
}

auto make_index(std::mt19937_64& rng, std::size_t docs, std::size_t dim, ScorerKind kind)
    -> std::shared_ptr<const CorpusIndex> {
    std::vector<std::pair<DocId, EmbeddingMatrix>> entries;
    for (std::size_t i = 0; i < docs; ++i) {
        entries.emplace_back("d" + std::to_string(i),
                             random_matrix(rng, kind == ScorerKind::Cosine ? 1 : 3, dim, 0.5));
    }
    return std::make_shared<const CorpusIndex>(std::move(entries), kind);
}

auto dist(std::vector<double> probs) -> Distribution {
    CandidatePool pool{"q", {}};
    for (std::size_t i = 0; i < probs.size(); ++i) pool.doc_ids.push_back("d" + std::to_string(i));
    return {pool, std::move(probs)};
}

auto random_problem(std::mt19937_64& rng, ScorerKind kind, std::size_t dim) -> GqrProblem {
    const std::size_t rows = kind == ScorerKind::Cosine ? 1 : 2;
    return {"q", random_matrix(rng, rows, dim), random_matrix(rng, 1, dim),
            make_index(rng, 60, dim, kind), make_index(rng, 60, dim, ScorerKind::Cosine)};
}

}  // namespace

TEST_CASE("kl divergence examples") {
    CHECK(kl_divergence(dist({0.25, 0.75}), dist({0.5, 0.5})) == Approx(0.1308120).epsilon(1e-6));
    CHECK(kl_divergence(dist({0.5, 0.5}), dist({0.5, 0.5})) == 0.0);
    CHECK(kl_divergence(dist({0.5, 0.5}), dist({0.25, 0.75})) !=
          Approx(kl_divergence(dist({0.25, 0.75}), dist({0.5, 0.5}))));
    auto other = dist({0.5, 0.5});
    other.pool.doc_ids[1] = "elsewhere";
    CHECK_THROWS_AS(kl_divergence(dist({0.5, 0.5}), other), Error);
}

TEST_CASE("js divergence is symmetric and bounded by ln 2") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int t = 0; t < 200; ++t) {
        const auto n = 2 + rng() % 10;
        std::vector<double> a(n), b(n);
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = u(rng);
            b[i] = u(rng);
            sa += a[i];
            sb += b[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            a[i] /= sa;
            b[i] /= sb;
        }
        const double ab = js_divergence(dist(a), dist(b));
        CHECK(ab == Approx(js_divergence(dist(b), dist(a))).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= std::log(2.0) + 1e-12);
        CHECK(kl_divergence(dist(a), dist(b)) >= 0.0);
        CHECK(kl_divergence(dist(a), dist(b)) == Approx(oracle::kl(a, b)).epsilon(1e-9));
    }
    const double eps = 1e-9;
    CHECK(js_divergence(dist({1 - eps, eps}), dist({eps, 1 - eps})) == Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("finite differences on analytic functions") {
    const EmbeddingMatrix z{{1.5, -2.0, 0.25}, {0.0, 3.0, -1.0}};
    const auto sq = finite_diff_grad(
        [](const EmbeddingMatrix& m) {
            double s = 0.0;
            for (double x : m.values()) s += x * x;
            return s;
        },
        z, 1e-5);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(sq.values()[i] == Approx(2.0 * z.values()[i]).epsilon(1e-8));

    const auto lin = finite_diff_grad(
        [](const EmbeddingMatrix& m) {
            double s = 0.0;
            for (std::size_t i = 0; i < m.size(); ++i) s += static_cast<double>(i + 1) * m.values()[i];
            return s;
        },
        z, 1e-4);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(lin.values()[i] == Approx(i + 1.0).epsilon(1e-9));
}

TEST_CASE("adam first step moves by the step size against the gradient sign") {
    const EmbeddingMatrix z{{1.0, -1.0, 0.5}};
    const EmbeddingMatrix g{{0.3, -2.0, 1e-3}};
    const auto up = adam_step(AdamState::fresh(z), z, g, 0.01);
    CHECK(up.state.t == 1);
    CHECK(up.z.values()[0] == Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(up.z.values()[1] == Approx(-1.0 + 0.01).epsilon(1e-6));
    CHECK(up.z.values()[2] == Approx(0.5 - 0.01).epsilon(1e-4));

    const auto still = adam_step(AdamState::fresh(z), z, EmbeddingMatrix::zeros(1, 3), 0.01);
    CHECK(still.z == z);
    CHECK_THROWS_AS(adam_step(AdamState::fresh(z), z, EmbeddingMatrix::zeros(2, 3), 0.01), Error);
}

TEST_CASE("adam two-step transcript") {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double g1 = 0.5, g2 = -0.2;
    double m = (1 - b1) * g1, v = (1 - b2) * g1 * g1;
    double x = 2.0 - lr * (m / (1 - b1)) / (std::sqrt(v / (1 - b2)) + eps);
    m = b1 * m + (1 - b1) * g2;
    v = b2 * v + (1 - b2) * g2 * g2;
    x -= lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + eps);

    const EmbeddingMatrix z0{{2.0}};
    auto s1 = adam_step(AdamState::fresh(z0), z0, EmbeddingMatrix{{g1}}, lr);
    auto s2 = adam_step(s1.state, s1.z, EmbeddingMatrix{{g2}}, lr);
    CHECK(s2.state.t == 2);
    CHECK(s2.z.values()[0] == Approx(x).epsilon(1e-12));
}

TEST_CASE("analytic gradient agrees with finite differences") {
    std::mt19937_64 rng(77);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        for (auto loss : {LossVariant::KlConsensus, LossVariant::JensenShannon, LossVariant::KlTarget}) {
            for (int t = 0; t < 6; ++t) {
                const std::size_t dim = 6;
                const auto index = make_index(rng, 12, dim, kind);
                const auto z = random_matrix(rng, kind == ScorerKind::Cosine ? 1 : 2, dim);
                CandidatePool pool{"q", index->ids()};
                std::vector<double> guide_scores(pool.size());
                std::normal_distribution<double> n(0.0, 1.0);
                for (auto& s : guide_scores) s = n(rng);
                const auto guidance = softmax_distribution(guide_scores, pool);
                const auto analytic = gqr_grad(z, pool, *index, guidance, loss);
                const auto numeric = finite_diff_grad(
                    [&](const EmbeddingMatrix& m) { return gqr_loss(m, pool, *index, guidance, loss); }, z, 1e-5);
                const auto cmp = compare_gradients(analytic, numeric);
                CHECK(cmp.passes(1e-4, 1e-8));
            }
        }
    }
}

TEST_CASE("extended-precision loss agrees with the double loss") {
    std::mt19937_64 rng(76);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        for (auto loss : {LossVariant::KlConsensus, LossVariant::JensenShannon, LossVariant::KlTarget}) {
            const auto index = make_index(rng, 20, 7, kind);
            const auto z = random_matrix(rng, kind == ScorerKind::Cosine ? 1 : 3, 7);
            CandidatePool pool{"q", index->ids()};
            std::vector<double> guide(pool.size());
            std::normal_distribution<double> n(0.0, 1.0);
            for (auto& s : guide) s = n(rng);
            const auto guidance = softmax_distribution(guide, pool);
            const double plain = gqr_loss(z, pool, *index, guidance, loss);
            CHECK(static_cast<double>(gqr_loss_extended(z, pool, *index, guidance, loss)) == Approx(plain).epsilon(1e-12));
            const auto analytic = gqr_grad(z, pool, *index, guidance, loss);
            const auto numeric = finite_diff_grad_extended(
                [&](const EmbeddingMatrix& m) { return gqr_loss_extended(m, pool, *index, guidance, loss); }, z, 1e-5);
            CHECK(compare_gradients(analytic, numeric).passes(1e-6, 1e-8));
        }
    }
}

TEST_CASE("gradient vanishes when the guidance equals the primary distribution") {
    std::mt19937_64 rng(78);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        const auto index = make_index(rng, 15, 5, kind);
        const auto z = random_matrix(rng, kind == ScorerKind::Cosine ? 1 : 2, 5);
        CandidatePool pool{"q", index->ids()};
        const auto p1 = softmax_distribution(score_pool(z, pool, *index), pool);
        for (auto loss : {LossVariant::KlConsensus, LossVariant::JensenShannon, LossVariant::KlTarget}) {
            CHECK(gqr_loss(z, pool, *index, p1, loss) == Approx(0.0).scale(1.0).epsilon(1e-12));
            const auto grad = gqr_grad(z, pool, *index, p1, loss);
            for (double g : grad.values()) CHECK(std::abs(g) <= 1e-12);
        }
    }
}

TEST_CASE("cosine gradient rejects a near-zero query") {
    std::mt19937_64 rng(79);
    const auto index = make_index(rng, 5, 4, ScorerKind::Cosine);
    CandidatePool pool{"q", index->ids()};
    const auto guidance = softmax_distribution(std::vector<double>(5, 0.0), pool);
    try {
        (void)gqr_grad(EmbeddingMatrix::zeros(1, 4), pool, *index, guidance, LossVariant::KlConsensus);
        FAIL("expected NearZeroQueryNorm");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NearZeroQueryNorm);
    }
}

TEST_CASE("identical retrievers leave the query at its fixed point") {
    std::mt19937_64 rng(80);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        for (int t = 0; t < 10; ++t) {
            const auto index = make_index(rng, 40, 8, kind);
            const auto q = random_matrix(rng, kind == ScorerKind::Cosine ? 1 : 2, 8);
            const GqrProblem problem{"q", q, q, index, index};
            GqrConfig config;
            config.iterations = 50;
            config.step_size = 5e-3;
            const auto trace = guided_query_refinement_traced(problem, config);
            CHECK(trace.refined_query == q);
            CHECK(trace.ranking == search_top_k("q", q, *index, config.top_k));
        }
    }
}

TEST_CASE("a vanishing step size reproduces the primary ranking") {
    std::mt19937_64 rng(81);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        for (int t = 0; t < 10; ++t) {
            const auto problem = random_problem(rng, kind, 8);
            GqrConfig config;
            config.step_size = 1e-12;
            const auto got = guided_query_refinement(problem, config);
            const auto primary = search_top_k("q", problem.primary_query, *problem.primary_index, config.top_k);
            REQUIRE(got.size() == primary.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].doc_id == primary[i].doc_id);
                CHECK(got[i].score == Approx(primary[i].score).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("refinement is deterministic and stays inside the pool") {
    std::mt19937_64 rng(82);
    for (auto kind : {ScorerKind::Cosine, ScorerKind::MaxSim}) {
        for (auto policy : {PoolPolicy::Union, PoolPolicy::PrimaryOnly}) {
            const auto problem = random_problem(rng, kind, 8);
            GqrConfig config;
            config.iterations = 25;
            config.step_size = 1e-2;
            config.pool_policy = policy;
            const auto a = guided_query_refinement_traced(problem, config);
            const auto b = guided_query_refinement_traced(problem, config);
            CHECK(a.ranking == b.ranking);
            CHECK(a.refined_query == b.refined_query);
            CHECK(a.losses == b.losses);
            CHECK(a.losses.size() == config.iterations);
            CHECK(a.ranking.size() <= config.top_k);
            for (const auto& it : a.ranking.items()) {
                CHECK(std::find(a.pool.doc_ids.begin(), a.pool.doc_ids.end(), it.doc_id) != a.pool.doc_ids.end());
            }
            const auto primary = search_top_k("q", problem.primary_query, *problem.primary_index, config.top_k);
            if (policy == PoolPolicy::PrimaryOnly) CHECK(a.pool == pool_of(primary));
        }
    }
}

TEST_CASE("loss decreases over refinement on a cosine problem") {
    std::mt19937_64 rng(83);
    for (int t = 0; t < 10; ++t) {
        const auto problem = random_problem(rng, ScorerKind::Cosine, 8);
        GqrConfig config;
        config.iterations = 50;
        config.step_size = 1e-3;
        const auto trace = guided_query_refinement_traced(problem, config);
        CHECK(trace.losses.back() < trace.losses.front());
    }
}

TEST_CASE("extra search adds the refined query's own top-k to the pool") {
    std::mt19937_64 rng(84);
    const auto problem = random_problem(rng, ScorerKind::Cosine, 8);
    GqrConfig config;
    config.iterations = 25;
    config.step_size = 5e-2;
    config.extra_search = true;
    const auto trace = guided_query_refinement_traced(problem, config);
    const auto fresh = search_top_k("q", trace.refined_query, *problem.primary_index, config.top_k);
    for (const auto& it : fresh.items()) {
        CHECK(std::find(trace.pool.doc_ids.begin(), trace.pool.doc_ids.end(), it.doc_id) != trace.pool.doc_ids.end());
    }
    CHECK(trace.ranking == fresh);
}

TEST_CASE("swap_roles is an involution") {
    std::mt19937_64 rng(85);
    const auto p = random_problem(rng, ScorerKind::MaxSim, 4);
    const auto s = swap_roles(p);
    CHECK(s.primary_query == p.complementary_query);
    CHECK(s.primary_index == p.complementary_index);
    const auto back = swap_roles(s);
    CHECK(back.primary_query == p.primary_query);
    CHECK(back.complementary_query == p.complementary_query);
    CHECK(back.primary_index == p.primary_index);
    CHECK(back.complementary_index == p.complementary_index);
}

TEST_CASE("config validation and parsing") {
    GqrConfig c;
    CHECK_NOTHROW(c.validate());
    c.iterations = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.step_size = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = {};
    c.top_k = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(parse_loss_variant("kl-consensus") == LossVariant::KlConsensus);
    CHECK(parse_pool_policy("union") == PoolPolicy::Union);
    CHECK_THROWS_AS(parse_loss_variant("hinge"), Error);
}
