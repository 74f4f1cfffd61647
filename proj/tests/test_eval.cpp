#include <doctest.h>

#include <cmath>
#include <random>

#include "fusion_forge/error.hpp"
#include "fusion_forge/eval.hpp"
#include "oracles.hpp"

using namespace fusion_forge;
using doctest::Approx;

namespace {

auto run_of(const QueryId& q, std::vector<std::string> docs) -> RankedList {
    std::vector<ScoredDoc> items;
    double s = static_cast<double>(docs.size());
    for (auto& d : docs) items.push_back({std::move(d), s--});
    return RankedList::from_ordered(q, std::move(items));
}

}  // namespace

TEST_CASE("ndcg examples") {
    Qrels qrels;
    qrels.set("q", "a", 1);
    CHECK(ndcg_at_k(run_of("q", {"a", "b"}), qrels, 5) == Approx(1.0));
    CHECK(std::abs(ndcg_at_k(run_of("q", {"b", "a"}), qrels, 5) - 1.0 / std::log2(3.0)) <= 1e-9);
    CHECK(ndcg_at_k(run_of("q", {"b", "c"}), qrels, 5) == 0.0);
    CHECK(ndcg_at_k(run_of("q", {"b", "c", "d", "e", "f", "a"}), qrels, 5) == 0.0);
    CHECK(ndcg_at_k(run_of("unjudged", {"a"}), qrels, 5) == 0.0);

    Qrels graded;
    graded.set("q", "a", 2);
    graded.set("q", "b", 1);
    const double ideal = 3.0 + 1.0 / std::log2(3.0);
    CHECK(ndcg_at_k(run_of("q", {"b", "a"}), graded, 5) == Approx((1.0 + 3.0 / std::log2(3.0)) / ideal).epsilon(1e-12));
}

TEST_CASE("recall examples") {
    Qrels qrels;
    qrels.set("q", "a", 1);
    qrels.set("q", "b", 2);
    qrels.set("q", "z", 0);
    CHECK(recall_at_k(run_of("q", {"a", "x"}), qrels, 5) == Approx(0.5));
    CHECK(recall_at_k(run_of("q", {"x", "b", "a"}), qrels, 2) == Approx(0.5));
    CHECK(recall_at_k(run_of("q", {"x", "b", "a"}), qrels, 3) == Approx(1.0));
    CHECK(recall_at_k(run_of("q", {"z"}), qrels, 3) == 0.0);
}

TEST_CASE("metrics match the oracle on random runs") {
    std::mt19937_64 rng(41);
    for (int t = 0; t < 200; ++t) {
        const std::size_t vocab = 5 + rng() % 30;
        std::vector<std::string> docs;
        for (std::size_t i = 0; i < vocab; ++i) docs.push_back("d" + std::to_string(i));
        std::shuffle(docs.begin(), docs.end(), rng);
        const std::size_t len = rng() % (vocab + 1);
        std::vector<std::string> run(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(len));

        Qrels qrels;
        oracle::Judgments rel;
        for (const auto& d : docs) {
            if (rng() % 4 == 0) {
                const int g = static_cast<int>(rng() % 4);
                qrels.set("q", d, g);
                rel[d] = g;
            }
        }
        std::vector<ScoredDoc> items;
        for (std::size_t i = 0; i < run.size(); ++i) items.push_back({run[i], -static_cast<double>(i)});
        const auto ranked = RankedList::from_ordered("q", items);
        for (std::size_t k : {1u, 3u, 5u, 10u, 20u}) {
            const double n = ndcg_at_k(ranked, qrels, k);
            CHECK(std::abs(n - oracle::ndcg(run, rel, k)) <= 1e-9);
            CHECK(n >= 0.0);
            CHECK(n <= 1.0 + 1e-12);
            CHECK(std::abs(recall_at_k(ranked, qrels, k) - oracle::recall(run, rel, k)) <= 1e-12);
        }
    }
}

TEST_CASE("recall is monotone in k and the ideal run scores one") {
    std::mt19937_64 rng(42);
    for (int t = 0; t < 100; ++t) {
        Qrels qrels;
        std::vector<std::pair<int, std::string>> judged;
        for (int i = 0; i < 10; ++i) {
            const int g = 1 + static_cast<int>(rng() % 3);
            qrels.set("q", "r" + std::to_string(i), g);
            judged.emplace_back(g, "r" + std::to_string(i));
        }
        std::sort(judged.begin(), judged.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<std::string> ideal;
        for (const auto& [g, d] : judged) ideal.push_back(d);
        CHECK(ndcg_at_k(run_of("q", ideal), qrels, 5) == Approx(1.0).epsilon(1e-12));

        std::shuffle(ideal.begin(), ideal.end(), rng);
        const auto run = run_of("q", ideal);
        double prev = 0.0;
        for (std::size_t k = 1; k <= 12; ++k) {
            const double r = recall_at_k(run, qrels, k);
            CHECK(r >= prev);
            prev = r;
        }
    }
}

TEST_CASE("evaluate skips queries without relevant documents") {
    Qrels qrels;
    qrels.set("q1", "a", 1);
    qrels.set("q2", "b", 0);
    qrels.set("q3", "c", 1);
    const std::vector<RankedList> runs{run_of("q3", {"x", "c"}), run_of("q1", {"a"}), run_of("q2", {"b"})};
    const auto report = evaluate(runs, qrels, Metric::Ndcg, 5);
    REQUIRE(report.per_query.size() == 2);
    CHECK(report.per_query[0].query_id == "q1");
    CHECK(report.per_query[1].query_id == "q3");
    REQUIRE(report.skipped.size() == 1);
    CHECK(report.skipped[0] == "q2");
    CHECK(report.mean == Approx((1.0 + 1.0 / std::log2(3.0)) / 2.0).epsilon(1e-12));
    CHECK(report.name() == "ndcg@5");
    CHECK(parse_metric("recall") == Metric::Recall);
    CHECK_THROWS_AS(parse_metric("map"), Error);
    CHECK_THROWS_AS(ndcg_at_k(run_of("q1", {"a"}), qrels, 0), Error);
}
