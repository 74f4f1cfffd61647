// Writes the synthetic two-retriever fixtures under tests/fixtures.
//
//   make_fixture --kind improvement --out DIR [--seed N] [--queries N]
//   make_fixture --kind bench --out DIR [--seed N] [--queries N]
//
// "improvement": primary is multi-vector MaxSim, complementary is a
// single-vector dot product (MaxSim over one vector). Every query has one gold document that the primary
// ranks 5th-8th behind topical distractors and the complementary ranks 1st
// or 2nd, with the same distractors right behind it.
// "bench": two single-vector cosine retrievers, dim 128.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusion_forge/io.hpp"
#include "fusion_forge/scoring.hpp"

namespace ff = fusion_forge;

namespace {

class Gaussian {
public:
    explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
    auto uniform() -> double { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    auto below(std::size_t n) -> std::size_t { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
    auto normal() -> double {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * uniform());
    }
    auto vec(std::size_t dim, double scale) -> std::vector<double> {
        std::vector<double> v(dim);
        for (auto& x : v) x = scale * normal();
        return v;
    }
    auto unit(std::size_t dim) -> std::vector<double> { return normalized(vec(dim, 1.0)); }

    static auto normalized(std::vector<double> v) -> std::vector<double> {
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (auto& x : v) x /= n;
        return v;
    }

private:
    std::mt19937_64 rng_;
};

auto axpy(double a, const std::vector<double>& x, std::vector<double> y) -> std::vector<double> {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
    return y;
}

// Component of v orthogonal to the unit vector t, renormalized.
auto orthogonal_unit(std::vector<double> v, const std::vector<double>& t) -> std::vector<double> {
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) d += v[i] * t[i];
    return Gaussian::normalized(axpy(-d, t, std::move(v)));
}

auto name(const char* prefix, std::size_t i) -> std::string {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
    return buf;
}

struct Fixture {
    std::vector<ff::EmbeddingRecord> primary_queries, primary_docs, complementary_queries, complementary_docs;
    ff::Qrels qrels;
};

auto multi(std::vector<std::vector<double>> rows) -> ff::EmbeddingMatrix { return ff::EmbeddingMatrix(rows); }

auto improvement_fixture(std::uint64_t seed, std::size_t num_queries) -> Fixture {
    constexpr std::size_t kPrimaryDim = 32, kComplementaryDim = 32;
    constexpr std::size_t kQueryTokens = 4, kDocTokens = 6;
    constexpr std::size_t kDistractors = 4, kBackground = 100;
    constexpr double kDistractorStrength[kDistractors] = {1.0, 0.97, 0.94, 0.91};
    // Complementary dot-product levels: gold on top, the same distractors next.
    constexpr double kGoldLevel = 6.0, kGoldRunnerUpLevel = 4.8;
    constexpr double kDistractorLevel[kDistractors] = {5.0, 4.7, 4.4, 4.1};
    constexpr double kFillerLevel = 1.0;
    Gaussian g(seed);
    Fixture f;
    std::size_t doc_no = 0;

    auto primary_doc = [&](const std::vector<double>& centre) {
        std::vector<std::vector<double>> rows;
        for (std::size_t j = 0; j < kDocTokens; ++j) rows.push_back(axpy(1.0, g.vec(kPrimaryDim, 0.02), centre));
        return multi(rows);
    };
    // Single vector whose dot product with the unit query c is exactly `level`.
    auto complementary_doc = [&](const std::vector<double>& c, double level) {
        const auto side = orthogonal_unit(g.vec(kComplementaryDim, 1.0), c);
        std::vector<double> v(kComplementaryDim);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = level * c[i] + 0.5 * side[i];
        return multi({v});
    };

    for (std::size_t q = 0; q < num_queries; ++q) {
        const auto qid = name("q", q);
        const auto topic = g.unit(kPrimaryDim);
        const auto gold_dir = orthogonal_unit(g.vec(kPrimaryDim, 1.0), topic);
        const auto comp_topic = g.unit(kComplementaryDim);

        std::vector<std::vector<double>> query_rows;
        for (std::size_t r = 0; r < kQueryTokens; ++r) query_rows.push_back(axpy(1.0, g.vec(kPrimaryDim, 0.03), topic));
        f.primary_queries.push_back({qid, multi(query_rows)});
        f.complementary_queries.push_back({qid, multi({comp_topic})});

        // Gold: weaker on the shared topic, plus a direction only it carries.
        const auto gold_id = name("d", doc_no++);
        const bool gold_first = g.uniform() < 0.7;
        f.primary_docs.push_back({gold_id, primary_doc(axpy(0.6, gold_dir, axpy(0.8, topic, std::vector<double>(kPrimaryDim))))});
        f.complementary_docs.push_back({gold_id, complementary_doc(comp_topic, gold_first ? kGoldLevel : kGoldRunnerUpLevel)});
        f.qrels.set(qid, gold_id, 1);

        for (std::size_t j = 0; j < kDistractors; ++j) {
            const auto id = name("d", doc_no++);
            f.primary_docs.push_back({id, primary_doc(axpy(kDistractorStrength[j], topic, std::vector<double>(kPrimaryDim)))});
            f.complementary_docs.push_back({id, complementary_doc(comp_topic, kDistractorLevel[j])});
        }
        // 0-3 fillers push the gold from primary rank 5 down to rank 8.
        const auto fillers = g.below(4);
        for (std::size_t j = 0; j < fillers; ++j) {
            const auto id = name("d", doc_no++);
            f.primary_docs.push_back({id, primary_doc(axpy(0.86, topic, std::vector<double>(kPrimaryDim)))});
            f.complementary_docs.push_back({id, complementary_doc(comp_topic, kFillerLevel)});
        }
    }
    for (std::size_t b = 0; b < kBackground; ++b) {
        const auto id = name("d", doc_no++);
        f.primary_docs.push_back({id, primary_doc(g.vec(kPrimaryDim, 0.1))});
        f.complementary_docs.push_back({id, multi({g.vec(kComplementaryDim, 0.1)})});
    }
    return f;
}

auto bench_fixture(std::uint64_t seed, std::size_t num_queries) -> Fixture {
    constexpr std::size_t kDim = 128, kDocs = 500;
    Gaussian g(seed);
    Fixture f;
    for (std::size_t d = 0; d < kDocs; ++d) {
        const auto id = name("d", d);
        f.primary_docs.push_back({id, multi({g.vec(kDim, 1.0)})});
        f.complementary_docs.push_back({id, multi({g.vec(kDim, 1.0)})});
    }
    for (std::size_t q = 0; q < num_queries; ++q) {
        const auto qid = name("q", q);
        f.primary_queries.push_back({qid, multi({g.vec(kDim, 1.0)})});
        f.complementary_queries.push_back({qid, multi({g.vec(kDim, 1.0)})});
        f.qrels.set(qid, name("d", g.below(kDocs)), 1);
    }
    return f;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate synthetic retrieval fixtures"};
    std::string kind = "improvement";
    std::string out;
    std::uint64_t seed = 7;
    std::size_t queries = 60;
    app.add_option("--kind", kind, "improvement|bench")->check(CLI::IsMember({"improvement", "bench"}));
    app.add_option("--out", out, "Output directory")->required();
    app.add_option("--seed", seed, "Generator seed");
    app.add_option("--queries", queries, "Number of queries");
    CLI11_PARSE(app, argc, argv);

    const auto f = kind == "improvement" ? improvement_fixture(seed, queries) : bench_fixture(seed, queries);
    const std::filesystem::path dir(out);
    ff::write_embeddings_jsonl(dir / "primary_queries.jsonl", f.primary_queries, ff::StoragePrecision::Single);
    ff::write_embeddings_jsonl(dir / "primary_docs.jsonl", f.primary_docs, ff::StoragePrecision::Single);
    ff::write_embeddings_jsonl(dir / "complementary_queries.jsonl", f.complementary_queries, ff::StoragePrecision::Single);
    ff::write_embeddings_jsonl(dir / "complementary_docs.jsonl", f.complementary_docs, ff::StoragePrecision::Single);
    ff::write_qrels(dir / "qrels.txt", f.qrels);
    std::cout << "wrote " << f.primary_queries.size() << " queries and " << f.primary_docs.size() << " documents to "
              << dir.string() << "\n";
    return 0;
}
