#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>

#include <unistd.h>

#include "fusion_forge/error.hpp"
#include "fusion_forge/io.hpp"

using namespace fusion_forge;
using doctest::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("ff_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    [[nodiscard]] auto file(const std::string& name, const std::string& contents) const -> fs::path {
        const auto p = path / name;
        std::ofstream(p, std::ios::binary) << contents;
        return p;
    }
};

auto parse_error_line(const std::function<void()>& f) -> std::optional<std::size_t> {
    try {
        f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ParseError) return e.line();
        return std::nullopt;
    }
    return std::nullopt;
}

auto random_records(std::mt19937_64& rng, std::size_t n) -> std::vector<EmbeddingRecord> {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<EmbeddingRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t rows = 1 + rng() % 3;
        std::vector<double> v(rows * 5);
        for (auto& x : v) x = g(rng);
        out.push_back({"rec " + std::to_string(i), EmbeddingMatrix(rows, 5, std::move(v))});
    }
    return out;
}

}  // namespace

TEST_CASE("jsonl embeddings load single and multi-vector records") {
    TempDir dir;
    const auto p = dir.file("e.jsonl",
                            "{\"id\": \"a\", \"vectors\": [[1, 0, 0]]}\n"
                            "\n"
                            "{\"id\": \"b\", \"vectors\": [[0, 1, 0], [0, 0, 1]]}\n");
    const auto recs = read_embedding_records(p);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].id == "a");
    CHECK(recs[1].embedding.rows() == 2);
    CHECK(recs[1].embedding.row(1)[2] == 1.0);
    const auto index = load_corpus(p, ScorerKind::MaxSim);
    CHECK(index.size() == 2);
    CHECK(load_queries(p).at("b").rows() == 2);
}

TEST_CASE("embedding loader errors") {
    TempDir dir;
    CHECK(parse_error_line([&] { (void)read_embedding_records(dir.file("a", "{\"id\":\"a\",\"vectors\":[[1]]}\nnot json\n")); }) == 2);
    CHECK(parse_error_line([&] { (void)read_embedding_records(dir.file("b", "{\"id\":\"a\"}\n")); }) == 1);
    CHECK(parse_error_line([&] {
              (void)read_embedding_records(dir.file("c", "{\"id\":\"a\",\"vectors\":[[1]]}\n\n{\"id\":\"b\",\"vectors\":[[\"x\"]]}\n"));
          }) == 3);
    try {
        (void)read_embedding_records(dir.file("d", "{\"id\":\"a\",\"vectors\":[[1,2]]}\n{\"id\":\"a\",\"vectors\":[[1,2]]}\n"));
        FAIL("expected DuplicateDocument");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DuplicateDocument);
    }
    try {
        (void)read_embedding_records(dir.file("e", "{\"id\":\"a\",\"vectors\":[[1,2]]}\n{\"id\":\"b\",\"vectors\":[[1,2,3]]}\n"));
        FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DimensionMismatch);
        CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }
    try {
        (void)read_embedding_records(dir.path / "missing.jsonl");
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
        CHECK(std::string(e.what()).find("missing.jsonl") != std::string::npos);
    }
    CHECK_THROWS_AS((void)load_corpus(dir.file("f", "\n"), ScorerKind::Cosine), Error);
}

TEST_CASE("embedding round trips") {
    std::mt19937_64 rng(51);
    TempDir dir;
    const auto recs = random_records(rng, 20);

    write_embeddings_jsonl(dir.path / "d.jsonl", recs, StoragePrecision::Double);
    const auto dbl = read_embedding_records(dir.path / "d.jsonl");
    REQUIRE(dbl.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(dbl[i].id == recs[i].id);
        CHECK(dbl[i].embedding == recs[i].embedding);
    }

    for (const auto& name : {"s.jsonl", "b.ffe"}) {
        const auto path = dir.path / name;
        if (std::string(name) == "b.ffe") {
            write_embeddings_binary(path, recs);
        } else {
            write_embeddings_jsonl(path, recs, StoragePrecision::Single);
        }
        const auto back = read_embedding_records(path);
        REQUIRE(back.size() == recs.size());
        for (std::size_t i = 0; i < recs.size(); ++i) {
            CHECK(back[i].id == recs[i].id);
            REQUIRE(back[i].embedding.same_shape(recs[i].embedding));
            for (std::size_t j = 0; j < recs[i].embedding.size(); ++j) {
                CHECK(static_cast<float>(back[i].embedding.values()[j]) ==
                      static_cast<float>(recs[i].embedding.values()[j]));
            }
        }
    }
}

TEST_CASE("binary embeddings start with the magic and reject truncation") {
    std::mt19937_64 rng(52);
    TempDir dir;
    const auto recs = random_records(rng, 3);
    const auto path = dir.path / "x.bin";
    write_embeddings_binary(path, recs);
    const auto bytes = read_text_file(path);
    CHECK(bytes.substr(0, 4) == "FFE1");
    const auto cut = dir.file("cut.bin", bytes.substr(0, bytes.size() - 3));
    CHECK(parse_error_line([&] { (void)read_embedding_records(cut); }).has_value());
}

TEST_CASE("qrels parsing") {
    TempDir dir;
    const auto q = load_qrels(dir.file("q.txt", "q1 0 d1 1\nq1 0 d2 0\n\nq2 0 d9 3\nq1 0 d1 2\n"));
    CHECK(q.grade("q1", "d1") == 2);
    CHECK(q.grade("q1", "d2") == 0);
    CHECK(q.grade("q2", "d9") == 3);
    CHECK(q.num_relevant("q1") == 1);
    CHECK(parse_error_line([&] { (void)load_qrels(dir.file("bad1", "q1 0 d1 1\nq1 0 d2\n")); }) == 2);
    CHECK(parse_error_line([&] { (void)load_qrels(dir.file("bad2", "q1 0 d1 -1\n")); }) == 1);
    CHECK(parse_error_line([&] { (void)load_qrels(dir.file("bad3", "q1 0 d1 x\n")); }) == 1);

    write_qrels(dir.path / "out.txt", q);
    CHECK(load_qrels(dir.path / "out.txt") == q);
}

TEST_CASE("run format and round trip") {
    const auto a = build_ranked_list("q2", {{"x", 0.5}, {"y", 1.25}});
    const auto b = build_ranked_list("q1", {{"z", -3.0}});
    const std::vector<RankedList> runs{a, b};
    CHECK(format_run(runs, "t") ==
          "q1 Q0 z 1 -3.000000 t\n"
          "q2 Q0 y 1 1.250000 t\n"
          "q2 Q0 x 2 0.500000 t\n");

    TempDir dir;
    write_run(dir.path / "r.trec", runs, "t");
    const auto back = load_run(dir.path / "r.trec");
    REQUIRE(back.size() == 2);
    CHECK(back[0] == b);
    CHECK(back[1] == a);

    // Equal scores keep the file's rank order.
    const auto tied = load_run(dir.file("tied", "q Q0 b 1 1.0 t\nq Q0 a 2 1.0 t\n"));
    CHECK(tied[0][0].doc_id == "b");
    CHECK(parse_error_line([&] { (void)load_run(dir.file("bad", "q Q0 a 1 1.0 t\nq Q0 b 0 0.5 t\n")); }) == 2);
    CHECK(parse_error_line([&] { (void)load_run(dir.file("bad2", "q Q0 a 1 nan? t\n")); }) == 1);
}
