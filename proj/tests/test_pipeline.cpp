#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

#include "fusion_forge/error.hpp"
#include "fusion_forge/pipeline.hpp"

using namespace fusion_forge;
using doctest::Approx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixture = FF_FIXTURE_DIR;
const fs::path kGolden = FF_GOLDEN_DIR;
const fs::path kCli = FF_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("ff_pipe_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
    int exit_code{-1};
    std::string out;
    std::string err;
};

auto cli(const std::string& args, const TempDir& dir) -> CliResult {
    const auto out = dir.path / "stdout.txt";
    const auto err = dir.path / "stderr.txt";
    const std::string cmd = "'" + kCli.string() + "' " + args + " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_text_file(out);
    r.err = read_text_file(err);
    return r;
}

auto fixture_config() -> PipelineConfig { return PipelineConfig::load(kFixture / "config.json"); }

auto config_arg() -> std::string { return "--config '" + (kFixture / "config.json").string() + "'"; }

}  // namespace

TEST_CASE("config paths resolve against the config directory") {
    const auto c = fixture_config();
    CHECK(c.primary.documents == kFixture / "primary_docs.jsonl");
    CHECK(c.primary.scorer == ScorerKind::MaxSim);
    CHECK(c.qrels == kFixture / "qrels.txt");
    CHECK(c.method == Method::Rrf);
    CHECK(c.gqr.iterations == 25);
    CHECK(c.seed == 13);
    CHECK(c.tag == "fixture");

    const auto again = PipelineConfig::from_json(c.to_json(), "/elsewhere");
    CHECK(again.to_json() == c.to_json());

    auto doc = c.to_json();
    doc["k"] = 0;
    CHECK_THROWS_AS(PipelineConfig::from_json(doc, "/"), Error);
    doc = c.to_json();
    doc["method"] = "bm25";
    CHECK_THROWS_AS(PipelineConfig::from_json(doc, "/"), Error);
    doc = c.to_json();
    doc["output"]["tag"] = "two words";
    CHECK_THROWS_AS(PipelineConfig::from_json(doc, "/"), Error);
}

TEST_CASE("missing embedding file names the path") {
    auto c = fixture_config();
    c.primary.documents = "/nonexistent/docs.jsonl";
    try {
        (void)load_workspace(c);
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
        CHECK(std::string(e.what()).find("/nonexistent/docs.jsonl") != std::string::npos);
    }
}

TEST_CASE("results do not depend on the worker count") {
    auto c = fixture_config();
    c.method = Method::Gqr;
    const auto ws = load_workspace(c);
    const auto one = run_queries(ws, c, ws.query_ids, 1).runs;
    const auto three = run_queries(ws, c, ws.query_ids, 3).runs;
    REQUIRE(one.size() == ws.query_ids.size());
    CHECK(one == three);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i].query_id() == ws.query_ids[i]);
}

TEST_CASE("gqr with identical retrievers equals the primary ranking") {
    auto c = fixture_config();
    c.complementary = c.primary;
    c.method = Method::Gqr;
    const auto ws = load_workspace(c);
    for (const auto& id : ws.query_ids) {
        auto primary = c;
        primary.method = Method::Primary;
        CHECK(run_query(ws, c, id) == run_query(ws, primary, id));
    }
}

TEST_CASE("role swap exchanges primary and complementary") {
    const auto c = fixture_config();
    const auto ws = load_workspace(c);
    auto primary = c;
    primary.method = Method::Primary;
    auto comp = c;
    comp.method = Method::Complementary;
    const auto sw = ws.swapped();
    const auto& id = ws.query_ids.front();
    CHECK(run_query(sw, primary, id) == run_query(ws, comp, id));
}

TEST_CASE("gradient check passes and its negative control fails") {
    GradCheckOptions o;
    o.instances = 20;
    o.seed = 3;
    const auto ok = cmd_check_grad(o);
    CHECK(ok.passed);
    CHECK(ok.instances.size() == 20);
    CHECK(ok.worst_relative_error <= 1e-4);
    o.corrupt_gradient = true;
    const auto bad = cmd_check_grad(o);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst_seed.has_value());
    const auto j = bad.to_json();
    CHECK(j["passed"] == false);
}

TEST_CASE("bench reports every fusion stage") {
    auto c = fixture_config();
    const auto ws = load_workspace(c);
    const auto stats = bench_fusion_stage(ws, c, 2, 0);
    REQUIRE(stats.size() == 6);
    for (const auto& s : stats) {
        CHECK(s.samples == 2);
        CHECK(s.mean_ms >= 0.0);
        CHECK(s.p95_ms >= s.median_ms - 1e-12);
    }
    CHECK(stats[0].method == "rrf");
}

TEST_CASE("cli bench writes a report with the latency order check") {
    TempDir dir;
    const auto out = dir.path / "bench.json";
    const auto r = cli("bench " + config_arg() + " --repetitions 3 --out '" + out.string() + "'", dir);
    CHECK(r.exit_code == 0);
    const auto report = json::parse(read_text_file(out));
    CHECK(report["methods"].size() == 6);
    CHECK(report["latency_order_holds"].is_boolean());
    CHECK(report["repetitions"] == 3);
}

TEST_CASE("cli run reproduces the golden rrf run") {
    TempDir dir;
    const auto run = dir.path / "rrf.trec";
    const auto r = cli("run " + config_arg() + " --method rrf --out '" + run.string() + "' --report '" +
                           (dir.path / "report.json").string() + "'",
                       dir);
    CHECK(r.exit_code == 0);
    CHECK(read_text_file(run) == read_text_file(kGolden / "rrf.trec"));
    const auto report = json::parse(read_text_file(dir.path / "report.json"));
    CHECK(report["num_queries"] == 60);
    CHECK(report["method"] == "rrf");
}

TEST_CASE("cli eval reproduces the golden evaluation") {
    TempDir dir;
    const auto r = cli("eval --run '" + (kGolden / "rrf.trec").string() + "' --qrels '" +
                           (kFixture / "qrels.txt").string() + "' --metric ndcg --k 5",
                       dir);
    CHECK(r.exit_code == 0);
    CHECK(r.out == read_text_file(kGolden / "eval_rrf_ndcg5.txt"));
}

TEST_CASE("cli tune reproduces the golden selections") {
    TempDir dir;
    for (const std::string method : {"rrf", "gqr"}) {
        const auto out = dir.path / (method + ".json");
        const auto r = cli("tune " + config_arg() + " --method " + method + " --out '" + out.string() + "'", dir);
        CHECK(r.exit_code == 0);
        const auto report = json::parse(read_text_file(out));
        const auto golden = json::parse(read_text_file(kGolden / ("tune_" + method + ".json")));
        CHECK(report["selected"] == golden["selected"]);
        CHECK(report["dev_queries"] == golden["dev_queries"]);
        CHECK(report["test_metrics"]["ndcg@5"].get<double>() ==
              Approx(golden["test_metrics"]["ndcg@5"].get<double>()).epsilon(1e-9));
    }
}

TEST_CASE("cli exit codes") {
    TempDir dir;
    CHECK(cli("--help", dir).exit_code == 0);
    CHECK(cli("run --no-such-flag", dir).exit_code == 2);
    CHECK(cli("", dir).exit_code == 2);

    auto doc = fixture_config().to_json();
    doc["primary"]["documents"] = (dir.path / "absent.jsonl").string();
    std::ofstream(dir.path / "broken.json") << doc.dump();
    auto r = cli("run --config '" + (dir.path / "broken.json").string() + "'", dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("absent.jsonl") != std::string::npos);

    r = cli("check-grad --instances 10 --seed 4", dir);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("PASS") != std::string::npos);
    r = cli("check-grad --instances 10 --seed 4 --corrupt-gradient", dir);
    CHECK(r.exit_code == 1);
    CHECK(r.out.find("FAIL") != std::string::npos);
    CHECK(r.out.find("seed") != std::string::npos);
}

TEST_CASE("cli warns on duplicate judgments") {
    TempDir dir;
    std::ofstream(dir.path / "q.txt") << "q1 0 d1 1\nq1 0 d1 2\n";
    std::ofstream(dir.path / "r.trec") << "q1 Q0 d1 1 1.0 t\n";
    const auto r = cli("eval --run '" + (dir.path / "r.trec").string() + "' --qrels '" +
                           (dir.path / "q.txt").string() + "'",
                       dir);
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("duplicate judgment") != std::string::npos);
}
