// fusion_forge command-line entry point.
//
// Exit codes: 0 success, 1 check failure, 2 input error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fusion_forge/error.hpp"
#include "fusion_forge/pipeline.hpp"

namespace ff = fusion_forge;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitInputError = 2;

struct Overrides {
    std::string config;
    std::optional<std::string> method;
    std::optional<std::size_t> k;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Overrides& o, bool config_required) {
    auto* c = cmd->add_option("--config", o.config, "Pipeline config (JSON)");
    if (config_required) c->required();
    cmd->add_option("--method", o.method, "primary|complementary|rrf|avg-rank|minmax|softmax|gqr");
    cmd->add_option("--k", o.k, "Top-K list length");
    cmd->add_option("--seed", o.seed, "Seed for dev split / instances");
    cmd->add_option("--workers", o.workers, "Query worker threads");
}

// Flags win over config-file values.
auto load_config(const Overrides& o) -> ff::PipelineConfig {
    auto config = ff::PipelineConfig::load(o.config);
    if (o.method) config.method = ff::parse_method(*o.method);
    if (o.k) config.k = *o.k;
    if (o.seed) config.seed = *o.seed;
    if (o.workers) config.workers = *o.workers;
    config.gqr.top_k = config.k;
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid retrieval fusion and guided query refinement over precomputed embeddings"};
    app.require_subcommand(1);

    Overrides run_opts;
    auto* run = app.add_subcommand("run", "Run a fusion method over every query and write a TREC run");
    add_common(run, run_opts, true);
    run->add_option("--out", run_opts.out, "Run file path");
    std::optional<std::string> run_report;
    run->add_option("--report", run_report, "JSON report path");

    Overrides tune_opts;
    auto* tune = app.add_subcommand("tune", "Select weights or (step size, T) on a seeded dev split");
    add_common(tune, tune_opts, true);
    tune->add_option("--out", tune_opts.out, "JSON report path");

    std::string eval_run, eval_qrels, eval_metric = "ndcg";
    std::size_t eval_k = 5;
    std::optional<std::string> eval_out;
    auto* eval = app.add_subcommand("eval", "Evaluate a TREC run against qrels");
    eval->add_option("--run", eval_run, "Run file")->required();
    eval->add_option("--qrels", eval_qrels, "Qrels file")->required();
    eval->add_option("--metric", eval_metric, "ndcg|recall");
    eval->add_option("--k", eval_k, "Cutoff");
    eval->add_option("--out", eval_out, "JSON report path");

    Overrides bench_opts;
    std::size_t repetitions = 100;
    auto* bench = app.add_subcommand("bench", "Fusion-stage latency per method");
    add_common(bench, bench_opts, true);
    bench->add_option("--repetitions", repetitions, "Timed passes over the queries")->check(CLI::PositiveNumber);
    bench->add_option("--out", bench_opts.out, "JSON report path");

    Overrides grad_opts;
    ff::GradCheckOptions grad;
    auto* check = app.add_subcommand("check-grad", "Compare analytic and finite-difference refinement gradients");
    add_common(check, grad_opts, false);
    check->add_option("--instances", grad.instances, "Random instances")->check(CLI::PositiveNumber);
    check->add_option("--tolerance", grad.tolerance, "Max relative error");
    check->add_option("--out", grad_opts.out, "JSON report path");
    check->add_flag("--corrupt-gradient", grad.corrupt_gradient, "Negative control: perturb the analytic gradient")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInputError;
    }

    try {
        if (*run) {
            auto config = load_config(run_opts);
            if (run_opts.out) config.run_out = *run_opts.out;
            if (run_report) config.report_out = *run_report;
            const auto report = ff::cmd_run(config);
            std::cout << "wrote " << config.run_out.string() << " (" << report["num_queries"].get<std::size_t>()
                      << " queries, method " << report["method"].get<std::string>() << ")\n";
            if (report.contains("metrics")) std::cout << report["metrics"].dump() << "\n";
        } else if (*tune) {
            auto config = load_config(tune_opts);
            if (tune_opts.out) config.report_out = *tune_opts.out;
            const auto report = ff::cmd_tune(config);
            std::cout << "selected " << report["selected"].dump() << " (seed " << config.seed << ")\n";
        } else if (*eval) {
            const auto report = ff::cmd_eval(eval_run, eval_qrels, ff::parse_metric(eval_metric), eval_k,
                                             eval_out ? std::optional<std::filesystem::path>(*eval_out) : std::nullopt);
            for (const auto& [qid, value] : report["per_query"].items()) {
                std::printf("%s\t%s\t%.6f\n", report["metric"].get<std::string>().c_str(), qid.c_str(),
                            value.get<double>());
            }
            std::printf("%s\tall\t%.6f\n", report["metric"].get<std::string>().c_str(), report["mean"].get<double>());
        } else if (*bench) {
            auto config = load_config(bench_opts);
            if (bench_opts.out) config.report_out = *bench_opts.out;
            const auto report = ff::cmd_bench(config, repetitions);
            for (const auto& m : report["methods"]) {
                std::printf("%-14s mean %.4f ms  median %.4f ms  p95 %.4f ms  (%zu samples)\n",
                            m["method"].get<std::string>().c_str(), m["mean_ms_per_query"].get<double>(),
                            m["median_ms_per_query"].get<double>(), m["p95_ms_per_query"].get<double>(),
                            m["samples"].get<std::size_t>());
            }
            std::printf("gqr(T=50) > gqr(T=10) > rrf: %s\n", report["latency_order_holds"].get<bool>() ? "yes" : "no");
        } else if (*check) {
            if (!grad_opts.config.empty()) grad.seed = ff::PipelineConfig::load(grad_opts.config).seed;
            if (grad_opts.seed) grad.seed = *grad_opts.seed;
            const auto report = ff::cmd_check_grad(grad);
            if (grad_opts.out) ff::write_text_file(*grad_opts.out, report.to_json().dump(2) + "\n");
            std::printf("check-grad: %zu instances, worst relative error %.3e (seed %llu), tolerance %.1e: %s\n",
                        report.instances.size(), report.worst_relative_error,
                        static_cast<unsigned long long>(report.worst_seed.value_or(0)), report.tolerance,
                        report.passed ? "PASS" : "FAIL");
            if (!report.passed) return kExitCheckFailed;
        }
    } catch (const ff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return 0;
}
