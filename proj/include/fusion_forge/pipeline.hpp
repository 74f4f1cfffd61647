#pragma once

/** \file pipeline.hpp
 *  \brief Configuration and end-to-end commands behind the CLI.
 *
 * A pipeline config is one JSON document; relative paths inside it resolve
 * against the config file's directory. Commands return JSON reports and
 * throw fusion_forge::Error on bad input.
 */

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fusion_forge/core.hpp"
#include "fusion_forge/eval.hpp"
#include "fusion_forge/fusion.hpp"
#include "fusion_forge/gqr.hpp"
#include "fusion_forge/io.hpp"
#include "fusion_forge/tune.hpp"

namespace fusion_forge {

enum class Method {
    Primary,        ///< primary retriever's own top-K
    Complementary,  ///< complementary retriever's own top-K
    Rrf,
    AvgRank,
    ScoreMinMax,
    ScoreSoftmax,
    Gqr,
};

auto to_string(Method method) -> std::string;
auto parse_method(std::string_view name) -> Method;

struct RetrieverSpec {
    std::filesystem::path queries;
    std::filesystem::path documents;
    ScorerKind scorer{ScorerKind::Cosine};
};

struct PipelineConfig {
    RetrieverSpec primary;
    RetrieverSpec complementary;
    std::optional<std::filesystem::path> qrels;
    Method method{Method::Rrf};
    std::size_t k{10};
    double kappa{kDefaultRrfKappa};
    double alpha{0.5};
    GqrConfig gqr{};
    bool swap_roles{false};
    TuningGrid grid{};
    double dev_fraction{0.1};
    std::uint64_t seed{0};
    std::size_t workers{1};
    std::filesystem::path run_out{"run.trec"};
    std::filesystem::path report_out{"report.json"};
    std::string tag{"fusion_forge"};

    /// Throws ParseError / InvalidParameter.
    static auto from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir) -> PipelineConfig;
    static auto load(const std::filesystem::path& path) -> PipelineConfig;
    [[nodiscard]] auto to_json() const -> nlohmann::json;
    /// Throws InvalidParameter.
    void validate() const;
};

/// Loaded indexes and query embeddings shared by every query worker.
struct Workspace {
    std::shared_ptr<const CorpusIndex> primary_index;
    std::shared_ptr<const CorpusIndex> complementary_index;
    QueryEmbeddings primary_queries;
    QueryEmbeddings complementary_queries;
    std::vector<QueryId> query_ids;  ///< sorted

    /// Applies the role swap: the complementary retriever becomes primary.
    [[nodiscard]] auto swapped() const -> Workspace;
};

/// Throws IoError naming the missing path, or any loader error.
auto load_workspace(const PipelineConfig& config) -> Workspace;

auto retrieve_lists(const Workspace& ws, const QueryId& query_id, std::size_t k) -> RetrievedLists;
auto make_problem(const Workspace& ws, const QueryId& query_id) -> GqrProblem;

/// Ranking for one query under the config's method (weights and GQR settings
/// taken from `config`).
auto run_query(const Workspace& ws, const PipelineConfig& config, const QueryId& query_id) -> RankedList;

struct TimedRun {
    std::vector<RankedList> runs;              ///< in `query_ids` order
    std::vector<double> milliseconds;          ///< per query
};

/// Runs queries on `workers` threads; output order is independent of worker count.
auto run_queries(const Workspace& ws, const PipelineConfig& config,
                 const std::vector<QueryId>& query_ids, std::size_t workers) -> TimedRun;

auto cmd_run(const PipelineConfig& config) -> nlohmann::json;
auto cmd_tune(const PipelineConfig& config) -> nlohmann::json;
auto cmd_eval(const std::filesystem::path& run_path, const std::filesystem::path& qrels_path,
              Metric metric, std::size_t k, const std::optional<std::filesystem::path>& out)
    -> nlohmann::json;

struct LatencyStats {
    std::string method;
    std::size_t samples{0};
    double mean_ms{0.0};
    double median_ms{0.0};
    double p95_ms{0.0};
};

/// Fusion-stage latency per method; top-K retrieval happens before timing.
/// Methods measured: rrf, avg-rank, minmax, softmax, gqr(T=10), gqr(T=50).
auto bench_fusion_stage(const Workspace& ws, const PipelineConfig& config, std::size_t repetitions,
                        std::size_t warmup = 5) -> std::vector<LatencyStats>;
auto cmd_bench(const PipelineConfig& config, std::size_t repetitions) -> nlohmann::json;

struct GradCheckOptions {
    std::size_t instances{50};
    double tolerance{1e-4};
    double abs_tolerance{1e-8};
    double h{1e-5};
    std::uint64_t seed{0};
    /// Negative-control hook: perturbs the analytic gradient before comparing.
    bool corrupt_gradient{false};
};

struct GradCheckInstance {
    std::uint64_t seed{0};
    ScorerKind scorer{ScorerKind::Cosine};
    LossVariant loss{LossVariant::KlConsensus};
    std::size_t pool_size{0};
    std::size_t dim{0};
    GradientComparison comparison;
    bool passed{false};
};

struct GradCheckReport {
    std::vector<GradCheckInstance> instances;
    bool passed{true};
    double tolerance{0.0};
    std::optional<std::uint64_t> worst_seed;
    double worst_relative_error{0.0};

    [[nodiscard]] auto to_json() const -> nlohmann::json;
};

/// Seeded random refinement instance used by the gradient check. MaxSim
/// instances are resampled until every query vector's best document vector
/// wins by a clear margin, so the loss is smooth around z.
struct GradInstance {
    EmbeddingMatrix z;
    CandidatePool pool;
    std::shared_ptr<const CorpusIndex> primary;
    Distribution guidance;
    LossVariant loss{LossVariant::KlConsensus};
};

auto make_grad_instance(std::uint64_t seed, ScorerKind scorer, LossVariant loss, std::size_t pool_size,
                        std::size_t dim) -> GradInstance;

auto cmd_check_grad(const GradCheckOptions& options) -> GradCheckReport;

}  // namespace fusion_forge
