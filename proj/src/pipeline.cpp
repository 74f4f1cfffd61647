#include "fusion_forge/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

#include "fusion_forge/error.hpp"
#include "fusion_forge/scoring.hpp"
#include "log.hpp"

namespace fusion_forge {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

auto elapsed_ms(Clock::time_point start) -> double {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

auto resolve_path(const std::filesystem::path& base, const std::string& value) -> std::filesystem::path {
    std::filesystem::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

template <typename T>
auto read_field(const json& obj, const char* key, T fallback) -> T {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("config field '") + key + "': " + e.what());
    }
}

auto parse_retriever(const json& doc, const char* key, const std::filesystem::path& base) -> RetrieverSpec {
    if (!doc.contains(key) || !doc.at(key).is_object()) {
        throw Error(ErrorCode::ParseError, std::string("config needs a '") + key + "' retriever object");
    }
    const auto& r = doc.at(key);
    RetrieverSpec spec;
    spec.queries = resolve_path(base, read_field<std::string>(r, "queries", ""));
    spec.documents = resolve_path(base, read_field<std::string>(r, "documents", ""));
    spec.scorer = parse_scorer_kind(read_field<std::string>(r, "scorer", "cosine"));
    if (spec.queries.empty() || spec.documents.empty()) {
        throw Error(ErrorCode::ParseError, std::string("retriever '") + key + "' needs 'queries' and 'documents'");
    }
    return spec;
}

auto line_of_offset(const std::string& text, std::size_t offset) -> std::size_t {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

auto percentile(std::vector<double> sorted, double q) -> double {
    std::sort(sorted.begin(), sorted.end());
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

auto summarize(std::string method, const std::vector<double>& samples) -> LatencyStats {
    LatencyStats s;
    s.method = std::move(method);
    s.samples = samples.size();
    if (samples.empty()) return s;
    s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    s.median_ms = percentile(samples, 0.5);
    s.p95_ms = percentile(samples, 0.95);
    return s;
}

auto query_embedding(const QueryEmbeddings& queries, const QueryId& id) -> const EmbeddingMatrix& {
    auto it = queries.find(id);
    if (it == queries.end()) throw Error(ErrorCode::InvalidParameter, "no embedding for query '" + id + "'");
    return it->second;
}

auto as_fusion_method(Method method) -> FusionMethod {
    switch (method) {
        case Method::Rrf: return FusionMethod::Rrf;
        case Method::AvgRank: return FusionMethod::AvgRank;
        case Method::ScoreMinMax: return FusionMethod::ScoreMinMax;
        case Method::ScoreSoftmax: return FusionMethod::ScoreSoftmax;
        default: break;
    }
    throw Error(ErrorCode::InvalidParameter, "method '" + to_string(method) + "' is not a fusion method");
}

auto metrics_summary(const std::vector<RankedList>& runs, const Qrels& qrels) -> json {
    const auto ndcg = evaluate(runs, qrels, Metric::Ndcg, 5);
    const auto recall = evaluate(runs, qrels, Metric::Recall, 10);
    return json{{"ndcg@5", ndcg.mean}, {"recall@10", recall.mean}, {"evaluated_queries", ndcg.per_query.size()}};
}

auto machine_info() -> json {
    json info;
    info["hardware_threads"] = std::thread::hardware_concurrency();
#if defined(__clang__)
    info["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    info["compiler"] = std::string("gcc ") + __VERSION__;
#else
    info["compiler"] = "unknown";
#endif
#ifdef NDEBUG
    info["optimized_build"] = true;
#else
    info["optimized_build"] = false;
#endif
    return info;
}

// Portable standard normal from raw 64-bit draws (Box-Muller), so seeded
// gradient-check instances are identical across standard libraries.
class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : rng_(seed) {}

    auto uniform() -> double { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    auto below(std::size_t lo, std::size_t hi) -> std::size_t {
        return lo + static_cast<std::size_t>(uniform() * static_cast<double>(hi - lo + 1));
    }
    auto normal() -> double {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    auto matrix(std::size_t rows, std::size_t dim, double scale) -> EmbeddingMatrix {
        std::vector<double> v(rows * dim);
        for (auto& x : v) x = scale * normal();
        return EmbeddingMatrix(rows, dim, std::move(v));
    }

private:
    std::mt19937_64 rng_;
};

// Smallest gap between the best and second-best document vector for any
// query vector; the MaxSim subgradient is smooth only when this is positive.
auto min_route_gap(const EmbeddingMatrix& z, const EmbeddingMatrix& doc) -> double {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < z.rows(); ++r) {
        double best = -std::numeric_limits<double>::infinity();
        double second = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < doc.rows(); ++j) {
            double v = 0.0;
            for (std::size_t c = 0; c < z.dim(); ++c) v += z.row(r)[c] * doc.row(j)[c];
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
        gap = std::min(gap, best - second);
    }
    return gap;
}

}  // namespace

auto to_string(Method method) -> std::string {
    switch (method) {
        case Method::Primary: return "primary";
        case Method::Complementary: return "complementary";
        case Method::Rrf: return "rrf";
        case Method::AvgRank: return "avg-rank";
        case Method::ScoreMinMax: return "minmax";
        case Method::ScoreSoftmax: return "softmax";
        case Method::Gqr: return "gqr";
    }
    return "unknown";
}

auto parse_method(std::string_view name) -> Method {
    std::string n(name);
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (n == "primary") return Method::Primary;
    if (n == "complementary") return Method::Complementary;
    if (n == "gqr") return Method::Gqr;
    switch (parse_fusion_method(n)) {
        case FusionMethod::Rrf: return Method::Rrf;
        case FusionMethod::AvgRank: return Method::AvgRank;
        case FusionMethod::ScoreMinMax: return Method::ScoreMinMax;
        case FusionMethod::ScoreSoftmax: return Method::ScoreSoftmax;
    }
    throw Error(ErrorCode::InvalidParameter, "unknown method '" + n + "'");
}

auto PipelineConfig::from_json(const json& doc, const std::filesystem::path& base_dir) -> PipelineConfig {
    if (!doc.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
    PipelineConfig c;
    c.primary = parse_retriever(doc, "primary", base_dir);
    c.complementary = parse_retriever(doc, "complementary", base_dir);
    if (doc.contains("qrels") && !doc.at("qrels").is_null()) {
        c.qrels = resolve_path(base_dir, read_field<std::string>(doc, "qrels", ""));
    }
    c.method = parse_method(read_field<std::string>(doc, "method", to_string(c.method)));
    c.k = read_field<std::size_t>(doc, "k", c.k);
    c.kappa = read_field<double>(doc, "kappa", c.kappa);
    c.alpha = read_field<double>(doc, "alpha", c.alpha);
    c.swap_roles = read_field<bool>(doc, "swap_roles", c.swap_roles);
    c.dev_fraction = read_field<double>(doc, "dev_fraction", c.dev_fraction);
    c.seed = read_field<std::uint64_t>(doc, "seed", c.seed);
    c.workers = read_field<std::size_t>(doc, "workers", c.workers);

    if (doc.contains("gqr")) {
        const auto& g = doc.at("gqr");
        c.gqr.iterations = read_field<std::size_t>(g, "iterations", c.gqr.iterations);
        c.gqr.step_size = read_field<double>(g, "step_size", c.gqr.step_size);
        c.gqr.loss = parse_loss_variant(read_field<std::string>(g, "loss", to_string(c.gqr.loss)));
        c.gqr.pool_policy = parse_pool_policy(read_field<std::string>(g, "pool_policy", to_string(c.gqr.pool_policy)));
        c.gqr.extra_search = read_field<bool>(g, "extra_search", c.gqr.extra_search);
        if (g.contains("adam")) {
            const auto& a = g.at("adam");
            c.gqr.adam.beta1 = read_field<double>(a, "beta1", c.gqr.adam.beta1);
            c.gqr.adam.beta2 = read_field<double>(a, "beta2", c.gqr.adam.beta2);
            c.gqr.adam.eps = read_field<double>(a, "eps", c.gqr.adam.eps);
        }
    }
    if (doc.contains("grid")) {
        const auto& g = doc.at("grid");
        c.grid.alphas = read_field<std::vector<double>>(g, "alphas", c.grid.alphas);
        c.grid.step_sizes = read_field<std::vector<double>>(g, "step_sizes", c.grid.step_sizes);
        c.grid.iteration_counts = read_field<std::vector<std::size_t>>(g, "iterations", c.grid.iteration_counts);
    }
    if (doc.contains("output")) {
        const auto& o = doc.at("output");
        if (o.contains("run")) c.run_out = resolve_path(base_dir, read_field<std::string>(o, "run", ""));
        if (o.contains("report")) c.report_out = resolve_path(base_dir, read_field<std::string>(o, "report", ""));
        c.tag = read_field<std::string>(o, "tag", c.tag);
    }
    c.gqr.top_k = c.k;
    c.validate();
    return c;
}

auto PipelineConfig::load(const std::filesystem::path& path) -> PipelineConfig {
    const auto text = read_text_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, "config '" + path.string() + "': " + e.what(), line_of_offset(text, e.byte));
    }
    return from_json(doc, path.parent_path());
}

auto PipelineConfig::to_json() const -> json {
    json doc;
    doc["primary"] = {{"queries", primary.queries.string()}, {"documents", primary.documents.string()},
                      {"scorer", fusion_forge::to_string(primary.scorer)}};
    doc["complementary"] = {{"queries", complementary.queries.string()},
                            {"documents", complementary.documents.string()},
                            {"scorer", fusion_forge::to_string(complementary.scorer)}};
    doc["qrels"] = qrels ? json(qrels->string()) : json(nullptr);
    doc["method"] = fusion_forge::to_string(method);
    doc["k"] = k;
    doc["kappa"] = kappa;
    doc["alpha"] = alpha;
    doc["swap_roles"] = swap_roles;
    doc["dev_fraction"] = dev_fraction;
    doc["seed"] = seed;
    doc["workers"] = workers;
    doc["gqr"] = {{"iterations", gqr.iterations},
                  {"step_size", gqr.step_size},
                  {"loss", fusion_forge::to_string(gqr.loss)},
                  {"pool_policy", fusion_forge::to_string(gqr.pool_policy)},
                  {"extra_search", gqr.extra_search},
                  {"adam", {{"beta1", gqr.adam.beta1}, {"beta2", gqr.adam.beta2}, {"eps", gqr.adam.eps}}}};
    doc["grid"] = {{"alphas", grid.alphas}, {"step_sizes", grid.step_sizes}, {"iterations", grid.iteration_counts}};
    doc["output"] = {{"run", run_out.string()}, {"report", report_out.string()}, {"tag", tag}};
    return doc;
}

void PipelineConfig::validate() const {
    if (k < 1) throw Error(ErrorCode::InvalidParameter, "k must be >= 1");
    if (!(kappa > 0.0)) throw Error(ErrorCode::InvalidParameter, "kappa must be positive");
    FusionWeights::make(alpha);
    if (workers < 1) throw Error(ErrorCode::InvalidParameter, "workers must be >= 1");
    if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) {
        throw Error(ErrorCode::InvalidParameter, "dev_fraction must lie in (0, 1)");
    }
    if (gqr.top_k != k) throw Error(ErrorCode::InvalidParameter, "GQR top_k must equal k");
    gqr.validate();
    grid.validate();
    if (tag.empty() || tag.find_first_of(" \t\n") != std::string::npos) {
        throw Error(ErrorCode::InvalidParameter, "run tag must be a single non-empty token");
    }
}

auto Workspace::swapped() const -> Workspace {
    Workspace ws = *this;
    std::swap(ws.primary_index, ws.complementary_index);
    std::swap(ws.primary_queries, ws.complementary_queries);
    return ws;
}

auto load_workspace(const PipelineConfig& config) -> Workspace {
    for (const auto* path : {&config.primary.queries, &config.primary.documents, &config.complementary.queries,
                             &config.complementary.documents}) {
        if (!std::filesystem::exists(*path)) {
            throw Error(ErrorCode::IoError, "embedding file '" + path->string() + "' does not exist");
        }
    }
    Workspace ws;
    ws.primary_index = std::make_shared<const CorpusIndex>(load_corpus(config.primary.documents, config.primary.scorer));
    ws.complementary_index = config.complementary.documents == config.primary.documents &&
                                     config.complementary.scorer == config.primary.scorer
                                 ? ws.primary_index
                                 : std::make_shared<const CorpusIndex>(
                                       load_corpus(config.complementary.documents, config.complementary.scorer));
    ws.primary_queries = load_queries(config.primary.queries);
    ws.complementary_queries = load_queries(config.complementary.queries);
    for (const auto& [id, _] : ws.primary_queries) {
        if (!ws.complementary_queries.contains(id)) {
            throw Error(ErrorCode::InvalidParameter, "query '" + id + "' has no complementary embedding");
        }
        ws.query_ids.push_back(id);
    }
    if (ws.complementary_queries.size() != ws.primary_queries.size()) {
        throw Error(ErrorCode::InvalidParameter, "query embedding files cover different query sets");
    }
    return ws;
}

auto retrieve_lists(const Workspace& ws, const QueryId& query_id, std::size_t k) -> RetrievedLists {
    return RetrievedLists{search_top_k(query_id, query_embedding(ws.primary_queries, query_id), *ws.primary_index, k),
                          search_top_k(query_id, query_embedding(ws.complementary_queries, query_id),
                                       *ws.complementary_index, k)};
}

auto make_problem(const Workspace& ws, const QueryId& query_id) -> GqrProblem {
    return GqrProblem{query_id, query_embedding(ws.primary_queries, query_id),
                      query_embedding(ws.complementary_queries, query_id), ws.primary_index,
                      ws.complementary_index};
}

auto run_query(const Workspace& ws, const PipelineConfig& config, const QueryId& query_id) -> RankedList {
    switch (config.method) {
        case Method::Primary:
            return search_top_k(query_id, query_embedding(ws.primary_queries, query_id), *ws.primary_index, config.k);
        case Method::Complementary:
            return search_top_k(query_id, query_embedding(ws.complementary_queries, query_id),
                                *ws.complementary_index, config.k);
        case Method::Gqr:
            return guided_query_refinement(make_problem(ws, query_id), config.gqr);
        default: {
            const auto lists = retrieve_lists(ws, query_id, config.k);
            return fuse(as_fusion_method(config.method), lists.primary, lists.complementary, config.k,
                        FusionWeights::make(config.alpha), config.kappa);
        }
    }
}

auto run_queries(const Workspace& ws, const PipelineConfig& config, const std::vector<QueryId>& query_ids,
                 std::size_t workers) -> TimedRun {
    TimedRun out;
    out.runs.resize(query_ids.size());
    out.milliseconds.resize(query_ids.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (auto i = next.fetch_add(1); i < query_ids.size(); i = next.fetch_add(1)) {
            try {
                const auto start = Clock::now();
                out.runs[i] = run_query(ws, config, query_ids[i]);
                out.milliseconds[i] = elapsed_ms(start);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next = query_ids.size();
            }
        }
    };
    const auto threads = std::max<std::size_t>(1, std::min(workers, query_ids.size()));
    if (threads == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

auto cmd_run(const PipelineConfig& config) -> json {
    config.validate();
    const auto loaded = load_workspace(config);
    const auto ws = config.swap_roles ? loaded.swapped() : loaded;
    const auto start = Clock::now();
    const auto timed = run_queries(ws, config, ws.query_ids, config.workers);
    const double total = elapsed_ms(start);
    write_run(config.run_out, timed.runs, config.tag);

    json report;
    report["command"] = "run";
    report["method"] = to_string(config.method);
    report["params"] = config.to_json();
    report["run_path"] = config.run_out.string();
    report["num_queries"] = ws.query_ids.size();
    report["total_ms"] = total;
    json per_query = json::array();
    for (std::size_t i = 0; i < ws.query_ids.size(); ++i) {
        per_query.push_back({{"query_id", ws.query_ids[i]}, {"ms", timed.milliseconds[i]}});
    }
    report["queries"] = std::move(per_query);
    if (config.qrels) report["metrics"] = metrics_summary(timed.runs, load_qrels(*config.qrels));
    write_text_file(config.report_out, report.dump(2) + "\n");
    return report;
}

auto cmd_tune(const PipelineConfig& config) -> json {
    config.validate();
    if (!config.qrels) throw Error(ErrorCode::InvalidParameter, "tuning needs a 'qrels' path");
    if (config.method == Method::Primary || config.method == Method::Complementary) {
        throw Error(ErrorCode::InvalidParameter, "method '" + to_string(config.method) + "' has nothing to tune");
    }
    const auto qrels = load_qrels(*config.qrels);
    const auto loaded = load_workspace(config);
    const auto ws = config.swap_roles ? loaded.swapped() : loaded;
    const auto split = split_dev(ws.query_ids, config.dev_fraction, config.seed);
    const std::set<QueryId> dev_ids(split.dev.ids().begin(), split.dev.ids().end());
    auto require_dev = [&](const QueryId& id) {
        if (!dev_ids.contains(id)) throw std::logic_error("tuning touched non-dev query '" + id + "'");
    };

    json report;
    report["command"] = "tune";
    report["method"] = to_string(config.method);
    report["seed"] = config.seed;
    report["dev_fraction"] = config.dev_fraction;
    report["dev_queries"] = split.dev.ids();
    report["num_test_queries"] = split.test.ids().size();

    PipelineConfig selected = config;
    if (config.method == Method::Gqr) {
        const auto sel = tune_gqr(split.dev, config.grid, qrels, config.gqr,
                                  [&](const QueryId& id, const GqrConfig& cfg) {
                                      require_dev(id);
                                      return guided_query_refinement(make_problem(ws, id), cfg);
                                  });
        json grid = json::array();
        for (const auto& p : sel.grid) {
            grid.push_back({{"step_size", p.step_size}, {"iterations", p.iterations}, {"dev_ndcg@5", p.dev_ndcg}});
        }
        report["grid"] = std::move(grid);
        report["selected"] = {{"step_size", sel.step_size}, {"iterations", sel.iterations}, {"dev_ndcg@5", sel.dev_ndcg}};
        selected.gqr.step_size = sel.step_size;
        selected.gqr.iterations = sel.iterations;
    } else {
        const auto method = as_fusion_method(config.method);
        const auto sel = tune_weight(
            method, split.dev, config.grid.alphas, qrels, config.k,
            [&](const QueryId& id) {
                require_dev(id);
                return retrieve_lists(ws, id, config.k);
            },
            config.kappa);
        json grid = json::array();
        for (const auto& p : sel.grid) grid.push_back({{"alpha", p.alpha}, {"dev_ndcg@5", p.dev_ndcg}});
        report["grid"] = std::move(grid);
        report["selected"] = {{"alpha", sel.alpha}, {"dev_ndcg@5", sel.dev_ndcg}};
        selected.alpha = sel.alpha;
    }
    // Held-out evaluation of the chosen point, after selection is final.
    const auto test_runs = run_queries(ws, selected, split.test.ids(), config.workers).runs;
    report["test_metrics"] = metrics_summary(test_runs, qrels);
    write_text_file(config.report_out, report.dump(2) + "\n");
    return report;
}

auto cmd_eval(const std::filesystem::path& run_path, const std::filesystem::path& qrels_path, Metric metric,
              std::size_t k, const std::optional<std::filesystem::path>& out) -> json {
    const auto runs = load_run(run_path);
    const auto qrels = load_qrels(qrels_path);
    const auto result = evaluate(runs, qrels, metric, k);
    json per_query = json::object();
    for (const auto& q : result.per_query) per_query[q.query_id] = q.value;
    json report{{"command", "eval"},
                {"metric", result.name()},
                {"k", k},
                {"mean", result.mean},
                {"evaluated_queries", result.per_query.size()},
                {"skipped_queries", result.skipped},
                {"per_query", std::move(per_query)},
                {"run", run_path.string()},
                {"qrels", qrels_path.string()}};
    if (out) write_text_file(*out, report.dump(2) + "\n");
    return report;
}

auto bench_fusion_stage(const Workspace& ws, const PipelineConfig& config, std::size_t repetitions,
                        std::size_t warmup) -> std::vector<LatencyStats> {
    if (repetitions < 1) throw Error(ErrorCode::InvalidParameter, "repetitions must be >= 1");
    if (ws.query_ids.empty()) throw Error(ErrorCode::InvalidParameter, "benchmark needs at least one query");
    std::vector<RetrievedLists> lists;
    std::vector<GqrProblem> problems;
    for (const auto& id : ws.query_ids) {
        lists.push_back(retrieve_lists(ws, id, config.k));
        problems.push_back(make_problem(ws, id));
    }
    const auto weights = FusionWeights::make(config.alpha);

    struct Case {
        std::string name;
        std::function<void(std::size_t)> run;
    };
    std::vector<Case> cases;
    for (auto method : {FusionMethod::Rrf, FusionMethod::AvgRank, FusionMethod::ScoreMinMax, FusionMethod::ScoreSoftmax}) {
        cases.push_back({to_string(method), [&, method](std::size_t q) {
                             auto r = fuse(method, lists[q].primary, lists[q].complementary, config.k, weights,
                                           config.kappa);
                             if (r.size() > config.k) throw std::logic_error("fused list longer than k");
                         }});
    }
    for (std::size_t iterations : {std::size_t{10}, std::size_t{50}}) {
        auto cfg = config.gqr;
        cfg.iterations = iterations;
        cases.push_back({"gqr(T=" + std::to_string(iterations) + ")", [&, cfg](std::size_t q) {
                             auto r = refine_query(problems[q], lists[q].primary, lists[q].complementary, cfg);
                             if (r.ranking.size() > config.k) throw std::logic_error("refined list longer than k");
                         }});
    }

    std::vector<LatencyStats> stats;
    const auto n = ws.query_ids.size();
    for (const auto& c : cases) {
        for (std::size_t w = 0; w < warmup; ++w) {
            for (std::size_t q = 0; q < n; ++q) c.run(q);
        }
        std::vector<double> samples;
        samples.reserve(repetitions);
        for (std::size_t r = 0; r < repetitions; ++r) {
            const auto start = Clock::now();
            for (std::size_t q = 0; q < n; ++q) c.run(q);
            samples.push_back(elapsed_ms(start) / static_cast<double>(n));
        }
        stats.push_back(summarize(c.name, samples));
    }
    return stats;
}

auto cmd_bench(const PipelineConfig& config, std::size_t repetitions) -> json {
    config.validate();
    const auto loaded = load_workspace(config);
    const auto ws = config.swap_roles ? loaded.swapped() : loaded;
    const auto stats = bench_fusion_stage(ws, config, repetitions);
    json methods = json::array();
    std::map<std::string, double> mean;
    for (const auto& s : stats) {
        mean[s.method] = s.mean_ms;
        methods.push_back({{"method", s.method},
                           {"samples", s.samples},
                           {"mean_ms_per_query", s.mean_ms},
                           {"median_ms_per_query", s.median_ms},
                           {"p95_ms_per_query", s.p95_ms}});
    }
    json report{{"command", "bench"},
                {"repetitions", repetitions},
                {"num_queries", ws.query_ids.size()},
                {"k", config.k},
                {"stage", "fusion only; top-K retrieval runs before timing"},
                {"machine", machine_info()},
                {"methods", std::move(methods)},
                {"latency_order_holds", mean["gqr(T=50)"] > mean["gqr(T=10)"] && mean["gqr(T=10)"] > mean["rrf"]}};
    write_text_file(config.report_out, report.dump(2) + "\n");
    return report;
}

auto make_grad_instance(std::uint64_t seed, ScorerKind scorer, LossVariant loss, std::size_t pool_size,
                        std::size_t dim) -> GradInstance {
    if (pool_size < 1 || dim < 1) throw Error(ErrorCode::InvalidParameter, "instance needs a pool and a dimension");
    NormalSource src(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    const std::size_t query_rows = scorer == ScorerKind::Cosine ? 1 : src.below(2, 6);
    auto z = src.matrix(query_rows, dim, scorer == ScorerKind::Cosine ? 1.0 : 2.0 * scale);

    std::vector<std::pair<DocId, EmbeddingMatrix>> docs;
    CandidatePool pool{"grad-check", {}};
    for (std::size_t i = 0; i < pool_size; ++i) {
        const std::size_t rows = scorer == ScorerKind::Cosine ? 1 : src.below(2, 8);
        auto doc = src.matrix(rows, dim, scorer == ScorerKind::Cosine ? 1.0 : scale);
        // Keep MaxSim routing away from ties so central differences see a smooth loss.
        while (scorer == ScorerKind::MaxSim && min_route_gap(z, doc) < 1e-3) doc = src.matrix(rows, dim, scale);
        char id[32];
        std::snprintf(id, sizeof(id), "d%03zu", i);
        pool.doc_ids.emplace_back(id);
        docs.emplace_back(id, std::move(doc));
    }
    auto index = std::make_shared<const CorpusIndex>(std::move(docs), scorer);

    std::vector<double> guidance_scores(pool_size);
    for (auto& s : guidance_scores) s = 1.5 * src.normal();
    return GradInstance{std::move(z), pool, index, softmax_distribution(guidance_scores, pool), loss};
}

auto GradCheckReport::to_json() const -> json {
    json items = json::array();
    for (const auto& i : instances) {
        items.push_back({{"seed", i.seed},
                         {"scorer", fusion_forge::to_string(i.scorer)},
                         {"loss", fusion_forge::to_string(i.loss)},
                         {"pool_size", i.pool_size},
                         {"dim", i.dim},
                         {"max_relative_error", i.comparison.max_relative_error},
                         {"max_small_abs_error", i.comparison.max_small_abs_error},
                         {"passed", i.passed}});
    }
    return json{{"command", "check-grad"},
                {"passed", passed},
                {"tolerance", tolerance},
                {"worst_seed", worst_seed ? json(*worst_seed) : json(nullptr)},
                {"worst_relative_error", worst_relative_error},
                {"instances", std::move(items)}};
}

auto cmd_check_grad(const GradCheckOptions& options) -> GradCheckReport {
    if (options.instances < 1) throw Error(ErrorCode::InvalidParameter, "instances must be >= 1");
    if (!(options.tolerance > 0.0)) throw Error(ErrorCode::InvalidParameter, "tolerance must be positive");
    GradCheckReport report;
    report.tolerance = options.tolerance;
    constexpr LossVariant kLosses[] = {LossVariant::KlConsensus, LossVariant::JensenShannon, LossVariant::KlTarget};
    double worst = -1.0;
    for (std::size_t i = 0; i < options.instances; ++i) {
        const std::uint64_t seed = options.seed + i;
        NormalSource shape(seed ^ 0x9E3779B97F4A7C15ULL);
        GradCheckInstance result;
        result.seed = seed;
        result.scorer = i % 2 == 0 ? ScorerKind::Cosine : ScorerKind::MaxSim;
        result.loss = kLosses[(i / 2) % 3];
        result.pool_size = shape.below(5, 50);
        result.dim = shape.below(4, 64);

        const auto inst = make_grad_instance(seed, result.scorer, result.loss, result.pool_size, result.dim);
        auto analytic = gqr_grad(inst.z, inst.pool, *inst.primary, inst.guidance, inst.loss);
        if (options.corrupt_gradient) {
            std::vector<double> bad(analytic.values().begin(), analytic.values().end());
            bad.front() = bad.front() * 1.5 + 1e-3;
            analytic = EmbeddingMatrix(analytic.rows(), analytic.dim(), std::move(bad));
        }
        const auto numeric = finite_diff_grad_extended(
            [&](const EmbeddingMatrix& z) {
                return gqr_loss_extended(z, inst.pool, *inst.primary, inst.guidance, inst.loss);
            },
            inst.z, options.h);
        result.comparison = compare_gradients(analytic, numeric, options.abs_tolerance);
        result.passed = result.comparison.passes(options.tolerance, options.abs_tolerance);
        report.passed = report.passed && result.passed;
        const double badness = std::max(result.comparison.max_relative_error,
                                        result.comparison.max_small_abs_error / options.abs_tolerance * options.tolerance);
        if (badness > worst) {
            worst = badness;
            report.worst_seed = seed;
            report.worst_relative_error = result.comparison.max_relative_error;
        }
        logger().debug("check-grad seed {}: rel {:.3e}", seed, result.comparison.max_relative_error);
        report.instances.push_back(result);
    }
    return report;
}

}  // namespace fusion_forge
