#include "fusion_forge/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>

#include "fusion_forge/error.hpp"

namespace fusion_forge {

namespace {

auto gain(int grade) -> double { return std::exp2(static_cast<double>(grade)) - 1.0; }

auto discount(std::size_t rank) -> double { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

void require_cutoff(std::size_t k) {
    if (k < 1) throw Error(ErrorCode::InvalidParameter, "metric cutoff must be >= 1");
}

}  // namespace

auto ndcg_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) -> double {
    require_cutoff(k);
    const auto& judged = qrels.judgments(run.query_id());
    std::vector<int> ideal;
    for (const auto& [_, grade] : judged) {
        if (grade > 0) ideal.push_back(grade);
    }
    if (ideal.empty()) return 0.0;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());

    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += gain(ideal[i]) * discount(i + 1);

    double dcg = 0.0;
    const auto depth = std::min(k, run.size());
    for (std::size_t i = 0; i < depth; ++i) {
        const auto it = judged.find(run[i].doc_id);
        if (it != judged.end() && it->second > 0) dcg += gain(it->second) * discount(i + 1);
    }
    return dcg / idcg;
}

auto recall_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) -> double {
    require_cutoff(k);
    const auto relevant = qrels.num_relevant(run.query_id());
    if (relevant == 0) return 0.0;
    std::size_t found = 0;
    const auto depth = std::min(k, run.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (qrels.grade(run.query_id(), run[i].doc_id) > 0) ++found;
    }
    return static_cast<double>(found) / static_cast<double>(relevant);
}

auto to_string(Metric metric) -> std::string { return metric == Metric::Ndcg ? "ndcg" : "recall"; }

auto parse_metric(std::string_view name) -> Metric {
    std::string n(name);
    std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (n == "ndcg") return Metric::Ndcg;
    if (n == "recall") return Metric::Recall;
    throw Error(ErrorCode::InvalidParameter, "unknown metric '" + std::string(name) + "'");
}

auto EvalReport::name() const -> std::string { return to_string(metric) + "@" + std::to_string(k); }

auto evaluate(std::span<const RankedList> runs, const Qrels& qrels, Metric metric, std::size_t k) -> EvalReport {
    require_cutoff(k);
    EvalReport report;
    report.metric = metric;
    report.k = k;
    std::vector<const RankedList*> ordered;
    ordered.reserve(runs.size());
    for (const auto& run : runs) ordered.push_back(&run);
    std::sort(ordered.begin(), ordered.end(),
              [](const RankedList* a, const RankedList* b) { return a->query_id() < b->query_id(); });

    double total = 0.0;
    for (const auto* run : ordered) {
        if (qrels.num_relevant(run->query_id()) == 0) {
            report.skipped.push_back(run->query_id());
            continue;
        }
        const double value = metric == Metric::Ndcg ? ndcg_at_k(*run, qrels, k) : recall_at_k(*run, qrels, k);
        report.per_query.push_back({run->query_id(), value});
        total += value;
    }
    if (!report.per_query.empty()) report.mean = total / static_cast<double>(report.per_query.size());
    return report;
}

}  // namespace fusion_forge
