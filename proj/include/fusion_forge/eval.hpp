#pragma once

/** \file eval.hpp
 *  \brief NDCG@k and Recall@k over TREC-style runs and qrels.
 *
 * Gain is 2^rel - 1 with a log2(rank + 1) discount. Queries without any
 * relevant document are left out of macro averages, as trec_eval does.
 */

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fusion_forge/core.hpp"

namespace fusion_forge {

/// 0 when the query has no relevant documents. Runs shorter than k are
/// evaluated over their available prefix.
auto ndcg_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) -> double;

/// Fraction of relevant (grade > 0) documents found in the top k; 0 when the
/// query has no relevant documents.
auto recall_at_k(const RankedList& run, const Qrels& qrels, std::size_t k) -> double;

enum class Metric { Ndcg, Recall };

auto to_string(Metric metric) -> std::string;
auto parse_metric(std::string_view name) -> Metric;

struct QueryScore {
    QueryId query_id;
    double value{0.0};
};

struct EvalReport {
    Metric metric{Metric::Ndcg};
    std::size_t k{0};
    std::vector<QueryScore> per_query;  ///< evaluated queries, sorted by id
    std::vector<QueryId> skipped;       ///< queries without relevant documents
    double mean{0.0};

    [[nodiscard]] auto name() const -> std::string;
};

auto evaluate(std::span<const RankedList> runs, const Qrels& qrels, Metric metric, std::size_t k)
    -> EvalReport;

}  // namespace fusion_forge
