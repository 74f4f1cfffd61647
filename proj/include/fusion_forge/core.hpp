#pragma once

/** \file core.hpp
 *  \brief Shared domain types: embeddings, corpus indexes, ranked lists,
 *  candidate pools and relevance judgments.
 *
 * Everything here is immutable after construction and can be shared
 * read-only between query workers.
 */

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fusion_forge {

using DocId = std::string;
using QueryId = std::string;

/// One query's or document's representation: an ordered list of equal-length
/// real vectors. Single-vector encoders produce exactly one row.
class EmbeddingMatrix {
public:
    /// Builds from explicit rows. Throws DimensionMismatch on ragged rows and
    /// InvalidParameter on empty input or non-finite components.
    EmbeddingMatrix(std::initializer_list<std::initializer_list<double>> rows);
    explicit EmbeddingMatrix(const std::vector<std::vector<double>>& rows);
    /// Row-major flat storage of `rows * dim` values.
    EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> values);

    /// All-zero matrix of the given shape (gradients, optimizer moments).
    static auto zeros(std::size_t rows, std::size_t dim) -> EmbeddingMatrix;

    [[nodiscard]] auto rows() const noexcept -> std::size_t { return rows_; }
    [[nodiscard]] auto dim() const noexcept -> std::size_t { return dim_; }
    [[nodiscard]] auto size() const noexcept -> std::size_t { return values_.size(); }
    [[nodiscard]] auto row(std::size_t i) const -> std::span<const double> {
        return {values_.data() + i * dim_, dim_};
    }
    [[nodiscard]] auto values() const noexcept -> std::span<const double> { return values_; }
    [[nodiscard]] auto same_shape(const EmbeddingMatrix& other) const noexcept -> bool {
        return rows_ == other.rows_ && dim_ == other.dim_;
    }

    auto operator==(const EmbeddingMatrix&) const -> bool = default;

private:
    EmbeddingMatrix() = default;

    std::size_t rows_{0};
    std::size_t dim_{0};
    std::vector<double> values_;
};

enum class ScorerKind { Cosine, MaxSim };

auto to_string(ScorerKind kind) -> std::string;
/// Accepts "cosine" and "maxsim" (case-insensitive).
auto parse_scorer_kind(std::string_view name) -> ScorerKind;

/// Exact-search document collection for one retriever.
class CorpusIndex {
public:
    /// Throws InvalidParameter when empty, DuplicateDocument on repeated ids and
    /// DimensionMismatch when entries disagree on dimension.
    CorpusIndex(std::vector<std::pair<DocId, EmbeddingMatrix>> entries, ScorerKind scorer);

    [[nodiscard]] auto size() const noexcept -> std::size_t { return ids_.size(); }
    [[nodiscard]] auto dim() const noexcept -> std::size_t { return dim_; }
    [[nodiscard]] auto scorer() const noexcept -> ScorerKind { return scorer_; }
    [[nodiscard]] auto id(std::size_t i) const -> const DocId& { return ids_[i]; }
    [[nodiscard]] auto embedding(std::size_t i) const -> const EmbeddingMatrix& { return embeddings_[i]; }
    [[nodiscard]] auto ids() const noexcept -> const std::vector<DocId>& { return ids_; }
    [[nodiscard]] auto contains(const DocId& id) const -> bool { return positions_.contains(id); }
    /// Throws DocumentNotInIndex.
    [[nodiscard]] auto embedding(const DocId& id) const -> const EmbeddingMatrix&;

private:
    std::vector<DocId> ids_;
    std::vector<EmbeddingMatrix> embeddings_;
    std::unordered_map<DocId, std::size_t> positions_;
    ScorerKind scorer_;
    std::size_t dim_{0};
};

struct ScoredDoc {
    DocId doc_id;
    double score{0.0};

    auto operator==(const ScoredDoc&) const -> bool = default;
};

/// Ranked retrieval output for one query: scores non-increasing, ids unique.
class RankedList {
public:
    RankedList() = default;

    /// Accepts items already in rank order (e.g. read back from a run file).
    /// Throws DuplicateDocument, NonFiniteScore, or InvalidParameter if scores increase.
    static auto from_ordered(QueryId query_id, std::vector<ScoredDoc> items) -> RankedList;

    [[nodiscard]] auto query_id() const noexcept -> const QueryId& { return query_id_; }
    [[nodiscard]] auto items() const noexcept -> const std::vector<ScoredDoc>& { return items_; }
    [[nodiscard]] auto size() const noexcept -> std::size_t { return items_.size(); }
    [[nodiscard]] auto empty() const noexcept -> bool { return items_.empty(); }
    [[nodiscard]] auto operator[](std::size_t i) const -> const ScoredDoc& { return items_[i]; }

    /// Keeps the first `k` items.
    [[nodiscard]] auto truncated(std::size_t k) const -> RankedList;

    auto operator==(const RankedList&) const -> bool = default;

private:
    friend auto build_ranked_list(QueryId, std::vector<ScoredDoc>) -> RankedList;

    QueryId query_id_;
    std::vector<ScoredDoc> items_;
};

/// Sorts by score descending, ties by ascending doc id.
/// Throws DuplicateDocument or NonFiniteScore.
auto build_ranked_list(QueryId query_id, std::vector<ScoredDoc> scored) -> RankedList;

/// Ordered set of documents a fusion method works over for one query.
struct CandidatePool {
    QueryId query_id;
    std::vector<DocId> doc_ids;

    [[nodiscard]] auto size() const noexcept -> std::size_t { return doc_ids.size(); }
    [[nodiscard]] auto empty() const noexcept -> bool { return doc_ids.empty(); }

    auto operator==(const CandidatePool&) const -> bool = default;
};

/// Union of the lists' documents: first list's order, then each later list's
/// unseen documents in their order. Throws QueryMismatch.
auto union_pool(std::span<const RankedList> lists) -> CandidatePool;
auto union_pool(std::initializer_list<RankedList> lists) -> CandidatePool;

/// Pool holding exactly one list's documents in rank order.
auto pool_of(const RankedList& list) -> CandidatePool;

/// 1-indexed position of `doc_id`, or `k + 1` when absent.
auto rank_of(const RankedList& list, const DocId& doc_id, std::size_t k) -> std::size_t;

/// Relevance judgments. Absent pairs have grade 0.
class Qrels {
public:
    /// Throws InvalidParameter on negative grades. Returns true if an existing
    /// judgment was overwritten.
    auto set(const QueryId& query_id, const DocId& doc_id, int grade) -> bool;

    [[nodiscard]] auto grade(const QueryId& query_id, const DocId& doc_id) const -> int;
    /// Judgments for one query (empty map when the query is unjudged).
    [[nodiscard]] auto judgments(const QueryId& query_id) const -> const std::map<DocId, int>&;
    [[nodiscard]] auto query_ids() const -> std::vector<QueryId>;
    [[nodiscard]] auto num_relevant(const QueryId& query_id) const -> std::size_t;

    auto operator==(const Qrels&) const -> bool = default;

private:
    std::map<QueryId, std::map<DocId, int>> grades_;
};

}  // namespace fusion_forge
