#include "fusion_forge/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "fusion_forge/error.hpp"

namespace fusion_forge {

namespace {

void require_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::InvalidParameter, "embedding has a non-finite component");
        }
    }
}

// Ranking order: higher score first, then lexicographically smaller id.
auto ranks_before(const ScoredDoc& a, const ScoredDoc& b) -> bool {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
}

void require_unique_and_finite(const std::vector<ScoredDoc>& items) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(items.size());
    for (const auto& item : items) {
        if (!std::isfinite(item.score)) {
            throw Error(ErrorCode::NonFiniteScore, "score of '" + item.doc_id + "' is not finite");
        }
        if (!seen.insert(item.doc_id).second) {
            throw Error(ErrorCode::DuplicateDocument, "document '" + item.doc_id + "' appears twice");
        }
    }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : EmbeddingMatrix(std::vector<std::vector<double>>(rows.begin(), rows.end())) {}

EmbeddingMatrix::EmbeddingMatrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) {
        throw Error(ErrorCode::InvalidParameter, "embedding needs at least one non-empty vector");
    }
    dim_ = rows.front().size();
    rows_ = rows.size();
    values_.reserve(rows_ * dim_);
    for (const auto& r : rows) {
        if (r.size() != dim_) {
            throw Error(ErrorCode::DimensionMismatch, "ragged embedding: expected dimension " +
                                                          std::to_string(dim_) + ", got " +
                                                          std::to_string(r.size()));
        }
        values_.insert(values_.end(), r.begin(), r.end());
    }
    require_finite(values_);
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<double> values)
    : rows_(rows), dim_(dim), values_(std::move(values)) {
    if (rows_ == 0 || dim_ == 0) {
        throw Error(ErrorCode::InvalidParameter, "embedding needs at least one non-empty vector");
    }
    if (values_.size() != rows_ * dim_) {
        throw Error(ErrorCode::DimensionMismatch, "flat embedding storage does not match its shape");
    }
    require_finite(values_);
}

auto EmbeddingMatrix::zeros(std::size_t rows, std::size_t dim) -> EmbeddingMatrix {
    return EmbeddingMatrix(rows, dim, std::vector<double>(rows * dim, 0.0));
}

auto to_string(ScorerKind kind) -> std::string {
    return kind == ScorerKind::Cosine ? "cosine" : "maxsim";
}

auto parse_scorer_kind(std::string_view name) -> ScorerKind {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "cosine") return ScorerKind::Cosine;
    if (lower == "maxsim") return ScorerKind::MaxSim;
    throw Error(ErrorCode::InvalidParameter, "unknown scorer '" + std::string(name) + "'");
}

CorpusIndex::CorpusIndex(std::vector<std::pair<DocId, EmbeddingMatrix>> entries, ScorerKind scorer)
    : scorer_(scorer) {
    if (entries.empty()) {
        throw Error(ErrorCode::InvalidParameter, "corpus index must not be empty");
    }
    dim_ = entries.front().second.dim();
    ids_.reserve(entries.size());
    embeddings_.reserve(entries.size());
    positions_.reserve(entries.size());
    for (auto& [id, embedding] : entries) {
        if (embedding.dim() != dim_) {
            throw Error(ErrorCode::DimensionMismatch, "document '" + id + "' has dimension " +
                                                          std::to_string(embedding.dim()) + ", index has " +
                                                          std::to_string(dim_));
        }
        if (!positions_.emplace(id, ids_.size()).second) {
            throw Error(ErrorCode::DuplicateDocument, "document '" + id + "' appears twice");
        }
        ids_.push_back(std::move(id));
        embeddings_.push_back(std::move(embedding));
    }
}

auto CorpusIndex::embedding(const DocId& id) const -> const EmbeddingMatrix& {
    auto it = positions_.find(id);
    if (it == positions_.end()) {
        throw Error(ErrorCode::DocumentNotInIndex, "document '" + id + "' is not in the index");
    }
    return embeddings_[it->second];
}

auto RankedList::from_ordered(QueryId query_id, std::vector<ScoredDoc> items) -> RankedList {
    require_unique_and_finite(items);
    for (std::size_t i = 1; i < items.size(); ++i) {
        if (items[i].score > items[i - 1].score) {
            throw Error(ErrorCode::InvalidParameter,
                        "ranked list for query '" + query_id + "' has increasing scores at position " +
                            std::to_string(i + 1));
        }
    }
    RankedList list;
    list.query_id_ = std::move(query_id);
    list.items_ = std::move(items);
    return list;
}

auto RankedList::truncated(std::size_t k) const -> RankedList {
    RankedList list;
    list.query_id_ = query_id_;
    list.items_.assign(items_.begin(), items_.begin() + static_cast<std::ptrdiff_t>(std::min(k, items_.size())));
    return list;
}

auto build_ranked_list(QueryId query_id, std::vector<ScoredDoc> scored) -> RankedList {
    require_unique_and_finite(scored);
    std::sort(scored.begin(), scored.end(), ranks_before);
    RankedList list;
    list.query_id_ = std::move(query_id);
    list.items_ = std::move(scored);
    return list;
}

auto union_pool(std::span<const RankedList> lists) -> CandidatePool {
    CandidatePool pool;
    if (lists.empty()) return pool;
    pool.query_id = lists.front().query_id();
    std::unordered_set<std::string_view> seen;
    for (const auto& list : lists) {
        if (list.query_id() != pool.query_id) {
            throw Error(ErrorCode::QueryMismatch,
                        "cannot pool lists of queries '" + pool.query_id + "' and '" + list.query_id() + "'");
        }
    }
    for (const auto& list : lists) {
        for (const auto& item : list.items()) {
            if (seen.insert(item.doc_id).second) pool.doc_ids.push_back(item.doc_id);
        }
    }
    return pool;
}

auto union_pool(std::initializer_list<RankedList> lists) -> CandidatePool {
    return union_pool(std::span<const RankedList>(lists.begin(), lists.size()));
}

auto pool_of(const RankedList& list) -> CandidatePool {
    CandidatePool pool{list.query_id(), {}};
    pool.doc_ids.reserve(list.size());
    for (const auto& item : list.items()) pool.doc_ids.push_back(item.doc_id);
    return pool;
}

auto rank_of(const RankedList& list, const DocId& doc_id, std::size_t k) -> std::size_t {
    const auto& items = list.items();
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].doc_id == doc_id) return i + 1;
    }
    return k + 1;
}

auto Qrels::set(const QueryId& query_id, const DocId& doc_id, int grade) -> bool {
    if (grade < 0) {
        throw Error(ErrorCode::InvalidParameter, "negative relevance grade for (" + query_id + ", " + doc_id + ")");
    }
    auto [it, inserted] = grades_[query_id].insert_or_assign(doc_id, grade);
    return !inserted;
}

auto Qrels::grade(const QueryId& query_id, const DocId& doc_id) const -> int {
    auto q = grades_.find(query_id);
    if (q == grades_.end()) return 0;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

auto Qrels::judgments(const QueryId& query_id) const -> const std::map<DocId, int>& {
    static const std::map<DocId, int> kEmpty;
    auto q = grades_.find(query_id);
    return q == grades_.end() ? kEmpty : q->second;
}

auto Qrels::query_ids() const -> std::vector<QueryId> {
    std::vector<QueryId> ids;
    ids.reserve(grades_.size());
    for (const auto& [id, _] : grades_) ids.push_back(id);
    return ids;
}

auto Qrels::num_relevant(const QueryId& query_id) const -> std::size_t {
    const auto& j = judgments(query_id);
    return static_cast<std::size_t>(std::count_if(j.begin(), j.end(), [](const auto& e) { return e.second > 0; }));
}

}  // namespace fusion_forge
