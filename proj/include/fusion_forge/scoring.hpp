#pragma once

/** \file scoring.hpp
 *  \brief Query-document similarity, exact top-K search and softmax
 *  distributions over candidate pools.
 *
 * All arithmetic is double precision. Embeddings are scored as stored; no
 * implicit normalization happens for MaxSim.
 */

#include <span>
#include <vector>

#include "fusion_forge/core.hpp"

namespace fusion_forge {

/// q.p / (|q||p|) for single-vector embeddings.
/// Throws ZeroNormVector, DimensionMismatch, or InvalidParameter for multi-vector input.
auto cosine(const EmbeddingMatrix& q, const EmbeddingMatrix& p) -> double;

/// Late-interaction score: for every query vector take its largest dot product
/// over the document vectors, then sum.
auto maxsim(const EmbeddingMatrix& q, const EmbeddingMatrix& p) -> double;

auto score(ScorerKind kind, const EmbeddingMatrix& query, const EmbeddingMatrix& doc) -> double;

/// Brute-force search over the whole corpus. Returns min(k, corpus size) items.
auto search_top_k(const QueryId& query_id, const EmbeddingMatrix& query,
                  const CorpusIndex& index, std::size_t k) -> RankedList;

/// Raw scores of the pool documents, aligned to pool order. Throws DocumentNotInIndex.
auto score_pool(const EmbeddingMatrix& query, const CandidatePool& pool,
                const CorpusIndex& index) -> std::vector<double>;

/// Probability vector over a candidate pool.
struct Distribution {
    CandidatePool pool;
    std::vector<double> probs;
};

/// Max-shifted softmax; in-place variant used by the refinement loop.
void softmax_into(std::span<const double> scores, std::span<double> out);

/// Throws EmptyPool, NonFiniteScore, or InvalidParameter on a length mismatch.
auto softmax_distribution(std::span<const double> scores, const CandidatePool& pool) -> Distribution;

}  // namespace fusion_forge
