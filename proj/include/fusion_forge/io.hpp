#pragma once

/** \file io.hpp
 *  \brief Embedding, qrels and run file formats.
 *
 * Embeddings: JSON lines `{"id": "...", "vectors": [[...], ...]}` or the
 * little-endian "FFE1" binary layout (see docs/formats.md). Loaders sniff the
 * magic bytes, so either format can be passed anywhere a path is expected.
 * Qrels: `qid 0 docid grade`. Runs: `qid Q0 docid rank score tag`.
 */

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fusion_forge/core.hpp"

namespace fusion_forge {

struct EmbeddingRecord {
    std::string id;
    EmbeddingMatrix embedding;
};

using QueryEmbeddings = std::map<QueryId, EmbeddingMatrix>;

enum class StoragePrecision { Single, Double };

/// Throws IoError, ParseError (with line number, or record number for binary
/// files), DimensionMismatch(id) and DuplicateDocument(id).
auto read_embedding_records(const std::filesystem::path& path) -> std::vector<EmbeddingRecord>;

auto load_corpus(const std::filesystem::path& path, ScorerKind scorer) -> CorpusIndex;
auto load_queries(const std::filesystem::path& path) -> QueryEmbeddings;

void write_embeddings_jsonl(const std::filesystem::path& path, std::span<const EmbeddingRecord> records,
                            StoragePrecision precision = StoragePrecision::Double);
void write_embeddings_binary(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);

/// Later duplicates overwrite earlier ones with a logged warning.
auto load_qrels(const std::filesystem::path& path) -> Qrels;
void write_qrels(const std::filesystem::path& path, const Qrels& qrels);

/// Lines sorted by (qid, rank); scores with 6 decimals.
auto format_run(std::span<const RankedList> runs, std::string_view tag) -> std::string;
void write_run(const std::filesystem::path& path, std::span<const RankedList> runs, std::string_view tag);
/// Items keep the file's rank order. Runs are returned sorted by query id.
auto load_run(const std::filesystem::path& path) -> std::vector<RankedList>;

/// Whole file as a string; throws IoError.
auto read_text_file(const std::filesystem::path& path) -> std::string;
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace fusion_forge
