#include "fusion_forge/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "fusion_forge/error.hpp"
#include "log.hpp"

namespace fusion_forge {

namespace {

constexpr std::array<char, 4> kBinaryMagic{'F', 'F', 'E', '1'};

auto open_input(const std::filesystem::path& path) -> std::ifstream {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    return in;
}

auto open_output(const std::filesystem::path& path) -> std::ofstream {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    return out;
}

auto is_blank(std::string_view line) -> bool {
    return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

auto split_fields(const std::string& line) -> std::vector<std::string> {
    std::istringstream in(line);
    std::vector<std::string> fields;
    for (std::string f; in >> f;) fields.push_back(std::move(f));
    return fields;
}

template <typename T>
auto parse_number(const std::string& token, T& value) -> bool {
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, value);
    return ec == std::errc() && ptr == end;
}

class DuplicateGuard {
public:
    void check(const std::string& id) {
        if (!seen_.insert(id).second) {
            throw Error(ErrorCode::DuplicateDocument, "record '" + id + "' appears twice");
        }
    }

private:
    std::unordered_set<std::string> seen_;
};

void require_dim(std::size_t& dim, const EmbeddingRecord& record) {
    if (dim == 0) dim = record.embedding.dim();
    if (record.embedding.dim() != dim) {
        throw Error(ErrorCode::DimensionMismatch, "record '" + record.id + "' has dimension " +
                                                      std::to_string(record.embedding.dim()) + ", expected " +
                                                      std::to_string(dim));
    }
}

auto parse_jsonl_record(const std::string& line, std::size_t line_no) -> EmbeddingRecord {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, e.what(), line_no);
    }
    if (!doc.is_object() || !doc.contains("id") || !doc["id"].is_string() || !doc.contains("vectors") ||
        !doc["vectors"].is_array() || doc["vectors"].empty()) {
        throw Error(ErrorCode::ParseError, "expected {\"id\": string, \"vectors\": [[number, ...], ...]}", line_no);
    }
    const auto id = doc["id"].get<std::string>();
    const auto& vectors = doc["vectors"];
    std::size_t dim = 0;
    std::vector<double> flat;
    for (const auto& v : vectors) {
        if (!v.is_array() || v.empty()) throw Error(ErrorCode::ParseError, "vector of '" + id + "' is not a non-empty array", line_no);
        if (dim == 0) dim = v.size();
        if (v.size() != dim) {
            throw Error(ErrorCode::DimensionMismatch, "record '" + id + "' has ragged vectors");
        }
        for (const auto& x : v) {
            if (!x.is_number()) throw Error(ErrorCode::ParseError, "non-numeric component in '" + id + "'", line_no);
            flat.push_back(x.get<double>());
        }
    }
    return EmbeddingRecord{id, EmbeddingMatrix(vectors.size(), dim, std::move(flat))};
}

auto read_u32(std::istream& in, std::uint32_t& value) -> bool {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) return false;
    value = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
            static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    return true;
}

void write_u32(std::ostream& out, std::uint32_t value) {
    const std::array<char, 4> b{static_cast<char>(value & 0xFF), static_cast<char>((value >> 8) & 0xFF),
                                static_cast<char>((value >> 16) & 0xFF), static_cast<char>((value >> 24) & 0xFF)};
    out.write(b.data(), 4);
}

auto read_binary_records(std::istream& in) -> std::vector<EmbeddingRecord> {
    std::uint32_t count = 0;
    if (!read_u32(in, count)) throw Error(ErrorCode::ParseError, "truncated FFE1 header", 1);
    std::vector<EmbeddingRecord> records;
    for (std::size_t r = 1; r <= count; ++r) {
        std::uint32_t id_len = 0, dim = 0, rows = 0;
        if (!read_u32(in, id_len)) throw Error(ErrorCode::ParseError, "truncated FFE1 record", r);
        std::string id(id_len, '\0');
        if (!in.read(id.data(), id_len) || !read_u32(in, dim) || !read_u32(in, rows)) {
            throw Error(ErrorCode::ParseError, "truncated FFE1 record", r);
        }
        if (dim == 0 || rows == 0) throw Error(ErrorCode::ParseError, "empty embedding in FFE1 record", r);
        std::vector<double> values(static_cast<std::size_t>(dim) * rows);
        for (auto& v : values) {
            std::uint32_t bits = 0;
            if (!read_u32(in, bits)) throw Error(ErrorCode::ParseError, "truncated FFE1 payload", r);
            v = static_cast<double>(std::bit_cast<float>(bits));
        }
        records.push_back({std::move(id), EmbeddingMatrix(rows, dim, std::move(values))});
    }
    return records;
}

}  // namespace

auto read_embedding_records(const std::filesystem::path& path) -> std::vector<EmbeddingRecord> {
    auto in = open_input(path);
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    std::vector<EmbeddingRecord> records;
    if (in.gcount() == 4 && magic == kBinaryMagic) {
        records = read_binary_records(in);
    } else {
        in.clear();
        in.seekg(0);
        std::string line;
        for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
            if (is_blank(line)) continue;
            records.push_back(parse_jsonl_record(line, line_no));
        }
    }
    DuplicateGuard guard;
    std::size_t dim = 0;
    for (const auto& record : records) {
        require_dim(dim, record);
        guard.check(record.id);
    }
    return records;
}

auto load_corpus(const std::filesystem::path& path, ScorerKind scorer) -> CorpusIndex {
    auto records = read_embedding_records(path);
    std::vector<std::pair<DocId, EmbeddingMatrix>> entries;
    entries.reserve(records.size());
    for (auto& r : records) entries.emplace_back(std::move(r.id), std::move(r.embedding));
    if (entries.empty()) throw Error(ErrorCode::ParseError, "'" + path.string() + "' holds no documents", 1);
    return CorpusIndex(std::move(entries), scorer);
}

auto load_queries(const std::filesystem::path& path) -> QueryEmbeddings {
    QueryEmbeddings queries;
    for (auto& r : read_embedding_records(path)) queries.emplace(std::move(r.id), std::move(r.embedding));
    return queries;
}

void write_embeddings_jsonl(const std::filesystem::path& path, std::span<const EmbeddingRecord> records,
                            StoragePrecision precision) {
    auto out = open_output(path);
    const int digits = precision == StoragePrecision::Single ? 9 : 17;
    char buf[64];
    for (const auto& record : records) {
        out << "{\"id\": " << nlohmann::json(record.id).dump() << ", \"vectors\": [";
        for (std::size_t r = 0; r < record.embedding.rows(); ++r) {
            out << (r ? ", [" : "[");
            const auto row = record.embedding.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                const double v = precision == StoragePrecision::Single ? static_cast<double>(static_cast<float>(row[c])) : row[c];
                std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
                out << (c ? ", " : "") << buf;
            }
            out << "]";
        }
        out << "]}\n";
    }
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'");
}

void write_embeddings_binary(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
    auto out = open_output(path);
    out.write(kBinaryMagic.data(), 4);
    write_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& record : records) {
        write_u32(out, static_cast<std::uint32_t>(record.id.size()));
        out.write(record.id.data(), static_cast<std::streamsize>(record.id.size()));
        write_u32(out, static_cast<std::uint32_t>(record.embedding.dim()));
        write_u32(out, static_cast<std::uint32_t>(record.embedding.rows()));
        for (double v : record.embedding.values()) write_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'");
}

auto load_qrels(const std::filesystem::path& path) -> Qrels {
    auto in = open_input(path);
    Qrels qrels;
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
        if (is_blank(line)) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 4) throw Error(ErrorCode::ParseError, "expected 'qid 0 docid grade'", line_no);
        int grade = 0;
        if (!parse_number(fields[3], grade) || grade < 0) {
            throw Error(ErrorCode::ParseError, "grade '" + fields[3] + "' is not a non-negative integer", line_no);
        }
        if (qrels.set(fields[0], fields[2], grade)) {
            logger().warn("{}:{}: duplicate judgment for ({}, {}); keeping grade {}", path.string(), line_no,
                          fields[0], fields[2], grade);
        }
    }
    return qrels;
}

void write_qrels(const std::filesystem::path& path, const Qrels& qrels) {
    auto out = open_output(path);
    for (const auto& qid : qrels.query_ids()) {
        for (const auto& [doc, grade] : qrels.judgments(qid)) out << qid << " 0 " << doc << ' ' << grade << '\n';
    }
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'");
}

auto format_run(std::span<const RankedList> runs, std::string_view tag) -> std::string {
    std::vector<const RankedList*> ordered;
    for (const auto& run : runs) ordered.push_back(&run);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const RankedList* a, const RankedList* b) { return a->query_id() < b->query_id(); });
    std::string text;
    char score[64];
    for (const auto* run : ordered) {
        for (std::size_t i = 0; i < run->size(); ++i) {
            std::snprintf(score, sizeof(score), "%.6f", (*run)[i].score);
            text += run->query_id();
            text += " Q0 ";
            text += (*run)[i].doc_id;
            text += ' ';
            text += std::to_string(i + 1);
            text += ' ';
            text += score;
            text += ' ';
            text += tag;
            text += '\n';
        }
    }
    return text;
}

void write_run(const std::filesystem::path& path, std::span<const RankedList> runs, std::string_view tag) {
    write_text_file(path, format_run(runs, tag));
}

auto load_run(const std::filesystem::path& path) -> std::vector<RankedList> {
    auto in = open_input(path);
    struct Row {
        std::size_t rank;
        ScoredDoc doc;
    };
    std::map<QueryId, std::vector<Row>> rows;
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
        if (is_blank(line)) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 6) throw Error(ErrorCode::ParseError, "expected 'qid Q0 docid rank score tag'", line_no);
        Row row{};
        if (!parse_number(fields[3], row.rank) || row.rank == 0) {
            throw Error(ErrorCode::ParseError, "rank '" + fields[3] + "' is not a positive integer", line_no);
        }
        if (!parse_number(fields[4], row.doc.score)) {
            throw Error(ErrorCode::ParseError, "score '" + fields[4] + "' is not a number", line_no);
        }
        row.doc.doc_id = fields[2];
        rows[fields[0]].push_back(std::move(row));
    }
    std::vector<RankedList> runs;
    for (auto& [qid, entries] : rows) {
        std::stable_sort(entries.begin(), entries.end(), [](const Row& a, const Row& b) { return a.rank < b.rank; });
        std::vector<ScoredDoc> items;
        items.reserve(entries.size());
        for (auto& e : entries) items.push_back(std::move(e.doc));
        runs.push_back(RankedList::from_ordered(qid, std::move(items)));
    }
    return runs;
}

auto read_text_file(const std::filesystem::path& path) -> std::string {
    auto in = open_input(path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
    auto out = open_output(path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path.string() + "'");
}

}  // namespace fusion_forge
