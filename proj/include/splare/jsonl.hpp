#pragma once

// Line-oriented JSON interchange between pipeline stages.
//
//   sparse vector: {"id": "d1", "width": 32, "indices": [1, 7], "weights": [0.5, 1.25]}
//   hidden states: {"id": "d1", "n": 2, "d": 3, "rows": [[...], [...]]}
//
// Writers emit a fixed layout so the same values always produce the same
// bytes. Sparse weights are written at 32-bit precision (shortest decimal that
// round-trips the float); hidden states keep full double precision.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "splare/error.hpp"
#include "splare/matrix.hpp"
#include "splare/sparse_vector.hpp"

namespace splare {

struct NamedSparse {
    std::string id;
    SparseVector vec;
};

struct NamedHidden {
    std::string id;
    HiddenStateMatrix h;
};

namespace jsonl {

inline void append_f32(std::string& out, double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(value));
    out.append(buf, res.ptr);
}

inline void append_f64(std::string& out, double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    out.append(buf, res.ptr);
}

inline void append_string(std::string& out, std::string_view s) {
    out += nlohmann::json(s).dump();
}

/// Calls `fn(line, line_number)` for every non-blank line.
inline void for_each_line(std::istream& in,
                          const std::function<void(std::string_view, std::size_t)>& fn) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        fn(line, lineno);
    }
}

inline nlohmann::json parse_object(std::string_view line, std::size_t lineno) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw format_error("invalid JSON", lineno);
    if (!j.is_object()) throw format_error("expected a JSON object", lineno);
    return j;
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, std::size_t lineno) {
    auto it = j.find(key);
    if (it == j.end()) throw format_error(std::string("missing field \"") + key + "\"", lineno);
    return *it;
}

inline std::uint64_t get_count(const nlohmann::json& j, const char* key, std::size_t lineno) {
    const auto& v = field(j, key, lineno);
    if (!v.is_number_unsigned()) {
        throw format_error(std::string("field \"") + key + "\" must be a non-negative integer",
                           lineno);
    }
    return v.get<std::uint64_t>();
}

inline double get_real(const nlohmann::json& v, std::size_t lineno) {
    if (!v.is_number()) throw format_error("expected a number", lineno);
    auto x = v.get<double>();
    if (!std::isfinite(x)) throw format_error("non-finite number", lineno);
    return x;
}

/// Ids may be given as strings or integers; both are kept as strings.
inline std::string get_id(const nlohmann::json& j, const char* key, std::size_t lineno) {
    const auto& v = field(j, key, lineno);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return v.dump();
    throw format_error(std::string("field \"") + key + "\" must be a string", lineno);
}

}  // namespace jsonl

inline std::string format_sparse_record(std::string_view id, const SparseVector& v) {
    std::string out;
    out.reserve(48 + v.size() * 16);
    out += "{\"id\": ";
    jsonl::append_string(out, id);
    out += ", \"width\": ";
    out += std::to_string(v.width());
    out += ", \"indices\": [";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(v.indices()[i]);
    }
    out += "], \"weights\": [";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        jsonl::append_f32(out, v.weights()[i]);
    }
    out += "]}";
    return out;
}

/// Parses one sparse record. Weights are rounded to 32-bit precision.
inline NamedSparse parse_sparse_record(std::string_view line, std::size_t lineno = 0) {
    auto j = jsonl::parse_object(line, lineno);
    auto id = jsonl::get_id(j, "id", lineno);
    auto width = jsonl::get_count(j, "width", lineno);
    if (width == 0 || width > UINT32_MAX) throw format_error("width out of range", lineno);
    const auto& idx = jsonl::field(j, "indices", lineno);
    const auto& wts = jsonl::field(j, "weights", lineno);
    if (!idx.is_array() || !wts.is_array()) {
        throw format_error("indices and weights must be arrays", lineno);
    }
    if (idx.size() != wts.size()) {
        throw format_error("indices and weights differ in length", lineno);
    }
    std::vector<std::uint32_t> ids;
    std::vector<double> ws;
    ids.reserve(idx.size());
    ws.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (!idx[i].is_number_unsigned() || idx[i].get<std::uint64_t>() >= width) {
            throw format_error("feature id out of range", lineno);
        }
        ids.push_back(static_cast<std::uint32_t>(idx[i].get<std::uint64_t>()));
        auto w = static_cast<double>(static_cast<float>(jsonl::get_real(wts[i], lineno)));
        ws.push_back(w);
    }
    try {
        return {std::move(id), SparseVector(static_cast<std::uint32_t>(width), std::move(ids),
                                            std::move(ws))};
    } catch (const std::domain_error& e) {
        throw format_error(e.what(), lineno);
    }
}

inline void write_sparse_jsonl(std::ostream& out, const std::vector<NamedSparse>& records) {
    for (const auto& r : records) out << format_sparse_record(r.id, r.vec) << '\n';
}

inline std::vector<NamedSparse> read_sparse_jsonl(std::istream& in) {
    std::vector<NamedSparse> out;
    jsonl::for_each_line(in, [&](std::string_view line, std::size_t lineno) {
        out.push_back(parse_sparse_record(line, lineno));
    });
    return out;
}

/// Appends `"n": .., "d": .., "rows": [...]` (no braces).
inline void append_hidden_fields(std::string& out, const HiddenStateMatrix& h) {
    out += "\"n\": ";
    out += std::to_string(h.rows());
    out += ", \"d\": ";
    out += std::to_string(h.cols());
    out += ", \"rows\": [";
    for (std::size_t i = 0; i < h.rows(); ++i) {
        if (i) out += ", ";
        out += '[';
        auto row = h.row(i);
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out += ", ";
            jsonl::append_f64(out, row[k]);
        }
        out += ']';
    }
    out += ']';
}

inline HiddenStateMatrix hidden_from_json(const nlohmann::json& j, std::size_t lineno) {
    if (!j.is_object()) throw format_error("hidden-state matrix must be an object", lineno);
    auto n = jsonl::get_count(j, "n", lineno);
    auto d = jsonl::get_count(j, "d", lineno);
    if (n == 0 || d == 0) throw format_error("hidden-state matrix must be non-empty", lineno);
    const auto& rows = jsonl::field(j, "rows", lineno);
    if (!rows.is_array() || rows.size() != n) {
        throw format_error("\"rows\" must be an array of n rows", lineno);
    }
    HiddenStateMatrix h(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        if (!rows[i].is_array() || rows[i].size() != d) {
            throw format_error("row " + std::to_string(i) + " must have d values", lineno);
        }
        for (std::size_t k = 0; k < d; ++k) h(i, k) = jsonl::get_real(rows[i][k], lineno);
    }
    return h;
}

inline std::string format_hidden_record(std::string_view id, const HiddenStateMatrix& h) {
    std::string out = "{\"id\": ";
    jsonl::append_string(out, id);
    out += ", ";
    append_hidden_fields(out, h);
    out += '}';
    return out;
}

inline NamedHidden parse_hidden_record(std::string_view line, std::size_t lineno = 0) {
    auto j = jsonl::parse_object(line, lineno);
    return {jsonl::get_id(j, "id", lineno), hidden_from_json(j, lineno)};
}

inline void write_hidden_jsonl(std::ostream& out, const std::vector<NamedHidden>& records) {
    for (const auto& r : records) out << format_hidden_record(r.id, r.h) << '\n';
}

inline std::vector<NamedHidden> read_hidden_jsonl(std::istream& in) {
    std::vector<NamedHidden> out;
    jsonl::for_each_line(in, [&](std::string_view line, std::size_t lineno) {
        out.push_back(parse_hidden_record(line, lineno));
    });
    return out;
}

}  // namespace splare
