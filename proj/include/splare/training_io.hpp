#pragma once

// Training corpus: one query per line,
//   {"qid": "q1", "query_h": {"n": .., "d": .., "rows": [...]},
//    "docs": [{"did": "d1", "h": {...}, "teacher": 9.5}, ...]}
//
// Optimiser sidecar ("SAEO", little-endian), stored next to the SAE container:
//   magic[4] version:u32 step:u64 seed:u64 count:u32
//   then count f64 first moments and count f64 second moments
//   (W_enc row-major followed by b_enc).

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "splare/binary_io.hpp"
#include "splare/jsonl.hpp"
#include "splare/sae_io.hpp"
#include "splare/training.hpp"

namespace splare {

inline std::string format_training_record(const TrainingBatch& batch) {
    std::string out = "{\"qid\": ";
    jsonl::append_string(out, batch.qid);
    out += ", \"query_h\": {";
    append_hidden_fields(out, batch.query_h);
    out += "}, \"docs\": [";
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (i) out += ", ";
        out += "{\"did\": ";
        jsonl::append_string(out, batch.doc_ids.empty() ? std::to_string(i) : batch.doc_ids[i]);
        out += ", \"h\": {";
        append_hidden_fields(out, batch.docs_h[i]);
        out += "}, \"teacher\": ";
        jsonl::append_f64(out, batch.teacher_scores[i]);
        out += '}';
    }
    out += "]}";
    return out;
}

inline TrainingBatch parse_training_record(std::string_view line, std::size_t lineno = 0) {
    auto j = jsonl::parse_object(line, lineno);
    TrainingBatch b;
    b.qid = jsonl::get_id(j, "qid", lineno);
    b.query_h = hidden_from_json(jsonl::field(j, "query_h", lineno), lineno);
    const auto& docs = jsonl::field(j, "docs", lineno);
    if (!docs.is_array()) throw format_error("\"docs\" must be an array", lineno);
    for (const auto& d : docs) {
        if (!d.is_object()) throw format_error("each doc must be an object", lineno);
        b.doc_ids.push_back(jsonl::get_id(d, "did", lineno));
        b.docs_h.push_back(hidden_from_json(jsonl::field(d, "h", lineno), lineno));
        b.teacher_scores.push_back(jsonl::get_real(jsonl::field(d, "teacher", lineno), lineno));
    }
    if (b.size() < 2) throw format_error("a training query needs at least 2 documents", lineno);
    return b;
}

inline void write_training_jsonl(std::ostream& out, const std::vector<TrainingBatch>& batches) {
    for (const auto& b : batches) out << format_training_record(b) << '\n';
}

inline std::vector<TrainingBatch> read_training_jsonl(std::istream& in) {
    std::vector<TrainingBatch> out;
    jsonl::for_each_line(in, [&](std::string_view line, std::size_t lineno) {
        out.push_back(parse_training_record(line, lineno));
    });
    return out;
}

inline constexpr std::string_view kOptimizerMagic = "SAEO";
inline constexpr std::uint32_t kOptimizerVersion = 1;

inline std::string serialize_optimizer_state(const TrainState& state) {
    binary::Writer w;
    w.bytes(kOptimizerMagic);
    w.u32(kOptimizerVersion);
    w.u64(state.step);
    w.u64(state.seed);
    auto count = state.adam_m.w_enc.values().size() + state.adam_m.b_enc.size();
    w.u32(static_cast<std::uint32_t>(count));
    for (const auto* g : {&state.adam_m, &state.adam_v}) {
        for (double v : g->w_enc.values()) w.f64(v);
        for (double v : g->b_enc) w.f64(v);
    }
    return w.take();
}

/// Restores optimiser moments into `state`, whose params must already be loaded.
inline void deserialize_optimizer_state(std::string_view bytes, TrainState& state) {
    binary::Reader r(bytes);
    if (r.bytes(4) != kOptimizerMagic) throw format_error("not an optimiser sidecar (bad magic)");
    if (auto v = r.u32(); v != kOptimizerVersion) {
        throw format_error("unsupported optimiser sidecar version " + std::to_string(v));
    }
    state.step = r.u64();
    state.seed = r.u64();
    auto count = r.u32();
    const auto& p = state.params;
    if (count != p.width * p.d + p.width) {
        throw format_error("optimiser sidecar does not match SAE shape");
    }
    state.adam_m = EncoderGrad::zeros_like(p);
    state.adam_v = EncoderGrad::zeros_like(p);
    for (auto* g : {&state.adam_m, &state.adam_v}) {
        for (auto& v : g->w_enc.values()) v = r.f64();
        for (auto& v : g->b_enc) v = r.f64();
    }
    r.expect_end();
}

/// Writes `<path>` (SAE container) and `<path>.opt` (optimiser sidecar).
inline void save_checkpoint(const std::string& path, const TrainState& state) {
    save_sae(path, state.params);
    binary::write_file(path + ".opt", serialize_optimizer_state(state));
}

inline TrainState load_checkpoint(const std::string& path) {
    auto state = TrainState::init(load_sae(path));
    deserialize_optimizer_state(binary::read_file(path + ".opt"), state);
    return state;
}

}  // namespace splare
