#pragma once

// Index container ("SLIX", little-endian):
//   magic[4] version:u32 width:u32 doc_count:u32
//   doc_count x (len:u32 bytes[len])            external doc ids
//   width x (len:u32, len x (doc:u32 weight:f32))  posting lists, heaviest first

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "splare/binary_io.hpp"
#include "splare/error.hpp"
#include "splare/index.hpp"

namespace splare {

inline constexpr std::string_view kIndexMagic = "SLIX";
inline constexpr std::uint32_t kIndexVersion = 1;

inline std::string serialize_index(const InvertedIndex& index) {
    binary::Writer w;
    w.bytes(kIndexMagic);
    w.u32(kIndexVersion);
    w.u32(index.width());
    w.u32(static_cast<std::uint32_t>(index.doc_count()));
    for (const auto& id : index.doc_ids()) {
        w.u32(static_cast<std::uint32_t>(id.size()));
        w.bytes(id);
    }
    for (std::uint32_t j = 0; j < index.width(); ++j) {
        auto list = index.postings(j);
        w.u32(static_cast<std::uint32_t>(list.size()));
        for (const auto& p : list) {
            w.u32(p.doc);
            w.f32(p.weight);
        }
    }
    return w.take();
}

inline InvertedIndex deserialize_index(std::string_view bytes) {
    binary::Reader r(bytes);
    if (r.bytes(4) != kIndexMagic) throw format_error("not an index container (bad magic)");
    if (auto v = r.u32(); v != kIndexVersion) {
        throw format_error("unsupported index version " + std::to_string(v));
    }
    auto width = r.u32();
    auto doc_count = r.u32();
    // Every id costs at least 4 bytes and every list header 4 bytes.
    if (r.remaining() / 4 < std::uint64_t{doc_count} + width) {
        throw format_error("index container truncated");
    }
    std::vector<std::string> ids;
    ids.reserve(doc_count);
    std::unordered_set<std::string_view> seen;
    for (std::uint32_t d = 0; d < doc_count; ++d) {
        auto id = r.bytes(r.u32());
        if (!seen.insert(id).second) throw format_error("duplicate doc id in index");
        ids.emplace_back(id);
    }
    std::vector<std::vector<Posting>> postings(width);
    for (std::uint32_t j = 0; j < width; ++j) {
        auto len = r.u32();
        if (r.remaining() / 8 < len) throw format_error("index container truncated");
        auto& list = postings[j];
        list.resize(len);
        for (auto& p : list) {
            p.doc = r.u32();
            p.weight = r.f32();
        }
    }
    r.expect_end();
    return {width, std::move(ids), std::move(postings)};
}

inline InvertedIndex load_index(const std::string& path) {
    return deserialize_index(binary::read_file(path));
}

inline void save_index(const std::string& path, const InvertedIndex& index) {
    binary::write_file(path, serialize_index(index));
}

}  // namespace splare
