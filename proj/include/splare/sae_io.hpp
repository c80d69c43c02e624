#pragma once

// SAE weight container ("SAEW", little-endian):
//   magic[4] version:u32 d:u32 width:u32 tag:u8
//   tag 1 (TopK)     -> k:u32
//   tag 2 (JumpReLU) -> per_feature:u8, then f32 scalar or width x f32
//   W_enc (width x d) b_enc (width) W_dec (d x width) b_dec (d), all f32 row-major.

#include <cmath>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "splare/binary_io.hpp"
#include "splare/error.hpp"
#include "splare/sae.hpp"

namespace splare {

inline constexpr std::string_view kSaeMagic = "SAEW";
inline constexpr std::uint32_t kSaeVersion = 1;

inline std::string serialize_sae(const SaeParams& params) {
    params.validate();
    binary::Writer w;
    w.bytes(kSaeMagic);
    w.u32(kSaeVersion);
    w.u32(static_cast<std::uint32_t>(params.d));
    w.u32(static_cast<std::uint32_t>(params.width));
    std::visit(
        [&](const auto& act) {
            using T = std::decay_t<decltype(act)>;
            if constexpr (std::is_same_v<T, Relu>) {
                w.u8(0);
            } else if constexpr (std::is_same_v<T, TopK>) {
                w.u8(1);
                w.u32(act.k);
            } else {
                w.u8(2);
                if (act.per_feature.empty()) {
                    w.u8(0);
                    w.f32(static_cast<float>(act.scalar));
                } else {
                    w.u8(1);
                    for (double t : act.per_feature) w.f32(static_cast<float>(t));
                }
            }
        },
        params.activation);
    for (double v : params.w_enc.values()) w.f32(static_cast<float>(v));
    for (double v : params.b_enc) w.f32(static_cast<float>(v));
    for (double v : params.w_dec.values()) w.f32(static_cast<float>(v));
    for (double v : params.b_dec) w.f32(static_cast<float>(v));
    return w.take();
}

inline SaeParams deserialize_sae(std::string_view bytes) {
    binary::Reader r(bytes);
    if (r.bytes(4) != kSaeMagic) throw format_error("not an SAE container (bad magic)");
    if (auto v = r.u32(); v != kSaeVersion) {
        throw format_error("unsupported SAE container version " + std::to_string(v));
    }
    std::size_t d = r.u32();
    std::size_t width = r.u32();
    if (d == 0 || width == 0) throw format_error("SAE dimensions must be positive");

    auto finite = [](float f) {
        if (!std::isfinite(f)) throw format_error("non-finite value in SAE container");
        return static_cast<double>(f);
    };

    Activation act;
    switch (r.u8()) {
        case 0: act = Relu{}; break;
        case 1: act = TopK{r.u32()}; break;
        case 2: {
            JumpRelu jr;
            auto flag = r.u8();
            if (flag == 0) {
                jr.scalar = finite(r.f32());
            } else if (flag == 1) {
                jr.per_feature.resize(width);
                for (auto& t : jr.per_feature) t = finite(r.f32());
            } else {
                throw format_error("bad JumpReLU threshold flag");
            }
            act = std::move(jr);
            break;
        }
        default: throw format_error("unknown activation tag");
    }

    // Size check before allocating anything proportional to width * d.
    std::size_t floats = 2 * width * d + width + d;
    if (r.remaining() != floats * 4) throw format_error("SAE container payload size mismatch");

    auto params = SaeParams::zeros(d, width, std::move(act));
    for (auto& v : params.w_enc.values()) v = finite(r.f32());
    for (auto& v : params.b_enc) v = finite(r.f32());
    for (auto& v : params.w_dec.values()) v = finite(r.f32());
    for (auto& v : params.b_dec) v = finite(r.f32());
    r.expect_end();
    try {
        params.validate();
    } catch (const std::domain_error& e) {
        throw format_error(std::string("invalid SAE parameters: ") + e.what());
    }
    return params;
}

inline SaeParams load_sae(const std::string& path) {
    return deserialize_sae(binary::read_file(path));
}

inline void save_sae(const std::string& path, const SaeParams& params) {
    binary::write_file(path, serialize_sae(params));
}

}  // namespace splare
