#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "splare/matrix.hpp"
#include "splare/sparse_vector.hpp"

namespace splare {

struct Relu {
    friend bool operator==(const Relu&, const Relu&) = default;
};

/// Keeps the k largest pre-activations per token, then applies ReLU.
struct TopK {
    std::uint32_t k = 1;
    friend bool operator==(const TopK&, const TopK&) = default;
};

/// Passes a pre-activation through only when it exceeds its threshold.
/// Uses `per_feature` thresholds when present, else the shared `scalar`.
struct JumpRelu {
    double scalar = 0.0;
    std::vector<double> per_feature;

    [[nodiscard]] double threshold(std::size_t feature) const noexcept {
        return per_feature.empty() ? scalar : per_feature[feature];
    }
    friend bool operator==(const JumpRelu&, const JumpRelu&) = default;
};

using Activation = std::variant<Relu, TopK, JumpRelu>;

/// Sparse autoencoder parameters:
///   z = f(W_enc x + b_enc),  x_hat = W_dec z + b_dec
/// with W_enc of shape width x d and W_dec of shape d x width.
struct SaeParams {
    std::size_t d = 0;
    std::size_t width = 0;
    WeightMatrix w_enc;
    std::vector<double> b_enc;
    WeightMatrix w_dec;
    std::vector<double> b_dec;
    Activation activation = Relu{};

    /// Zero-initialised parameters of the given shape.
    static SaeParams zeros(std::size_t d, std::size_t width, Activation act = Relu{}) {
        SaeParams p;
        p.d = d;
        p.width = width;
        p.w_enc = WeightMatrix(width, d);
        p.b_enc.assign(width, 0.0);
        p.w_dec = WeightMatrix(d, width);
        p.b_dec.assign(d, 0.0);
        p.activation = std::move(act);
        return p;
    }

    /// Throws std::domain_error when shapes disagree or values are non-finite.
    void validate() const {
        if (d == 0 || width == 0) throw std::domain_error("SAE dimensions must be positive");
        if (w_enc.rows() != width || w_enc.cols() != d) {
            throw std::domain_error("W_enc must be width x d");
        }
        if (w_dec.rows() != d || w_dec.cols() != width) {
            throw std::domain_error("W_dec must be d x width");
        }
        if (b_enc.size() != width) throw std::domain_error("b_enc must have width entries");
        if (b_dec.size() != d) throw std::domain_error("b_dec must have d entries");
        if (!w_enc.all_finite() || !w_dec.all_finite()) {
            throw std::domain_error("SAE weights must be finite");
        }
        for (double v : b_enc) {
            if (!std::isfinite(v)) throw std::domain_error("b_enc must be finite");
        }
        for (double v : b_dec) {
            if (!std::isfinite(v)) throw std::domain_error("b_dec must be finite");
        }
        std::visit(
            [&](const auto& act) {
                using T = std::decay_t<decltype(act)>;
                if constexpr (std::is_same_v<T, TopK>) {
                    if (act.k == 0 || act.k > width) {
                        throw std::domain_error("TopK k must be in [1, width]");
                    }
                } else if constexpr (std::is_same_v<T, JumpRelu>) {
                    if (!act.per_feature.empty() && act.per_feature.size() != width) {
                        throw std::domain_error("JumpReLU needs one threshold per feature");
                    }
                    auto bad = [](double t) { return !std::isfinite(t) || t < 0.0; };
                    if (bad(act.scalar) || std::any_of(act.per_feature.begin(),
                                                       act.per_feature.end(), bad)) {
                        throw std::domain_error("JumpReLU thresholds must be finite and >= 0");
                    }
                }
            },
            activation);
    }

    friend bool operator==(const SaeParams&, const SaeParams&) = default;
};

namespace detail {

inline void apply_activation(const Activation& activation, std::span<const double> pre,
                             std::span<double> out, std::vector<std::uint32_t>& scratch) {
    std::visit(
        [&](const auto& act) {
            using T = std::decay_t<decltype(act)>;
            if constexpr (std::is_same_v<T, Relu>) {
                for (std::size_t j = 0; j < pre.size(); ++j) out[j] = pre[j] > 0.0 ? pre[j] : 0.0;
            } else if constexpr (std::is_same_v<T, TopK>) {
                std::fill(out.begin(), out.end(), 0.0);
                std::size_t k = std::min<std::size_t>(act.k, pre.size());
                scratch.resize(pre.size());
                std::iota(scratch.begin(), scratch.end(), 0U);
                std::nth_element(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(k),
                                 scratch.end(), [&](std::uint32_t a, std::uint32_t b) {
                                     return pre[a] != pre[b] ? pre[a] > pre[b] : a < b;
                                 });
                for (std::size_t s = 0; s < k; ++s) {
                    auto j = scratch[s];
                    out[j] = pre[j] > 0.0 ? pre[j] : 0.0;
                }
            } else {
                for (std::size_t j = 0; j < pre.size(); ++j) {
                    out[j] = pre[j] > act.threshold(j) ? pre[j] : 0.0;
                }
            }
        },
        activation);
}

}  // namespace detail

/// Encodes one token: writes pre-activations and activated codes.
/// For every activation kind the code equals the pre-activation wherever it
/// is positive, so `code > 0` is also the pass-through mask for gradients.
inline void sae_encode_token(const SaeParams& params, std::span<const double> h,
                             std::span<double> pre, std::span<double> code,
                             std::vector<std::uint32_t>& scratch) {
    for (std::size_t j = 0; j < params.width; ++j) {
        auto w = params.w_enc.row(j);
        double acc = params.b_enc[j];
        for (std::size_t k = 0; k < params.d; ++k) acc += w[k] * h[k];
        pre[j] = acc;
    }
    detail::apply_activation(params.activation, pre, code, scratch);
}

/// Row i of the result is f(W_enc h_i + b_enc).
inline TokenLogitMatrix sae_encode(const SaeParams& params, const HiddenStateMatrix& h) {
    if (h.cols() != params.d) {
        throw std::domain_error("sae_encode: hidden dim " + std::to_string(h.cols()) +
                                " does not match SAE d " + std::to_string(params.d));
    }
    TokenLogitMatrix out(h.rows(), params.width);
    std::vector<double> pre(params.width);
    std::vector<std::uint32_t> scratch;
    for (std::size_t i = 0; i < h.rows(); ++i) {
        sae_encode_token(params, h.row(i), pre, out.row(i), scratch);
    }
    return out;
}

/// Row i of the result is W_dec z_i + b_dec.
inline HiddenStateMatrix sae_decode(const SaeParams& params, const TokenLogitMatrix& z) {
    if (z.cols() != params.width) {
        throw std::domain_error("sae_decode: code width " + std::to_string(z.cols()) +
                                " does not match SAE width " + std::to_string(params.width));
    }
    HiddenStateMatrix out(z.rows(), params.d);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto zi = z.row(i);
        for (std::size_t r = 0; r < params.d; ++r) {
            auto w = params.w_dec.row(r);
            double acc = params.b_dec[r];
            for (std::size_t j = 0; j < params.width; ++j) acc += w[j] * zi[j];
            out(i, r) = acc;
        }
    }
    return out;
}

/// Mean over tokens of ||decode(encode(h_i)) - h_i||^2.
inline double reconstruction_loss(const SaeParams& params, const HiddenStateMatrix& h) {
    if (h.rows() == 0) throw std::domain_error("reconstruction_loss: empty input");
    auto recon = sae_decode(params, sae_encode(params, h));
    double total = 0.0;
    for (std::size_t i = 0; i < h.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t k = 0; k < params.d; ++k) {
            double diff = recon(i, k) - h(i, k);
            sq += diff * diff;
        }
        total += sq;
    }
    return total / static_cast<double>(h.rows());
}

/// The SPLARE representation: SAE-encode every token, then saturate and max-pool.
inline SparseVector encode_sequence(const SaeParams& params, const HiddenStateMatrix& h) {
    return splade_pool(sae_encode(params, h));
}

}  // namespace splare
