#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splare/matrix.hpp"

namespace splare {

/// Default inference-time caps: queries keep 40 features, documents 400.
inline constexpr std::size_t kDefaultQueryCap = 40;
inline constexpr std::size_t kDefaultDocCap = 400;

/// Sparse vector over a feature space of size `width`.
///
/// Entries are stored as two parallel arrays with strictly increasing
/// feature ids and strictly positive finite weights. A value never changes
/// after construction.
class SparseVector {
  public:
    SparseVector() = default;

    explicit SparseVector(std::uint32_t width) : width_(width) {
        if (width == 0) throw std::domain_error("sparse vector width must be positive");
    }

    /// Validating constructor. Throws std::domain_error if any invariant fails.
    SparseVector(std::uint32_t width, std::vector<std::uint32_t> indices,
                 std::vector<double> weights)
        : width_(width), indices_(std::move(indices)), weights_(std::move(weights)) {
        if (width_ == 0) throw std::domain_error("sparse vector width must be positive");
        if (indices_.size() != weights_.size()) {
            throw std::domain_error("indices and weights differ in length");
        }
        for (std::size_t i = 0; i < indices_.size(); ++i) {
            if (indices_[i] >= width_) {
                throw std::domain_error("feature id " + std::to_string(indices_[i]) +
                                        " out of range for width " + std::to_string(width_));
            }
            if (i > 0 && indices_[i] <= indices_[i - 1]) {
                throw std::domain_error("feature ids must be strictly increasing");
            }
            if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
                throw std::domain_error("weights must be finite and strictly positive");
            }
        }
    }

    /// Builds from a dense row, dropping non-positive entries.
    static SparseVector from_dense(std::span<const double> dense) {
        std::vector<std::uint32_t> ids;
        std::vector<double> ws;
        for (std::size_t j = 0; j < dense.size(); ++j) {
            if (dense[j] > 0.0) {
                ids.push_back(static_cast<std::uint32_t>(j));
                ws.push_back(dense[j]);
            }
        }
        return {static_cast<std::uint32_t>(dense.size()), std::move(ids), std::move(ws)};
    }

    [[nodiscard]] std::uint32_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t size() const noexcept { return indices_.size(); }
    [[nodiscard]] bool empty() const noexcept { return indices_.empty(); }
    [[nodiscard]] std::span<const std::uint32_t> indices() const noexcept { return indices_; }
    [[nodiscard]] std::span<const double> weights() const noexcept { return weights_; }

    [[nodiscard]] std::vector<double> to_dense() const {
        std::vector<double> dense(width_, 0.0);
        for (std::size_t i = 0; i < indices_.size(); ++i) dense[indices_[i]] = weights_[i];
        return dense;
    }

    /// Weight of feature `id`, or 0 if absent.
    [[nodiscard]] double at(std::uint32_t id) const noexcept {
        auto it = std::lower_bound(indices_.begin(), indices_.end(), id);
        if (it == indices_.end() || *it != id) return 0.0;
        return weights_[static_cast<std::size_t>(it - indices_.begin())];
    }

    friend bool operator==(const SparseVector&, const SparseVector&) = default;

  private:
    std::uint32_t width_ = 0;
    std::vector<std::uint32_t> indices_;
    std::vector<double> weights_;
};

/// log(1 + max(0, logit)).
inline double saturate(double logit) {
    if (!std::isfinite(logit)) throw std::domain_error("saturate: non-finite logit");
    return logit > 0.0 ? std::log1p(logit) : 0.0;
}

/// Saturates every token's logits and max-pools over the sequence.
inline SparseVector splade_pool(const TokenLogitMatrix& logits) {
    if (logits.rows() == 0) throw std::domain_error("splade_pool: empty sequence");
    if (logits.cols() == 0) throw std::domain_error("splade_pool: zero width");
    std::vector<double> pooled(logits.cols(), 0.0);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) {
            pooled[j] = std::max(pooled[j], saturate(row[j]));
        }
    }
    return SparseVector::from_dense(pooled);
}

/// Keeps the k heaviest entries; equal weights prefer the smaller feature id.
inline SparseVector top_k_cap(const SparseVector& v, std::size_t k) {
    if (k == 0) throw std::domain_error("top_k_cap: k must be >= 1");
    if (v.size() <= k) return v;

    auto ids = v.indices();
    auto ws = v.weights();
    std::vector<std::uint32_t> order(v.size());
    std::iota(order.begin(), order.end(), 0U);
    // Positions are already in id order, so comparing positions breaks ties by id.
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) {
                         return ws[a] != ws[b] ? ws[a] > ws[b] : a < b;
                     });
    order.resize(k);
    std::sort(order.begin(), order.end());

    std::vector<std::uint32_t> out_ids;
    std::vector<double> out_ws;
    out_ids.reserve(k);
    out_ws.reserve(k);
    for (auto pos : order) {
        out_ids.push_back(ids[pos]);
        out_ws.push_back(ws[pos]);
    }
    return {v.width(), std::move(out_ids), std::move(out_ws)};
}

/// Sparse dot product; sums shared features in ascending id order.
inline double dot(const SparseVector& q, const SparseVector& d) {
    if (q.width() != d.width()) {
        throw std::domain_error("dot: width mismatch (" + std::to_string(q.width()) + " vs " +
                                std::to_string(d.width()) + ")");
    }
    auto qi = q.indices();
    auto di = d.indices();
    auto qw = q.weights();
    auto dw = d.weights();
    double sum = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    while (a < qi.size() && b < di.size()) {
        if (qi[a] < di[b]) {
            ++a;
        } else if (di[b] < qi[a]) {
            ++b;
        } else {
            sum += qw[a] * dw[b];
            ++a;
            ++b;
        }
    }
    return sum;
}

inline std::size_t l0(const SparseVector& v) noexcept { return v.size(); }

/// Rounds weights to 32-bit precision, dropping any that underflow to zero.
/// Used wherever vectors are persisted or indexed. Weights beyond float range
/// are a domain error.
inline SparseVector quantize_f32(const SparseVector& v) {
    std::vector<std::uint32_t> ids;
    std::vector<double> ws;
    ids.reserve(v.size());
    ws.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        auto w = static_cast<double>(static_cast<float>(v.weights()[i]));
        if (!std::isfinite(w)) throw std::domain_error("weight overflows 32-bit float");
        if (w > 0.0) {
            ids.push_back(v.indices()[i]);
            ws.push_back(w);
        }
    }
    return {v.width(), std::move(ids), std::move(ws)};
}

}  // namespace splare
