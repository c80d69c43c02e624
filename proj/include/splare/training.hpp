#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "splare/error.hpp"
#include "splare/matrix.hpp"
#include "splare/sae.hpp"
#include "splare/sparse_vector.hpp"

namespace splare {

/// One query with m scored documents (a positive plus hard negatives).
struct TrainingBatch {
    std::string qid;
    HiddenStateMatrix query_h;
    std::vector<std::string> doc_ids;
    std::vector<HiddenStateMatrix> docs_h;
    std::vector<double> teacher_scores;

    [[nodiscard]] std::size_t size() const noexcept { return docs_h.size(); }

    void validate(std::size_t d) const {
        if (docs_h.size() < 2) throw std::domain_error("training batch needs m >= 2 documents");
        if (teacher_scores.size() != docs_h.size()) {
            throw std::domain_error("teacher score count does not match document count");
        }
        if (!doc_ids.empty() && doc_ids.size() != docs_h.size()) {
            throw std::domain_error("document id count does not match document count");
        }
        auto check = [&](const HiddenStateMatrix& h) {
            if (h.rows() == 0) throw std::domain_error("empty hidden-state sequence");
            if (h.cols() != d) throw std::domain_error("hidden dim does not match model d");
        };
        check(query_h);
        for (const auto& h : docs_h) check(h);
        for (double s : teacher_scores) {
            if (!std::isfinite(s)) throw std::domain_error("teacher scores must be finite");
        }
    }
};

/// L = KL(teacher || student/tau) + lambda_q * FLOPS(queries) + lambda_d * FLOPS(docs).
struct LossConfig {
    double tau = 80.0;
    double lambda_q = 1e-4;
    double lambda_d = 1e-4;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw std::domain_error("tau must be > 0");
        if (!(lambda_q >= 0.0) || !(lambda_d >= 0.0) || !std::isfinite(lambda_q) ||
            !std::isfinite(lambda_d)) {
            throw std::domain_error("lambdas must be finite and >= 0");
        }
    }
};

struct OptimizerConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 128;
    std::size_t steps = 500;
    double warmup_ratio = 0.01;
    std::uint64_t seed = 0;

    /// Learning rate at 1-based step `t`: linear warmup, then constant.
    [[nodiscard]] double lr_at(std::size_t t) const {
        auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(steps)));
        if (warmup > 0 && t <= warmup) {
            return lr * static_cast<double>(t) / static_cast<double>(warmup);
        }
        return lr;
    }
};

/// Gradient (or optimiser moment) with the shape of the trainable encoder.
struct EncoderGrad {
    WeightMatrix w_enc;
    std::vector<double> b_enc;

    static EncoderGrad zeros_like(const SaeParams& p) {
        return {WeightMatrix(p.width, p.d), std::vector<double>(p.width, 0.0)};
    }

    friend bool operator==(const EncoderGrad&, const EncoderGrad&) = default;
};

struct TrainState {
    SaeParams params;
    EncoderGrad adam_m;
    EncoderGrad adam_v;
    std::uint64_t step = 0;
    std::uint64_t seed = 0;

    static TrainState init(SaeParams params, std::uint64_t seed = 0) {
        params.validate();
        auto m = EncoderGrad::zeros_like(params);
        auto v = m;
        return {std::move(params), std::move(m), std::move(v), 0, seed};
    }
};

struct LossResult {
    double loss = 0.0;
    double kl = 0.0;
    double flops_q = 0.0;
    double flops_d = 0.0;
    double mean_query_l0 = 0.0;
    double mean_doc_l0 = 0.0;
    EncoderGrad grad;
};

struct StepLog {
    std::uint64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double kl = 0.0;
    double flops_q = 0.0;
    double flops_d = 0.0;
    double mean_query_l0 = 0.0;
    double mean_doc_l0 = 0.0;
};

/// Thrown when the loss or parameters become non-finite. Carries the last
/// state whose parameters were still finite.
class TrainingDiverged : public numerical_error {
  public:
    TrainingDiverged(const std::string& what, TrainState last_good)
        : numerical_error(what), last_good_(std::move(last_good)) {}

    [[nodiscard]] const TrainState& last_good() const noexcept { return last_good_; }

  private:
    TrainState last_good_;
};

// ---------------------------------------------------------------------------
// Losses on plain score lists.

namespace detail {

inline std::vector<double> log_softmax(std::span<const double> x, double scale) {
    double mx = -INFINITY;
    for (double v : x) mx = std::max(mx, v * scale);
    double sum = 0.0;
    for (double v : x) sum += std::exp(v * scale - mx);
    double lse = mx + std::log(sum);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scale - lse;
    return out;
}

inline void require_finite(std::span<const double> xs, const char* what) {
    for (double v : xs) {
        if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite input");
    }
}

}  // namespace detail

/// sum_i p_i (log p_i - log p_hat_i), p = softmax(teacher), p_hat = softmax(student / tau).
inline double kl_loss(std::span<const double> student, std::span<const double> teacher,
                      double tau) {
    if (student.size() != teacher.size()) {
        throw std::domain_error("kl_loss: student and teacher lengths differ");
    }
    if (student.size() < 2) throw std::domain_error("kl_loss: need m >= 2");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::domain_error("kl_loss: tau must be > 0");
    detail::require_finite(student, "kl_loss");
    detail::require_finite(teacher, "kl_loss");
    auto log_p = detail::log_softmax(teacher, 1.0);
    auto log_q = detail::log_softmax(student, 1.0 / tau);
    double kl = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) {
        kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
    }
    return std::max(kl, 0.0);
}

/// d kl_loss / d student_i = (p_hat_i - p_i) / tau.
inline std::vector<double> kl_grad(std::span<const double> student,
                                   std::span<const double> teacher, double tau) {
    auto log_p = detail::log_softmax(teacher, 1.0);
    auto log_q = detail::log_softmax(student, 1.0 / tau);
    std::vector<double> g(student.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (std::exp(log_q[i]) - std::exp(log_p[i])) / tau;
    return g;
}

/// sum_j (mean over the batch of weight j)^2.
inline double flops_loss(std::span<const SparseVector> reps) {
    if (reps.empty()) throw std::domain_error("flops_loss: empty batch");
    auto width = reps.front().width();
    std::vector<double> sums(width, 0.0);
    for (const auto& r : reps) {
        if (r.width() != width) throw std::domain_error("flops_loss: width mismatch");
        for (std::size_t i = 0; i < r.size(); ++i) sums[r.indices()[i]] += r.weights()[i];
    }
    auto n = static_cast<double>(reps.size());
    double total = 0.0;
    for (double s : sums) {
        double mean = s / n;
        total += mean * mean;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Forward/backward through encode -> saturate -> max-pool.

namespace detail {

/// Dense pooled representation with the routing needed for backprop.
struct PooledForward {
    std::vector<double> pooled;        // u_j
    std::vector<std::uint32_t> argmax;  // token that produced u_j
    std::vector<double> code_at_max;   // activation at that token
    std::size_t active = 0;

    void run(const SaeParams& params, const HiddenStateMatrix& h, std::vector<double>& pre,
             std::vector<double>& code, std::vector<std::uint32_t>& scratch) {
        pooled.assign(params.width, 0.0);
        argmax.assign(params.width, 0);
        code_at_max.assign(params.width, 0.0);
        pre.resize(params.width);
        code.resize(params.width);
        for (std::size_t i = 0; i < h.rows(); ++i) {
            sae_encode_token(params, h.row(i), pre, code, scratch);
            for (std::size_t j = 0; j < params.width; ++j) {
                if (!std::isfinite(pre[j])) {
                    throw numerical_error("non-finite pre-activation for feature " +
                                          std::to_string(j));
                }
                if (code[j] <= 0.0) continue;
                double s = std::log1p(code[j]);
                // Strict comparison routes ties to the earliest token.
                if (s > pooled[j]) {
                    pooled[j] = s;
                    argmax[j] = static_cast<std::uint32_t>(i);
                    code_at_max[j] = code[j];
                }
            }
        }
        active = static_cast<std::size_t>(
            std::count_if(pooled.begin(), pooled.end(), [](double u) { return u > 0.0; }));
    }

    /// Accumulates dL/dW_enc and dL/db_enc given dL/du.
    void backward(const HiddenStateMatrix& h, std::span<const double> grad_pooled,
                  EncoderGrad& grad) const {
        for (std::size_t j = 0; j < pooled.size(); ++j) {
            if (pooled[j] <= 0.0 || grad_pooled[j] == 0.0) continue;
            double g = grad_pooled[j] / (1.0 + code_at_max[j]);
            auto hrow = h.row(argmax[j]);
            auto wrow = grad.w_enc.row(j);
            for (std::size_t k = 0; k < hrow.size(); ++k) wrow[k] += g * hrow[k];
            grad.b_enc[j] += g;
        }
    }
};

inline double dense_dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

}  // namespace detail

/// Student relevance scores <u_q, u_d_i> for every document in the batch.
/// Caps, when given, are applied after pooling (evaluation passes only).
inline std::vector<double> student_scores(
    const SaeParams& params, const TrainingBatch& batch,
    std::optional<std::pair<std::size_t, std::size_t>> caps = std::nullopt) {
    batch.validate(params.d);
    auto encode = [&](const HiddenStateMatrix& h, std::size_t cap) {
        auto v = encode_sequence(params, h);
        return caps ? top_k_cap(v, cap) : v;
    };
    auto q = encode(batch.query_h, caps ? caps->first : 0);
    std::vector<double> scores;
    scores.reserve(batch.size());
    for (const auto& dh : batch.docs_h) scores.push_back(dot(q, encode(dh, caps ? caps->second : 0)));
    return scores;
}

inline std::vector<double> student_scores(
    const TrainState& state, const TrainingBatch& batch,
    std::optional<std::pair<std::size_t, std::size_t>> caps = std::nullopt) {
    return student_scores(state.params, batch, caps);
}

/// Minibatch loss and its gradient with respect to W_enc and b_enc.
///
/// KL is averaged over queries; each FLOPS term is taken over all query
/// (resp. document) representations of the minibatch. Gradients follow the
/// max-pool arg-max token, pass through log1p saturation and through the
/// activation wherever the code is positive (Top-K masks are fixed for the step).
inline LossResult total_loss(const SaeParams& params,
                             std::span<const TrainingBatch* const> minibatch,
                             const LossConfig& config) {
    config.validate();
    if (minibatch.empty()) throw std::domain_error("total_loss: empty minibatch");
    for (const auto* b : minibatch) b->validate(params.d);

    const std::size_t width = params.width;
    const auto n_queries = minibatch.size();
    std::size_t n_docs = 0;
    for (const auto* b : minibatch) n_docs += b->size();

    std::vector<double> pre;
    std::vector<double> code;
    std::vector<std::uint32_t> scratch;
    std::vector<detail::PooledForward> qf(n_queries);
    std::vector<std::vector<detail::PooledForward>> df(n_queries);
    for (std::size_t b = 0; b < n_queries; ++b) {
        qf[b].run(params, minibatch[b]->query_h, pre, code, scratch);
        df[b].resize(minibatch[b]->size());
        for (std::size_t i = 0; i < minibatch[b]->size(); ++i) {
            df[b][i].run(params, minibatch[b]->docs_h[i], pre, code, scratch);
        }
    }

    LossResult res;
    res.grad = EncoderGrad::zeros_like(params);

    std::vector<double> mean_q(width, 0.0);
    std::vector<double> mean_d(width, 0.0);
    std::size_t q_active = 0;
    std::size_t d_active = 0;
    for (std::size_t b = 0; b < n_queries; ++b) {
        q_active += qf[b].active;
        for (std::size_t j = 0; j < width; ++j) mean_q[j] += qf[b].pooled[j];
        for (const auto& f : df[b]) {
            d_active += f.active;
            for (std::size_t j = 0; j < width; ++j) mean_d[j] += f.pooled[j];
        }
    }
    for (auto& v : mean_q) v /= static_cast<double>(n_queries);
    for (auto& v : mean_d) v /= static_cast<double>(n_docs);
    for (std::size_t j = 0; j < width; ++j) {
        res.flops_q += mean_q[j] * mean_q[j];
        res.flops_d += mean_d[j] * mean_d[j];
    }
    res.mean_query_l0 = static_cast<double>(q_active) / static_cast<double>(n_queries);
    res.mean_doc_l0 = static_cast<double>(d_active) / static_cast<double>(n_docs);

    const double inv_b = 1.0 / static_cast<double>(n_queries);
    const double flops_q_coef = config.lambda_q * 2.0 / static_cast<double>(n_queries);
    const double flops_d_coef = config.lambda_d * 2.0 / static_cast<double>(n_docs);

    std::vector<double> gq(width);
    std::vector<double> gd(width);
    for (std::size_t b = 0; b < n_queries; ++b) {
        const auto& batch = *minibatch[b];
        const auto m = batch.size();
        std::vector<double> scores(m);
        for (std::size_t i = 0; i < m; ++i) {
            scores[i] = detail::dense_dot(qf[b].pooled, df[b][i].pooled);
        }
        for (double v : scores) {
            if (!std::isfinite(v)) throw numerical_error("non-finite student score");
        }
        res.kl += kl_loss(scores, batch.teacher_scores, config.tau) * inv_b;
        auto ds = kl_grad(scores, batch.teacher_scores, config.tau);

        for (std::size_t j = 0; j < width; ++j) gq[j] = flops_q_coef * mean_q[j];
        for (std::size_t i = 0; i < m; ++i) {
            double coef = ds[i] * inv_b;
            const auto& ud = df[b][i].pooled;
            for (std::size_t j = 0; j < width; ++j) {
                gq[j] += coef * ud[j];
                gd[j] = coef * qf[b].pooled[j] + flops_d_coef * mean_d[j];
            }
            df[b][i].backward(batch.docs_h[i], gd, res.grad);
        }
        qf[b].backward(batch.query_h, gq, res.grad);
    }

    res.loss = res.kl + config.lambda_q * res.flops_q + config.lambda_d * res.flops_d;
    if (!std::isfinite(res.loss)) {
        throw numerical_error("non-finite loss (feature blow-up): kl=" + std::to_string(res.kl) +
                              " flops_q=" + std::to_string(res.flops_q) +
                              " flops_d=" + std::to_string(res.flops_d));
    }
    return res;
}

inline LossResult total_loss(const SaeParams& params, std::span<const TrainingBatch> minibatch,
                             const LossConfig& config) {
    std::vector<const TrainingBatch*> ptrs;
    ptrs.reserve(minibatch.size());
    for (const auto& b : minibatch) ptrs.push_back(&b);
    return total_loss(params, std::span<const TrainingBatch* const>(ptrs), config);
}

inline LossResult total_loss(const TrainState& state, const TrainingBatch& batch,
                             const LossConfig& config) {
    return total_loss(state.params, std::span<const TrainingBatch>(&batch, 1), config);
}

/// One Adam update of the encoder parameters using gradient `g`.
inline void adam_step(TrainState& state, const EncoderGrad& g, const OptimizerConfig& opt) {
    ++state.step;
    const double lr = opt.lr_at(state.step);
    const auto t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    auto update = [&](std::span<double> theta, std::span<const double> grad, std::span<double> m,
                      std::span<double> v) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
            theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
        }
    };
    update(state.params.w_enc.values(), g.w_enc.values(), state.adam_m.w_enc.values(),
           state.adam_v.w_enc.values());
    update(state.params.b_enc, g.b_enc, state.adam_m.b_enc, state.adam_v.b_enc);
}

/// Minibatch Adam over `corpus`, reshuffled every epoch with the configured seed.
/// `on_step` receives the loss measured before each update.
inline TrainState train(TrainState state, std::span<const TrainingBatch> corpus,
                        const LossConfig& loss_config, const OptimizerConfig& opt,
                        const std::function<void(const StepLog&)>& on_step = {}) {
    loss_config.validate();
    if (corpus.empty()) throw std::domain_error("train: empty corpus");
    if (opt.batch_size == 0) throw std::domain_error("train: batch size must be >= 1");
    if (!(opt.lr >= 0.0)) throw std::domain_error("train: learning rate must be >= 0");
    for (const auto& b : corpus) b.validate(state.params.d);

    std::mt19937_64 rng(opt.seed);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size();
    const std::size_t per_step = std::min(opt.batch_size, corpus.size());
    std::vector<const TrainingBatch*> minibatch;
    minibatch.reserve(per_step);

    for (std::size_t s = 0; s < opt.steps; ++s) {
        minibatch.clear();
        while (minibatch.size() < per_step) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            minibatch.push_back(&corpus[order[cursor++]]);
        }
        LossResult res;
        try {
            res = total_loss(state.params, std::span<const TrainingBatch* const>(minibatch),
                             loss_config);
        } catch (const numerical_error& e) {
            throw TrainingDiverged(e.what(), state);
        }
        TrainState before = state;
        adam_step(state, res.grad, opt);
        if (!state.params.w_enc.all_finite() ||
            !std::all_of(state.params.b_enc.begin(), state.params.b_enc.end(),
                         [](double v) { return std::isfinite(v); })) {
            throw TrainingDiverged("non-finite parameters after step " + std::to_string(state.step),
                                   std::move(before));
        }
        if (on_step) {
            on_step({state.step, opt.lr_at(state.step), res.loss, res.kl, res.flops_q, res.flops_d,
                     res.mean_query_l0, res.mean_doc_l0});
        }
    }
    return state;
}

}  // namespace splare
