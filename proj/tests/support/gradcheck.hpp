#pragma once

// Tie-free random fixtures for checking the analytic loss gradient against
// central finite differences.

#include <algorithm>
#include <cmath>
#include <vector>

#include "test_support.hpp"

namespace testing_support {

struct GradCase {
    splare::SaeParams params;
    std::vector<splare::TrainingBatch> batches;
    splare::LossConfig config;
};

inline constexpr double kFdEpsilon = 1e-5;
inline constexpr double kFdRelTol = 1e-4;
// Gradients smaller than this are compared on an absolute scale of
// kFdRelTol * kFdFloor; cancellation in the difference quotient dominates below it.
inline constexpr double kFdFloor = 1e-6;

/// True when no pre-activation sits within `delta` of a kink (ReLU zero,
/// JumpReLU threshold, Top-K boundary) and no max-pool has a near-tie.
inline bool tie_free(const splare::SaeParams& p, const splare::HiddenStateMatrix& h, double delta) {
    std::vector<std::vector<double>> codes(h.rows(), std::vector<double>(p.width, 0.0));
    for (std::size_t i = 0; i < h.rows(); ++i) {
        std::vector<double> pre(p.width);
        for (std::size_t j = 0; j < p.width; ++j) {
            double s = p.b_enc[j];
            for (std::size_t k = 0; k < p.d; ++k) s += p.w_enc(j, k) * h(i, k);
            pre[j] = s;
            if (std::abs(s) < delta) return false;
        }
        if (const auto* jr = std::get_if<splare::JumpRelu>(&p.activation)) {
            for (std::size_t j = 0; j < p.width; ++j) {
                if (std::abs(pre[j] - jr->threshold(j)) < delta) return false;
                codes[i][j] = pre[j] > jr->threshold(j) ? pre[j] : 0.0;
            }
        } else if (const auto* tk = std::get_if<splare::TopK>(&p.activation)) {
            auto sorted = pre;
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            if (tk->k < p.width && sorted[tk->k - 1] - sorted[tk->k] < delta) return false;
            for (std::size_t j = 0; j < p.width; ++j) {
                codes[i][j] = pre[j] >= sorted[tk->k - 1] ? std::max(0.0, pre[j]) : 0.0;
            }
        } else {
            for (std::size_t j = 0; j < p.width; ++j) codes[i][j] = std::max(0.0, pre[j]);
        }
    }
    for (std::size_t j = 0; j < p.width; ++j) {
        std::vector<double> col;
        for (const auto& c : codes) {
            if (c[j] > 0.0) col.push_back(c[j]);
        }
        std::sort(col.begin(), col.end(), std::greater<>());
        if (col.size() >= 2 && col[0] - col[1] < delta) return false;
    }
    return true;
}

inline GradCase random_grad_case(Rng& rng, int kind) {
    const double delta = 1e-3;
    while (true) {
        GradCase c;
        auto d = integer(rng, 1, 8);
        auto width = integer(rng, 2, 32);
        c.params = random_sae(rng, d, width, random_activation(rng, width, kind));
        c.config.tau = uniform(rng, 0.5, 4.0);
        c.config.lambda_q = uniform(rng, 0.0, 0.5);
        c.config.lambda_d = uniform(rng, 0.0, 0.5);
        auto n_batches = integer(rng, 1, 3);
        bool ok = true;
        for (std::size_t b = 0; b < n_batches && ok; ++b) {
            splare::TrainingBatch batch;
            batch.qid = "q" + std::to_string(b);
            batch.query_h = random_hidden(rng, integer(rng, 1, 4), d);
            ok = ok && tie_free(c.params, batch.query_h, delta);
            auto m = integer(rng, 2, 4);
            for (std::size_t i = 0; i < m && ok; ++i) {
                batch.docs_h.push_back(random_hidden(rng, integer(rng, 1, 4), d));
                batch.teacher_scores.push_back(3.0 * uniform(rng, -1.0, 1.0));
                ok = ok && tie_free(c.params, batch.docs_h.back(), delta);
            }
            c.batches.push_back(std::move(batch));
        }
        if (ok) return c;
    }
}

struct GradReport {
    double worst = 0.0;  // max over parameters of |analytic - numeric| / scale
    std::size_t checked = 0;
    std::size_t nonzero = 0;
};

/// Compares every W_enc and b_enc entry against a central difference.
inline GradReport check_gradient(const GradCase& c) {
    auto loss_at = [&](const splare::SaeParams& p) {
        return splare::total_loss(p, std::span<const splare::TrainingBatch>(c.batches), c.config)
            .loss;
    };
    auto analytic = splare::total_loss(c.params, std::span<const splare::TrainingBatch>(c.batches),
                                       c.config)
                        .grad;
    GradReport rep;
    auto compare = [&](double a, double numeric) {
        double scale = std::max({std::abs(a), std::abs(numeric), kFdFloor});
        rep.worst = std::max(rep.worst, std::abs(a - numeric) / scale);
        ++rep.checked;
        rep.nonzero += std::abs(a) > kFdFloor;
    };
    auto p = c.params;
    for (std::size_t idx = 0; idx < p.w_enc.values().size(); ++idx) {
        double orig = p.w_enc.values()[idx];
        p.w_enc.values()[idx] = orig + kFdEpsilon;
        double up = loss_at(p);
        p.w_enc.values()[idx] = orig - kFdEpsilon;
        double down = loss_at(p);
        p.w_enc.values()[idx] = orig;
        compare(analytic.w_enc.values()[idx], (up - down) / (2.0 * kFdEpsilon));
    }
    for (std::size_t j = 0; j < p.b_enc.size(); ++j) {
        double orig = p.b_enc[j];
        p.b_enc[j] = orig + kFdEpsilon;
        double up = loss_at(p);
        p.b_enc[j] = orig - kFdEpsilon;
        double down = loss_at(p);
        p.b_enc[j] = orig;
        compare(analytic.b_enc[j], (up - down) / (2.0 * kFdEpsilon));
    }
    return rep;
}

}  // namespace testing_support
