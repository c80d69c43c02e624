#pragma once

// Deterministic synthetic data. All randomness comes from std::mt19937_64
// with hand-rolled uniform/normal transforms, so a seed yields the same bytes
// on every platform.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "splare/eval.hpp"
#include "splare/jsonl.hpp"
#include "splare/sae.hpp"
#include "splare/training.hpp"

namespace splare::synth {

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi].
    std::uint64_t integer(std::uint64_t lo, std::uint64_t hi) {
        return lo + static_cast<std::uint64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    double normal() {
        if (spare_) {
            spare_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * M_PI * u2);
        spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    /// `count` distinct values from [0, n), in selection order.
    std::vector<std::uint32_t> sample(std::uint32_t n, std::size_t count) {
        std::vector<std::uint32_t> pool(n);
        std::iota(pool.begin(), pool.end(), 0U);
        count = std::min<std::size_t>(count, n);
        for (std::size_t i = 0; i < count; ++i) {
            auto j = static_cast<std::size_t>(integer(i, n - 1));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(count);
        return pool;
    }

  private:
    std::mt19937_64 engine_;
    bool spare_ = false;
    double cached_ = 0.0;
};

inline std::string pad_id(char prefix, std::size_t i) {
    std::string digits = std::to_string(i);
    return std::string(1, prefix) + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') +
           digits;
}

inline SparseVector from_map(std::uint32_t width, std::vector<std::pair<std::uint32_t, double>> e) {
    std::sort(e.begin(), e.end());
    std::vector<std::uint32_t> ids;
    std::vector<double> ws;
    for (const auto& [id, w] : e) {
        if (!ids.empty() && ids.back() == id) {
            ws.back() = std::max(ws.back(), w);
            continue;
        }
        ids.push_back(id);
        ws.push_back(w);
    }
    return quantize_f32(SparseVector(width, std::move(ids), std::move(ws)));
}

// ---------------------------------------------------------------------------
// Sparse-level corpus: documents and queries directly as latent vectors.

struct SparseCorpusConfig {
    std::uint64_t seed = 42;
    std::size_t docs = 10000;
    std::size_t queries = 200;
    std::uint32_t width = 4096;
    std::size_t clusters = 200;
    std::size_t topic_features = 60;
    std::size_t doc_l0_min = 120;
    std::size_t doc_l0_max = 600;
    std::size_t query_topic_min = 15;
    std::size_t query_topic_max = 40;
    std::size_t query_noise = 8;
};

struct SparseCorpus {
    std::vector<NamedSparse> docs;
    std::vector<NamedSparse> queries;
    Qrels qrels;
    std::vector<std::uint32_t> doc_cluster;
    std::vector<std::uint32_t> query_cluster;
};

/// Clustered corpus: each cluster owns a topic feature set. Documents carry
/// heavy topic features plus a long tail of light background features;
/// queries are short draws from their cluster's topic. A document is relevant
/// (grade 1) to every query of its cluster.
inline SparseCorpus make_sparse_corpus(const SparseCorpusConfig& cfg) {
    if (cfg.width == 0 || cfg.clusters == 0 || cfg.doc_l0_min > cfg.doc_l0_max ||
        cfg.query_topic_min > cfg.query_topic_max || cfg.doc_l0_max > cfg.width) {
        throw std::domain_error("invalid sparse corpus configuration");
    }
    Rng rng(cfg.seed);
    SparseCorpus out;
    std::vector<std::vector<std::uint32_t>> topics(cfg.clusters);
    for (auto& t : topics) t = rng.sample(cfg.width, cfg.topic_features);

    for (std::size_t i = 0; i < cfg.docs; ++i) {
        auto c = static_cast<std::uint32_t>(rng.integer(0, cfg.clusters - 1));
        auto target = rng.integer(cfg.doc_l0_min, cfg.doc_l0_max);
        std::vector<std::pair<std::uint32_t, double>> e;
        for (auto f : topics[c]) {
            if (rng.uniform() < 0.7) e.emplace_back(f, 1.0 + 2.0 * rng.uniform());
        }
        while (e.size() < target) {
            auto f = static_cast<std::uint32_t>(rng.integer(0, cfg.width - 1));
            double u = rng.uniform();
            e.emplace_back(f, 0.05 + 0.6 * u * u);
        }
        out.docs.push_back({pad_id('d', i), from_map(cfg.width, std::move(e))});
        out.doc_cluster.push_back(c);
    }
    for (std::size_t i = 0; i < cfg.queries; ++i) {
        auto c = static_cast<std::uint32_t>(rng.integer(0, cfg.clusters - 1));
        auto n_topic = rng.integer(cfg.query_topic_min, cfg.query_topic_max);
        std::vector<std::pair<std::uint32_t, double>> e;
        for (auto pick : rng.sample(static_cast<std::uint32_t>(topics[c].size()), n_topic)) {
            e.emplace_back(topics[c][pick], 0.5 + 2.0 * rng.uniform());
        }
        for (std::size_t n = 0; n < cfg.query_noise; ++n) {
            e.emplace_back(static_cast<std::uint32_t>(rng.integer(0, cfg.width - 1)),
                           0.05 + 0.45 * rng.uniform());
        }
        out.queries.push_back({pad_id('q', i), from_map(cfg.width, std::move(e))});
        out.query_cluster.push_back(c);
    }
    for (std::size_t q = 0; q < out.queries.size(); ++q) {
        for (std::size_t d = 0; d < out.docs.size(); ++d) {
            if (out.doc_cluster[d] == out.query_cluster[q]) {
                out.qrels.add(out.queries[q].id, out.docs[d].id, 1);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hidden-state pipeline fixture: an SAE plus token hidden states whose
// geometry is clustered, and distillation batches scored by a cluster teacher.

struct PipelineConfig {
    std::uint64_t seed = 7;
    std::size_t d = 16;
    std::size_t width = 256;
    std::size_t clusters = 8;
    std::size_t features_per_cluster = 24;
    std::size_t docs = 200;
    std::size_t queries = 24;
    std::size_t train_queries = 256;
    std::size_t negatives = 8;
    std::size_t query_tokens = 4;
    std::size_t doc_tokens = 8;
    /// Norm of every token hidden state.
    double hidden_scale = 1024.0;
    /// Spread of tokens around their cluster centroid (direction noise).
    double token_noise = 0.35;
    /// Spread of a cluster's feature directions around its centroid.
    double feature_noise = 0.4;
    double encoder_gain = 4.0;
    /// Cosine a token needs with a feature direction before it fires.
    double fire_cosine = 0.55;
    double teacher_margin = 10.0;
    double teacher_noise = 0.5;
};

struct Pipeline {
    SaeParams sae;
    std::vector<NamedHidden> docs;
    std::vector<NamedHidden> queries;
    Qrels qrels;
    std::vector<TrainingBatch> training;
    std::vector<std::uint32_t> doc_cluster;
    std::vector<std::uint32_t> query_cluster;
};

namespace detail {

inline std::vector<double> unit(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    double n = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

inline std::vector<double> perturb(Rng& rng, const std::vector<double>& base, double noise) {
    auto v = base;
    auto dir = unit(rng, base.size());
    double n = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] += noise * dir[k];
        n += v[k] * v[k];
    }
    n = std::sqrt(n);
    for (auto& x : v) x /= n;
    return v;
}

}  // namespace detail

inline Pipeline make_pipeline(const PipelineConfig& cfg) {
    if (cfg.clusters < 2) throw std::domain_error("pipeline needs at least 2 clusters");
    if (cfg.d == 0 || cfg.width == 0 || cfg.features_per_cluster == 0) {
        throw std::domain_error("pipeline dimensions must be positive");
    }
    Rng rng(cfg.seed);
    Pipeline out;
    const auto d = cfg.d;
    const auto width = cfg.width;

    std::vector<std::vector<double>> centroids;
    for (std::size_t c = 0; c < cfg.clusters; ++c) centroids.push_back(detail::unit(rng, d));

    // Cluster c owns features [c * fpc, (c + 1) * fpc); the rest point anywhere.
    out.sae = SaeParams::zeros(d, width, Relu{});
    for (std::size_t j = 0; j < width; ++j) {
        auto c = j / cfg.features_per_cluster;
        auto dir = c < cfg.clusters ? detail::perturb(rng, centroids[c], cfg.feature_noise)
                                    : detail::unit(rng, d);
        for (std::size_t k = 0; k < d; ++k) {
            out.sae.w_enc(j, k) = cfg.encoder_gain * dir[k] / cfg.hidden_scale;
            out.sae.w_dec(k, j) = dir[k] * cfg.hidden_scale / cfg.encoder_gain;
        }
        out.sae.b_enc[j] = -cfg.encoder_gain * cfg.fire_cosine;
    }

    auto sequence = [&](std::uint32_t cluster, std::size_t n) {
        HiddenStateMatrix h(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            auto dir = detail::perturb(rng, centroids[cluster], cfg.token_noise);
            for (std::size_t k = 0; k < d; ++k) h(i, k) = cfg.hidden_scale * dir[k];
        }
        return h;
    };
    auto pick_cluster = [&] { return static_cast<std::uint32_t>(rng.integer(0, cfg.clusters - 1)); };

    for (std::size_t i = 0; i < cfg.docs; ++i) {
        auto c = pick_cluster();
        out.docs.push_back({pad_id('d', i), sequence(c, cfg.doc_tokens)});
        out.doc_cluster.push_back(c);
    }
    for (std::size_t i = 0; i < cfg.queries; ++i) {
        auto c = pick_cluster();
        out.queries.push_back({pad_id('q', i), sequence(c, cfg.query_tokens)});
        out.query_cluster.push_back(c);
    }
    for (std::size_t q = 0; q < out.queries.size(); ++q) {
        for (std::size_t doc = 0; doc < out.docs.size(); ++doc) {
            if (out.doc_cluster[doc] == out.query_cluster[q]) {
                out.qrels.add(out.queries[q].id, out.docs[doc].id, 1);
            }
        }
    }

    for (std::size_t i = 0; i < cfg.train_queries; ++i) {
        TrainingBatch b;
        auto c = pick_cluster();
        b.qid = pad_id('t', i);
        b.query_h = sequence(c, cfg.query_tokens);
        for (std::size_t m = 0; m <= cfg.negatives; ++m) {
            auto dc = c;
            if (m > 0) {
                dc = static_cast<std::uint32_t>(rng.integer(0, cfg.clusters - 2));
                if (dc >= c) ++dc;
            }
            b.doc_ids.push_back(b.qid + "-" + std::to_string(m));
            b.docs_h.push_back(sequence(dc, cfg.doc_tokens));
            double overlap = dc == c ? 1.0 : 0.0;
            b.teacher_scores.push_back(cfg.teacher_margin * overlap +
                                       cfg.teacher_noise * rng.normal());
        }
        out.training.push_back(std::move(b));
    }
    return out;
}

}  // namespace splare::synth
