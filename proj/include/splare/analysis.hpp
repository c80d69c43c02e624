#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "splare/eval.hpp"
#include "splare/index.hpp"
#include "splare/jsonl.hpp"
#include "splare/sparse_vector.hpp"

namespace splare {

/// One (query cap, document cap) cell of a pruning sweep. An empty cap means uncapped.
struct SweepRow {
    std::optional<std::size_t> k_query;
    std::optional<std::size_t> k_doc;
    double ndcg_at_10 = 0.0;
    double mrr_at_10 = 0.0;
    double mean_query_l0 = 0.0;
    double mean_doc_l0 = 0.0;
    std::uint64_t total_postings = 0;
    std::size_t num_queries = 0;
};

/// Caps every query, exact-searches the index and scores the run.
inline SweepRow evaluate_capped(const InvertedIndex& index, std::span<const NamedSparse> queries,
                                const Qrels& qrels, std::optional<std::size_t> k_query,
                                std::size_t depth = 1000, const EvalOptions& opts = {}) {
    SweepRow row;
    row.k_query = k_query;
    Searcher searcher(index);
    EvalRun run;
    std::size_t q_l0 = 0;
    for (const auto& q : queries) {
        auto capped = k_query ? top_k_cap(q.vec, *k_query) : q.vec;
        q_l0 += capped.size();
        auto hits = searcher.exact(capped, depth);
        run.queries[q.id] = to_ranked(index, hits);
    }
    row.ndcg_at_10 = ndcg_at_k(run, qrels, 10, opts).mean;
    auto mrr = mrr_at_k(run, qrels, 10, opts);
    row.mrr_at_10 = mrr.mean;
    row.num_queries = mrr.num_queries;
    row.mean_query_l0 =
        queries.empty() ? 0.0 : static_cast<double>(q_l0) / static_cast<double>(queries.size());
    row.mean_doc_l0 = index.doc_count() == 0 ? 0.0
                                             : static_cast<double>(index.total_postings()) /
                                                   static_cast<double>(index.doc_count());
    row.total_postings = index.total_postings();
    return row;
}

/// Rebuilds a capped index for every document cap and evaluates every query
/// cap against it. Rows are ordered by document cap, then query cap, as given.
inline std::vector<SweepRow> pruning_sweep(std::span<const NamedSparse> docs,
                                           std::span<const NamedSparse> queries,
                                           const Qrels& qrels,
                                           std::span<const std::optional<std::size_t>> k_doc_grid,
                                           std::span<const std::optional<std::size_t>> k_query_grid,
                                           std::size_t depth = 1000,
                                           const EvalOptions& opts = {}) {
    if (k_doc_grid.empty() || k_query_grid.empty()) {
        throw std::domain_error("pruning_sweep: grids must be non-empty");
    }
    std::vector<SweepRow> rows;
    for (const auto& k_doc : k_doc_grid) {
        auto index = build_index(docs, k_doc);
        for (const auto& k_query : k_query_grid) {
            auto row = evaluate_capped(index, queries, qrels, k_query, depth, opts);
            row.k_doc = k_doc;
            rows.push_back(row);
        }
    }
    return rows;
}

struct LatencyReport {
    std::size_t queries = 0;
    std::size_t repeats = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double p99_ms = 0.0;
    std::uint64_t postings_scored = 0;  // one pass over all queries
    std::uint64_t docs_evaluated = 0;
    double mean_postings_per_query = 0.0;
    std::uint64_t hits_returned = 0;  // over all timed passes
};

/// Single-threaded wall-clock latency per query. One untimed warm-up pass
/// precedes `repeats` timed passes; work counters come from the warm-up pass.
inline LatencyReport latency_bench(const InvertedIndex& index, std::span<const SparseVector> queries,
                                   const SearchParams& params, bool exact, std::size_t repeats) {
    if (repeats == 0) throw std::domain_error("latency_bench: repeats must be >= 1");
    params.validate();
    Searcher searcher(index);
    LatencyReport rep;
    rep.queries = queries.size();
    rep.repeats = repeats;

    SearchStats stats;
    for (const auto& q : queries) {
        if (exact) {
            (void)searcher.exact(q, params.k, &stats);
        } else {
            (void)searcher.pruned(q, params, &stats);
        }
    }
    rep.postings_scored = stats.postings_scored;
    rep.docs_evaluated = stats.docs_evaluated;
    if (!queries.empty()) {
        rep.mean_postings_per_query =
            static_cast<double>(stats.postings_scored) / static_cast<double>(queries.size());
    }

    std::vector<double> samples;
    samples.reserve(queries.size() * repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        for (const auto& q : queries) {
            auto t0 = std::chrono::steady_clock::now();
            auto hits = exact ? searcher.exact(q, params.k) : searcher.pruned(q, params);
            auto t1 = std::chrono::steady_clock::now();
            samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            rep.hits_returned += hits.size();
        }
    }
    if (!samples.empty()) {
        double sum = 0.0;
        for (double s : samples) sum += s;
        rep.mean_ms = sum / static_cast<double>(samples.size());
        std::sort(samples.begin(), samples.end());
        auto pick = [&](double q) {
            auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(samples.size())));
            return samples[std::min(samples.size() - 1, idx == 0 ? 0 : idx - 1)];
        };
        rep.median_ms = pick(0.5);
        rep.p99_ms = pick(0.99);
    }
    return rep;
}

}  // namespace splare
