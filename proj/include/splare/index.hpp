#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_set>
#include <utility>
#include <vector>

#include "splare/error.hpp"
#include "splare/jsonl.hpp"
#include "splare/sparse_vector.hpp"

namespace splare {

struct Posting {
    std::uint32_t doc = 0;
    float weight = 0.0F;
    friend bool operator==(const Posting&, const Posting&) = default;
};

/// Impact-ordered inverted index with a forward copy of every document.
///
/// Posting lists are sorted by weight, heaviest first (ties by doc id on
/// build). Weights are held at 32-bit precision; scores accumulate in double.
class InvertedIndex {
  public:
    InvertedIndex() = default;

    /// Assembles an index from posting lists, validating every invariant.
    /// Throws format_error on violations.
    InvertedIndex(std::uint32_t width, std::vector<std::string> doc_ids,
                  std::vector<std::vector<Posting>> postings)
        : width_(width), doc_ids_(std::move(doc_ids)), postings_(std::move(postings)) {
        if (postings_.size() != width_) throw format_error("posting list count != width");
        const auto n_docs = doc_ids_.size();
        std::vector<std::vector<std::uint32_t>> fwd_ids(n_docs);
        std::vector<std::vector<double>> fwd_ws(n_docs);
        max_weight_.assign(width_, 0.0F);
        for (std::uint32_t j = 0; j < width_; ++j) {
            const auto& list = postings_[j];
            for (std::size_t p = 0; p < list.size(); ++p) {
                const auto& e = list[p];
                if (e.doc >= n_docs) throw format_error("posting refers to unknown doc");
                if (!(e.weight > 0.0F) || !std::isfinite(e.weight)) {
                    throw format_error("posting weight must be finite and positive");
                }
                if (p > 0 && e.weight > list[p - 1].weight) {
                    throw format_error("posting list not sorted by weight");
                }
                auto& ids = fwd_ids[e.doc];
                if (!ids.empty() && ids.back() == j) throw format_error("duplicate posting");
                ids.push_back(j);
                fwd_ws[e.doc].push_back(static_cast<double>(e.weight));
            }
            if (!list.empty()) max_weight_[j] = list.front().weight;
            total_postings_ += list.size();
        }
        forward_.reserve(n_docs);
        for (std::size_t d = 0; d < n_docs; ++d) {
            forward_.emplace_back(width_, std::move(fwd_ids[d]), std::move(fwd_ws[d]));
        }
    }

    [[nodiscard]] std::uint32_t width() const noexcept { return width_; }
    [[nodiscard]] std::size_t doc_count() const noexcept { return doc_ids_.size(); }
    [[nodiscard]] std::uint64_t total_postings() const noexcept { return total_postings_; }
    [[nodiscard]] std::span<const Posting> postings(std::uint32_t feature) const {
        return postings_[feature];
    }
    [[nodiscard]] float max_weight(std::uint32_t feature) const { return max_weight_[feature]; }
    [[nodiscard]] const std::string& doc_id(std::uint32_t doc) const { return doc_ids_[doc]; }
    [[nodiscard]] const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
    /// The stored (32-bit rounded, capped) document vector.
    [[nodiscard]] const SparseVector& document(std::uint32_t doc) const { return forward_[doc]; }
    [[nodiscard]] std::size_t doc_length(std::uint32_t doc) const { return forward_[doc].size(); }

  private:
    std::uint32_t width_ = 0;
    std::vector<std::string> doc_ids_;
    std::vector<std::vector<Posting>> postings_;
    std::vector<float> max_weight_;
    std::vector<SparseVector> forward_;
    std::uint64_t total_postings_ = 0;
};

/// Streams documents into an index. Documents may be capped to their `cap`
/// heaviest features before insertion.
class IndexBuilder {
  public:
    explicit IndexBuilder(std::optional<std::size_t> cap = std::nullopt,
                          std::optional<std::uint32_t> width = std::nullopt)
        : cap_(cap), width_(width) {
        if (cap_ && *cap_ == 0) throw build_error("document cap must be >= 1");
    }

    void add(std::string id, const SparseVector& vec) {
        if (!width_) width_ = vec.width();
        if (vec.width() != *width_) {
            throw build_error("document \"" + id + "\" has width " + std::to_string(vec.width()) +
                              ", index width is " + std::to_string(*width_));
        }
        if (!seen_.insert(id).second) throw build_error("duplicate document id \"" + id + "\"");
        if (doc_ids_.size() >= UINT32_MAX) throw build_error("too many documents");
        if (postings_.size() != *width_) postings_.resize(*width_);
        auto stored = quantize_f32(cap_ ? top_k_cap(vec, *cap_) : vec);
        auto doc = static_cast<std::uint32_t>(doc_ids_.size());
        for (std::size_t i = 0; i < stored.size(); ++i) {
            postings_[stored.indices()[i]].push_back(
                {doc, static_cast<float>(stored.weights()[i])});
        }
        doc_ids_.push_back(std::move(id));
    }

    InvertedIndex finish() && {
        std::uint32_t width = width_.value_or(0);
        postings_.resize(width);
        for (auto& list : postings_) {
            std::stable_sort(list.begin(), list.end(), [](const Posting& a, const Posting& b) {
                return a.weight > b.weight;
            });
        }
        return {width, std::move(doc_ids_), std::move(postings_)};
    }

  private:
    std::optional<std::size_t> cap_;
    std::optional<std::uint32_t> width_;
    std::vector<std::string> doc_ids_;
    std::vector<std::vector<Posting>> postings_;
    std::unordered_set<std::string> seen_;
};

inline InvertedIndex build_index(std::span<const NamedSparse> docs,
                                 std::optional<std::size_t> cap = std::nullopt,
                                 std::optional<std::uint32_t> width = std::nullopt) {
    IndexBuilder builder(cap, width);
    for (const auto& d : docs) builder.add(d.id, d.vec);
    return std::move(builder).finish();
}

// ---------------------------------------------------------------------------
// Query processing.

struct SearchHit {
    std::uint32_t doc = 0;
    double score = 0.0;
    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

/// Rank order: higher score first, then smaller doc id.
inline bool ranks_before(const SearchHit& a, const SearchHit& b) noexcept {
    return a.score != b.score ? a.score > b.score : a.doc < b.doc;
}

/// Pruned-search knobs. The defaults are the single-threaded latency setup:
/// k = 1000, query_cut = 30, heap_factor = 0.5.
struct SearchParams {
    std::size_t k = 1000;
    std::size_t query_cut = 30;
    double heap_factor = 0.5;
    std::size_t num_threads = 1;

    void validate() const {
        if (k == 0) throw std::domain_error("k must be >= 1");
        if (query_cut == 0) throw std::domain_error("query_cut must be >= 1");
        if (!(heap_factor > 0.0 && heap_factor <= 1.0)) {
            throw std::domain_error("heap_factor must be in (0, 1]");
        }
        if (num_threads == 0) throw std::domain_error("num_threads must be >= 1");
    }
};

/// Work counters for one or more queries.
struct SearchStats {
    std::uint64_t postings_scored = 0;
    std::uint64_t docs_evaluated = 0;

    SearchStats& operator+=(const SearchStats& o) noexcept {
        postings_scored += o.postings_scored;
        docs_evaluated += o.docs_evaluated;
        return *this;
    }
};

/// Per-thread query processor holding reusable scratch buffers.
class Searcher {
  public:
    explicit Searcher(const InvertedIndex& index)
        : index_(&index), accum_(index.doc_count(), 0.0), stamp_(index.doc_count(), 0) {}

    /// Term-at-a-time exhaustive scoring over every query feature.
    std::vector<SearchHit> exact(const SparseVector& q, std::size_t k,
                                 SearchStats* stats = nullptr) {
        if (k == 0) throw std::domain_error("k must be >= 1");
        if (index_->doc_count() == 0) return {};
        check_width(q);
        touched_.clear();
        SearchStats local;
        for (std::size_t t = 0; t < q.size(); ++t) {
            const double qw = q.weights()[t];
            auto list = index_->postings(q.indices()[t]);
            local.postings_scored += list.size();
            for (const auto& p : list) {
                if (accum_[p.doc] == 0.0) touched_.push_back(p.doc);
                accum_[p.doc] += qw * static_cast<double>(p.weight);
            }
        }
        local.docs_evaluated = touched_.size();
        std::vector<SearchHit> hits;
        hits.reserve(touched_.size());
        for (auto doc : touched_) {
            if (accum_[doc] > 0.0) hits.push_back({doc, accum_[doc]});
            accum_[doc] = 0.0;
        }
        if (stats) *stats += local;
        return take_top(std::move(hits), k);
    }

    /// Impact-ordered approximate search.
    ///
    /// Only the `query_cut` heaviest query features are traversed. Postings
    /// are consumed globally in decreasing order of q_j * w, and each newly
    /// seen document is scored exactly against the full query. Traversal stops
    /// once heap_factor * sum_j q_j * frontier_j falls below the current k-th
    /// best score, where frontier_j is the next unread weight of list j. At
    /// heap_factor = 1 that sum bounds every unseen document, so results with a
    /// full query_cut equal exact search.
    std::vector<SearchHit> pruned(const SparseVector& q, const SearchParams& params,
                                  SearchStats* stats = nullptr) {
        params.validate();
        if (index_->doc_count() == 0) return {};
        check_width(q);
        if (q.empty()) return {};
        if (++epoch_ == 0) {
            std::fill(stamp_.begin(), stamp_.end(), 0);
            epoch_ = 1;
        }

        // Heaviest query features first, ties to the smaller feature id.
        std::vector<std::uint32_t> pos(q.size());
        for (std::uint32_t i = 0; i < pos.size(); ++i) pos[i] = i;
        auto qw = q.weights();
        std::stable_sort(pos.begin(), pos.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return qw[a] > qw[b]; });
        pos.resize(std::min(pos.size(), params.query_cut));

        struct Cursor {
            std::span<const Posting> list;
            std::size_t next = 0;
            double qw = 0.0;
            [[nodiscard]] double frontier() const {
                return next < list.size() ? static_cast<double>(list[next].weight) : 0.0;
            }
        };
        std::vector<Cursor> cursors;
        cursors.reserve(pos.size());
        for (auto p : pos) {
            auto list = index_->postings(q.indices()[p]);
            if (!list.empty()) cursors.push_back({list, 0, qw[p]});
        }

        auto exact_bound = [&] {
            double b = 0.0;
            for (const auto& c : cursors) b += c.qw * c.frontier();
            return b;
        };
        double bound = exact_bound();

        // Max-heap on next contribution; ties go to the earlier cursor.
        using Entry = std::pair<double, std::size_t>;
        auto later = [](const Entry& a, const Entry& b) {
            return a.first != b.first ? a.first < b.first : a.second > b.second;
        };
        std::priority_queue<Entry, std::vector<Entry>, decltype(later)> frontier(later);
        for (std::size_t c = 0; c < cursors.size(); ++c) {
            frontier.push({cursors[c].qw * cursors[c].frontier(), c});
        }

        // Top-k kept as a heap whose front is the current k-th best.
        std::vector<SearchHit> top;
        top.reserve(params.k + 1);
        SearchStats local;
        constexpr double kBoundSlack = 1.0 + 1e-9;

        while (!frontier.empty()) {
            auto [contrib, c] = frontier.top();
            frontier.pop();
            auto& cur = cursors[c];
            const auto& posting = cur.list[cur.next];
            ++local.postings_scored;
            if (stamp_[posting.doc] != epoch_) {
                stamp_[posting.doc] = epoch_;
                ++local.docs_evaluated;
                SearchHit hit{posting.doc, dot(q, index_->document(posting.doc))};
                if (hit.score > 0.0) {
                    if (top.size() < params.k) {
                        top.push_back(hit);
                        std::push_heap(top.begin(), top.end(), ranks_before);
                    } else if (ranks_before(hit, top.front())) {
                        std::pop_heap(top.begin(), top.end(), ranks_before);
                        top.back() = hit;
                        std::push_heap(top.begin(), top.end(), ranks_before);
                    }
                }
            }
            double old_frontier = cur.frontier();
            ++cur.next;
            bound += cur.qw * (cur.frontier() - old_frontier);
            if (cur.next < cur.list.size()) frontier.push({cur.qw * cur.frontier(), c});

            if (top.size() == params.k) {
                const double threshold = top.front().score;
                if (params.heap_factor * bound * kBoundSlack < threshold) {
                    // Confirm with a drift-free recomputation before stopping.
                    bound = exact_bound();
                    if (params.heap_factor * bound * kBoundSlack < threshold) break;
                }
            }
        }
        if (stats) *stats += local;
        std::sort(top.begin(), top.end(), ranks_before);
        return top;
    }

  private:
    void check_width(const SparseVector& q) const {
        if (q.width() != index_->width()) {
            throw std::domain_error("query width " + std::to_string(q.width()) +
                                    " does not match index width " +
                                    std::to_string(index_->width()));
        }
    }

    static std::vector<SearchHit> take_top(std::vector<SearchHit> hits, std::size_t k) {
        if (hits.size() > k) {
            std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k),
                              hits.end(), ranks_before);
            hits.resize(k);
        } else {
            std::sort(hits.begin(), hits.end(), ranks_before);
        }
        return hits;
    }

    const InvertedIndex* index_;
    std::vector<double> accum_;
    std::vector<std::uint32_t> touched_;
    std::vector<std::uint32_t> stamp_;
    std::uint32_t epoch_ = 0;
};

inline std::vector<SearchHit> search_exact(const InvertedIndex& index, const SparseVector& q,
                                           std::size_t k, SearchStats* stats = nullptr) {
    return Searcher(index).exact(q, k, stats);
}

inline std::vector<SearchHit> search_pruned(const InvertedIndex& index, const SparseVector& q,
                                            const SearchParams& params,
                                            SearchStats* stats = nullptr) {
    return Searcher(index).pruned(q, params, stats);
}

/// Runs every query, spreading them over `params.num_threads` workers.
/// Per-query results do not depend on the thread count.
inline std::vector<std::vector<SearchHit>> search_batch(const InvertedIndex& index,
                                                        std::span<const SparseVector> queries,
                                                        const SearchParams& params, bool exact,
                                                        SearchStats* stats = nullptr) {
    params.validate();
    std::vector<std::vector<SearchHit>> results(queries.size());
    std::vector<SearchStats> per_query(queries.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        try {
            Searcher searcher(index);
            for (std::size_t i = next++; i < queries.size() && !failed; i = next++) {
                results[i] = exact ? searcher.exact(queries[i], params.k, &per_query[i])
                                   : searcher.pruned(queries[i], params, &per_query[i]);
            }
        } catch (...) {
            if (!failed.exchange(true)) error = std::current_exception();
        }
    };
    std::size_t n_threads = std::min(params.num_threads, std::max<std::size_t>(1, queries.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }
    if (error) std::rethrow_exception(error);
    if (stats) {
        for (const auto& s : per_query) *stats += s;
    }
    return results;
}

// ---------------------------------------------------------------------------
// Activation distribution.

struct LengthBucket {
    std::uint64_t min_length = 0;  // inclusive
    std::uint64_t max_length = 0;  // inclusive
    std::uint64_t features = 0;
    std::uint64_t postings = 0;
};

/// How postings spread across features.
struct FeatureDistribution {
    std::uint32_t width = 0;
    std::uint64_t doc_count = 0;
    std::uint64_t total_postings = 0;
    std::uint64_t active_features = 0;
    std::uint64_t inactive_features = 0;
    double mean_doc_l0 = 0.0;
    /// Gini coefficient of posting-list lengths over all features (0 = uniform).
    double gini = 0.0;
    /// Posting-list lengths, longest first (all features, including zeros).
    std::vector<std::uint64_t> sorted_lengths;
    /// Power-of-two length buckets over active features.
    std::vector<LengthBucket> histogram;
};

inline FeatureDistribution index_stats(const InvertedIndex& index) {
    FeatureDistribution fd;
    fd.width = index.width();
    fd.doc_count = index.doc_count();
    fd.total_postings = index.total_postings();
    fd.sorted_lengths.reserve(index.width());
    for (std::uint32_t j = 0; j < index.width(); ++j) {
        auto len = index.postings(j).size();
        fd.sorted_lengths.push_back(len);
        if (len == 0) {
            ++fd.inactive_features;
            continue;
        }
        ++fd.active_features;
        std::size_t b = 0;
        while ((std::uint64_t{2} << b) <= len) ++b;
        if (fd.histogram.size() <= b) {
            for (std::size_t i = fd.histogram.size(); i <= b; ++i) {
                fd.histogram.push_back({std::uint64_t{1} << i, (std::uint64_t{2} << i) - 1, 0, 0});
            }
        }
        ++fd.histogram[b].features;
        fd.histogram[b].postings += len;
    }
    std::sort(fd.sorted_lengths.begin(), fd.sorted_lengths.end(), std::greater<>());
    if (fd.doc_count > 0) {
        fd.mean_doc_l0 = static_cast<double>(fd.total_postings) / static_cast<double>(fd.doc_count);
    }
    if (fd.total_postings > 0) {
        // Ascending-order formula: G = 2 * sum_i i * x_i / (n * sum x) - (n + 1) / n.
        const auto n = static_cast<double>(fd.sorted_lengths.size());
        double weighted = 0.0;
        for (std::size_t r = 0; r < fd.sorted_lengths.size(); ++r) {
            double rank_asc = n - static_cast<double>(r);
            weighted += rank_asc * static_cast<double>(fd.sorted_lengths[r]);
        }
        fd.gini = 2.0 * weighted / (n * static_cast<double>(fd.total_postings)) - (n + 1.0) / n;
    }
    return fd;
}

}  // namespace splare
