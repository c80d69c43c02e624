#pragma once

// TREC-style judgments, runs and ranking metrics.
//
// Conventions: graded gain 2^rel - 1 with log2(rank + 1) discount for nDCG;
// a document counts as relevant for MRR and recall when its grade is >= 1.
// Queries without any relevant judgment are left out of the mean unless
// `include_empty` is set, in which case they score 0. Judged queries that
// are missing from the run score 0.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "splare/error.hpp"
#include "splare/index.hpp"

namespace splare {

class Qrels {
  public:
    /// Throws format_error on a duplicate (qid, docid) pair or a negative grade.
    void add(const std::string& qid, const std::string& doc, int grade, std::size_t line = 0) {
        if (grade < 0) throw format_error("negative relevance grade", line);
        if (!judgments_[qid].emplace(doc, grade).second) {
            throw format_error("duplicate judgment for (" + qid + ", " + doc + ")", line);
        }
    }

    [[nodiscard]] int grade(const std::string& qid, const std::string& doc) const {
        auto q = judgments_.find(qid);
        if (q == judgments_.end()) return 0;
        auto d = q->second.find(doc);
        return d == q->second.end() ? 0 : d->second;
    }

    /// Grades of all judged documents for `qid` (empty if none).
    [[nodiscard]] const std::map<std::string, int>& judged(const std::string& qid) const {
        static const std::map<std::string, int> kEmpty;
        auto q = judgments_.find(qid);
        return q == judgments_.end() ? kEmpty : q->second;
    }

    [[nodiscard]] std::size_t relevant_count(const std::string& qid) const {
        std::size_t n = 0;
        for (const auto& [doc, g] : judged(qid)) n += g >= 1 ? 1 : 0;
        return n;
    }

    [[nodiscard]] const std::map<std::string, std::map<std::string, int>>& all() const noexcept {
        return judgments_;
    }

  private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

struct RankedDoc {
    std::string doc;
    double score = 0.0;
    friend bool operator==(const RankedDoc&, const RankedDoc&) = default;
};

/// Ranked results per query, best first.
struct EvalRun {
    std::map<std::string, std::vector<RankedDoc>> queries;
    friend bool operator==(const EvalRun&, const EvalRun&) = default;
};

struct EvalOptions {
    bool include_empty = false;
};

struct MetricReport {
    double mean = 0.0;
    std::size_t num_queries = 0;
    std::map<std::string, double> per_query;
};

// ---------------------------------------------------------------------------
// TREC text formats.

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class T>
T parse_number(std::string_view s, std::size_t line, const char* what) {
    T v{};
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw format_error(std::string("bad ") + what + " \"" + std::string(s) + "\"", line);
    }
    return v;
}

}  // namespace detail

/// Reads `qid 0 docid rel` lines.
inline Qrels read_qrels(std::istream& in) {
    Qrels q;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = detail::split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 4) throw format_error("qrels line needs 4 fields", lineno);
        q.add(std::string(f[0]), std::string(f[2]),
              detail::parse_number<int>(f[3], lineno, "relevance"), lineno);
    }
    return q;
}

inline void write_qrels(std::ostream& out, const Qrels& qrels) {
    for (const auto& [qid, docs] : qrels.all()) {
        for (const auto& [doc, g] : docs) out << qid << " 0 " << doc << ' ' << g << '\n';
    }
}

/// Reads `qid Q0 docid rank score tag` lines. Ranks per query must be 1..n.
inline EvalRun read_run(std::istream& in) {
    struct Row {
        std::size_t rank;
        RankedDoc doc;
    };
    std::map<std::string, std::vector<Row>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto f = detail::split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 6) throw format_error("run line needs 6 fields", lineno);
        auto rank = detail::parse_number<std::size_t>(f[3], lineno, "rank");
        auto score = detail::parse_number<double>(f[4], lineno, "score");
        if (!std::isfinite(score)) throw format_error("non-finite score", lineno);
        rows[std::string(f[0])].push_back({rank, {std::string(f[2]), score}});
    }
    EvalRun run;
    for (auto& [qid, list] : rows) {
        std::sort(list.begin(), list.end(),
                  [](const Row& a, const Row& b) { return a.rank < b.rank; });
        std::set<std::string> seen;
        auto& out = run.queries[qid];
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (list[i].rank != i + 1) {
                throw format_error("ranks for query " + qid + " are not contiguous from 1");
            }
            if (i > 0 && list[i].doc.score > list[i - 1].doc.score) {
                throw format_error("scores for query " + qid + " increase with rank");
            }
            if (!seen.insert(list[i].doc.doc).second) {
                throw format_error("document " + list[i].doc.doc + " repeated for query " + qid);
            }
            out.push_back(std::move(list[i].doc));
        }
    }
    return run;
}

inline std::string format_score(double score) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, score);
    return {buf, res.ptr};
}

inline void write_run_query(std::ostream& out, const std::string& qid,
                            const std::vector<RankedDoc>& docs, std::string_view tag) {
    for (std::size_t i = 0; i < docs.size(); ++i) {
        out << qid << " Q0 " << docs[i].doc << ' ' << (i + 1) << ' ' << format_score(docs[i].score)
            << ' ' << tag << '\n';
    }
}

inline void write_run(std::ostream& out, const EvalRun& run, std::string_view tag) {
    for (const auto& [qid, docs] : run.queries) write_run_query(out, qid, docs, tag);
}

/// Converts index hits to externally-identified ranked documents.
inline std::vector<RankedDoc> to_ranked(const InvertedIndex& index,
                                        std::span<const SearchHit> hits) {
    std::vector<RankedDoc> out;
    out.reserve(hits.size());
    for (const auto& h : hits) out.push_back({index.doc_id(h.doc), h.score});
    return out;
}

// ---------------------------------------------------------------------------
// Metrics.

namespace detail {

/// Queries to average over, in sorted order.
inline std::vector<std::string> evaluated_queries(const EvalRun& run, const Qrels& qrels,
                                                  const EvalOptions& opts) {
    std::set<std::string> ids;
    for (const auto& [qid, docs] : run.queries) ids.insert(qid);
    for (const auto& [qid, docs] : qrels.all()) ids.insert(qid);
    std::vector<std::string> out;
    for (const auto& qid : ids) {
        if (opts.include_empty || qrels.relevant_count(qid) > 0) out.push_back(qid);
    }
    return out;
}

template <class PerQuery>
MetricReport average(const EvalRun& run, const Qrels& qrels, const EvalOptions& opts,
                     PerQuery&& per_query) {
    static const std::vector<RankedDoc> kNone;
    MetricReport rep;
    double sum = 0.0;
    for (const auto& qid : evaluated_queries(run, qrels, opts)) {
        auto it = run.queries.find(qid);
        const auto& docs = it == run.queries.end() ? kNone : it->second;
        double v = qrels.relevant_count(qid) == 0 ? 0.0 : per_query(qid, docs);
        rep.per_query[qid] = v;
        sum += v;
    }
    rep.num_queries = rep.per_query.size();
    rep.mean = rep.num_queries ? sum / static_cast<double>(rep.num_queries) : 0.0;
    return rep;
}

}  // namespace detail

inline MetricReport ndcg_at_k(const EvalRun& run, const Qrels& qrels, std::size_t k,
                              const EvalOptions& opts = {}) {
    if (k == 0) throw std::domain_error("ndcg_at_k: k must be >= 1");
    return detail::average(run, qrels, opts, [&](const std::string& qid,
                                                 const std::vector<RankedDoc>& docs) {
        double dcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
            int g = qrels.grade(qid, docs[i].doc);
            if (g > 0) dcg += (std::exp2(g) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
        }
        std::vector<int> ideal;
        for (const auto& [doc, g] : qrels.judged(qid)) {
            if (g > 0) ideal.push_back(g);
        }
        std::sort(ideal.begin(), ideal.end(), std::greater<>());
        double idcg = 0.0;
        for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
            idcg += (std::exp2(ideal[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
        }
        return idcg > 0.0 ? dcg / idcg : 0.0;
    });
}

inline MetricReport mrr_at_k(const EvalRun& run, const Qrels& qrels, std::size_t k,
                             const EvalOptions& opts = {}) {
    if (k == 0) throw std::domain_error("mrr_at_k: k must be >= 1");
    return detail::average(run, qrels, opts, [&](const std::string& qid,
                                                 const std::vector<RankedDoc>& docs) {
        for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
            if (qrels.grade(qid, docs[i].doc) >= 1) return 1.0 / static_cast<double>(i + 1);
        }
        return 0.0;
    });
}

/// Fraction of a query's relevant documents found in the top k.
inline MetricReport recall_at_k(const EvalRun& run, const Qrels& qrels, std::size_t k,
                                const EvalOptions& opts = {}) {
    if (k == 0) throw std::domain_error("recall_at_k: k must be >= 1");
    return detail::average(run, qrels, opts, [&](const std::string& qid,
                                                 const std::vector<RankedDoc>& docs) {
        std::size_t found = 0;
        for (std::size_t i = 0; i < std::min(k, docs.size()); ++i) {
            found += qrels.grade(qid, docs[i].doc) >= 1 ? 1 : 0;
        }
        return static_cast<double>(found) / static_cast<double>(qrels.relevant_count(qid));
    });
}

/// |top-k(candidate) ∩ top-k(reference)| / |top-k(reference)|; 1 when the
/// reference is empty.
inline double overlap_recall(std::span<const SearchHit> candidate,
                             std::span<const SearchHit> reference, std::size_t k) {
    auto ref_n = std::min(k, reference.size());
    if (ref_n == 0) return 1.0;
    std::set<std::uint32_t> ref;
    for (std::size_t i = 0; i < ref_n; ++i) ref.insert(reference[i].doc);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < std::min(k, candidate.size()); ++i) {
        hit += ref.count(candidate[i].doc);
    }
    return static_cast<double>(hit) / static_cast<double>(ref_n);
}

}  // namespace splare
