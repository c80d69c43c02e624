// splare: command-line front end for the sparse-latent retrieval pipeline.
//
// Every command prints one JSON (or TSV) summary on stdout and logs to stderr.
// Exit codes: 0 ok, 1 usage, 2 data format, 3 numerical failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <sys/utsname.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "splare/splare.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitNumerical = 3;

// ---------------------------------------------------------------------------
// Logging

enum class Level { quiet, error, warn, info, debug };

Level g_level = Level::info;

Level level_from_env() {
    const char* env = std::getenv("SPLARE_LOG");
    if (!env) return Level::info;
    std::string v(env);
    if (v == "quiet" || v == "off" || v == "0") return Level::quiet;
    if (v == "error") return Level::error;
    if (v == "warn" || v == "warning") return Level::warn;
    if (v == "debug" || v == "trace") return Level::debug;
    return Level::info;
}

template <class... Args>
void log(Level lvl, const Args&... args) {
    if (lvl > g_level || g_level == Level::quiet) return;
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    std::ostringstream os;
    os << "[splare] " << names[static_cast<int>(lvl)] << ": ";
    (os << ... << args);
    os << '\n';
    std::cerr << os.str();
}

class Stopwatch {
  public:
    [[nodiscard]] double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Shared option values

struct Global {
    std::optional<std::uint64_t> seed;
    std::size_t threads = 1;
    std::string format = "json";
};

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw splare::format_error("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw splare::format_error("cannot write " + path);
    return out;
}

void close_out(std::ofstream& out, const std::string& path) {
    out.close();
    if (!out) throw splare::format_error("write failed for " + path);
}

std::vector<splare::NamedSparse> load_sparse(const std::string& path) {
    auto in = open_in(path);
    return splare::read_sparse_jsonl(in);
}

splare::Qrels load_qrels(const std::string& path) {
    auto in = open_in(path);
    return splare::read_qrels(in);
}

/// "inf" (or "none") means no limit.
std::optional<std::size_t> parse_cap(const std::string& s) {
    if (s == "inf" || s == "none" || s == "unlimited") return std::nullopt;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        throw UsageError("bad cap value \"" + s + "\"");
    }
    if (pos != s.size() || v == 0 || s.front() == '-') {
        throw UsageError("cap must be a positive integer or \"inf\": \"" + s + "\"");
    }
    return static_cast<std::size_t>(v);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) {
        if (cur.empty()) throw UsageError("empty element in list \"" + s + "\"");
        out.push_back(cur);
    }
    if (out.empty()) throw UsageError("empty list");
    return out;
}

Json cap_json(const std::optional<std::size_t>& cap) {
    return cap ? Json(*cap) : Json("inf");
}

// ---------------------------------------------------------------------------
// Output

std::string tsv_cell(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void emit(const Global& g, const Json& summary) {
    if (g.format == "json") {
        std::cout << summary.dump() << '\n';
        return;
    }
    // TSV: a "rows" array becomes a table, everything else key/value lines.
    for (const auto& [key, value] : summary.items()) {
        if (key == "rows" && value.is_array()) continue;
        if (value.is_object()) {
            for (const auto& [k2, v2] : value.items()) {
                std::cout << key << '.' << k2 << '\t' << tsv_cell(v2) << '\n';
            }
        } else {
            std::cout << key << '\t' << tsv_cell(value) << '\n';
        }
    }
    if (summary.contains("rows") && summary["rows"].is_array() && !summary["rows"].empty()) {
        const auto& rows = summary["rows"];
        std::vector<std::string> cols;
        for (const auto& [k, v] : rows.front().items()) cols.push_back(k);
        for (std::size_t i = 0; i < cols.size(); ++i) std::cout << (i ? "\t" : "") << cols[i];
        std::cout << '\n';
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < cols.size(); ++i) {
                std::cout << (i ? "\t" : "") << (row.contains(cols[i]) ? tsv_cell(row[cols[i]]) : "");
            }
            std::cout << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// synth

struct SynthOpts {
    std::string kind = "pipeline";
    std::string out_dir;
    std::optional<std::size_t> docs;
    std::optional<std::size_t> queries;
    std::optional<std::size_t> train_queries;
};

void write_qrels_file(const std::string& path, const splare::Qrels& qrels) {
    auto out = open_out(path);
    splare::write_qrels(out, qrels);
    close_out(out, path);
}

Json cmd_synth(const Global& g, const SynthOpts& o) {
    fs::create_directories(o.out_dir);
    auto path = [&](const char* name) { return (fs::path(o.out_dir) / name).string(); };
    Json s;
    s["command"] = "synth";
    s["kind"] = o.kind;
    if (o.kind == "sparse") {
        splare::synth::SparseCorpusConfig cfg;
        if (g.seed) cfg.seed = *g.seed;
        if (o.docs) cfg.docs = *o.docs;
        if (o.queries) cfg.queries = *o.queries;
        if (cfg.docs == 0 || cfg.queries == 0) throw UsageError("sizes must be positive");
        auto c = splare::synth::make_sparse_corpus(cfg);
        {
            auto out = open_out(path("docs.jsonl"));
            splare::write_sparse_jsonl(out, c.docs);
            close_out(out, path("docs.jsonl"));
        }
        {
            auto out = open_out(path("queries.jsonl"));
            splare::write_sparse_jsonl(out, c.queries);
            close_out(out, path("queries.jsonl"));
        }
        write_qrels_file(path("qrels.txt"), c.qrels);
        s["seed"] = cfg.seed;
        s["docs"] = c.docs.size();
        s["queries"] = c.queries.size();
        s["width"] = cfg.width;
        s["files"] = {path("docs.jsonl"), path("queries.jsonl"), path("qrels.txt")};
    } else if (o.kind == "pipeline") {
        splare::synth::PipelineConfig cfg;
        if (g.seed) cfg.seed = *g.seed;
        if (o.docs) cfg.docs = *o.docs;
        if (o.queries) cfg.queries = *o.queries;
        if (o.train_queries) cfg.train_queries = *o.train_queries;
        if (cfg.docs == 0 || cfg.queries == 0 || cfg.train_queries == 0) {
            throw UsageError("sizes must be positive");
        }
        auto p = splare::synth::make_pipeline(cfg);
        splare::save_sae(path("sae.bin"), p.sae);
        {
            auto out = open_out(path("docs.hidden.jsonl"));
            splare::write_hidden_jsonl(out, p.docs);
            close_out(out, path("docs.hidden.jsonl"));
        }
        {
            auto out = open_out(path("queries.hidden.jsonl"));
            splare::write_hidden_jsonl(out, p.queries);
            close_out(out, path("queries.hidden.jsonl"));
        }
        {
            auto out = open_out(path("train.jsonl"));
            splare::write_training_jsonl(out, p.training);
            close_out(out, path("train.jsonl"));
        }
        write_qrels_file(path("qrels.txt"), p.qrels);
        s["seed"] = cfg.seed;
        s["d"] = cfg.d;
        s["width"] = cfg.width;
        s["docs"] = p.docs.size();
        s["queries"] = p.queries.size();
        s["train_queries"] = p.training.size();
        s["docs_per_training_query"] = cfg.negatives + 1;
        s["files"] = {path("sae.bin"), path("docs.hidden.jsonl"), path("queries.hidden.jsonl"),
                      path("train.jsonl"), path("qrels.txt")};
    } else {
        throw UsageError("--kind must be sparse or pipeline");
    }
    log(Level::info, "wrote synthetic ", o.kind, " data to ", o.out_dir);
    return s;
}

// ---------------------------------------------------------------------------
// encode

struct EncodeOpts {
    std::string sae;
    std::string input;
    std::string output;
    std::string role = "doc";
    std::string top_k = "40,400";
    std::optional<std::size_t> cap;
    bool no_cap = false;
    std::string layer_tag;
};

std::pair<std::size_t, std::size_t> parse_top_k(const std::string& s) {
    auto parts = split_list(s);
    if (parts.size() != 2) throw UsageError("--top-k expects Q,D");
    auto q = parse_cap(parts[0]);
    auto d = parse_cap(parts[1]);
    if (!q || !d) throw UsageError("--top-k values must be finite; use --no-cap instead");
    return {*q, *d};
}

Json cmd_encode(const Global&, const EncodeOpts& o) {
    if (o.role != "query" && o.role != "doc") throw UsageError("--role must be query or doc");
    std::optional<std::size_t> cap;
    if (!o.no_cap) {
        auto [kq, kd] = parse_top_k(o.top_k);
        cap = o.role == "query" ? kq : kd;
        if (o.cap) cap = *o.cap;
        if (cap && *cap == 0) throw UsageError("--cap must be >= 1");
    }
    auto params = splare::load_sae(o.sae);
    auto in = open_in(o.input);
    auto out = open_out(o.output);
    std::size_t records = 0;
    std::size_t total_l0 = 0;
    std::size_t max_l0 = 0;
    splare::jsonl::for_each_line(in, [&](std::string_view line, std::size_t lineno) {
        auto rec = splare::parse_hidden_record(line, lineno);
        if (rec.h.cols() != params.d) {
            throw splare::format_error("hidden dim " + std::to_string(rec.h.cols()) +
                                           " does not match SAE d " + std::to_string(params.d),
                                       lineno);
        }
        auto v = splare::encode_sequence(params, rec.h);
        if (cap) v = splare::top_k_cap(v, *cap);
        out << splare::format_sparse_record(rec.id, v) << '\n';
        ++records;
        total_l0 += v.size();
        max_l0 = std::max(max_l0, v.size());
    });
    close_out(out, o.output);
    log(Level::info, "encoded ", records, " ", o.role, " records");
    Json s;
    s["command"] = "encode";
    s["role"] = o.role;
    s["layer_tag"] = o.layer_tag;
    s["cap"] = cap_json(cap);
    s["records"] = records;
    s["width"] = params.width;
    s["mean_l0"] = records ? static_cast<double>(total_l0) / static_cast<double>(records) : 0.0;
    s["max_l0"] = max_l0;
    s["output"] = o.output;
    return s;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string sae;
    std::string data;
    std::string output;
    std::string log_path;
    bool resume = false;
    splare::LossConfig loss;
    splare::OptimizerConfig opt;
};

Json step_json(const splare::StepLog& s) {
    Json j;
    j["step"] = s.step;
    j["lr"] = s.lr;
    j["loss"] = s.loss;
    j["kl"] = s.kl;
    j["flops_q"] = s.flops_q;
    j["flops_d"] = s.flops_d;
    j["mean_query_l0"] = s.mean_query_l0;
    j["mean_doc_l0"] = s.mean_doc_l0;
    return j;
}

std::vector<splare::TrainingBatch> load_training(const std::string& path) {
    auto in = open_in(path);
    return splare::read_training_jsonl(in);
}

struct TrainOutcome {
    splare::TrainState state;
    std::optional<splare::StepLog> first;
    std::optional<splare::StepLog> last;
};

TrainOutcome run_training(splare::TrainState init, const std::vector<splare::TrainingBatch>& data,
                          const splare::LossConfig& loss, const splare::OptimizerConfig& opt,
                          std::ostream* step_log) {
    TrainOutcome r;
    r.state = splare::train(std::move(init), data, loss, opt, [&](const splare::StepLog& s) {
        if (!r.first) r.first = s;
        r.last = s;
        if (step_log) *step_log << step_json(s).dump() << '\n';
        if (s.step == 1 || s.step % 50 == 0 || s.step == opt.steps) {
            log(Level::debug, "step ", s.step, " loss ", s.loss, " kl ", s.kl, " doc l0 ",
                s.mean_doc_l0);
        }
    });
    return r;
}

Json cmd_train(const Global& g, TrainOpts o) {
    if (g.seed) o.opt.seed = *g.seed;
    auto data = load_training(o.data);
    log(Level::info, "loaded ", data.size(), " training queries");
    auto state = o.resume ? splare::load_checkpoint(o.sae)
                          : splare::TrainState::init(splare::load_sae(o.sae), o.opt.seed);
    state.seed = o.opt.seed;
    std::ofstream step_log;
    if (!o.log_path.empty()) step_log = open_out(o.log_path);
    Stopwatch sw;
    TrainOutcome r;
    try {
        r = run_training(std::move(state), data, o.loss, o.opt,
                         o.log_path.empty() ? nullptr : &step_log);
    } catch (const splare::TrainingDiverged& e) {
        splare::save_checkpoint(o.output, e.last_good());
        log(Level::error, "training diverged; last finite state saved to ", o.output);
        throw;
    }
    if (!o.log_path.empty()) close_out(step_log, o.log_path);
    splare::save_checkpoint(o.output, r.state);
    log(Level::info, "trained ", o.opt.steps, " steps in ", sw.seconds(), " s");
    Json s;
    s["command"] = "train";
    s["steps"] = o.opt.steps;
    s["final_step"] = r.state.step;
    s["seed"] = o.opt.seed;
    s["tau"] = o.loss.tau;
    s["lambda_q"] = o.loss.lambda_q;
    s["lambda_d"] = o.loss.lambda_d;
    s["lr"] = o.opt.lr;
    s["batch_size"] = o.opt.batch_size;
    if (r.first) s["first"] = step_json(*r.first);
    if (r.last) s["last"] = step_json(*r.last);
    s["output"] = o.output;
    s["optimizer_state"] = o.output + ".opt";
    return s;
}

// ---------------------------------------------------------------------------
// index / analyze

struct IndexOpts {
    std::string input;
    std::string output;
    std::size_t k_doc = splare::kDefaultDocCap;
    bool no_cap = false;
};

Json cmd_index(const Global&, const IndexOpts& o) {
    if (!o.no_cap && o.k_doc == 0) throw UsageError("--k-doc must be >= 1");
    std::optional<std::size_t> cap;
    if (!o.no_cap) cap = o.k_doc;
    auto in = open_in(o.input);
    splare::IndexBuilder builder(cap);
    std::size_t n = 0;
    splare::jsonl::for_each_line(in, [&](std::string_view line, std::size_t lineno) {
        auto rec = splare::parse_sparse_record(line, lineno);
        try {
            builder.add(rec.id, rec.vec);
        } catch (const splare::build_error& e) {
            throw splare::format_error(e.what(), lineno);
        }
        ++n;
    });
    auto index = std::move(builder).finish();
    splare::save_index(o.output, index);
    log(Level::info, "indexed ", n, " documents, ", index.total_postings(), " postings");
    Json s;
    s["command"] = "index";
    s["docs"] = index.doc_count();
    s["width"] = index.width();
    s["k_doc"] = cap_json(cap);
    s["total_postings"] = index.total_postings();
    s["mean_doc_l0"] = index.doc_count() ? static_cast<double>(index.total_postings()) /
                                               static_cast<double>(index.doc_count())
                                         : 0.0;
    s["output"] = o.output;
    return s;
}

struct AnalyzeOpts {
    std::string index;
    std::size_t top = 20;
};

Json cmd_analyze(const Global&, const AnalyzeOpts& o) {
    auto index = splare::load_index(o.index);
    auto fd = splare::index_stats(index);
    Json s;
    s["command"] = "analyze";
    s["width"] = fd.width;
    s["docs"] = fd.doc_count;
    s["total_postings"] = fd.total_postings;
    s["active_features"] = fd.active_features;
    s["inactive_features"] = fd.inactive_features;
    s["mean_doc_l0"] = fd.mean_doc_l0;
    s["gini"] = fd.gini;
    Json longest = Json::array();
    for (std::size_t i = 0; i < std::min(o.top, fd.sorted_lengths.size()); ++i) {
        longest.push_back(fd.sorted_lengths[i]);
    }
    s["longest_lists"] = longest;
    Json rows = Json::array();
    for (const auto& b : fd.histogram) {
        rows.push_back({{"min_length", b.min_length},
                        {"max_length", b.max_length},
                        {"features", b.features},
                        {"postings", b.postings}});
    }
    s["rows"] = rows;
    return s;
}

// ---------------------------------------------------------------------------
// search

struct SearchOpts {
    std::string index;
    std::string queries;
    std::string output;
    bool exact = false;
    std::size_t k = 1000;
    std::string query_cut = "30";
    double heap_factor = 0.5;
    std::size_t k_query = splare::kDefaultQueryCap;
    bool no_cap = false;
    std::string tag = "splare";
};

std::vector<splare::SparseVector> capped_queries(const std::vector<splare::NamedSparse>& qs,
                                                 std::optional<std::size_t> cap) {
    std::vector<splare::SparseVector> out;
    out.reserve(qs.size());
    for (const auto& q : qs) out.push_back(cap ? splare::top_k_cap(q.vec, *cap) : q.vec);
    return out;
}

splare::SearchParams search_params(const Global& g, std::size_t k, const std::string& query_cut,
                                   double heap_factor) {
    splare::SearchParams p;
    p.k = k;
    auto cut = parse_cap(query_cut);
    p.query_cut = cut ? *cut : std::numeric_limits<std::size_t>::max();
    p.heap_factor = heap_factor;
    p.num_threads = g.threads;
    p.validate();
    return p;
}

Json cmd_search(const Global& g, const SearchOpts& o) {
    if (!o.no_cap && o.k_query == 0) throw UsageError("--k-query must be >= 1");
    auto params = search_params(g, o.k, o.query_cut, o.heap_factor);
    auto index = splare::load_index(o.index);
    auto named = load_sparse(o.queries);
    std::optional<std::size_t> cap;
    if (!o.no_cap) cap = o.k_query;
    auto queries = capped_queries(named, cap);
    Stopwatch sw;
    splare::SearchStats stats;
    std::vector<std::vector<splare::SearchHit>> results;
    try {
        results = splare::search_batch(index, queries, params, o.exact, &stats);
    } catch (const std::domain_error& e) {
        throw splare::format_error(e.what());
    }
    auto out = open_out(o.output);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < named.size(); ++i) {
        splare::write_run_query(out, named[i].id, splare::to_ranked(index, results[i]), o.tag);
        hits += results[i].size();
    }
    close_out(out, o.output);
    log(Level::info, "searched ", named.size(), " queries in ", sw.seconds(), " s");
    Json s;
    s["command"] = "search";
    s["mode"] = o.exact ? "exact" : "pruned";
    s["queries"] = named.size();
    s["k"] = params.k;
    if (!o.exact) {
        s["query_cut"] = cap_json(parse_cap(o.query_cut));
        s["heap_factor"] = params.heap_factor;
    }
    s["k_query"] = cap_json(cap);
    s["hits"] = hits;
    s["postings_scored"] = stats.postings_scored;
    s["docs_evaluated"] = stats.docs_evaluated;
    s["output"] = o.output;
    return s;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    std::string run;
    std::string qrels;
    std::size_t k = 10;
    bool include_empty = false;
    bool per_query = false;
};

Json cmd_eval(const Global&, const EvalOpts& o) {
    if (o.k == 0) throw UsageError("--k must be >= 1");
    auto run_in = open_in(o.run);
    auto run = splare::read_run(run_in);
    auto qrels = load_qrels(o.qrels);
    splare::EvalOptions opts{o.include_empty};
    auto ndcg = splare::ndcg_at_k(run, qrels, o.k, opts);
    auto mrr = splare::mrr_at_k(run, qrels, o.k, opts);
    auto recall = splare::recall_at_k(run, qrels, o.k, opts);
    const auto k = std::to_string(o.k);
    Json s;
    s["command"] = "eval";
    s["k"] = o.k;
    s["num_queries"] = ndcg.num_queries;
    s["ndcg@" + k] = ndcg.mean;
    s["mrr@" + k] = mrr.mean;
    s["recall@" + k] = recall.mean;
    if (o.per_query) {
        Json rows = Json::array();
        for (const auto& [qid, v] : ndcg.per_query) {
            rows.push_back({{"qid", qid},
                            {"ndcg@" + k, v},
                            {"mrr@" + k, mrr.per_query.at(qid)},
                            {"recall@" + k, recall.per_query.at(qid)}});
        }
        s["rows"] = rows;
    }
    return s;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOpts {
    std::string index;
    std::string queries;
    bool exact = false;
    std::size_t k = 1000;
    std::string query_cut = "30";
    double heap_factor = 0.5;
    std::size_t k_query = splare::kDefaultQueryCap;
    bool no_cap = false;
    std::size_t repeats = 3;
};

Json machine_profile() {
    Json m;
    struct utsname u {};
    if (uname(&u) == 0) {
        m["os"] = std::string(u.sysname) + " " + u.release;
        m["arch"] = u.machine;
    }
    m["hardware_threads"] = std::thread::hardware_concurrency();
#if defined(__clang__)
    m["compiler"] = "clang " __clang_version__;
#elif defined(__GNUC__)
    m["compiler"] = "gcc " __VERSION__;
#endif
    m["build_type"] = SPLARE_BUILD_TYPE;
    return m;
}

Json cmd_bench(const Global& g, const BenchOpts& o) {
    if (!o.no_cap && o.k_query == 0) throw UsageError("--k-query must be >= 1");
    if (o.repeats == 0) throw UsageError("--repeats must be >= 1");
    auto params = search_params(g, o.k, o.query_cut, o.heap_factor);
    auto index = splare::load_index(o.index);
    auto named = load_sparse(o.queries);
    std::optional<std::size_t> cap;
    if (!o.no_cap) cap = o.k_query;
    auto queries = capped_queries(named, cap);
    auto rep = splare::latency_bench(index, queries, params, o.exact, o.repeats);
    Json s;
    s["command"] = "bench";
    s["machine"] = machine_profile();
    s["mode"] = o.exact ? "exact" : "pruned";
    s["k"] = params.k;
    s["query_cut"] = cap_json(parse_cap(o.query_cut));
    s["heap_factor"] = params.heap_factor;
    s["k_query"] = cap_json(cap);
    s["docs"] = index.doc_count();
    s["queries"] = rep.queries;
    s["repeats"] = rep.repeats;
    s["mean_ms"] = rep.mean_ms;
    s["median_ms"] = rep.median_ms;
    s["p99_ms"] = rep.p99_ms;
    s["postings_scored"] = rep.postings_scored;
    s["docs_evaluated"] = rep.docs_evaluated;
    s["mean_postings_per_query"] = rep.mean_postings_per_query;
    if (g.threads > 1) {
        // Latency above is single-threaded; this adds a multi-threaded throughput pass.
        Stopwatch sw;
        (void)splare::search_batch(index, queries, params, o.exact);
        double secs = sw.seconds();
        s["threads"] = g.threads;
        s["throughput_qps"] = secs > 0.0 ? static_cast<double>(queries.size()) / secs : 0.0;
    }
    return s;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOpts {
    // temperature grid
    std::string tau;
    std::string sae;
    std::string data;
    std::string docs_hidden;
    std::string queries_hidden;
    splare::LossConfig loss;
    splare::OptimizerConfig opt;
    // cap grid
    std::string k_doc;
    std::string k_query;
    std::string docs;
    std::string queries;
    std::string qrels;
    std::size_t depth = 1000;
};

std::vector<splare::NamedHidden> load_hidden(const std::string& path) {
    auto in = open_in(path);
    return splare::read_hidden_jsonl(in);
}

std::vector<splare::NamedSparse> encode_all(const splare::SaeParams& p,
                                            const std::vector<splare::NamedHidden>& hs) {
    std::vector<splare::NamedSparse> out;
    out.reserve(hs.size());
    for (const auto& h : hs) {
        if (h.h.cols() != p.d) throw splare::format_error("hidden dim does not match SAE d");
        out.push_back({h.id, splare::encode_sequence(p, h.h)});
    }
    return out;
}

std::vector<double> parse_real_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : split_list(s)) {
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(part, &pos);
        } catch (const std::exception&) {
            throw UsageError("bad number \"" + part + "\"");
        }
        if (pos != part.size()) throw UsageError("bad number \"" + part + "\"");
        out.push_back(v);
    }
    return out;
}

Json cmd_sweep(const Global& g, SweepOpts o) {
    Json s;
    s["command"] = "sweep";
    Json rows = Json::array();
    if (!o.tau.empty()) {
        if (o.sae.empty() || o.data.empty() || o.docs_hidden.empty() || o.queries_hidden.empty() ||
            o.qrels.empty()) {
            throw UsageError("--tau needs --sae, --data, --docs-hidden, --queries-hidden, --qrels");
        }
        if (g.seed) o.opt.seed = *g.seed;
        auto taus = parse_real_list(o.tau);
        auto init = splare::load_sae(o.sae);
        auto data = load_training(o.data);
        auto docs_h = load_hidden(o.docs_hidden);
        auto queries_h = load_hidden(o.queries_hidden);
        auto qrels = load_qrels(o.qrels);
        s["grid"] = "tau";
        for (double tau : taus) {
            auto loss = o.loss;
            loss.tau = tau;
            Stopwatch sw;
            auto r = run_training(splare::TrainState::init(init, o.opt.seed), data, loss, o.opt,
                                  nullptr);
            auto docs = encode_all(r.state.params, docs_h);
            auto queries = encode_all(r.state.params, queries_h);
            auto index = splare::build_index(docs, splare::kDefaultDocCap);
            auto row = splare::evaluate_capped(index, queries, qrels, splare::kDefaultQueryCap,
                                               o.depth);
            log(Level::info, "tau ", tau, ": ndcg@10 ", row.ndcg_at_10, " (", sw.seconds(), " s)");
            rows.push_back({{"tau", tau},
                            {"final_kl", r.last ? r.last->kl : 0.0},
                            {"ndcg@10", row.ndcg_at_10},
                            {"mrr@10", row.mrr_at_10},
                            {"mean_query_l0", row.mean_query_l0},
                            {"mean_doc_l0", row.mean_doc_l0},
                            {"total_postings", row.total_postings}});
        }
        s["steps"] = o.opt.steps;
    } else if (!o.k_doc.empty() || !o.k_query.empty()) {
        if (o.docs.empty() || o.queries.empty() || o.qrels.empty()) {
            throw UsageError("cap sweeps need --docs, --queries and --qrels");
        }
        std::vector<std::optional<std::size_t>> kd;
        std::vector<std::optional<std::size_t>> kq;
        for (const auto& v : split_list(o.k_doc.empty() ? "400" : o.k_doc)) kd.push_back(parse_cap(v));
        for (const auto& v : split_list(o.k_query.empty() ? "40" : o.k_query)) kq.push_back(parse_cap(v));
        auto docs = load_sparse(o.docs);
        auto queries = load_sparse(o.queries);
        auto qrels = load_qrels(o.qrels);
        s["grid"] = "caps";
        for (const auto& row : splare::pruning_sweep(docs, queries, qrels, kd, kq, o.depth)) {
            rows.push_back({{"k_doc", cap_json(row.k_doc)},
                            {"k_query", cap_json(row.k_query)},
                            {"ndcg@10", row.ndcg_at_10},
                            {"mrr@10", row.mrr_at_10},
                            {"mean_query_l0", row.mean_query_l0},
                            {"mean_doc_l0", row.mean_doc_l0},
                            {"total_postings", row.total_postings}});
        }
    } else {
        throw UsageError("sweep needs --tau or --k-doc/--k-query");
    }
    s["rows"] = rows;
    return s;
}

void add_search_knobs(CLI::App* sub, std::size_t& k, std::string& query_cut, double& heap_factor,
                      std::size_t& k_query, bool& no_cap, bool& exact) {
    sub->add_flag("--exact", exact, "Exhaustive term-at-a-time scoring");
    sub->add_option("--k", k, "Results per query")->capture_default_str();
    sub->add_option("--query-cut", query_cut, "Query features traversed (integer or inf)")
        ->capture_default_str();
    sub->add_option("--heap-factor", heap_factor, "Early-termination factor in (0, 1]")
        ->capture_default_str();
    sub->add_option("--k-query", k_query, "Top-K cap applied to each query")->capture_default_str();
    sub->add_flag("--no-cap", no_cap, "Do not cap queries");
}

void add_loss_knobs(CLI::App* sub, splare::LossConfig& loss, splare::OptimizerConfig& opt) {
    sub->add_option("--lambda-q", loss.lambda_q, "Query FLOPS weight")->capture_default_str();
    sub->add_option("--lambda-d", loss.lambda_d, "Document FLOPS weight")->capture_default_str();
    sub->add_option("--lr", opt.lr, "Adam learning rate")->capture_default_str();
    sub->add_option("--batch-size", opt.batch_size, "Queries per step")->capture_default_str();
    sub->add_option("--steps", opt.steps, "Optimisation steps")->capture_default_str();
    sub->add_option("--warmup-ratio", opt.warmup_ratio, "Fraction of steps spent warming up")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    g_level = level_from_env();
    CLI::App app{"Sparse-latent retrieval toolkit"};
    app.set_version_flag("--version", SPLARE_VERSION);
    app.require_subcommand(1);

    Global g;
    std::uint64_t seed = 0;
    auto* seed_opt = app.add_option("--seed", seed, "Random seed");
    app.add_option("--threads", g.threads, "Worker threads for search")->capture_default_str();
    app.add_option("--format", g.format, "Summary format")
        ->check(CLI::IsMember({"json", "tsv"}))
        ->capture_default_str();

    SynthOpts synth;
    auto* s_synth = app.add_subcommand("synth", "Generate deterministic synthetic fixtures");
    s_synth->add_option("--kind", synth.kind, "sparse or pipeline")
        ->check(CLI::IsMember({"sparse", "pipeline"}))
        ->capture_default_str();
    s_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    s_synth->add_option("--docs", synth.docs, "Number of documents");
    s_synth->add_option("--queries", synth.queries, "Number of evaluation queries");
    s_synth->add_option("--train-queries", synth.train_queries, "Number of training queries");

    EncodeOpts enc;
    auto* s_enc = app.add_subcommand("encode", "Encode hidden states into sparse vectors");
    s_enc->add_option("--sae", enc.sae, "SAE container")->required();
    s_enc->add_option("--input", enc.input, "Hidden-state JSONL")->required();
    s_enc->add_option("--output", enc.output, "Sparse-vector JSONL")->required();
    s_enc->add_option("--role", enc.role, "query or doc")
        ->check(CLI::IsMember({"query", "doc"}))
        ->capture_default_str();
    s_enc->add_option("--top-k", enc.top_k, "Query and document caps, Q,D")->capture_default_str();
    s_enc->add_option("--cap", enc.cap, "Cap for this role (overrides --top-k)");
    s_enc->add_flag("--no-cap", enc.no_cap, "Keep every active feature");
    s_enc->add_option("--layer-tag", enc.layer_tag, "Backbone layer label, recorded in the summary");

    TrainOpts tr;
    auto* s_train = app.add_subcommand("train", "Fine-tune the SAE encoder by distillation");
    s_train->add_option("--sae", tr.sae, "Initial SAE container")->required();
    s_train->add_option("--data", tr.data, "Training JSONL")->required();
    s_train->add_option("--output", tr.output, "Trained SAE container")->required();
    s_train->add_option("--log", tr.log_path, "Per-step JSONL log");
    s_train->add_flag("--resume", tr.resume, "Restore optimiser state from <sae>.opt");
    s_train->add_option("--tau", tr.loss.tau, "Student temperature")->capture_default_str();
    add_loss_knobs(s_train, tr.loss, tr.opt);

    IndexOpts ix;
    auto* s_index = app.add_subcommand("index", "Build an inverted index");
    s_index->add_option("--input", ix.input, "Document sparse-vector JSONL")->required();
    s_index->add_option("--output", ix.output, "Index container")->required();
    s_index->add_option("--k-doc", ix.k_doc, "Top-K cap per document")->capture_default_str();
    s_index->add_flag("--no-cap", ix.no_cap, "Index every feature");

    SearchOpts se;
    auto* s_search = app.add_subcommand("search", "Retrieve and write a TREC run");
    s_search->add_option("--index", se.index, "Index container")->required();
    s_search->add_option("--queries", se.queries, "Query sparse-vector JSONL")->required();
    s_search->add_option("--output", se.output, "TREC run file")->required();
    s_search->add_option("--tag", se.tag, "Run tag")->capture_default_str();
    add_search_knobs(s_search, se.k, se.query_cut, se.heap_factor, se.k_query, se.no_cap, se.exact);

    EvalOpts ev;
    auto* s_eval = app.add_subcommand("eval", "Score a run against qrels");
    s_eval->add_option("--run", ev.run, "TREC run file")->required();
    s_eval->add_option("--qrels", ev.qrels, "TREC qrels file")->required();
    s_eval->add_option("--k", ev.k, "Cutoff")->capture_default_str();
    s_eval->add_flag("--include-empty", ev.include_empty, "Count queries without relevant docs");
    s_eval->add_flag("--per-query", ev.per_query, "Report every query");

    AnalyzeOpts an;
    auto* s_an = app.add_subcommand("analyze", "Posting-list length distribution");
    s_an->add_option("--index", an.index, "Index container")->required();
    s_an->add_option("--top", an.top, "Longest lists to list")->capture_default_str();

    BenchOpts be;
    auto* s_bench = app.add_subcommand("bench", "Single-threaded query latency");
    s_bench->add_option("--index", be.index, "Index container")->required();
    s_bench->add_option("--queries", be.queries, "Query sparse-vector JSONL")->required();
    s_bench->add_option("--repeats", be.repeats, "Timed passes")->capture_default_str();
    add_search_knobs(s_bench, be.k, be.query_cut, be.heap_factor, be.k_query, be.no_cap, be.exact);

    SweepOpts sw;
    auto* s_sweep = app.add_subcommand("sweep", "Grid over temperature or top-K caps");
    s_sweep->add_option("--tau", sw.tau, "Temperatures, e.g. 1,10,20,40,50,80,100");
    s_sweep->add_option("--sae", sw.sae, "Initial SAE container (tau grid)");
    s_sweep->add_option("--data", sw.data, "Training JSONL (tau grid)");
    s_sweep->add_option("--docs-hidden", sw.docs_hidden, "Document hidden states (tau grid)");
    s_sweep->add_option("--queries-hidden", sw.queries_hidden, "Query hidden states (tau grid)");
    add_loss_knobs(s_sweep, sw.loss, sw.opt);
    s_sweep->add_option("--k-doc", sw.k_doc, "Document caps, e.g. 100,200,400,inf");
    s_sweep->add_option("--k-query", sw.k_query, "Query caps, e.g. 10,20,40");
    s_sweep->add_option("--docs", sw.docs, "Document sparse-vector JSONL (cap grid)");
    s_sweep->add_option("--queries", sw.queries, "Query sparse-vector JSONL (cap grid)");
    s_sweep->add_option("--qrels", sw.qrels, "TREC qrels file");
    s_sweep->add_option("--depth", sw.depth, "Retrieval depth")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }
    if (seed_opt->count() > 0) g.seed = seed;
    if (g.threads == 0) {
        std::cerr << "[splare] error: --threads must be >= 1\n";
        return kExitUsage;
    }

    try {
        Json summary;
        if (*s_synth) summary = cmd_synth(g, synth);
        else if (*s_enc) summary = cmd_encode(g, enc);
        else if (*s_train) summary = cmd_train(g, tr);
        else if (*s_index) summary = cmd_index(g, ix);
        else if (*s_search) summary = cmd_search(g, se);
        else if (*s_eval) summary = cmd_eval(g, ev);
        else if (*s_an) summary = cmd_analyze(g, an);
        else if (*s_bench) summary = cmd_bench(g, be);
        else if (*s_sweep) summary = cmd_sweep(g, sw);
        emit(g, summary);
        return 0;
    } catch (const UsageError& e) {
        log(Level::error, e.what());
        return kExitUsage;
    } catch (const splare::numerical_error& e) {
        log(Level::error, e.what());
        return kExitNumerical;
    } catch (const splare::format_error& e) {
        log(Level::error, e.what());
        return kExitFormat;
    } catch (const splare::build_error& e) {
        log(Level::error, e.what());
        return kExitFormat;
    } catch (const std::domain_error& e) {
        log(Level::error, e.what());
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        log(Level::error, e.what());
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        log(Level::error, e.what());
        return kExitFormat;
    } catch (const std::exception& e) {
        log(Level::error, e.what());
        return kExitFormat;
    }
}
