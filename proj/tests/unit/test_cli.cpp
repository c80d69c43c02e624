#include <gtest/gtest.h>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "test_support.hpp"

namespace ts = testing_support;
using nlohmann::json;

namespace {

std::string q(const std::string& s) { return "'" + s + "'"; }

std::string sha256(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < n; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

json run_ok(const std::string& args) {
    auto r = ts::run_cli(args);
    EXPECT_EQ(r.exit_code, 0) << args;
    return json::parse(r.out);
}

}  // namespace

TEST(Cli, VersionAndHelp) {
    EXPECT_EQ(ts::run_cli("--help").exit_code, 0);
    EXPECT_EQ(ts::run_cli("").exit_code, 1);
    EXPECT_EQ(ts::run_cli("frobnicate").exit_code, 1);
}

TEST(Cli, GoldenEncodingIsByteIdentical) {
    ts::TempDir tmp;
    std::string g = std::string(SPLARE_TEST_DATA) + "/golden";
    auto s = run_ok("encode --sae " + q(g + "/sae.bin") + " --input " + q(g + "/hidden.jsonl") +
                    " --output " + q(tmp / "out.jsonl") + " --role doc --no-cap");
    EXPECT_EQ(s["records"], 4);
    EXPECT_EQ(ts::slurp(tmp / "out.jsonl"), ts::slurp(g + "/expected.jsonl"));
}

TEST(Cli, EmptyInputAndCap) {
    ts::TempDir tmp;
    std::string g = std::string(SPLARE_TEST_DATA) + "/golden";
    ts::spit(tmp / "empty.jsonl", "");
    auto s = run_ok("encode --sae " + q(g + "/sae.bin") + " --input " + q(tmp / "empty.jsonl") +
                    " --output " + q(tmp / "out.jsonl") + " --role query");
    EXPECT_EQ(s["records"], 0);
    EXPECT_EQ(ts::slurp(tmp / "out.jsonl"), "");

    run_ok("encode --sae " + q(g + "/sae.bin") + " --input " + q(g + "/hidden.jsonl") +
           " --output " + q(tmp / "one.jsonl") + " --role doc --cap 1");
    std::istringstream in(ts::slurp(tmp / "one.jsonl"));
    auto recs = splare::read_sparse_jsonl(in);
    ASSERT_EQ(recs.size(), 4U);
    for (const auto& r : recs) EXPECT_LE(r.vec.size(), 1U);
}

TEST(Cli, ExitCodes) {
    ts::TempDir tmp;
    std::string g = std::string(SPLARE_TEST_DATA) + "/golden";
    // Missing required option.
    EXPECT_EQ(ts::run_cli("encode --sae " + q(g + "/sae.bin")).exit_code, 1);
    // Bad role value.
    EXPECT_EQ(ts::run_cli("encode --sae " + q(g + "/sae.bin") + " --input " +
                          q(g + "/hidden.jsonl") + " --output " + q(tmp / "o") + " --role x")
                  .exit_code,
              1);
    // Corrupt container.
    ts::spit(tmp / "bad.bin", "SAEW garbage");
    EXPECT_EQ(ts::run_cli("encode --sae " + q(tmp / "bad.bin") + " --input " +
                          q(g + "/hidden.jsonl") + " --output " + q(tmp / "o"))
                  .exit_code,
              2);
    // Dimension mismatch is a format error that names the line.
    ts::spit(tmp / "h.jsonl", "{\"id\": \"a\", \"n\": 1, \"d\": 3, \"rows\": [[1, 2, 3]]}\n");
    auto r = ts::run_cli("encode --sae " + q(g + "/sae.bin") + " --input " + q(tmp / "h.jsonl") +
                             " --output " + q(tmp / "o"),
                         true);
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_NE(r.out.find("line 1"), std::string::npos) << r.out;
}

TEST(Cli, SynthIsDeterministic) {
    ts::TempDir a;
    ts::TempDir b;
    for (const auto* dir : {&a, &b}) {
        run_ok("--seed 3 synth --kind pipeline --out-dir " + q(dir->path().string()) +
               " --docs 30 --queries 5 --train-queries 10");
    }
    for (const char* f : {"sae.bin", "docs.hidden.jsonl", "queries.hidden.jsonl", "train.jsonl",
                          "qrels.txt"}) {
        EXPECT_EQ(sha256(ts::slurp(a / f)), sha256(ts::slurp(b / f))) << f;
        EXPECT_FALSE(ts::slurp(a / f).empty()) << f;
    }
}

TEST(Cli, SparsePipelineSearchAndEval) {
    ts::TempDir t;
    run_ok("synth --kind sparse --out-dir " + q(t.path().string()) + " --docs 400 --queries 20");
    auto ix = run_ok("index --input " + q(t / "docs.jsonl") + " --output " + q(t / "idx.bin") +
                     " --k-doc 200");
    EXPECT_EQ(ix["docs"], 400);
    run_ok("search --index " + q(t / "idx.bin") + " --queries " + q(t / "queries.jsonl") +
           " --output " + q(t / "exact.run") + " --exact --k 50");
    run_ok("search --index " + q(t / "idx.bin") + " --queries " + q(t / "queries.jsonl") +
           " --output " + q(t / "full.run") + " --k 50 --query-cut inf --heap-factor 1");
    EXPECT_EQ(ts::slurp(t / "exact.run"), ts::slurp(t / "full.run"));
    EXPECT_FALSE(ts::slurp(t / "exact.run").empty());

    auto ev = run_ok("eval --run " + q(t / "exact.run") + " --qrels " + q(t / "qrels.txt"));
    EXPECT_GE(ev["ndcg@10"].get<double>(), 0.0);
    EXPECT_LE(ev["ndcg@10"].get<double>(), 1.0);
    EXPECT_GE(ev["mrr@10"].get<double>(), 0.0);
    EXPECT_LE(ev["mrr@10"].get<double>(), 1.0);

    auto an = run_ok("analyze --index " + q(t / "idx.bin") + " --top 5");
    EXPECT_EQ(an["longest_lists"].size(), 5U);

    auto tsv = ts::run_cli("--format tsv eval --run " + q(t / "exact.run") + " --qrels " +
                           q(t / "qrels.txt"));
    EXPECT_EQ(tsv.exit_code, 0);
    EXPECT_NE(tsv.out.find("ndcg@10\t"), std::string::npos) << tsv.out;

    auto sw = run_ok("sweep --k-doc 50,inf --k-query 10 --docs " + q(t / "docs.jsonl") +
                     " --queries " + q(t / "queries.jsonl") + " --qrels " + q(t / "qrels.txt"));
    ASSERT_EQ(sw["rows"].size(), 2U);
    EXPECT_LE(sw["rows"][0]["mean_doc_l0"].get<double>(), sw["rows"][1]["mean_doc_l0"].get<double>());

    auto bench = run_ok("bench --index " + q(t / "idx.bin") + " --queries " +
                        q(t / "queries.jsonl") + " --repeats 1");
    EXPECT_TRUE(bench.contains("machine"));
}

TEST(Cli, TemperatureSweep) {
    ts::TempDir t;
    auto dir = q(t.path().string());
    run_ok("synth --kind pipeline --out-dir " + dir + " --docs 40 --queries 6 --train-queries 16");
    auto sw = run_ok("sweep --tau 1,10 --steps 2 --batch-size 8 --sae " + q(t / "sae.bin") +
                     " --data " + q(t / "train.jsonl") + " --docs-hidden " +
                     q(t / "docs.hidden.jsonl") + " --queries-hidden " +
                     q(t / "queries.hidden.jsonl") + " --qrels " + q(t / "qrels.txt"));
    ASSERT_EQ(sw["rows"].size(), 2U);
    EXPECT_EQ(sw["rows"][0]["tau"], 1.0);
}
