#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace splare;

TEST(SparseCorpus, DeterministicAndJudged) {
    synth::SparseCorpusConfig cfg{.docs = 500, .queries = 40, .width = 1024, .clusters = 20,
                                  .doc_l0_min = 80, .doc_l0_max = 200};
    auto a = synth::make_sparse_corpus(cfg);
    auto b = synth::make_sparse_corpus(cfg);
    ASSERT_EQ(a.docs.size(), 500U);
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        EXPECT_EQ(a.docs[i].id, b.docs[i].id);
        EXPECT_EQ(a.docs[i].vec, b.docs[i].vec);
        EXPECT_LE(a.docs[i].vec.size(), 200U);
    }
    for (const auto& q : a.queries) EXPECT_GE(a.qrels.relevant_count(q.id), 1U);
    cfg.seed += 1;
    EXPECT_NE(synth::make_sparse_corpus(cfg).docs[0].vec, a.docs[0].vec);
    cfg.doc_l0_max = 2000;
    EXPECT_THROW(synth::make_sparse_corpus(cfg), std::domain_error);
}

TEST(Pipeline, DeterministicShapes) {
    synth::PipelineConfig cfg{.train_queries = 20};
    auto a = synth::make_pipeline(cfg);
    auto b = synth::make_pipeline(cfg);
    std::ostringstream sa;
    std::ostringstream sb;
    write_hidden_jsonl(sa, a.docs);
    write_hidden_jsonl(sb, b.docs);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(a.training.size(), 20U);
    for (const auto& t : a.training) {
        EXPECT_EQ(t.docs_h.size(), cfg.negatives + 1);
        EXPECT_EQ(t.teacher_scores.size(), t.docs_h.size());
        EXPECT_EQ(t.query_h.cols(), cfg.d);
    }
    for (const auto& q : a.queries) EXPECT_GE(a.qrels.relevant_count(q.id), 1U);
    EXPECT_THROW(synth::make_pipeline({.clusters = 1}), std::domain_error);
}

TEST(Pipeline, OracleEncoderRetrievesWell) {
    auto p = synth::make_pipeline({});
    std::vector<NamedSparse> docs;
    for (const auto& d : p.docs) docs.push_back({d.id, encode_sequence(p.sae, d.h)});
    auto index = build_index(docs);
    EvalRun run;
    for (const auto& q : p.queries) {
        run.queries[q.id] = to_ranked(index, search_exact(index, encode_sequence(p.sae, q.h), 100));
    }
    EXPECT_GE(ndcg_at_k(run, p.qrels, 10).mean, 0.8);
}
