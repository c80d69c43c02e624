#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace splare;
namespace ts = testing_support;

namespace {

std::vector<double> dense_pool(const SaeParams& p, const HiddenStateMatrix& h) {
    std::vector<double> u(p.width, 0.0);
    auto z = sae_encode(p, h);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = 0; j < p.width; ++j) u[j] = std::max(u[j], std::log1p(std::max(0.0, z(i, j))));
    }
    return u;
}

TrainingBatch random_batch(ts::Rng& rng, std::size_t d, std::size_t m) {
    TrainingBatch b;
    b.qid = "q";
    b.query_h = ts::random_hidden(rng, ts::integer(rng, 1, 4), d);
    for (std::size_t i = 0; i < m; ++i) {
        b.docs_h.push_back(ts::random_hidden(rng, ts::integer(rng, 1, 6), d));
        b.teacher_scores.push_back(ts::uniform(rng, -5, 5));
    }
    return b;
}

}  // namespace

TEST(KlLoss, ZeroWhenDistributionsMatch) {
    std::vector<double> t{0.0, 0.0};
    EXPECT_EQ(kl_loss(t, t, 3.0), 0.0);
    // student / tau equals teacher exactly.
    std::vector<double> teacher{1.0, 0.0, -1.0};
    std::vector<double> student{2.0, 0.0, -2.0};
    EXPECT_NEAR(kl_loss(student, teacher, 2.0), 0.0, 1e-12);
}

TEST(KlLoss, HighPrecisionReference) {
    // Reference from a 50-digit softmax/KL evaluation.
    std::vector<double> teacher{1.0, 0.0, -1.0};
    std::vector<double> student{2.0, 0.0, -2.0};
    EXPECT_NEAR(kl_loss(student, teacher, 3.0), 0.025732068720155876, 1e-12);
}

TEST(KlLoss, ShiftInvarianceAndNonNegativity) {
    ts::Rng rng(31);
    for (int t = 0; t < 2000; ++t) {
        auto m = ts::integer(rng, 2, 10);
        std::vector<double> s(m), te(m);
        for (auto& v : s) v = ts::uniform(rng, -50, 50);
        for (auto& v : te) v = ts::uniform(rng, -10, 10);
        double tau = ts::uniform(rng, 0.1, 100);
        double base = kl_loss(s, te, tau);
        EXPECT_GE(base, 0.0);
        double c = ts::uniform(rng, -20, 20);
        auto s2 = s;
        auto t2 = te;
        for (auto& v : s2) v += c * tau;
        for (auto& v : t2) v += c;
        EXPECT_NEAR(kl_loss(s2, te, tau), base, 1e-12 * std::max(1.0, base) + 1e-12);
        EXPECT_NEAR(kl_loss(s, t2, tau), base, 1e-12 * std::max(1.0, base) + 1e-12);
    }
}

TEST(KlLoss, RejectsBadInput) {
    std::vector<double> a{1.0, 2.0};
    std::vector<double> b{1.0};
    std::vector<double> bad{1.0, NAN};
    EXPECT_THROW(kl_loss(a, b, 1.0), std::domain_error);
    EXPECT_THROW(kl_loss(b, b, 1.0), std::domain_error);
    EXPECT_THROW(kl_loss(a, a, 0.0), std::domain_error);
    EXPECT_THROW(kl_loss(bad, a, 1.0), std::domain_error);
    EXPECT_THROW(kl_loss(a, bad, 1.0), std::domain_error);
}

TEST(KlGrad, MatchesFiniteDifference) {
    ts::Rng rng(32);
    for (int t = 0; t < 200; ++t) {
        auto m = ts::integer(rng, 2, 8);
        std::vector<double> s(m), te(m);
        for (auto& v : s) v = ts::uniform(rng, -5, 5);
        for (auto& v : te) v = ts::uniform(rng, -5, 5);
        double tau = ts::uniform(rng, 0.5, 5);
        auto g = kl_grad(s, te, tau);
        for (std::size_t i = 0; i < m; ++i) {
            auto up = s;
            auto down = s;
            up[i] += 1e-6;
            down[i] -= 1e-6;
            double fd = (kl_loss(up, te, tau) - kl_loss(down, te, tau)) / 2e-6;
            EXPECT_NEAR(g[i], fd, 1e-7);
        }
    }
}

TEST(FlopsLoss, Examples) {
    std::vector<SparseVector> empty{SparseVector(4), SparseVector(4)};
    EXPECT_EQ(flops_loss(empty), 0.0);
    std::vector<SparseVector> one{SparseVector(4, {0}, {2.0})};
    EXPECT_EQ(flops_loss(one), 4.0);
    EXPECT_THROW(flops_loss(std::span<const SparseVector>()), std::domain_error);
    std::vector<SparseVector> mixed{SparseVector(4), SparseVector(5)};
    EXPECT_THROW(flops_loss(mixed), std::domain_error);
}

TEST(FlopsLoss, MatchesDenseOracleAndPermutationInvariant) {
    ts::Rng rng(33);
    for (int t = 0; t < 200; ++t) {
        auto width = static_cast<std::uint32_t>(ts::integer(rng, 1, 64));
        std::vector<SparseVector> reps;
        for (std::size_t n = ts::integer(rng, 1, 10); n > 0; --n) {
            reps.push_back(ts::random_sparse(rng, width, ts::integer(rng, 0, width)));
        }
        double expect = 0.0;
        for (std::uint32_t j = 0; j < width; ++j) {
            double mean = 0.0;
            for (const auto& r : reps) mean += r.to_dense()[j];
            mean /= static_cast<double>(reps.size());
            expect += mean * mean;
        }
        double got = flops_loss(reps);
        EXPECT_TRUE(ts::rel_close(got, expect, 1e-10));
        std::shuffle(reps.begin(), reps.end(), rng);
        EXPECT_TRUE(ts::rel_close(flops_loss(reps), got, 1e-12));
    }
}

TEST(StudentScores, SelfDotAndDisjointSupport) {
    auto p = SaeParams::zeros(2, 4);
    p.w_enc(0, 0) = 1.0;
    p.w_enc(1, 0) = 0.5;
    p.w_enc(2, 1) = 1.0;
    p.w_enc(3, 1) = 2.0;
    TrainingBatch b;
    b.query_h = HiddenStateMatrix(1, 2);
    b.query_h(0, 0) = 1.0;
    HiddenStateMatrix other(1, 2);
    other(0, 1) = 1.0;
    b.docs_h = {b.query_h, other};
    b.teacher_scores = {1.0, 0.0};
    auto s = student_scores(p, b);
    auto u = encode_sequence(p, b.query_h);
    EXPECT_EQ(s[0], dot(u, u));
    EXPECT_GT(s[0], 0.0);
    EXPECT_EQ(s[1], 0.0);
}

TEST(StudentScores, MatchesDensePipelineOracle) {
    ts::Rng rng(34);
    for (int t = 0; t < 100; ++t) {
        auto d = ts::integer(rng, 1, 8);
        auto width = ts::integer(rng, 2, 48);
        auto p = ts::random_sae(rng, d, width, ts::random_activation(rng, width, t % 3));
        auto b = random_batch(rng, d, ts::integer(rng, 2, 5));
        auto s = student_scores(p, b);
        auto uq = dense_pool(p, b.query_h);
        for (std::size_t i = 0; i < b.size(); ++i) {
            auto ud = dense_pool(p, b.docs_h[i]);
            double expect = 0.0;
            for (std::size_t j = 0; j < width; ++j) expect += uq[j] * ud[j];
            EXPECT_TRUE(ts::rel_close(s[i], expect, 1e-8));
        }
    }
}

TEST(StudentScores, CapsApplyOnlyWhenRequested) {
    ts::Rng rng(35);
    auto p = ts::random_sae(rng, 4, 40);
    auto b = random_batch(rng, 4, 3);
    auto full = student_scores(p, b);
    auto capped = student_scores(p, b, std::pair<std::size_t, std::size_t>{1, 1});
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_LE(capped[i], full[i] + 1e-12);
    EXPECT_THROW(student_scores(SaeParams::zeros(5, 4), b), std::domain_error);
}

TEST(StudentScores, ArgmaxStableUnderScalingWithTau) {
    ts::Rng rng(36);
    for (int t = 0; t < 50; ++t) {
        auto p = ts::random_sae(rng, 4, 16);
        auto b = random_batch(rng, 4, 4);
        auto s = student_scores(p, b);
        double c = ts::uniform(rng, 0.1, 10);
        std::vector<double> scaled;
        for (double v : s) scaled.push_back(v * c);
        // Scaling scores and tau together leaves the student distribution fixed.
        EXPECT_NEAR(kl_loss(scaled, b.teacher_scores, 2.0 * c), kl_loss(s, b.teacher_scores, 2.0),
                    1e-12);
        EXPECT_EQ(std::max_element(scaled.begin(), scaled.end()) - scaled.begin(),
                  std::max_element(s.begin(), s.end()) - s.begin());
    }
}

TEST(TotalLoss, ZeroForMatchedTeacherWithoutRegularisation) {
    ts::Rng rng(37);
    auto p = ts::random_sae(rng, 4, 16);
    auto b = random_batch(rng, 4, 3);
    LossConfig cfg{.tau = 5.0, .lambda_q = 0.0, .lambda_d = 0.0};
    auto s = student_scores(p, b);
    for (std::size_t i = 0; i < s.size(); ++i) b.teacher_scores[i] = s[i] / cfg.tau;
    auto r = total_loss(p, std::span<const TrainingBatch>(&b, 1), cfg);
    EXPECT_NEAR(r.loss, 0.0, 1e-12);
    for (double g : r.grad.w_enc.values()) EXPECT_NEAR(g, 0.0, 1e-12);
    for (double g : r.grad.b_enc) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(TotalLoss, IsKlPlusWeightedFlops) {
    ts::Rng rng(38);
    auto p = ts::random_sae(rng, 3, 20);
    std::vector<TrainingBatch> mb{random_batch(rng, 3, 3), random_batch(rng, 3, 2)};
    LossConfig cfg{.tau = 2.0, .lambda_q = 0.3, .lambda_d = 0.7};
    auto r = total_loss(p, std::span<const TrainingBatch>(mb), cfg);
    double kl = 0.0;
    std::vector<SparseVector> qs;
    std::vector<SparseVector> ds;
    for (const auto& b : mb) {
        kl += kl_loss(student_scores(p, b), b.teacher_scores, cfg.tau) / 2.0;
        qs.push_back(encode_sequence(p, b.query_h));
        for (const auto& h : b.docs_h) ds.push_back(encode_sequence(p, h));
    }
    EXPECT_NEAR(r.kl, kl, 1e-12);
    EXPECT_NEAR(r.flops_q, flops_loss(qs), 1e-12);
    EXPECT_NEAR(r.flops_d, flops_loss(ds), 1e-12);
    EXPECT_NEAR(r.loss, kl + 0.3 * flops_loss(qs) + 0.7 * flops_loss(ds), 1e-12);

    auto more = cfg;
    more.lambda_d = 0.8;
    if (r.flops_d > 0.0) {
        EXPECT_GT(total_loss(p, std::span<const TrainingBatch>(mb), more).loss, r.loss);
    }
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
    ts::Rng rng(39);
    for (int t = 0; t < 15; ++t) {
        auto c = ts::random_grad_case(rng, t % 3);
        auto rep = ts::check_gradient(c);
        EXPECT_LE(rep.worst, ts::kFdRelTol) << "case " << t;
        EXPECT_GT(rep.checked, 0U);
    }
}

TEST(TotalLoss, RejectsBadConfigAndBatches) {
    ts::Rng rng(40);
    auto p = ts::random_sae(rng, 3, 8);
    auto b = random_batch(rng, 3, 2);
    std::span<const TrainingBatch> one(&b, 1);
    EXPECT_THROW(total_loss(p, one, LossConfig{.tau = 0.0}), std::domain_error);
    EXPECT_THROW(total_loss(p, one, LossConfig{.lambda_q = -1.0}), std::domain_error);
    EXPECT_THROW(total_loss(p, std::span<const TrainingBatch>(), LossConfig{}), std::domain_error);
    auto single = b;
    single.docs_h.pop_back();
    single.teacher_scores.pop_back();
    EXPECT_THROW(total_loss(p, std::span<const TrainingBatch>(&single, 1), LossConfig{}),
                 std::domain_error);
    auto wrong_d = random_batch(rng, 4, 2);
    EXPECT_THROW(total_loss(p, std::span<const TrainingBatch>(&wrong_d, 1), LossConfig{}),
                 std::domain_error);
}

TEST(Optimizer, WarmupSchedule) {
    OptimizerConfig opt;
    opt.steps = 500;
    EXPECT_DOUBLE_EQ(opt.lr_at(1), opt.lr / 5.0);
    EXPECT_DOUBLE_EQ(opt.lr_at(5), opt.lr);
    EXPECT_DOUBLE_EQ(opt.lr_at(400), opt.lr);
    opt.warmup_ratio = 0.0;
    EXPECT_DOUBLE_EQ(opt.lr_at(1), opt.lr);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
    auto pipe = synth::make_pipeline({.train_queries = 16});
    OptimizerConfig opt;
    opt.lr = 0.0;
    opt.steps = 7;
    opt.batch_size = 4;
    auto out = train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt);
    EXPECT_EQ(out.params, pipe.sae);
    EXPECT_EQ(out.step, 7U);
}

TEST(Train, DeterministicGivenSeed) {
    auto pipe = synth::make_pipeline({.train_queries = 24});
    OptimizerConfig opt;
    opt.steps = 6;
    opt.batch_size = 5;
    opt.seed = 3;
    std::vector<double> losses_a;
    std::vector<double> losses_b;
    auto a = train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt,
                   [&](const StepLog& s) { losses_a.push_back(s.loss); });
    auto b = train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt,
                   [&](const StepLog& s) { losses_b.push_back(s.loss); });
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(losses_a, losses_b);
    EXPECT_EQ(losses_a.size(), 6U);
    EXPECT_NE(a.params, pipe.sae);
    // Decoder and activation are never trained.
    EXPECT_EQ(a.params.w_dec, pipe.sae.w_dec);
    EXPECT_EQ(a.params.b_dec, pipe.sae.b_dec);
}

TEST(Train, ResumingMatchesUninterruptedRun) {
    auto pipe = synth::make_pipeline({.train_queries = 1});
    OptimizerConfig opt;
    opt.batch_size = 1;
    opt.steps = 4;
    auto straight = train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt);
    opt.steps = 2;  // warmup is still one step
    auto half = train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt);
    EXPECT_EQ(half.step, 2U);
    auto resumed = train(half, pipe.training, LossConfig{}, opt);
    EXPECT_EQ(resumed.step, 4U);
    EXPECT_EQ(resumed.params, straight.params);
    EXPECT_EQ(resumed.adam_m, straight.adam_m);
}

TEST(Train, DivergenceReportsLastFiniteState) {
    auto pipe = synth::make_pipeline({.train_queries = 4});
    OptimizerConfig opt;
    opt.lr = 1e308;  // Adam moves each weight by about lr, so step 2 overflows
    opt.steps = 5;
    opt.batch_size = 4;
    opt.warmup_ratio = 0.0;
    try {
        (void)train(TrainState::init(pipe.sae), pipe.training, LossConfig{}, opt);
        FAIL() << "expected divergence";
    } catch (const TrainingDiverged& e) {
        EXPECT_GE(e.last_good().step, 1U);
        EXPECT_TRUE(e.last_good().params.w_enc.all_finite());
    }
}

TEST(Train, RejectsEmptyCorpus) {
    auto p = SaeParams::zeros(2, 2);
    EXPECT_THROW(train(TrainState::init(p), std::span<const TrainingBatch>(), LossConfig{},
                       OptimizerConfig{}),
                 std::domain_error);
}
