#include <gtest/gtest.h>

#include <cmath>

#include "hiwave/trainer.hpp"
#include "testutil.hpp"

using namespace hiwave;

namespace {

// Small synthetic dataset whose label is recoverable from the window: class k
// windows carry a distinctive constant offset plus noise.
DatasetSplit synthetic_split(const std::string& name, long count, std::uint64_t seed) {
    DatasetSplit ds;
    ds.split = name;
    ds.count = count;
    ds.signals.resize(static_cast<std::size_t>(count * kHarChannels * kHarWindowLen));
    Rng rng(seed);
    for (long i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % kHarClasses);
        ds.labels.push_back(label);
        ds.subjects.push_back(1 + static_cast<int>(i % 30));
        for (long c = 0; c < kHarChannels; ++c)
            for (long t = 0; t < kHarWindowLen; ++t) {
                const double base = (c % kHarClasses == label) ? 1.0 : -0.2;
                ds.signals[(i * kHarChannels + c) * kHarWindowLen + t] =
                    base + 0.05 * rng.normal();
            }
    }
    return ds;
}

TrainConfig tiny_train_config(long epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.seeds = {0};
    return cfg;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLogSix) {
    Tensor logits = Tensor::zeros({4, 6});
    std::vector<int> labels = {0, 1, 2, 3};
    EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(6.0), 1e-12);
}

TEST(CrossEntropy, ConfidentLogitsDriveLossToZero) {
    std::vector<double> v(6, 0.0);
    v[2] = 50.0;
    Tensor logits = Tensor::from_data({1, 6}, v);
    std::vector<int> labels = {2};
    EXPECT_LT(cross_entropy(logits, labels).item(), 1e-12);
}

TEST(CrossEntropy, StableUnderLargeLogits) {
    Tensor logits = Tensor::from_data({1, 6}, {1000.0, 999.0, 998.0, 0.0, -1000.0, 500.0});
    std::vector<int> labels = {0};
    const double loss = cross_entropy(logits, labels).item();
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, std::log(1 + std::exp(-1.0) + std::exp(-2.0)), 1e-9);
}

TEST(CrossEntropy, GradMatchesFiniteDifferences) {
    Rng rng(1);
    std::vector<double> v(12);
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    Tensor logits = Tensor::from_data({2, 6}, v, true);
    std::vector<int> labels = {3, 0};
    cross_entropy(logits, labels).backward();
    auto fd = testutil::numeric_grad([&] { return cross_entropy(logits, labels).item(); }, logits);
    EXPECT_LT(testutil::max_rel_err(logits.grad(), fd), 1e-6);
}

TEST(CrossEntropy, BadLabelsRejected) {
    Tensor logits = Tensor::zeros({1, 6});
    EXPECT_THROW(cross_entropy(logits, std::vector<int>{6}), ConfigError);
    EXPECT_THROW(cross_entropy(logits, std::vector<int>{-1}), ConfigError);
    EXPECT_THROW(cross_entropy(Tensor::zeros({2, 6}), std::vector<int>{0}), DimensionError);
}

TEST(AdamWStep, ZeroGradLeavesZeroParameterUnchanged) {
    Tensor w = Tensor::zeros({3}, true);
    w.node()->grad.assign(3, 0.0);
    TrainConfig cfg;
    AdamW opt({{"w", w, true}}, cfg);
    opt.step();
    EXPECT_EQ(w.values(), (std::vector<double>{0, 0, 0}));
}

TEST(AdamWStep, FirstStepIsApproximatelyMinusLr) {
    Tensor w = Tensor::zeros({1}, true);
    w.node()->grad.assign(1, 1.0);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt({{"w", w, true}}, cfg);
    opt.step();
    // bias-corrected mhat/sqrt(vhat) = 1 on the first step
    EXPECT_NEAR(w.values()[0], -cfg.lr, 1e-10);
}

TEST(AdamWStep, DecoupledDecayOnlyOnFlaggedParams) {
    Tensor decayed = Tensor::full({1}, 1.0, true);
    Tensor excluded = Tensor::full({1}, 1.0, true);
    decayed.node()->grad.assign(1, 0.0);
    excluded.node()->grad.assign(1, 0.0);
    TrainConfig cfg;
    AdamW opt({{"w", decayed, true}, {"p", excluded, false}}, cfg);
    opt.step();
    EXPECT_DOUBLE_EQ(decayed.values()[0], 1.0 - cfg.lr * cfg.weight_decay);
    EXPECT_DOUBLE_EQ(excluded.values()[0], 1.0);
}

TEST(AdamWStep, NonFiniteGradientAborts) {
    Tensor w = Tensor::zeros({1}, true);
    w.node()->grad.assign(1, std::numeric_limits<double>::quiet_NaN());
    TrainConfig cfg;
    AdamW opt({{"w", w, true}}, cfg);
    EXPECT_THROW(opt.step(), NumericError);
}

TEST(AdamWStep, MatchesHandComputedRecurrenceForTwoSteps) {
    Tensor w = Tensor::full({1}, 0.5, true);
    TrainConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt({{"w", w, true}}, cfg);

    double m = 0, v = 0, theta = 0.5;
    for (int t = 1; t <= 2; ++t) {
        const double g = 0.3 * t;
        w.node()->grad.assign(1, g);
        opt.step();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1 - std::pow(0.9, t));
        const double vhat = v / (1 - std::pow(0.999, t));
        theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        EXPECT_NEAR(w.values()[0], theta, 1e-15);
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.seeds = {1, 1};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.seeds = {};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.seeds = {0};
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainOne, DeterministicAcrossIdenticalRuns) {
    DatasetSplit train = synthetic_split("train", 32, 100);
    DatasetSplit test = synthetic_split("test", 16, 200);
    TokenizerConfig tcfg;
    ModelConfig mcfg;
    PreparedSplit ptrain = prepare_split(train, tcfg);
    PreparedSplit ptest = prepare_split(test, tcfg);

    RunRecord a = train_one("champion", mcfg, tcfg, tiny_train_config(2), ptrain, ptest, 7);
    RunRecord b = train_one("champion", mcfg, tcfg, tiny_train_config(2), ptrain, ptest, 7);
    EXPECT_EQ(a.train_loss, b.train_loss);
    EXPECT_EQ(a.train_acc, b.train_acc);
    EXPECT_EQ(a.test_accuracy, b.test_accuracy);
    EXPECT_EQ(a.gem_p, b.gem_p);
    EXPECT_EQ(a.param_count, 164430);

    RunRecord c = train_one("champion", mcfg, tcfg, tiny_train_config(2), ptrain, ptest, 8);
    EXPECT_NE(a.train_loss, c.train_loss);
}

TEST(TrainOne, InitialLossNearLogSix) {
    DatasetSplit train = synthetic_split("train", 64, 300);
    TokenizerConfig tcfg;
    ModelConfig mcfg;
    PreparedSplit ptrain = prepare_split(train, tcfg);
    Classifier model = build(mcfg, tcfg, 0);
    std::vector<long> idx(64);
    for (long i = 0; i < 64; ++i) idx[static_cast<std::size_t>(i)] = i;
    Tensor tokens = assemble_tokens(ptrain.state, idx, tcfg, model.pool);
    const double loss = cross_entropy(model.forward(tokens), ptrain.labels).item();
    EXPECT_NEAR(loss, std::log(6.0), 0.15);
}

TEST(TrainOne, EveryParameterSeesGradientWithinFirstEpoch) {
    DatasetSplit train = synthetic_split("train", 32, 400);
    TokenizerConfig tcfg;
    ModelConfig mcfg;
    PreparedSplit ptrain = prepare_split(train, tcfg);
    Classifier model = build(mcfg, tcfg, 1);
    Rng rng(1);

    std::vector<double> accum(model.parameters().size(), 0.0);
    for (const auto& batch : epoch_batches(ptrain.state.count, 16, &rng)) {
        std::vector<int> labels;
        for (long i : batch) labels.push_back(ptrain.labels[static_cast<std::size_t>(i)]);
        Tensor tokens = assemble_tokens(ptrain.state, batch, tcfg, model.pool);
        Tensor loss = cross_entropy(model.forward(tokens, true, &rng), labels);
        loss.backward();
        auto params = model.parameters();
        for (std::size_t p = 0; p < params.size(); ++p)
            if (params[p].tensor.has_grad())
                for (double g : params[p].tensor.grad()) accum[p] += std::fabs(g);
        for (auto& p : params) p.tensor.zero_grad();
    }
    auto params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p)
        EXPECT_GT(accum[p], 0.0) << params[p].name;
}

TEST(TrainOne, OverfitsTinySyntheticSet) {
    DatasetSplit train = synthetic_split("train", 24, 500);
    TokenizerConfig tcfg;
    ModelConfig mcfg;
    mcfg.dropout = 0.0;
    PreparedSplit ptrain = prepare_split(train, tcfg);
    TrainConfig cfg = tiny_train_config(40);
    RunRecord rec = train_one("overfit", mcfg, tcfg, cfg, ptrain, ptrain, 3);
    EXPECT_GE(rec.train_acc.back(), 0.95);
    EXPECT_LT(rec.train_loss.back(), rec.train_loss.front());
}

TEST(TrainOne, GemExponentsMove) {
    DatasetSplit train = synthetic_split("train", 32, 600);
    TokenizerConfig tcfg;
    ModelConfig mcfg;
    PreparedSplit ptrain = prepare_split(train, tcfg);
    RunRecord rec = train_one("champion", mcfg, tcfg, tiny_train_config(3), ptrain, ptrain, 5);
    ASSERT_EQ(rec.gem_p.size(), 8u);
    bool moved = false;
    for (double p : rec.gem_p) {
        EXPECT_GE(p, GemPool::kPMin);
        EXPECT_LE(p, GemPool::kPMax);
        if (std::fabs(p - 3.0) > 0.0) moved = true;
    }
    EXPECT_TRUE(moved);
}

TEST(Summary, MeanAndSampleStd) {
    std::vector<RunRecord> runs(3);
    runs[0].test_accuracy = 0.90;
    runs[1].test_accuracy = 0.92;
    runs[2].test_accuracy = 0.94;
    for (auto& r : runs) {
        r.param_count = 42;
        r.gem_p = {1.0, 3.0};
    }
    VariantSummary s = summarize_variant("v", runs);
    EXPECT_NEAR(s.mean_acc, 0.92, 1e-12);
    EXPECT_NEAR(s.std_acc, 0.02, 1e-12);  // N-1 denominator
    EXPECT_EQ(s.n_seeds, 3);
    ASSERT_EQ(s.mean_p.size(), 2u);
    EXPECT_NEAR(s.mean_p[0], 1.0, 1e-12);
}

TEST(RunExperiment, StructureAndUnknownVariant) {
    DatasetSplit train = synthetic_split("train", 24, 700);
    DatasetSplit test = synthetic_split("test", 12, 800);
    ModelConfig mcfg;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 12;
    cfg.seeds = {0, 1};

    ExperimentSummary s = run_experiment({"baseline", "hybrid-L3-db2-avg"}, mcfg, cfg, train,
                                         test, /*jobs=*/2);
    ASSERT_EQ(s.variants.size(), 2u);
    EXPECT_EQ(s.runs.size(), 4u);
    EXPECT_EQ(s.variants[0].n_seeds, 2);
    EXPECT_EQ(s.variants[0].param_count, 159814);

    EXPECT_THROW(run_experiment({"nope"}, mcfg, cfg, train, test), ConfigError);
}

TEST(RunExperiment, ParallelMatchesSerial) {
    DatasetSplit train = synthetic_split("train", 24, 900);
    DatasetSplit test = synthetic_split("test", 12, 1000);
    ModelConfig mcfg;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 12;
    cfg.seeds = {0, 1};
    ExperimentSummary serial = run_experiment({"hybrid-L3-db2-gem"}, mcfg, cfg, train, test, 1);
    ExperimentSummary parallel = run_experiment({"hybrid-L3-db2-gem"}, mcfg, cfg, train, test, 2);
    ASSERT_EQ(serial.runs.size(), parallel.runs.size());
    for (std::size_t i = 0; i < serial.runs.size(); ++i) {
        EXPECT_EQ(serial.runs[i].seed, parallel.runs[i].seed);
        EXPECT_EQ(serial.runs[i].test_accuracy, parallel.runs[i].test_accuracy);
        EXPECT_EQ(serial.runs[i].train_loss, parallel.runs[i].train_loss);
    }
}
