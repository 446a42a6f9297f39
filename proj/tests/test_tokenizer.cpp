#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hiwave/rng.hpp"
#include "hiwave/tokenizer.hpp"
#include "testutil.hpp"

using namespace hiwave;

namespace {

Tensor random_windows(long n, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(n * 9 * 128));
    for (auto& x : v) x = rng.uniform(-1.5, 1.5);
    return Tensor::from_data({n, 9, 128}, std::move(v));
}

}  // namespace

TEST(Patches, GeometryAndContent) {
    TokenizerConfig cfg;
    EXPECT_EQ(cfg.num_patches(), 15);  // (128 - 16) / 8 + 1

    std::vector<double> w(9 * 128);
    for (long c = 0; c < 9; ++c)
        for (long t = 0; t < 128; ++t) w[static_cast<std::size_t>(c * 128 + t)] = c * 1000.0 + t;
    Tensor window = Tensor::from_data({9, 128}, w);
    Tensor patches = extract_patches(window, cfg);
    ASSERT_EQ(patches.shape(), (Shape{15, 9, 16}));

    // patch i covers samples [8i, 8i + 16)
    for (long i : {0L, 7L, 14L})
        for (long c = 0; c < 9; ++c)
            for (long t = 0; t < 16; ++t)
                EXPECT_EQ(patches[(i * 9 + c) * 16 + t], c * 1000.0 + (8 * i + t));
}

TEST(Patches, ConstantWindowGivesConstantPatches) {
    TokenizerConfig cfg;
    Tensor window = Tensor::full({9, 128}, 3.5);
    Tensor patches = extract_patches(window, cfg);
    for (long i = 0; i < patches.numel(); ++i) EXPECT_EQ(patches[i], 3.5);
}

TEST(Patches, WrongLengthRejected) {
    TokenizerConfig cfg;
    EXPECT_THROW(extract_patches(Tensor::zeros({9, 100}), cfg), DimensionError);
    EXPECT_THROW(extract_patches(Tensor::zeros({8, 128}), cfg), DimensionError);
}

TEST(Gem, ConstantAndSimpleInputs) {
    Tensor p1 = Tensor::from_data({1}, {1.0});
    Tensor p2 = Tensor::from_data({1}, {2.0});
    Tensor ones = Tensor::from_data({2}, {1.0, 1.0});
    // constant input pools to itself for any p
    for (double pv : {0.7, 1.0, 3.0, 9.0})
        EXPECT_NEAR(gem(ones, Tensor::from_data({1}, {pv})).item(), 1.0, 2e-6);

    Tensor x = Tensor::from_data({2}, {0.0, 2.0});
    EXPECT_NEAR(gem(x, p1).item(), 1.0, 1e-5);
    EXPECT_NEAR(gem(x, p2).item(), std::sqrt(2.0), 1e-5);
}

TEST(Gem, MatchesDirectScalarEvaluation) {
    Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> vals(4);
        for (auto& v : vals) v = rng.uniform(-2.0, 2.0);
        const double pv = rng.uniform(0.6, 9.5);
        const double eps = GemPool::kEps;
        double acc = 0.0;
        for (double v : vals) acc += std::pow(std::fabs(v) + eps, pv);
        const double expect = std::pow(acc / 4.0, 1.0 / pv);
        const double got = gem(Tensor::from_data({4}, vals), Tensor::from_data({1}, {pv})).item();
        EXPECT_NEAR(got, expect, 1e-12);
    }
}

TEST(Gem, GradMatchesFiniteDifferencesInPAndX) {
    Tensor x = Tensor::from_data({2}, {0.5, 2.0}, true);
    Tensor p = Tensor::from_data({1}, {3.0}, true);
    gem(x, p).backward();
    auto fd_p = testutil::numeric_grad([&] { return gem(x, p).item(); }, p);
    auto fd_x = testutil::numeric_grad([&] { return gem(x, p).item(); }, x);
    EXPECT_LT(testutil::max_rel_err(p.grad(), fd_p), 1e-5);
    EXPECT_LT(testutil::max_rel_err(x.grad(), fd_x), 1e-5);
}

TEST(Gem, PGradientFiniteOnAllZeroPacket) {
    Tensor x = Tensor::zeros({2});
    Tensor p = Tensor::from_data({1}, {3.0}, true);
    Tensor y = gem(x, p);
    EXPECT_NEAR(y.item(), GemPool::kEps, 1e-9);
    y.backward();
    EXPECT_TRUE(std::isfinite(p.grad()[0]));
}

TEST(Gem, ClampAppliedInForward) {
    Tensor x = Tensor::from_data({2}, {0.5, 2.0});
    // p beyond the range behaves like the clamped endpoint
    const double hi = gem(x, Tensor::from_data({1}, {25.0})).item();
    const double at_max = gem(x, Tensor::from_data({1}, {10.0})).item();
    EXPECT_DOUBLE_EQ(hi, at_max);
}

TEST(Gem, PowerMeanMonotoneInP) {
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> vals(4);
        for (auto& v : vals) v = rng.uniform(-3.0, 3.0);
        Tensor x = Tensor::from_data({4}, vals);
        const double g1 = gem(x, Tensor::from_data({1}, {1.0})).item();
        const double g2 = gem(x, Tensor::from_data({1}, {2.0})).item();
        const double g4 = gem(x, Tensor::from_data({1}, {4.0})).item();
        double mx = 0.0;
        for (double v : vals) mx = std::max(mx, std::fabs(v));
        EXPECT_LE(g1, g2 + 1e-12);
        EXPECT_LE(g2, g4 + 1e-12);
        EXPECT_LE(g4, mx + 2.0 * GemPool::kEps);
    }
}

TEST(Gem, InvariantToSignFlipsAndPermutations) {
    Rng rng(3);
    std::vector<double> vals = {0.3, -1.2, 2.5, -0.7};
    Tensor p = Tensor::from_data({1}, {2.7});
    const double base = gem(Tensor::from_data({4}, vals), p).item();

    auto flipped = vals;
    for (auto& v : flipped) v = -v;
    EXPECT_DOUBLE_EQ(gem(Tensor::from_data({4}, flipped), p).item(), base);

    auto perm = vals;
    for (int rep = 0; rep < 5; ++rep) {
        rng.shuffle(perm);
        EXPECT_DOUBLE_EQ(gem(Tensor::from_data({4}, perm), p).item(), base);
    }
}

TEST(Gem, AtPOneWithZeroEpsEqualsMeanOfMagnitudes) {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> vals(8);
        for (auto& v : vals) v = rng.uniform(-2.0, 2.0);
        Tensor x = Tensor::from_data({8}, vals);
        const double got = gem(x, Tensor::from_data({1}, {1.0}), /*eps=*/0.0).item();
        const double avg = mean(abs(x), -1).item();
        EXPECT_NEAR(got, avg, 1e-9);
    }
}

TEST(TokenDims, AllSevenConfigurations) {
    struct Case {
        const char* name;
        long token_dim, wavelet_dim, pool_params;
    };
    const Case cases[] = {
        {"baseline", 144, 0, 0},
        {"hybrid-L3-db2-gem", 216, 72, 8},
        {"replacement-L3-db2-gem", 72, 72, 8},
        {"hybrid-L2-db2-gem", 180, 36, 4},
        {"hybrid-pyramid-db2-gem", 270, 126, 14},
        {"hybrid-L3-db4-gem", 216, 72, 8},
        {"hybrid-L3-db2-avg", 216, 72, 0},
    };
    for (const auto& c : cases) {
        TokenizerConfig cfg = tokenizer_for_variant(c.name);
        cfg.validate();
        EXPECT_EQ(cfg.token_dim(), c.token_dim) << c.name;
        EXPECT_EQ(cfg.wavelet_dim(), c.wavelet_dim) << c.name;
        EXPECT_EQ(cfg.pooling_param_count(), c.pool_params) << c.name;
        GemPool pool = make_gem_pool(cfg);
        EXPECT_EQ(static_cast<long>(pool.p.size()), c.pool_params) << c.name;
    }
    EXPECT_THROW(tokenizer_for_variant("hybrid-L5"), ConfigError);
}

TEST(WaveletToken, ConstantPatchChampion) {
    TokenizerConfig cfg;  // champion
    GemPool pool = make_gem_pool(cfg);
    Tensor patch = Tensor::full({1, 9, 16}, 1.0);
    Tensor z = wavelet_token(patch, cfg, pool);
    ASSERT_EQ(z.shape(), (Shape{1, 72}));
    for (long c = 0; c < 9; ++c) {
        EXPECT_NEAR(z[c * 8 + 0], 2.0 * std::sqrt(2.0), 1e-5) << "channel " << c;
        for (long k = 1; k < 8; ++k) EXPECT_LT(std::fabs(z[c * 8 + k]), 1e-5);
    }
}

TEST(WaveletToken, BaselineVariantRejected) {
    TokenizerConfig cfg = tokenizer_for_variant("baseline");
    GemPool pool = make_gem_pool(cfg);
    EXPECT_THROW(wavelet_token(Tensor::zeros({1, 9, 16}), cfg, pool), ConfigError);
}

TEST(HybridToken, TemporalComesFirstAndIsChannelMajor) {
    TokenizerConfig cfg;
    GemPool pool = make_gem_pool(cfg);
    std::vector<double> v(9 * 16);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    Tensor patch = Tensor::from_data({1, 9, 16}, v);
    Tensor tok = hybrid_token(patch, cfg, pool);
    ASSERT_EQ(tok.shape(), (Shape{1, 216}));
    for (long i = 0; i < 144; ++i) EXPECT_EQ(tok[i], static_cast<double>(i));
}

TEST(Tokenize, FullPipelineShapes) {
    Rng rng(5);
    Tensor windows = random_windows(2, rng);
    for (const auto& name : variant_names()) {
        TokenizerConfig cfg = tokenizer_for_variant(name);
        GemPool pool = make_gem_pool(cfg);
        Tensor toks = tokenize(windows, cfg, pool);
        EXPECT_EQ(toks.shape(), (Shape{2, 15, cfg.token_dim()})) << name;
    }
}

TEST(Tokenize, PrecomputedPathMatchesDirectPath) {
    Rng rng(6);
    Tensor windows = random_windows(3, rng);
    for (const char* name : {"hybrid-L3-db2-gem", "baseline", "replacement-L3-db2-gem",
                             "hybrid-pyramid-db2-gem", "hybrid-L3-db2-avg"}) {
        TokenizerConfig cfg = tokenizer_for_variant(name);
        GemPool pool = make_gem_pool(cfg);
        Tensor direct = tokenize(windows, cfg, pool);

        TokenizerState st = precompute_tokens(windows, cfg);
        std::vector<long> idx = {0, 1, 2};
        Tensor assembled = assemble_tokens(st, idx, cfg, pool);
        ASSERT_EQ(assembled.shape(), direct.shape()) << name;
        for (long i = 0; i < direct.numel(); ++i)
            EXPECT_EQ(assembled[i], direct[i]) << name << " at " << i;
    }
}

TEST(Tokenize, GatherReordersRows) {
    Rng rng(7);
    Tensor windows = random_windows(4, rng);
    TokenizerConfig cfg;
    GemPool pool = make_gem_pool(cfg);
    TokenizerState st = precompute_tokens(windows, cfg);
    Tensor all = assemble_tokens(st, std::vector<long>{0, 1, 2, 3}, cfg, pool);
    Tensor some = assemble_tokens(st, std::vector<long>{2, 0}, cfg, pool);
    const long row = 15 * cfg.token_dim();
    for (long i = 0; i < row; ++i) {
        EXPECT_EQ(some[i], all[2 * row + i]);
        EXPECT_EQ(some[row + i], all[i]);
    }
}

TEST(Tokenize, GemExponentsReceiveGradient) {
    Rng rng(8);
    Tensor windows = random_windows(2, rng);
    TokenizerConfig cfg;
    GemPool pool = make_gem_pool(cfg);
    Tensor toks = tokenize(windows, cfg, pool);
    EXPECT_TRUE(toks.requires_grad());
    sum_all(toks).backward();
    for (const auto& p : pool.p) {
        ASSERT_TRUE(p.has_grad());
        EXPECT_NE(p.grad()[0], 0.0);
    }
}
