#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <unistd.h>

#include "hiwave/data.hpp"

using namespace hiwave;
namespace fs = std::filesystem;

namespace {

// Two-window fixture with exactly representable values; channel c, window i,
// sample t carries 100*c + 10*i + t/64 so ordering bugs show up as value bugs.
class FixtureDir : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() / ("hiwave_fixture_" + std::to_string(::getpid()));
        for (const std::string split : {"train", "test"}) {
            fs::create_directories(root_ / split / "Inertial Signals");
            for (std::size_t c = 0; c < har_channel_names().size(); ++c) {
                std::ofstream out(root_ / split / "Inertial Signals" /
                                  (har_channel_names()[c] + "_" + split + ".txt"));
                out << std::setprecision(17);
                for (int i = 0; i < 2; ++i) {
                    for (int t = 0; t < 128; ++t)
                        out << (t ? " " : "") << value(static_cast<long>(c), i, t);
                    out << "\n";
                }
            }
            std::ofstream y(root_ / split / ("y_" + split + ".txt"));
            y << "3\n5\n";
            std::ofstream s(root_ / split / ("subject_" + split + ".txt"));
            s << "7\n21\n";
        }
    }

    void TearDown() override { fs::remove_all(root_); }

    static double value(long c, long i, long t) {
        return 100.0 * static_cast<double>(c) + 10.0 * static_cast<double>(i) +
               static_cast<double>(t) / 64.0;
    }

    fs::path root_;
};

}  // namespace

TEST_F(FixtureDir, RoundTripsExactValuesAndMetadata) {
    auto [train, test] = load_ucihar(root_);
    EXPECT_EQ(train.count, 2);
    EXPECT_EQ(test.count, 2);
    EXPECT_EQ(train.split, "train");

    for (long i = 0; i < 2; ++i)
        for (long c = 0; c < kHarChannels; ++c)
            for (long t = 0; t < kHarWindowLen; ++t)
                ASSERT_EQ(train.signals[(i * kHarChannels + c) * kHarWindowLen + t], value(c, i, t));

    EXPECT_EQ(train.labels, (std::vector<int>{2, 4}));  // zero-based
    EXPECT_EQ(train.subjects, (std::vector<int>{7, 21}));

    HarWindow w = train.window(1);
    EXPECT_EQ(w.label, 4);
    EXPECT_EQ(w.subject, 21);
    EXPECT_EQ(w.signal[0], value(0, 1, 0));
}

TEST_F(FixtureDir, ReloadIsIdempotent) {
    auto [a_train, a_test] = load_ucihar(root_);
    auto [b_train, b_test] = load_ucihar(root_);
    EXPECT_EQ(a_train.signals, b_train.signals);
    EXPECT_EQ(a_test.signals, b_test.signals);
    EXPECT_EQ(a_train.labels, b_train.labels);
}

TEST_F(FixtureDir, MissingFileErrorNamesTheFile) {
    fs::remove(root_ / "train" / "Inertial Signals" / "body_gyro_y_train.txt");
    try {
        load_ucihar(root_);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("body_gyro_y_train.txt"), std::string::npos);
    }
}

TEST_F(FixtureDir, TruncatedRowReportsRowIndex) {
    {
        std::ofstream out(root_ / "train" / "Inertial Signals" / "total_acc_z_train.txt",
                          std::ios::app);
        out << "1.0 2.0 3.0\n";
    }
    try {
        load_ucihar(root_);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
    }
}

TEST_F(FixtureDir, RowCountMismatchAcrossChannelsDetected) {
    {
        std::ofstream out(root_ / "train" / "Inertial Signals" / "body_acc_x_train.txt",
                          std::ios::app);
        for (int t = 0; t < 128; ++t) out << (t ? " " : "") << 0.0;
        out << "\n";
    }
    EXPECT_THROW(load_ucihar(root_), DataError);
}

TEST_F(FixtureDir, LabelOutOfRangeRejected) {
    {
        std::ofstream y(root_ / "train" / "y_train.txt");
        y << "3\n7\n";
    }
    EXPECT_THROW(load_ucihar(root_), DataError);
}

TEST_F(FixtureDir, StandardizeZeroesMeanAndUnitStd) {
    auto [train, test] = load_ucihar(root_);
    ChannelStats stats = compute_stats(train);
    EXPECT_EQ(stats.source_split, "train");
    standardize(train, stats);
    for (long c = 0; c < kHarChannels; ++c) {
        double sum = 0.0, sq = 0.0;
        const long n = train.count * kHarWindowLen;
        for (long i = 0; i < train.count; ++i)
            for (long t = 0; t < kHarWindowLen; ++t) {
                const double v = train.signals[(i * kHarChannels + c) * kHarWindowLen + t];
                sum += v;
                sq += v * v;
            }
        EXPECT_NEAR(sum / n, 0.0, 1e-9) << "channel " << c;
        EXPECT_NEAR(sq / n, 1.0, 1e-9) << "channel " << c;
    }
}

TEST_F(FixtureDir, TestSplitStatsRejected) {
    auto [train, test] = load_ucihar(root_);
    ChannelStats wrong = compute_stats(test);
    EXPECT_THROW(standardize(train, wrong), UsageError);
}

TEST_F(FixtureDir, CacheRoundTripIsExact) {
    auto [train, test] = load_ucihar(root_);
    const fs::path cache = root_ / "train.bin";
    save_cache(train, cache);
    DatasetSplit loaded = load_cache(cache, "train");
    EXPECT_EQ(loaded.count, train.count);
    EXPECT_EQ(loaded.signals, train.signals);
    EXPECT_EQ(loaded.labels, train.labels);
    EXPECT_EQ(loaded.subjects, train.subjects);
    EXPECT_THROW(load_cache(root_ / "nope.bin", "train"), DataError);
}

TEST(Batches, CountOrderAndDeterminism) {
    auto batches = epoch_batches(7352, 64, nullptr);
    EXPECT_EQ(batches.size(), 115u);  // ceil(7352 / 64)
    EXPECT_EQ(batches.back().size(), 7352u - 114u * 64u);
    EXPECT_EQ(batches[0][0], 0);  // unshuffled order preserves file order

    Rng r1(9), r2(9), r3(10);
    auto a = epoch_batches(1000, 64, &r1);
    auto b = epoch_batches(1000, 64, &r2);
    auto c = epoch_batches(1000, 64, &r3);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);

    // shuffle is a permutation
    std::vector<long> seen(1000, 0);
    for (const auto& batch : a)
        for (long i : batch) ++seen[static_cast<std::size_t>(i)];
    for (long s : seen) EXPECT_EQ(s, 1);
}

TEST(Batches, LastPartialBatchKept) {
    auto batches = epoch_batches(10, 4, nullptr);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[2].size(), 2u);
}
