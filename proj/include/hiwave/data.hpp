#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "hiwave/errors.hpp"
#include "hiwave/rng.hpp"
#include "hiwave/tensor.hpp"

// UCI-HAR raw Inertial Signals ingestion. Every window is 9 channels x 128
// samples; labels are 1..6 in the files and 0..5 in memory. Channel order is
// fixed: body_acc x/y/z, body_gyro x/y/z, total_acc x/y/z.

namespace hiwave {

constexpr long kHarChannels = 9;
constexpr long kHarWindowLen = 128;
constexpr long kHarClasses = 6;

inline const std::array<std::string, 9>& har_channel_names() {
    static const std::array<std::string, 9> names = {
        "body_acc_x",  "body_acc_y",  "body_acc_z",  "body_gyro_x", "body_gyro_y",
        "body_gyro_z", "total_acc_x", "total_acc_y", "total_acc_z"};
    return names;
}

struct HarWindow {
    std::span<const double> signal;  // [9 x 128] row-major view into the split
    int label;                       // 0..5
    int subject;                     // 1..30
};

struct DatasetSplit {
    std::string split;             // "train" or "test"
    long count = 0;
    std::vector<double> signals;   // [count x 9 x 128]
    std::vector<int> labels;       // 0-based
    std::vector<int> subjects;

    HarWindow window(long i) const {
        return {std::span<const double>(signals.data() + i * kHarChannels * kHarWindowLen,
                                        static_cast<std::size_t>(kHarChannels * kHarWindowLen)),
                labels[static_cast<std::size_t>(i)], subjects[static_cast<std::size_t>(i)]};
    }

    Tensor windows_tensor() const {
        return Tensor::from_data({count, kHarChannels, kHarWindowLen}, signals);
    }
};

struct ChannelStats {
    std::array<double, 9> mean{};
    std::array<double, 9> stddev{};
    std::string source_split;
};

namespace detail {

// One channel file: whitespace-delimited, one window of 128 floats per row.
inline std::vector<double> read_signal_file(const std::filesystem::path& path, long& rows) {
    std::ifstream in(path);
    if (!in) throw DataError("missing or unreadable file: " + path.string());
    std::vector<double> values;
    if (rows > 0) values.reserve(static_cast<std::size_t>(rows * kHarWindowLen));
    std::string line;
    long row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        const char* p = line.c_str();
        char* end = nullptr;
        int n = 0;
        for (;;) {
            double v = std::strtod(p, &end);
            if (end == p) break;
            values.push_back(v);
            ++n;
            p = end;
        }
        if (n != kHarWindowLen)
            throw DataError("corrupt row " + std::to_string(row) + " in " + path.string() +
                            ": expected 128 values, got " + std::to_string(n));
        ++row;
    }
    if (rows > 0 && row != rows)
        throw DataError("row-count mismatch in " + path.string() + ": expected " +
                        std::to_string(rows) + ", got " + std::to_string(row));
    rows = row;
    return values;
}

inline std::vector<int> read_int_file(const std::filesystem::path& path, long rows) {
    std::ifstream in(path);
    if (!in) throw DataError("missing or unreadable file: " + path.string());
    std::vector<int> values;
    int v;
    while (in >> v) values.push_back(v);
    if (static_cast<long>(values.size()) != rows)
        throw DataError("row-count mismatch in " + path.string() + ": expected " +
                        std::to_string(rows) + ", got " + std::to_string(values.size()));
    return values;
}

}  // namespace detail

inline DatasetSplit load_split(const std::filesystem::path& root, const std::string& split) {
    DatasetSplit ds;
    ds.split = split;
    const auto dir = root / split / "Inertial Signals";

    long rows = -1;
    std::vector<std::vector<double>> channels;
    for (const auto& name : har_channel_names()) {
        auto path = dir / (name + "_" + split + ".txt");
        long r = rows;
        channels.push_back(detail::read_signal_file(path, r));
        if (rows > 0 && r != rows)
            throw DataError("row-count mismatch across channel files in " + dir.string());
        rows = r;
    }
    ds.count = rows;

    auto raw_labels = detail::read_int_file(root / split / ("y_" + split + ".txt"), rows);
    ds.labels.reserve(raw_labels.size());
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
        int y = raw_labels[i];
        if (y < 1 || y > kHarClasses)
            throw DataError("label out of range at row " + std::to_string(i) + ": " +
                            std::to_string(y));
        ds.labels.push_back(y - 1);
    }
    ds.subjects = detail::read_int_file(root / split / ("subject_" + split + ".txt"), rows);

    // interleave to [count x channel x sample]
    ds.signals.resize(static_cast<std::size_t>(rows * kHarChannels * kHarWindowLen));
    for (long c = 0; c < kHarChannels; ++c) {
        const auto& src = channels[static_cast<std::size_t>(c)];
        for (long i = 0; i < rows; ++i)
            std::copy_n(src.data() + i * kHarWindowLen, kHarWindowLen,
                        ds.signals.data() + (i * kHarChannels + c) * kHarWindowLen);
    }
    return ds;
}

inline std::pair<DatasetSplit, DatasetSplit> load_ucihar(const std::filesystem::path& root) {
    return {load_split(root, "train"), load_split(root, "test")};
}

// Per-channel mean/std. Statistics must come from the train split only; the
// stats object records its source so misuse is detectable.
inline ChannelStats compute_stats(const DatasetSplit& split) {
    ChannelStats st;
    st.source_split = split.split;
    const long n = split.count * kHarWindowLen;
    for (long c = 0; c < kHarChannels; ++c) {
        double sum = 0.0;
        for (long i = 0; i < split.count; ++i) {
            const double* x = split.signals.data() + (i * kHarChannels + c) * kHarWindowLen;
            for (long t = 0; t < kHarWindowLen; ++t) sum += x[t];
        }
        const double mu = sum / static_cast<double>(n);
        double ss = 0.0;
        for (long i = 0; i < split.count; ++i) {
            const double* x = split.signals.data() + (i * kHarChannels + c) * kHarWindowLen;
            for (long t = 0; t < kHarWindowLen; ++t) ss += (x[t] - mu) * (x[t] - mu);
        }
        double sd = std::sqrt(ss / static_cast<double>(n));
        if (sd == 0.0) {
            std::fprintf(stderr, "warning: channel %ld has zero variance, using sigma=1\n", c);
            sd = 1.0;
        }
        st.mean[static_cast<std::size_t>(c)] = mu;
        st.stddev[static_cast<std::size_t>(c)] = sd;
    }
    return st;
}

inline void standardize(DatasetSplit& split, const ChannelStats& stats) {
    if (stats.source_split != "train")
        throw UsageError("standardize: statistics must be computed on the train split, got '" +
                         stats.source_split + "'");
    for (long i = 0; i < split.count; ++i)
        for (long c = 0; c < kHarChannels; ++c) {
            double* x = split.signals.data() + (i * kHarChannels + c) * kHarWindowLen;
            const double mu = stats.mean[static_cast<std::size_t>(c)];
            const double sd = stats.stddev[static_cast<std::size_t>(c)];
            for (long t = 0; t < kHarWindowLen; ++t) x[t] = (x[t] - mu) / sd;
        }
}

// Index batches: train order reshuffles with the run RNG every epoch, test
// order is the file order; the last partial batch is kept.
inline std::vector<std::vector<long>> epoch_batches(long count, long batch_size, Rng* shuffle_rng) {
    std::vector<long> order(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    if (shuffle_rng) shuffle_rng->shuffle(order);
    std::vector<std::vector<long>> batches;
    for (long start = 0; start < count; start += batch_size) {
        const long n = std::min(batch_size, count - start);
        batches.emplace_back(order.begin() + start, order.begin() + start + n);
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Optional flat binary cache of a parsed split. Layout (little-endian):
//   magic "HIWAVHAR" (8 bytes), u32 version = 1, u32 count,
//   u32 channels = 9, u32 window_len = 128,
//   then per window: u32 label (0-based), u32 subject,
//   then count*9*128 float64 signals, row-major [window][channel][sample].
// ---------------------------------------------------------------------------

inline void save_cache(const DatasetSplit& ds, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write cache file: " + path.string());
    out.write("HIWAVHAR", 8);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(ds.count));
    put_u32(static_cast<std::uint32_t>(kHarChannels));
    put_u32(static_cast<std::uint32_t>(kHarWindowLen));
    for (long i = 0; i < ds.count; ++i) {
        put_u32(static_cast<std::uint32_t>(ds.labels[static_cast<std::size_t>(i)]));
        put_u32(static_cast<std::uint32_t>(ds.subjects[static_cast<std::size_t>(i)]));
    }
    out.write(reinterpret_cast<const char*>(ds.signals.data()),
              static_cast<std::streamsize>(ds.signals.size() * sizeof(double)));
    if (!out) throw DataError("short write to cache file: " + path.string());
}

inline DatasetSplit load_cache(const std::filesystem::path& path, const std::string& split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing cache file: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != "HIWAVHAR")
        throw DataError("bad cache magic in " + path.string());
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    if (get_u32() != 1) throw DataError("unsupported cache version in " + path.string());
    DatasetSplit ds;
    ds.split = split;
    ds.count = get_u32();
    if (get_u32() != kHarChannels || get_u32() != kHarWindowLen)
        throw DataError("cache geometry mismatch in " + path.string());
    ds.labels.resize(static_cast<std::size_t>(ds.count));
    ds.subjects.resize(static_cast<std::size_t>(ds.count));
    for (long i = 0; i < ds.count; ++i) {
        ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(get_u32());
        ds.subjects[static_cast<std::size_t>(i)] = static_cast<int>(get_u32());
    }
    ds.signals.resize(static_cast<std::size_t>(ds.count * kHarChannels * kHarWindowLen));
    in.read(reinterpret_cast<char*>(ds.signals.data()),
            static_cast<std::streamsize>(ds.signals.size() * sizeof(double)));
    if (!in) throw DataError("truncated cache file: " + path.string());
    return ds;
}

}  // namespace hiwave
