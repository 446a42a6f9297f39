#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hiwave/errors.hpp"
#include "hiwave/tensor.hpp"

// Orthonormal Daubechies filter banks and full wavelet packet decomposition.
//
// Conventions (fixed so round-trip tests are unambiguous):
//  - analysis is circular correlation followed by keep-even downsampling:
//        approx[i] = sum_k h[k] * x[(2i + k) mod N]
//  - boundary handling is periodization, which keeps the transform critically
//    sampled at every level (N inputs -> N coefficients) and stays well
//    defined when the filter is longer than the block;
//  - packet leaves are in natural order: packet index b read MSB-first gives
//    the branch taken at each level (0 = lowpass, 1 = highpass).

namespace hiwave {

struct WaveletFilterPair {
    std::string name;
    std::vector<double> lowpass;   // h, sums to sqrt(2)
    std::vector<double> highpass;  // g[k] = (-1)^k h[L-1-k], sums to 0
};

inline WaveletFilterPair make_filters(const std::string& name) {
    std::vector<double> h;
    if (name == "db2") {
        const double s3 = std::sqrt(3.0), z = 4.0 * std::sqrt(2.0);
        h = {(1.0 + s3) / z, (3.0 + s3) / z, (3.0 - s3) / z, (1.0 - s3) / z};
    } else if (name == "db4") {
        // extremal-phase factorization, rounded from a 60-digit solve
        h = {0.23037781330889651,   0.71484657055291567,  0.63088076792985892,
             -0.027983769416859854, -0.18703481171909309, 0.030841381835560764,
             0.032883011666885197,  -0.010597401785069032};
    } else {
        throw ConfigError("unknown wavelet '" + name + "' (expected db2 or db4)");
    }
    const std::size_t L = h.size();
    std::vector<double> g(L);
    for (std::size_t k = 0; k < L; ++k) g[k] = ((k % 2 == 0) ? 1.0 : -1.0) * h[L - 1 - k];
    return {name, std::move(h), std::move(g)};
}

// One filter-bank split: x (length N, even) -> approx, detail (length N/2 each).
inline void analysis_step(std::span<const double> x, const WaveletFilterPair& f,
                          std::span<double> approx, std::span<double> detail) {
    const long n = static_cast<long>(x.size());
    if (n < 2 || n % 2 != 0)
        throw DimensionError("analysis_step: signal length " + std::to_string(n) +
                             " must be even and >= 2");
    const long L = static_cast<long>(f.lowpass.size());
    for (long i = 0; i < n / 2; ++i) {
        double a = 0.0, d = 0.0;
        for (long k = 0; k < L; ++k) {
            const double v = x[static_cast<std::size_t>((2 * i + k) % n)];
            a += f.lowpass[static_cast<std::size_t>(k)] * v;
            d += f.highpass[static_cast<std::size_t>(k)] * v;
        }
        approx[static_cast<std::size_t>(i)] = a;
        detail[static_cast<std::size_t>(i)] = d;
    }
}

inline std::pair<std::vector<double>, std::vector<double>> analysis_step(
    std::span<const double> x, const WaveletFilterPair& f) {
    std::vector<double> a(x.size() / 2), d(x.size() / 2);
    analysis_step(x, f, a, d);
    return {std::move(a), std::move(d)};
}

// Adjoint of analysis_step; for an orthonormal periodized bank this inverts it.
inline std::vector<double> synthesis_step(std::span<const double> approx,
                                          std::span<const double> detail,
                                          const WaveletFilterPair& f) {
    const long half = static_cast<long>(approx.size());
    if (detail.size() != approx.size())
        throw DimensionError("synthesis_step: approx/detail length mismatch");
    const long n = 2 * half;
    const long L = static_cast<long>(f.lowpass.size());
    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    for (long i = 0; i < half; ++i)
        for (long k = 0; k < L; ++k) {
            const auto j = static_cast<std::size_t>((2 * i + k) % n);
            x[j] += f.lowpass[static_cast<std::size_t>(k)] * approx[static_cast<std::size_t>(i)] +
                    f.highpass[static_cast<std::size_t>(k)] * detail[static_cast<std::size_t>(i)];
        }
    return x;
}

// Leaves of a depth-D packet decomposition, natural (Paley) order.
struct PacketTree {
    int depth = 0;
    long packet_len = 0;
    std::vector<std::vector<double>> packets;  // 2^depth blocks

    double energy() const {
        double e = 0.0;
        for (const auto& p : packets)
            for (double c : p) e += c * c;
        return e;
    }
};

namespace detail {

// Full packet decomposition of one signal, flat in/out. Processing blocks
// left-to-right per level yields natural leaf order.
inline void wpd_flat(const double* x, long len, const WaveletFilterPair& f, int depth,
                     double* out, std::vector<double>& scratch) {
    scratch.resize(static_cast<std::size_t>(len));
    std::copy_n(x, len, out);
    long block = len;
    for (int level = 0; level < depth; ++level) {
        const long half = block / 2;
        for (long b = 0; b < len; b += block) {
            analysis_step(std::span<const double>(out + b, static_cast<std::size_t>(block)), f,
                          std::span<double>(scratch.data() + b, static_cast<std::size_t>(half)),
                          std::span<double>(scratch.data() + b + half, static_cast<std::size_t>(half)));
        }
        std::copy_n(scratch.data(), len, out);
        block = half;
    }
}

}  // namespace detail

inline PacketTree wpd(std::span<const double> x, const WaveletFilterPair& f, int depth) {
    const long len = static_cast<long>(x.size());
    if (depth < 1) throw ConfigError("wpd: depth must be >= 1");
    const long packets = 1L << depth;
    if (len % packets != 0)
        throw ConfigError("wpd: signal length " + std::to_string(len) +
                          " not divisible by 2^depth = " + std::to_string(packets));

    std::vector<double> flat(static_cast<std::size_t>(len));
    std::vector<double> scratch;
    detail::wpd_flat(x.data(), len, f, depth, flat.data(), scratch);

    PacketTree tree;
    tree.depth = depth;
    tree.packet_len = len / packets;
    tree.packets.resize(static_cast<std::size_t>(packets));
    for (long b = 0; b < packets; ++b)
        tree.packets[static_cast<std::size_t>(b)].assign(
            flat.begin() + b * tree.packet_len, flat.begin() + (b + 1) * tree.packet_len);
    return tree;
}

// Packet decomposition of every length-L row of `patches` ([... x L]); returns
// [... x 2^D x L/2^D]. Same per-signal code path as wpd(), so results agree
// exactly. The output never carries a gradient graph: all filters are fixed
// and no trainable parameter precedes the transform.
inline Tensor wpd_batch(const Tensor& patches, const WaveletFilterPair& f, int depth) {
    if (patches.rank() < 1) throw DimensionError("wpd_batch: empty tensor");
    const long len = patches.dim(patches.rank() - 1);
    const long packets = 1L << depth;
    if (depth < 1 || len % packets != 0)
        throw ConfigError("wpd_batch: signal length " + std::to_string(len) +
                          " not divisible by 2^depth");
    const long rows = patches.numel() / len;
    std::vector<double> out(patches.values().size());
    std::vector<double> scratch;
    for (long r = 0; r < rows; ++r)
        detail::wpd_flat(patches.values().data() + r * len, len, f, depth, out.data() + r * len,
                         scratch);

    Shape shape = patches.shape();
    shape.pop_back();
    shape.push_back(packets);
    shape.push_back(len / packets);
    return Tensor::from_data(std::move(shape), std::move(out));
}

}  // namespace hiwave
