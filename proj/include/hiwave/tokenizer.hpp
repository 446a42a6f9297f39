#pragma once

#include <span>
#include <string>
#include <vector>

#include "hiwave/ops.hpp"
#include "hiwave/tensor.hpp"
#include "hiwave/wavelet.hpp"

// Converts raw windows into the encoder's token sequence, in any of the
// experiment configurations: a flattened temporal part, a pooled
// wavelet-packet part, or their concatenation ("super-token").

namespace hiwave {

enum class Variant { baseline, hybrid, replacement };
enum class Pooling { gem, avg };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::hybrid: return "hybrid";
        default: return "replacement";
    }
}

inline std::string to_string(Pooling p) { return p == Pooling::gem ? "gem" : "avg"; }

inline Variant variant_from_string(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "hybrid") return Variant::hybrid;
    if (s == "replacement") return Variant::replacement;
    throw ConfigError("unknown variant '" + s + "'");
}

inline Pooling pooling_from_string(const std::string& s) {
    if (s == "gem") return Pooling::gem;
    if (s == "avg") return Pooling::avg;
    throw ConfigError("unknown pooling '" + s + "'");
}

struct TokenizerConfig {
    Variant variant = Variant::hybrid;
    std::string wavelet = "db2";
    std::vector<int> depth_set = {3};
    Pooling pooling = Pooling::gem;
    double gem_init = 3.0;
    long patch_len = 16;
    long stride = 8;
    long channels = 9;
    long window_len = 128;

    bool has_wavelet_part() const { return variant != Variant::baseline; }
    bool has_temporal_part() const { return variant != Variant::replacement; }

    long num_patches() const { return (window_len - patch_len) / stride + 1; }
    long temporal_dim() const { return has_temporal_part() ? channels * patch_len : 0; }

    long packets_per_channel() const {
        if (!has_wavelet_part()) return 0;
        long k = 0;
        for (int d : depth_set) k += 1L << d;
        return k;
    }

    long wavelet_dim() const { return channels * packets_per_channel(); }
    long token_dim() const { return temporal_dim() + wavelet_dim(); }

    long pooling_param_count() const {
        return (has_wavelet_part() && pooling == Pooling::gem) ? packets_per_channel() : 0;
    }

    void validate() const {
        if (channels < 1 || patch_len < 1 || stride < 1 || window_len < patch_len)
            throw ConfigError("tokenizer: invalid patch geometry");
        if ((window_len - patch_len) % stride != 0)
            throw ConfigError("tokenizer: window length " + std::to_string(window_len) +
                              " is not covered evenly by stride " + std::to_string(stride));
        if (has_wavelet_part()) {
            make_filters(wavelet);
            if (depth_set.empty()) throw ConfigError("tokenizer: depth_set must be nonempty");
            for (int d : depth_set) {
                if (d < 1) throw ConfigError("tokenizer: depth must be >= 1");
                if (patch_len % (1L << d) != 0)
                    throw ConfigError("tokenizer: patch length " + std::to_string(patch_len) +
                                      " not divisible by 2^" + std::to_string(d));
            }
        }
    }
};

// The named experiment configurations. "hybrid-L3-db2-gem" is the champion.
inline const std::vector<std::string>& variant_names() {
    static const std::vector<std::string> names = {
        "baseline",           "hybrid-L3-db2-gem",      "replacement-L3-db2-gem",
        "hybrid-L2-db2-gem",  "hybrid-pyramid-db2-gem", "hybrid-L3-db4-gem",
        "hybrid-L3-db2-avg",
    };
    return names;
}

inline TokenizerConfig tokenizer_for_variant(const std::string& name) {
    TokenizerConfig cfg;
    if (name == "baseline") {
        cfg.variant = Variant::baseline;
    } else if (name == "hybrid-L3-db2-gem") {
        // defaults
    } else if (name == "replacement-L3-db2-gem") {
        cfg.variant = Variant::replacement;
    } else if (name == "hybrid-L2-db2-gem") {
        cfg.depth_set = {2};
    } else if (name == "hybrid-pyramid-db2-gem") {
        cfg.depth_set = {1, 2, 3};
    } else if (name == "hybrid-L3-db4-gem") {
        cfg.wavelet = "db4";
    } else if (name == "hybrid-L3-db2-avg") {
        cfg.pooling = Pooling::avg;
    } else {
        throw ConfigError("unknown experiment variant '" + name + "'");
    }
    return cfg;
}

// Learnable pooling exponents: one scalar tensor per packet index, shared
// across channels, ordered by (level in depth_set order, packet in natural
// order). The clamp range keeps p away from the degenerate p -> 0 limit.
struct GemPool {
    static constexpr double kEps = 1e-6;
    static constexpr double kPMin = 0.5;
    static constexpr double kPMax = 10.0;

    std::vector<Tensor> p;

    std::vector<double> values() const {
        std::vector<double> out;
        out.reserve(p.size());
        for (const auto& t : p) out.push_back(t.item());
        return out;
    }
};

inline GemPool make_gem_pool(const TokenizerConfig& cfg) {
    GemPool pool;
    if (cfg.has_wavelet_part() && cfg.pooling == Pooling::gem) {
        if (cfg.gem_init < GemPool::kPMin || cfg.gem_init > GemPool::kPMax)
            throw ConfigError("gem_init outside clamp range [0.5, 10]");
        for (long i = 0; i < cfg.packets_per_channel(); ++i)
            pool.p.push_back(Tensor::full({1}, cfg.gem_init, /*requires_grad=*/true));
    }
    return pool;
}

// Generalized mean over the last axis:
//   gem(X) = ( mean_i (|x_i| + eps)^p )^(1/p),  p clamped to [0.5, 10].
// eps sits inside the power so the p-gradient stays finite when a packet is
// exactly zero. Differentiable in both the coefficients and p.
inline Tensor gem(const Tensor& coeffs, const Tensor& p, double eps = GemPool::kEps) {
    if (p.numel() != 1) throw DimensionError("gem: p must be a scalar tensor");
    Tensor pc = clamp(p, GemPool::kPMin, GemPool::kPMax);
    Tensor m = mean(pow(add(abs(coeffs), eps), pc), -1);
    return pow(m, div(Tensor::scalar(1.0), pc));
}

// Splits a window (or batch of windows) [..., C, T] into overlapping patches
// [..., P, C, L]. Patch i covers samples [i*stride, i*stride + L).
inline Tensor extract_patches(const Tensor& windows, const TokenizerConfig& cfg) {
    if (windows.rank() < 2 || windows.dim(windows.rank() - 2) != cfg.channels ||
        windows.dim(windows.rank() - 1) != cfg.window_len)
        throw DimensionError("extract_patches: expected [... x " + std::to_string(cfg.channels) +
                             " x " + std::to_string(cfg.window_len) + "], got " +
                             shape_str(windows.shape()));
    const long P = cfg.num_patches(), C = cfg.channels, T = cfg.window_len, L = cfg.patch_len;
    const long batch = windows.numel() / (C * T);

    std::vector<double> out(static_cast<std::size_t>(batch * P * C * L));
    const auto& w = windows.values();
    for (long b = 0; b < batch; ++b)
        for (long i = 0; i < P; ++i)
            for (long c = 0; c < C; ++c)
                std::copy_n(w.data() + (b * C + c) * T + i * cfg.stride, L,
                            out.data() + ((b * P + i) * C + c) * L);

    Shape shape(windows.shape().begin(), windows.shape().end() - 2);
    shape.insert(shape.end(), {P, C, L});
    return Tensor::from_data(std::move(shape), std::move(out));
}

namespace detail {

// Pools each packet of one decomposition level W [..., C, K, m] down to
// [..., C, K]; p_slice supplies the K learnable exponents for gem pooling.
inline Tensor pool_level(const Tensor& W, Pooling pooling, std::span<const Tensor> p_slice,
                         double eps) {
    const int r = W.rank();
    const long K = W.dim(r - 2);
    std::vector<Tensor> feats;
    feats.reserve(static_cast<std::size_t>(K));
    Shape keep(W.shape().begin(), W.shape().end() - 2);  // [..., C]
    Shape keep1 = keep;
    keep1.push_back(1);
    for (long k = 0; k < K; ++k) {
        Tensor block = reshape(slice(W, r - 2, k, 1), [&] {
            Shape s = keep;
            s.push_back(W.dim(r - 1));
            return s;
        }());
        Tensor f = (pooling == Pooling::gem) ? gem(block, p_slice[static_cast<std::size_t>(k)], eps)
                                             : mean(abs(block), -1);
        feats.push_back(reshape(f, keep1));
    }
    return concat(feats, -1);  // [..., C, K]
}

}  // namespace detail

// Pooled wavelet features of patches [..., C, L] -> [..., C * sum(2^d)].
// Channel-major: all packet features of channel 0, then channel 1, ...
inline Tensor wavelet_token(const Tensor& patches, const TokenizerConfig& cfg,
                            const GemPool& pool) {
    if (!cfg.has_wavelet_part())
        throw ConfigError("wavelet_token: variant '" + to_string(cfg.variant) +
                          "' has no wavelet stream");
    const auto filters = make_filters(cfg.wavelet);
    std::vector<Tensor> levels;
    std::size_t p_off = 0;
    for (int d : cfg.depth_set) {
        Tensor W = wpd_batch(patches, filters, d);  // [..., C, 2^d, m]
        const auto K = static_cast<std::size_t>(1L << d);
        std::span<const Tensor> p_slice;
        if (cfg.pooling == Pooling::gem) p_slice = {pool.p.data() + p_off, K};
        levels.push_back(detail::pool_level(W, cfg.pooling, p_slice, GemPool::kEps));
        p_off += K;
    }
    Tensor feats = levels.size() == 1 ? levels[0] : concat(levels, -1);  // [..., C, Ktot]
    Shape flat(feats.shape().begin(), feats.shape().end() - 2);
    flat.push_back(cfg.wavelet_dim());
    return reshape(feats, std::move(flat));
}

// Final per-patch token of patches [..., C, L]:
//   baseline     -> flattened temporal samples  [..., C*L]
//   replacement  -> wavelet features only       [..., C*K]
//   hybrid       -> concat(temporal, wavelet)   [..., C*L + C*K]
inline Tensor hybrid_token(const Tensor& patches, const TokenizerConfig& cfg,
                           const GemPool& pool) {
    Shape flat(patches.shape().begin(), patches.shape().end() - 2);
    flat.push_back(cfg.channels * cfg.patch_len);
    if (cfg.variant == Variant::baseline) return reshape(patches, std::move(flat));
    Tensor wave = wavelet_token(patches, cfg, pool);
    if (cfg.variant == Variant::replacement) return wave;
    return concat({reshape(patches, std::move(flat)), wave}, -1);
}

// Tokenize windows [..., C, T] -> [..., P, token_dim].
inline Tensor tokenize(const Tensor& windows, const TokenizerConfig& cfg, const GemPool& pool) {
    return hybrid_token(extract_patches(windows, cfg), cfg, pool);
}

// ---------------------------------------------------------------------------
// Precomputed-token path used by the trainer. The temporal part and the
// packet decompositions are a fixed function of the input, so they are
// computed once per split; only the pooling (which owns the learnable p)
// runs per batch.
// ---------------------------------------------------------------------------

struct TokenizerState {
    long count = 0;
    Tensor temporal;               // [N, P, C*L], undefined for replacement
    std::vector<Tensor> packets;   // per level d: [N, P, C, 2^d, L/2^d]
};

inline TokenizerState precompute_tokens(const Tensor& windows, const TokenizerConfig& cfg) {
    TokenizerState st;
    st.count = windows.numel() / (cfg.channels * cfg.window_len);
    Tensor patches = extract_patches(windows, cfg);  // [N, P, C, L]
    if (cfg.has_temporal_part())
        st.temporal = reshape(patches, {st.count, cfg.num_patches(), cfg.temporal_dim()});
    if (cfg.has_wavelet_part()) {
        const auto filters = make_filters(cfg.wavelet);
        for (int d : cfg.depth_set) st.packets.push_back(wpd_batch(patches, filters, d));
    }
    return st;
}

namespace detail {

inline Tensor gather_rows(const Tensor& t, std::span<const long> idx) {
    const long row = t.numel() / t.dim(0);
    std::vector<double> out(static_cast<std::size_t>(static_cast<long>(idx.size()) * row));
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(t.values().data() + idx[i] * row, row, out.data() + static_cast<long>(i) * row);
    Shape shape = t.shape();
    shape[0] = static_cast<long>(idx.size());
    return Tensor::from_data(std::move(shape), std::move(out));
}

}  // namespace detail

// Assemble the token batch for the given window indices -> [B, P, token_dim].
inline Tensor assemble_tokens(const TokenizerState& st, std::span<const long> idx,
                              const TokenizerConfig& cfg, const GemPool& pool) {
    Tensor temporal, wave;
    if (cfg.has_temporal_part()) temporal = detail::gather_rows(st.temporal, idx);
    if (cfg.has_wavelet_part()) {
        std::vector<Tensor> levels;
        std::size_t p_off = 0;
        for (std::size_t li = 0; li < st.packets.size(); ++li) {
            Tensor W = detail::gather_rows(st.packets[li], idx);
            const auto K = static_cast<std::size_t>(W.dim(W.rank() - 2));
            std::span<const Tensor> p_slice;
            if (cfg.pooling == Pooling::gem) p_slice = {pool.p.data() + p_off, K};
            levels.push_back(detail::pool_level(W, cfg.pooling, p_slice, GemPool::kEps));
            p_off += K;
        }
        Tensor feats = levels.size() == 1 ? levels[0] : concat(levels, -1);
        wave = reshape(feats, {static_cast<long>(idx.size()), cfg.num_patches(), cfg.wavelet_dim()});
    }
    if (cfg.variant == Variant::baseline) return temporal;
    if (cfg.variant == Variant::replacement) return wave;
    return concat({temporal, wave}, -1);
}

}  // namespace hiwave
