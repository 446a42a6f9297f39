#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hiwave/ops.hpp"
#include "hiwave/rng.hpp"
#include "hiwave/tensor.hpp"
#include "hiwave/tokenizer.hpp"

// Transformer encoder classifier over the token sequence.
//
// Architecture, pinned: input projection (token_dim -> d_model, bias),
// learnable CLS token, fixed sinusoidal positional encodings, pre-norm
// encoder layers (LN -> multi-head attention -> residual; LN -> FFN ->
// residual), final LN, linear head on the CLS position. Attention is
// bidirectional; this is classification, not forecasting.

namespace hiwave {

struct ModelConfig {
    long d_model = 64;
    long n_heads = 4;
    long n_layers = 3;
    long ffn_dim = 256;
    long n_classes = 6;
    double dropout = 0.1;

    void validate() const {
        if (d_model < 1 || n_heads < 1 || n_layers < 1 || ffn_dim < 1 || n_classes < 2)
            throw ConfigError("model: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw ConfigError("model: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    }
};

struct Parameter {
    std::string name;
    Tensor tensor;
    bool decay;  // decoupled weight decay applies; off for biases, norms, gem p
};

struct EncoderLayer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
};

class Classifier {
public:
    ModelConfig cfg;
    TokenizerConfig tok;
    std::uint64_t seed = 0;

    Tensor w_in, b_in;
    Tensor cls;
    Tensor pos;  // fixed sinusoidal table [P+1, d_model], not trainable
    std::vector<EncoderLayer> layers;
    Tensor lnf_gain, lnf_bias;
    Tensor w_head, b_head;
    GemPool pool;

    long seq_len() const { return tok.num_patches() + 1; }

    // Stable order and names; the order defines the checkpoint layout and the
    // optimizer slot order.
    std::vector<Parameter> parameters() {
        std::vector<Parameter> ps;
        ps.push_back({"input_proj.weight", w_in, true});
        ps.push_back({"input_proj.bias", b_in, false});
        ps.push_back({"cls", cls, true});
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& l = layers[i];
            const std::string p = "layers." + std::to_string(i) + ".";
            ps.push_back({p + "ln1.gain", l.ln1_gain, false});
            ps.push_back({p + "ln1.bias", l.ln1_bias, false});
            ps.push_back({p + "attn.q.weight", l.wq, true});
            ps.push_back({p + "attn.q.bias", l.bq, false});
            ps.push_back({p + "attn.k.weight", l.wk, true});
            ps.push_back({p + "attn.k.bias", l.bk, false});
            ps.push_back({p + "attn.v.weight", l.wv, true});
            ps.push_back({p + "attn.v.bias", l.bv, false});
            ps.push_back({p + "attn.out.weight", l.wo, true});
            ps.push_back({p + "attn.out.bias", l.bo, false});
            ps.push_back({p + "ln2.gain", l.ln2_gain, false});
            ps.push_back({p + "ln2.bias", l.ln2_bias, false});
            ps.push_back({p + "ffn.w1.weight", l.w1, true});
            ps.push_back({p + "ffn.w1.bias", l.b1, false});
            ps.push_back({p + "ffn.w2.weight", l.w2, true});
            ps.push_back({p + "ffn.w2.bias", l.b2, false});
        }
        ps.push_back({"final_norm.gain", lnf_gain, false});
        ps.push_back({"final_norm.bias", lnf_bias, false});
        ps.push_back({"head.weight", w_head, true});
        ps.push_back({"head.bias", b_head, false});
        for (std::size_t i = 0; i < pool.p.size(); ++i)
            ps.push_back({"gem.p." + std::to_string(i), pool.p[i], false});
        return ps;
    }

    // tokens [B, P, token_dim] -> logits [B, n_classes]. Dropout masks are
    // drawn from `rng` only when train_mode is set; draw order per layer is
    // attention mask, then FFN mask.
    Tensor forward(const Tensor& tokens, bool train_mode = false, Rng* rng = nullptr) const {
        if (tokens.rank() != 3 || tokens.dim(1) != tok.num_patches() ||
            tokens.dim(2) != tok.token_dim())
            throw DimensionError("forward: expected [B x " + std::to_string(tok.num_patches()) +
                                 " x " + std::to_string(tok.token_dim()) + "], got " +
                                 shape_str(tokens.shape()));
        const long B = tokens.dim(0), P = tok.num_patches(), d = cfg.d_model;
        const long S = P + 1, H = cfg.n_heads, hd = d / H;
        const bool drop = train_mode && cfg.dropout > 0.0 && rng != nullptr;
        const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

        Tensor x = reshape(broadcast_add(matmul(reshape(tokens, {B * P, tok.token_dim()}), w_in), b_in),
                           {B, P, d});
        x = concat({reshape(tile(cls, B), {B, 1, d}), x}, 1);
        x = broadcast_add(x, pos);

        for (const auto& l : layers) {
            Tensor h = reshape(layer_norm(x, l.ln1_gain, l.ln1_bias), {B * S, d});
            auto split_heads = [&](const Tensor& t) {
                return reshape(transpose(reshape(t, {B, S, H, hd}), {0, 2, 1, 3}), {B * H, S, hd});
            };
            Tensor q = split_heads(broadcast_add(matmul(h, l.wq), l.bq));
            Tensor k = split_heads(broadcast_add(matmul(h, l.wk), l.bk));
            Tensor v = split_heads(broadcast_add(matmul(h, l.wv), l.bv));
            Tensor attn = softmax(mul(bmm(q, k, false, true), scale), -1);
            if (drop) attn = mul(attn, dropout_mask({B * H, S, S}, *rng));
            Tensor ctx = reshape(transpose(reshape(bmm(attn, v), {B, H, S, hd}), {0, 2, 1, 3}),
                                 {B * S, d});
            x = add(x, reshape(broadcast_add(matmul(ctx, l.wo), l.bo), {B, S, d}));

            Tensor f = reshape(layer_norm(x, l.ln2_gain, l.ln2_bias), {B * S, d});
            f = gelu(broadcast_add(matmul(f, l.w1), l.b1));
            if (drop) f = mul(f, dropout_mask({B * S, cfg.ffn_dim}, *rng));
            x = add(x, reshape(broadcast_add(matmul(f, l.w2), l.b2), {B, S, d}));
        }

        Tensor out = layer_norm(x, lnf_gain, lnf_bias);
        Tensor cls_out = reshape(slice(out, 1, 0, 1), {B, d});
        return broadcast_add(matmul(cls_out, w_head), b_head);
    }

private:
    Tensor dropout_mask(Shape shape, Rng& rng) const {
        const double keep = 1.0 - cfg.dropout;
        const double scale = 1.0 / keep;
        // keep iff the top 53 bits, as a uniform in [0,1), fall below `keep`
        const auto threshold = static_cast<std::uint64_t>(keep * 0x1p53);
        std::vector<double> m(static_cast<std::size_t>(numel_of(shape)));
        for (auto& v : m) v = (rng.next_u64() >> 11) < threshold ? scale : 0.0;
        return Tensor::from_data(std::move(shape), std::move(m));
    }
};

namespace detail {

inline Tensor init_linear(long fan_in, long fan_out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& v : w) v = rng.uniform(-bound, bound);
    return Tensor::from_data({fan_in, fan_out}, std::move(w), /*requires_grad=*/true);
}

inline Tensor sinusoidal_positions(long positions, long d_model) {
    std::vector<double> pe(static_cast<std::size_t>(positions * d_model));
    for (long p = 0; p < positions; ++p)
        for (long i = 0; i < d_model / 2; ++i) {
            const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / static_cast<double>(d_model));
            pe[static_cast<std::size_t>(p * d_model + 2 * i)] = std::sin(p * freq);
            pe[static_cast<std::size_t>(p * d_model + 2 * i + 1)] = std::cos(p * freq);
        }
    return Tensor::from_data({positions, d_model}, std::move(pe));
}

}  // namespace detail

// Deterministically initializes all weights from the seed. Draw order:
// input projection, CLS, then per layer q, k, v, out, w1, w2, then head.
// Linear weights ~ uniform(+-1/sqrt(fan_in)); biases and LN biases zero; LN
// gains one; CLS ~ normal(0, 0.02); gem exponents start at tok.gem_init.
inline Classifier build(const ModelConfig& mcfg, const TokenizerConfig& tcfg, std::uint64_t seed) {
    mcfg.validate();
    tcfg.validate();
    Classifier m;
    m.cfg = mcfg;
    m.tok = tcfg;
    m.seed = seed;
    const long d = mcfg.d_model, td = tcfg.token_dim();

    Rng rng(seed);
    m.w_in = detail::init_linear(td, d, rng);
    m.b_in = Tensor::zeros({d}, true);
    {
        std::vector<double> c(static_cast<std::size_t>(d));
        for (auto& v : c) v = rng.normal(0.0, 0.02);
        m.cls = Tensor::from_data({d}, std::move(c), true);
    }
    m.pos = detail::sinusoidal_positions(tcfg.num_patches() + 1, d);
    for (long i = 0; i < mcfg.n_layers; ++i) {
        EncoderLayer l;
        l.ln1_gain = Tensor::full({d}, 1.0, true);
        l.ln1_bias = Tensor::zeros({d}, true);
        l.wq = detail::init_linear(d, d, rng);
        l.bq = Tensor::zeros({d}, true);
        l.wk = detail::init_linear(d, d, rng);
        l.bk = Tensor::zeros({d}, true);
        l.wv = detail::init_linear(d, d, rng);
        l.bv = Tensor::zeros({d}, true);
        l.wo = detail::init_linear(d, d, rng);
        l.bo = Tensor::zeros({d}, true);
        l.ln2_gain = Tensor::full({d}, 1.0, true);
        l.ln2_bias = Tensor::zeros({d}, true);
        l.w1 = detail::init_linear(d, mcfg.ffn_dim, rng);
        l.b1 = Tensor::zeros({mcfg.ffn_dim}, true);
        l.w2 = detail::init_linear(mcfg.ffn_dim, d, rng);
        l.b2 = Tensor::zeros({d}, true);
        m.layers.push_back(std::move(l));
    }
    m.lnf_gain = Tensor::full({d}, 1.0, true);
    m.lnf_bias = Tensor::zeros({d}, true);
    m.w_head = detail::init_linear(d, mcfg.n_classes, rng);
    m.b_head = Tensor::zeros({mcfg.n_classes}, true);
    m.pool = make_gem_pool(tcfg);
    return m;
}

// Trainable parameter count, gem exponents included.
inline long count_parameters(Classifier& model) {
    long n = 0;
    for (const auto& p : model.parameters()) n += p.tensor.numel();
    return n;
}

}  // namespace hiwave
