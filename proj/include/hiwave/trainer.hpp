#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "hiwave/data.hpp"
#include "hiwave/model.hpp"
#include "hiwave/ops.hpp"
#include "hiwave/tensor.hpp"
#include "hiwave/tokenizer.hpp"

namespace hiwave {

struct TrainConfig {
    long epochs = 30;
    double lr = 5e-4;
    long batch_size = 64;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    double grad_clip = 0.0;   // off unless positive
    bool best_epoch = false;  // report best-epoch instead of final-epoch accuracy

    void validate() const {
        if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (seeds.empty()) throw ConfigError("train: seeds must be nonempty");
        for (std::size_t i = 0; i < seeds.size(); ++i)
            for (std::size_t j = i + 1; j < seeds.size(); ++j)
                if (seeds[i] == seeds[j]) throw ConfigError("train: seeds must be distinct");
    }
};

// Numerically stable cross entropy: mean over the batch of
// logsumexp(logits_i) - logits_i[label_i]. Fused forward/backward.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<long>(labels.size()))
        throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    const long B = logits.dim(0), K = logits.dim(1);
    for (int y : labels)
        if (y < 0 || y >= K)
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range");

    const auto& lv = logits.values();
    auto probs = std::make_shared<std::vector<double>>(lv.size());
    double total = 0.0;
    for (long i = 0; i < B; ++i) {
        const double* x = lv.data() + i * K;
        double mx = x[0];
        for (long j = 1; j < K; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (long j = 0; j < K; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (long j = 0; j < K; ++j)
            (*probs)[static_cast<std::size_t>(i * K + j)] = std::exp(x[j] - lse);
        total += lse - x[labels[static_cast<std::size_t>(i)]];
    }

    auto p = logits.node();
    std::vector<int> lab(labels.begin(), labels.end());
    return detail::make_result(
        {1}, {total / static_cast<double>(B)}, {p},
        [p, probs, lab, B, K](const TensorNode& self) {
            if (!p->requires_grad) return;
            if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0);
            const double g = self.grad[0] / static_cast<double>(B);
            for (long i = 0; i < B; ++i)
                for (long j = 0; j < K; ++j)
                    p->grad[static_cast<std::size_t>(i * K + j)] +=
                        g * ((*probs)[static_cast<std::size_t>(i * K + j)] -
                             (j == lab[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
        });
}

// AdamW with decoupled weight decay. Decay multiplies the parameter by
// (1 - lr*wd) before the moment update and is skipped for parameters whose
// slot is flagged no-decay (biases, norm affine, gem exponents).
class AdamW {
public:
    AdamW(std::vector<Parameter> params, const TrainConfig& cfg)
        : cfg_(cfg) {
        for (auto& p : params) {
            Slot s;
            s.param = p;
            s.m.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
            s.v.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
            slots_.push_back(std::move(s));
        }
    }

    void zero_grad() {
        for (auto& s : slots_) s.param.tensor.zero_grad();
    }

    // Global-norm gradient clipping, applied only when cfg.grad_clip > 0.
    void clip_gradients() {
        if (cfg_.grad_clip <= 0.0) return;
        double sq = 0.0;
        for (auto& s : slots_)
            if (s.param.tensor.has_grad())
                for (double g : s.param.tensor.grad()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm <= cfg_.grad_clip) return;
        const double scale = cfg_.grad_clip / norm;
        for (auto& s : slots_)
            if (s.param.tensor.has_grad())
                for (auto& g : s.param.tensor.node()->grad) g *= scale;
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& s : slots_) {
            auto& node = *s.param.tensor.node();
            if (node.grad.empty()) continue;  // parameter unused this step
            auto& w = node.value;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double g = node.grad[i];
                if (!std::isfinite(g))
                    throw NumericError("non-finite gradient in " + s.param.name);
                if (s.param.decay && cfg_.weight_decay > 0.0)
                    w[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    long step_count() const { return t_; }

private:
    struct Slot {
        Parameter param;
        std::vector<double> m, v;
    };
    TrainConfig cfg_;
    std::vector<Slot> slots_;
    long t_ = 0;
};

struct RunRecord {
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> train_acc;
    double test_accuracy = 0.0;
    std::vector<double> gem_p;  // learned exponents, empty unless gem pooling
    long param_count = 0;
    double wall_seconds = 0.0;
};

// One labeled split with its precomputed token state.
struct PreparedSplit {
    TokenizerState state;
    std::vector<int> labels;
};

inline PreparedSplit prepare_split(const DatasetSplit& ds, const TokenizerConfig& cfg) {
    return {precompute_tokens(ds.windows_tensor(), cfg), ds.labels};
}

inline double evaluate(Classifier& model, const PreparedSplit& split,
                       std::vector<std::vector<long>>* confusion = nullptr) {
    NoGradGuard ng;
    const long n = split.state.count;
    if (confusion)
        confusion->assign(static_cast<std::size_t>(model.cfg.n_classes),
                          std::vector<long>(static_cast<std::size_t>(model.cfg.n_classes), 0));
    long correct = 0;
    for (const auto& batch : epoch_batches(n, 256, nullptr)) {
        Tensor tokens = assemble_tokens(split.state, batch, model.tok, model.pool);
        Tensor logits = model.forward(tokens, /*train_mode=*/false);
        const long K = model.cfg.n_classes;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double* row = logits.values().data() + static_cast<long>(i) * K;
            long arg = 0;
            for (long j = 1; j < K; ++j)
                if (row[j] > row[arg]) arg = j;
            const int truth = split.labels[static_cast<std::size_t>(batch[i])];
            if (arg == truth) ++correct;
            if (confusion) ++(*confusion)[static_cast<std::size_t>(truth)][static_cast<std::size_t>(arg)];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

using EpochCallback = std::function<void(long epoch, double loss, double acc)>;

// One full training run, deterministic given the seed: weight init, epoch
// shuffles, and dropout masks all derive from it. Test accuracy is taken
// after the final epoch; no early stopping.
inline RunRecord train_one(const std::string& variant, const ModelConfig& mcfg,
                           const TokenizerConfig& tcfg, const TrainConfig& cfg,
                           const PreparedSplit& train, const PreparedSplit& test,
                           std::uint64_t seed, const EpochCallback& on_epoch = nullptr,
                           Classifier* out_model = nullptr) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    Classifier model = build(mcfg, tcfg, seed);
    AdamW opt(model.parameters(), cfg);
    // distinct stream from the init draws; constant is arbitrary but fixed
    Rng run_rng(seed + 0x9e3779b97f4a7c15ULL);

    RunRecord rec;
    rec.variant = variant;
    rec.seed = seed;
    rec.param_count = count_parameters(model);

    double best_acc = 0.0;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        long correct = 0, seen = 0, batch_index = 0;
        for (const auto& batch : epoch_batches(train.state.count, cfg.batch_size, &run_rng)) {
            std::vector<int> labels(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i)
                labels[i] = train.labels[static_cast<std::size_t>(batch[i])];

            Tensor tokens = assemble_tokens(train.state, batch, tcfg, model.pool);
            Tensor logits = model.forward(tokens, /*train_mode=*/true, &run_rng);
            Tensor loss = cross_entropy(logits, labels);
            if (!std::isfinite(loss.item()))
                throw NumericError("non-finite loss (seed=" + std::to_string(seed) +
                                   ", epoch=" + std::to_string(epoch + 1) +
                                   ", batch=" + std::to_string(batch_index + 1) + ")");
            opt.zero_grad();
            loss.backward();
            opt.clip_gradients();
            try {
                opt.step();
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " (seed=" + std::to_string(seed) +
                                   ", epoch=" + std::to_string(epoch + 1) +
                                   ", batch=" + std::to_string(batch_index + 1) + ")");
            }

            loss_sum += loss.item() * static_cast<double>(batch.size());
            const long K = mcfg.n_classes;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const double* row = logits.values().data() + static_cast<long>(i) * K;
                long arg = 0;
                for (long j = 1; j < K; ++j)
                    if (row[j] > row[arg]) arg = j;
                if (arg == labels[i]) ++correct;
            }
            seen += static_cast<long>(batch.size());
            ++batch_index;
        }
        rec.train_loss.push_back(loss_sum / static_cast<double>(seen));
        rec.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(seen));
        if (on_epoch) on_epoch(epoch + 1, rec.train_loss.back(), rec.train_acc.back());
        if (cfg.best_epoch) best_acc = std::max(best_acc, evaluate(model, test));
    }

    rec.test_accuracy = cfg.best_epoch ? best_acc : evaluate(model, test);
    rec.gem_p = model.pool.values();
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (out_model) *out_model = std::move(model);
    return rec;
}

struct VariantSummary {
    std::string variant;
    int n_seeds = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;  // sample std, N-1 denominator
    long param_count = 0;
    std::vector<double> mean_p;
};

struct ExperimentSummary {
    std::vector<VariantSummary> variants;
    std::vector<RunRecord> runs;
};

inline VariantSummary summarize_variant(const std::string& name,
                                        std::span<const RunRecord> runs) {
    VariantSummary s;
    s.variant = name;
    s.n_seeds = static_cast<int>(runs.size());
    if (runs.empty()) return s;
    for (const auto& r : runs) s.mean_acc += r.test_accuracy;
    s.mean_acc /= static_cast<double>(runs.size());
    if (runs.size() >= 2) {
        double ss = 0.0;
        for (const auto& r : runs)
            ss += (r.test_accuracy - s.mean_acc) * (r.test_accuracy - s.mean_acc);
        s.std_acc = std::sqrt(ss / static_cast<double>(runs.size() - 1));
    }
    s.param_count = runs[0].param_count;
    if (!runs[0].gem_p.empty()) {
        s.mean_p.assign(runs[0].gem_p.size(), 0.0);
        for (const auto& r : runs)
            for (std::size_t i = 0; i < r.gem_p.size(); ++i) s.mean_p[i] += r.gem_p[i];
        for (auto& v : s.mean_p) v /= static_cast<double>(runs.size());
    }
    return s;
}

using RunCallback = std::function<void(const RunRecord&)>;

// Runs every (variant, seed) combination; seeds of one variant may run in
// parallel worker threads (each run is single-threaded and independent).
// Token precomputation happens once per variant and is shared read-only.
inline ExperimentSummary run_experiment(const std::vector<std::string>& variants,
                                        const ModelConfig& mcfg, const TrainConfig& cfg,
                                        const DatasetSplit& train, const DatasetSplit& test,
                                        int jobs = 1, double gem_init = 3.0,
                                        const RunCallback& on_run = nullptr) {
    cfg.validate();
    ExperimentSummary summary;
    for (const auto& name : variants) {
        TokenizerConfig tcfg = tokenizer_for_variant(name);
        tcfg.gem_init = gem_init;
        tcfg.validate();
        PreparedSplit ptrain = prepare_split(train, tcfg);
        PreparedSplit ptest = prepare_split(test, tcfg);

        std::vector<RunRecord> runs(cfg.seeds.size());
        std::vector<std::string> errors;
        std::mutex mu;
        std::size_t next = 0;
        auto worker = [&]() {
            for (;;) {
                std::size_t i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= cfg.seeds.size()) return;
                    i = next++;
                }
                try {
                    RunRecord rec =
                        train_one(name, mcfg, tcfg, cfg, ptrain, ptest, cfg.seeds[i]);
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        runs[i] = rec;
                        if (on_run) on_run(runs[i]);
                    }
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(mu);
                    errors.emplace_back(e.what());
                }
            }
        };
        const int nworkers = std::max(1, std::min<int>(jobs, static_cast<int>(cfg.seeds.size())));
        std::vector<std::thread> threads;
        for (int w = 0; w < nworkers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (!errors.empty()) throw NumericError("run failed: " + errors.front());

        summary.variants.push_back(summarize_variant(name, runs));
        for (auto& r : runs) summary.runs.push_back(std::move(r));
    }
    return summary;
}

}  // namespace hiwave
