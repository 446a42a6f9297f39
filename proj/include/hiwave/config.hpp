#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiwave/errors.hpp"
#include "hiwave/model.hpp"
#include "hiwave/tokenizer.hpp"
#include "hiwave/trainer.hpp"

// JSON experiment configuration. Defaults reproduce the champion run; unknown
// keys are rejected at every level so typos fail loudly. Flag overrides are
// applied by the CLI on top of the parsed file.

namespace hiwave {

using json = nlohmann::json;

struct DataConfig {
    std::string root;
    bool standardize = true;
    bool cache = false;
};

struct OutputConfig {
    std::string dir = "runs";
};

struct ExperimentConfig {
    DataConfig data;
    TokenizerConfig tokenizer;
    ModelConfig model;
    TrainConfig train;
    OutputConfig output;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& section) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key))
            throw ConfigError("unknown config key '" + section + "." + key + "'");
}

}  // namespace detail

inline json tokenizer_to_json(const TokenizerConfig& t) {
    return json{{"variant", to_string(t.variant)},
                {"wavelet", t.wavelet},
                {"depth_set", t.depth_set},
                {"pooling", to_string(t.pooling)},
                {"gem_init", t.gem_init}};
}

inline TokenizerConfig tokenizer_from_json(const json& j) {
    detail::reject_unknown(j, {"variant", "wavelet", "depth_set", "pooling", "gem_init"},
                           "tokenizer");
    TokenizerConfig t;
    if (j.contains("variant")) t.variant = variant_from_string(j["variant"].get<std::string>());
    if (j.contains("wavelet")) t.wavelet = j["wavelet"].get<std::string>();
    if (j.contains("depth_set")) t.depth_set = j["depth_set"].get<std::vector<int>>();
    if (j.contains("pooling")) t.pooling = pooling_from_string(j["pooling"].get<std::string>());
    if (j.contains("gem_init")) t.gem_init = j["gem_init"].get<double>();
    return t;
}

inline json model_to_json(const ModelConfig& m) {
    return json{{"d_model", m.d_model},
                {"n_heads", m.n_heads},
                {"n_layers", m.n_layers},
                {"ffn_dim", m.ffn_dim},
                {"dropout", m.dropout}};
}

inline ModelConfig model_from_json(const json& j) {
    detail::reject_unknown(j, {"d_model", "n_heads", "n_layers", "ffn_dim", "dropout"}, "model");
    ModelConfig m;
    if (j.contains("d_model")) m.d_model = j["d_model"].get<long>();
    if (j.contains("n_heads")) m.n_heads = j["n_heads"].get<long>();
    if (j.contains("n_layers")) m.n_layers = j["n_layers"].get<long>();
    if (j.contains("ffn_dim")) m.ffn_dim = j["ffn_dim"].get<long>();
    if (j.contains("dropout")) m.dropout = j["dropout"].get<double>();
    return m;
}

inline json train_to_json(const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"lr", t.lr},
                {"batch_size", t.batch_size},
                {"weight_decay", t.weight_decay},
                {"seeds", t.seeds}};
}

inline TrainConfig train_from_json(const json& j) {
    detail::reject_unknown(j, {"epochs", "lr", "batch_size", "weight_decay", "seeds"}, "train");
    TrainConfig t;
    if (j.contains("epochs")) t.epochs = j["epochs"].get<long>();
    if (j.contains("lr")) t.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<long>();
    if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("seeds")) t.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    return t;
}

inline json config_to_json(const ExperimentConfig& c) {
    return json{{"data",
                 {{"root", c.data.root},
                  {"standardize", c.data.standardize},
                  {"cache", c.data.cache}}},
                {"tokenizer", tokenizer_to_json(c.tokenizer)},
                {"model", model_to_json(c.model)},
                {"train", train_to_json(c.train)},
                {"output", {{"dir", c.output.dir}}}};
}

inline ExperimentConfig config_from_json(const json& j) {
    detail::reject_unknown(j, {"data", "tokenizer", "model", "train", "output"}, "<root>");
    ExperimentConfig c;
    if (j.contains("data")) {
        const auto& d = j["data"];
        detail::reject_unknown(d, {"root", "standardize", "cache"}, "data");
        if (d.contains("root")) c.data.root = d["root"].get<std::string>();
        if (d.contains("standardize")) c.data.standardize = d["standardize"].get<bool>();
        if (d.contains("cache")) c.data.cache = d["cache"].get<bool>();
    }
    if (j.contains("tokenizer")) c.tokenizer = tokenizer_from_json(j["tokenizer"]);
    if (j.contains("model")) c.model = model_from_json(j["model"]);
    if (j.contains("train")) c.train = train_from_json(j["train"]);
    if (j.contains("output")) {
        detail::reject_unknown(j["output"], {"dir"}, "output");
        if (j["output"].contains("dir")) c.output.dir = j["output"]["dir"].get<std::string>();
    }
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

}  // namespace hiwave
