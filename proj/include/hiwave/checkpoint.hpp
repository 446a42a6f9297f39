#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "hiwave/config.hpp"
#include "hiwave/model.hpp"

// Model checkpoint: one JSON document holding both configs, the seed, and
// every trainable parameter as shape + flat value array. Doubles are written
// with shortest round-trip formatting, so reload is bit-exact.

namespace hiwave {

inline void save_checkpoint(Classifier& model, const std::filesystem::path& path) {
    nlohmann::json params = nlohmann::json::object();
    for (const auto& p : model.parameters())
        params[p.name] = {{"shape", p.tensor.shape()}, {"data", p.tensor.values()}};
    nlohmann::json j{{"format", "hiwave-checkpoint"},
                     {"version", 1},
                     {"seed", model.seed},
                     {"tokenizer", tokenizer_to_json(model.tok)},
                     {"model", model_to_json(model.cfg)},
                     {"parameters", std::move(params)}};
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint: " + tmp.string());
        out << j.dump();
    }
    std::filesystem::rename(tmp, path);
}

inline Classifier load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing checkpoint: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("invalid checkpoint JSON in " + path.string() + ": " + e.what());
    }
    if (j.value("format", "") != "hiwave-checkpoint" || j.value("version", 0) != 1)
        throw DataError("unrecognized checkpoint format in " + path.string());

    Classifier model = build(model_from_json(j.at("model")), tokenizer_from_json(j.at("tokenizer")),
                             j.at("seed").get<std::uint64_t>());
    const auto& params = j.at("parameters");
    for (auto& p : model.parameters()) {
        if (!params.contains(p.name))
            throw DataError("checkpoint missing parameter '" + p.name + "'");
        const auto& entry = params.at(p.name);
        auto shape = entry.at("shape").get<Shape>();
        if (shape != p.tensor.shape())
            throw DataError("checkpoint shape mismatch for '" + p.name + "': expected " +
                            shape_str(p.tensor.shape()) + ", got " + shape_str(shape));
        p.tensor.values() = entry.at("data").get<std::vector<double>>();
    }
    return model;
}

}  // namespace hiwave
