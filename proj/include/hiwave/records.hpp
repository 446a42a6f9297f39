#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiwave/errors.hpp"
#include "hiwave/trainer.hpp"

// Run-record and summary serialization: JSON lines for records, CSV and JSON
// for summaries, and a markdown report that puts reproduced numbers next to
// the published reference values.

namespace hiwave {

struct ReferenceResult {
    const char* variant;
    double mean_acc;
    double std_acc;
    long param_count;  // 0 when not published
};

// Published reference accuracies for the seven configurations.
inline const std::vector<ReferenceResult>& reference_results() {
    static const std::vector<ReferenceResult> refs = {
        {"baseline", 0.9259, 0.0039, 159814},
        {"hybrid-L3-db2-gem", 0.9338, 0.0043, 164430},
        {"replacement-L3-db2-gem", 0.9115, 0.0031, 0},
        {"hybrid-L2-db2-gem", 0.9301, 0.0019, 0},
        {"hybrid-pyramid-db2-gem", 0.9324, 0.0051, 0},
        {"hybrid-L3-db4-gem", 0.9290, 0.0025, 0},
        {"hybrid-L3-db2-avg", 0.9287, 0.0059, 0},
    };
    return refs;
}

inline std::optional<ReferenceResult> reference_for(const std::string& variant) {
    for (const auto& r : reference_results())
        if (variant == r.variant) return r;
    return std::nullopt;
}

inline nlohmann::json run_record_to_json(const RunRecord& r) {
    return nlohmann::json{{"variant", r.variant},
                          {"seed", r.seed},
                          {"train_loss", r.train_loss},
                          {"train_acc", r.train_acc},
                          {"test_accuracy", r.test_accuracy},
                          {"gem_p", r.gem_p},
                          {"param_count", r.param_count},
                          {"wall_seconds", r.wall_seconds}};
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
    RunRecord r;
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.train_acc = j.at("train_acc").get<std::vector<double>>();
    r.test_accuracy = j.at("test_accuracy").get<double>();
    r.gem_p = j.at("gem_p").get<std::vector<double>>();
    r.param_count = j.at("param_count").get<long>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
}

inline void append_run_record(const std::filesystem::path& jsonl, const RunRecord& r) {
    std::ofstream out(jsonl, std::ios::app);
    if (!out) throw DataError("cannot write " + jsonl.string());
    out << run_record_to_json(r).dump() << "\n";
}

inline std::vector<RunRecord> read_run_records(const std::filesystem::path& jsonl) {
    std::ifstream in(jsonl);
    if (!in) throw DataError("cannot read " + jsonl.string());
    std::vector<RunRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(run_record_from_json(nlohmann::json::parse(line)));
    }
    return records;
}

inline std::string summary_csv(const std::vector<VariantSummary>& variants) {
    std::ostringstream os;
    os << "variant,mean_acc,std_acc,n_seeds,param_count\n";
    for (const auto& v : variants) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%d,%ld\n", v.variant.c_str(), v.mean_acc,
                      v.std_acc, v.n_seeds, v.param_count);
        os << buf;
    }
    return os.str();
}

inline nlohmann::json summary_to_json(const ExperimentSummary& s) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& v : s.variants) {
        out.push_back({{"variant", v.variant},
                       {"mean_acc", v.mean_acc},
                       {"std_acc", v.std_acc},
                       {"n_seeds", v.n_seeds},
                       {"param_count", v.param_count},
                       {"mean_p", v.mean_p}});
    }
    return out;
}

// Markdown table: reproduced mean/std side by side with the reference values.
inline std::string markdown_report(const std::vector<VariantSummary>& variants) {
    std::ostringstream os;
    os << "# Experiment report\n\n";
    os << "| variant | params | reproduced acc | reference acc | delta |\n";
    os << "|---|---|---|---|---|\n";
    for (const auto& v : variants) {
        char repr[64];
        std::snprintf(repr, sizeof(repr), "%.4f +/- %.4f", v.mean_acc, v.std_acc);
        std::string ref = "-", delta = "-";
        if (auto r = reference_for(v.variant)) {
            char rbuf[64], dbuf[32];
            std::snprintf(rbuf, sizeof(rbuf), "%.4f +/- %.4f", r->mean_acc, r->std_acc);
            std::snprintf(dbuf, sizeof(dbuf), "%+.4f", v.mean_acc - r->mean_acc);
            ref = rbuf;
            delta = dbuf;
        }
        os << "| " << v.variant << " | " << v.param_count << " | " << repr << " | " << ref
           << " | " << delta << " |\n";
    }
    os << "\nLearned pooling exponents (mean over seeds):\n\n";
    for (const auto& v : variants) {
        if (v.mean_p.empty()) continue;
        os << "- " << v.variant << ": [";
        for (std::size_t i = 0; i < v.mean_p.size(); ++i) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%s%.3f", i ? ", " : "", v.mean_p[i]);
            os << buf;
        }
        os << "]\n";
    }
    return os.str();
}

// Atomic file write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace hiwave
