#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hiwave/hiwave.hpp"

// Command-line entry point. Verbs:
//   verify-data  check dataset presence, row counts and label coverage
//   train        run one configuration over its seeds, write records + checkpoints
//   eval         evaluate a checkpoint, print accuracy and a confusion matrix
//   ablate       run all seven configurations and write the summary tables
//   report       regenerate summary/report files from stored run records
// Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.

namespace fs = std::filesystem;
using namespace hiwave;

namespace {

std::string resolve_data_root(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("HIWAVE_DATA_ROOT")) return env;
    return "";
}

// Loads both splits, preferring the binary cache when enabled.
std::pair<DatasetSplit, DatasetSplit> load_data(const DataConfig& cfg) {
    if (cfg.root.empty())
        throw ConfigError("no dataset root; pass --data-root or set HIWAVE_DATA_ROOT");
    DatasetSplit train, test;
    const fs::path root = cfg.root;
    const fs::path cache_train = root / "train.hiwave.bin";
    const fs::path cache_test = root / "test.hiwave.bin";
    if (cfg.cache && fs::exists(cache_train) && fs::exists(cache_test)) {
        train = load_cache(cache_train, "train");
        test = load_cache(cache_test, "test");
    } else {
        std::tie(train, test) = load_ucihar(root);
        if (cfg.cache) {
            save_cache(train, cache_train);
            save_cache(test, cache_test);
        }
    }
    if (cfg.standardize) {
        ChannelStats stats = compute_stats(train);
        standardize(train, stats);
        standardize(test, stats);
    }
    return {std::move(train), std::move(test)};
}

int cmd_verify_data(const std::string& root_flag) {
    const std::string root = resolve_data_root(root_flag);
    if (root.empty()) {
        std::cerr << "error: no dataset root; pass --data-root or set HIWAVE_DATA_ROOT\n";
        return 1;
    }
    auto [train, test] = load_ucihar(root);
    for (const auto* split : {&train, &test}) {
        std::vector<long> counts(kHarClasses, 0);
        for (int y : split->labels) ++counts[static_cast<std::size_t>(y)];
        for (long k = 0; k < kHarClasses; ++k)
            if (counts[static_cast<std::size_t>(k)] == 0)
                throw DataError("class " + std::to_string(k + 1) + " missing from " +
                                split->split + " split");
        for (int s : split->subjects)
            if (s < 1 || s > 30) throw DataError("subject id out of range in " + split->split);
    }
    std::cout << "OK, train=" << train.count << ", test=" << test.count << "\n";
    return 0;
}

struct CliOverrides {
    std::string variant;
    std::string seeds_csv;
    long epochs = -1;
    double lr = -1.0;
    long batch_size = -1;
    double dropout = -1.0;
    double weight_decay = -1.0;
    double gem_init = -1.0;
    std::string data_root;
    std::string out_dir;
    bool no_standardize = false;
    bool use_cache = false;
};

// Precedence: flags > config file > defaults.
ExperimentConfig apply_overrides(ExperimentConfig cfg, const CliOverrides& o) {
    if (!o.variant.empty()) cfg.tokenizer = tokenizer_for_variant(o.variant);
    if (!o.seeds_csv.empty()) {
        cfg.train.seeds.clear();
        std::stringstream ss(o.seeds_csv);
        std::string item;
        while (std::getline(ss, item, ','))
            cfg.train.seeds.push_back(std::stoull(item));
    }
    if (o.epochs >= 0) cfg.train.epochs = o.epochs;
    if (o.lr >= 0) cfg.train.lr = o.lr;
    if (o.batch_size >= 0) cfg.train.batch_size = o.batch_size;
    if (o.dropout >= 0) cfg.model.dropout = o.dropout;
    if (o.weight_decay >= 0) cfg.train.weight_decay = o.weight_decay;
    if (o.gem_init >= 0) cfg.tokenizer.gem_init = o.gem_init;
    if (!o.data_root.empty()) cfg.data.root = o.data_root;
    if (cfg.data.root.empty()) cfg.data.root = resolve_data_root("");
    if (!o.out_dir.empty()) cfg.output.dir = o.out_dir;
    if (o.no_standardize) cfg.data.standardize = false;
    if (o.use_cache) cfg.data.cache = true;
    return cfg;
}

std::string variant_name_of(const TokenizerConfig& t) {
    for (const auto& name : variant_names()) {
        TokenizerConfig c = tokenizer_for_variant(name);
        if (c.variant == t.variant && c.wavelet == t.wavelet && c.depth_set == t.depth_set &&
            c.pooling == t.pooling)
            return name;
    }
    return "custom";
}

void persist_effective_config(const ExperimentConfig& cfg, const fs::path& dir) {
    write_file_atomic(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

int cmd_train(const ExperimentConfig& cfg, bool force) {
    cfg.tokenizer.validate();
    cfg.model.validate();
    cfg.train.validate();
    const std::string variant = variant_name_of(cfg.tokenizer);

    const fs::path out = cfg.output.dir;
    fs::create_directories(out);
    const fs::path records_path = out / (variant + ".jsonl");
    if (fs::exists(records_path) && !force) {
        std::cerr << "error: " << records_path.string() << " exists; rerun with --force\n";
        return 1;
    }
    if (fs::exists(records_path)) fs::remove(records_path);
    persist_effective_config(cfg, out);

    auto [train, test] = load_data(cfg.data);
    PreparedSplit ptrain = prepare_split(train, cfg.tokenizer);
    PreparedSplit ptest = prepare_split(test, cfg.tokenizer);

    std::vector<RunRecord> runs;
    for (std::uint64_t seed : cfg.train.seeds) {
        std::cout << "run variant=" << variant << " seed=" << seed << std::endl;
        Classifier model;
        RunRecord rec = train_one(
            variant, cfg.model, cfg.tokenizer, cfg.train, ptrain, ptest, seed,
            [&](long epoch, double loss, double acc) {
                std::cout << "epoch " << epoch << "/" << cfg.train.epochs << " loss=" << loss
                          << " acc=" << acc << std::endl;
            },
            &model);
        std::cout << "param_count " << rec.param_count << "\n";
        std::cout << "test_accuracy " << rec.test_accuracy << " (seed " << seed << ", "
                  << rec.wall_seconds << "s)" << std::endl;
        append_run_record(records_path, rec);
        save_checkpoint(model, out / (variant + "-seed" + std::to_string(seed) + ".ckpt.json"));
        runs.push_back(rec);
    }

    VariantSummary s = summarize_variant(variant, runs);
    char line[96];
    std::snprintf(line, sizeof(line), "%s: %.4f +/- %.4f over %d seed(s)\n", variant.c_str(),
                  s.mean_acc, s.std_acc, s.n_seeds);
    std::cout << line;
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& root_flag) {
    Classifier model = load_checkpoint(checkpoint);
    DataConfig dc;
    dc.root = resolve_data_root(root_flag);
    auto [train, test] = load_data(dc);
    (void)train;
    PreparedSplit ptest = prepare_split(test, model.tok);
    std::vector<std::vector<long>> confusion;
    const double acc = evaluate(model, ptest, &confusion);
    std::cout << "test_accuracy " << acc << "\n";
    std::cout << "confusion matrix (rows = true class, cols = predicted):\n";
    for (const auto& row : confusion) {
        for (std::size_t j = 0; j < row.size(); ++j) std::cout << (j ? "," : "") << row[j];
        std::cout << "\n";
    }
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, int jobs, bool force) {
    const fs::path out = cfg.output.dir;
    fs::create_directories(out);
    const fs::path records_path = out / "runs.jsonl";
    if (fs::exists(records_path) && !force) {
        std::cerr << "error: " << records_path.string() << " exists; rerun with --force\n";
        return 1;
    }
    if (fs::exists(records_path)) fs::remove(records_path);
    persist_effective_config(cfg, out);

    auto [train, test] = load_data(cfg.data);
    ExperimentSummary summary = run_experiment(
        variant_names(), cfg.model, cfg.train, train, test, jobs, cfg.tokenizer.gem_init,
        [&](const RunRecord& rec) {
            append_run_record(records_path, rec);
            std::cout << rec.variant << " seed=" << rec.seed << " acc=" << rec.test_accuracy
                      << " (" << rec.wall_seconds << "s)" << std::endl;
        });

    write_file_atomic(out / "summary.csv", summary_csv(summary.variants));
    write_file_atomic(out / "summary.json", summary_to_json(summary).dump(2) + "\n");
    write_file_atomic(out / "report.md", markdown_report(summary.variants));
    nlohmann::json pvals = nlohmann::json::object();
    for (const auto& r : summary.runs)
        if (!r.gem_p.empty()) pvals[r.variant + "-seed" + std::to_string(r.seed)] = r.gem_p;
    write_file_atomic(out / "p_values.json", pvals.dump(2) + "\n");
    std::cout << "wrote " << (out / "summary.csv").string() << ", summary.json, report.md, "
              << "p_values.json\n";
    return 0;
}

int cmd_report(const std::string& records_file, const std::string& out_dir) {
    auto records = read_run_records(records_file);
    if (records.empty()) throw DataError("no run records in " + records_file);
    std::vector<std::string> order;
    std::vector<VariantSummary> variants;
    for (const auto& r : records)
        if (std::find(order.begin(), order.end(), r.variant) == order.end())
            order.push_back(r.variant);
    for (const auto& name : order) {
        std::vector<RunRecord> rs;
        for (const auto& r : records)
            if (r.variant == name) rs.push_back(r);
        variants.push_back(summarize_variant(name, rs));
    }
    const fs::path out = out_dir;
    fs::create_directories(out);
    write_file_atomic(out / "summary.csv", summary_csv(variants));
    write_file_atomic(out / "report.md", markdown_report(variants));
    std::cout << markdown_report(variants);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patch-transformer time-series classifier with wavelet-packet features"};
    app.require_subcommand(1);

    // verify-data
    auto* verify = app.add_subcommand("verify-data", "validate a dataset directory");
    std::string verify_root;
    verify->add_option("--data-root", verify_root, "dataset root directory");

    // common train/ablate options
    CliOverrides ov;
    std::string config_path;
    bool force = false;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--variant", ov.variant, "named variant configuration");
        cmd->add_option("--seeds", ov.seeds_csv, "comma-separated seed list");
        cmd->add_option("--epochs", ov.epochs, "training epochs");
        cmd->add_option("--lr", ov.lr, "learning rate");
        cmd->add_option("--batch-size", ov.batch_size, "batch size");
        cmd->add_option("--dropout", ov.dropout, "dropout rate");
        cmd->add_option("--weight-decay", ov.weight_decay, "AdamW weight decay");
        cmd->add_option("--gem-init", ov.gem_init, "initial pooling exponent");
        cmd->add_option("--data-root", ov.data_root, "dataset root directory");
        cmd->add_option("--out", ov.out_dir, "output directory");
        cmd->add_flag("--no-standardize", ov.no_standardize, "skip per-channel z-scoring");
        cmd->add_flag("--cache", ov.use_cache, "use/write the binary dataset cache");
        cmd->add_flag("--force", force, "overwrite existing outputs");
    };

    auto* train = app.add_subcommand("train", "train one configuration over its seeds");
    add_common(train);

    auto* ablate = app.add_subcommand("ablate", "run all seven configurations");
    add_common(ablate);
    ablate->add_option("--jobs", jobs, "parallel runs");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt_path, eval_root;
    eval->add_option("checkpoint", ckpt_path, "checkpoint JSON file")->required();
    eval->add_option("--data-root", eval_root, "dataset root directory");

    auto* report = app.add_subcommand("report", "summarize stored run records");
    std::string records_file, report_out = "runs";
    report->add_option("records", records_file, "run-records JSONL file")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (verify->parsed()) return cmd_verify_data(verify_root);
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        cfg = apply_overrides(cfg, ov);
        if (train->parsed()) return cmd_train(cfg, force);
        if (ablate->parsed()) return cmd_ablate(cfg, jobs, force);
        if (eval->parsed()) return cmd_eval(ckpt_path, eval_root);
        if (report->parsed()) return cmd_report(records_file, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
