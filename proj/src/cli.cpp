#include "stids/cli.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "stids/data.hpp"
#include "stids/errors.hpp"
#include "stids/metrics.hpp"
#include "stids/rng.hpp"
#include "stids/synthetic.hpp"
#include "stids/trainer.hpp"

namespace stids {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::string default_out_root() {
    const char* env = std::getenv("STIDS_OUT");
    return env && *env ? std::string(env) : std::string("runs");
}

void write_text_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out << content;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig load_train_config(const std::string& config_path) {
    if (config_path.empty()) return TrainConfig{};
    json j = json::parse(read_text_file(config_path));
    if (j.contains("train")) return TrainConfig::from_json(j["train"].dump());
    return TrainConfig::from_json(j.dump());
}

struct Splits {
    Dataset labeled;
    Dataset unlabeled;
    Dataset test;
};

Splits load_splits(const std::string& dir) {
    Splits s;
    s.labeled = Dataset::load((fs::path(dir) / "train_labeled.stds").string());
    s.unlabeled = Dataset::load((fs::path(dir) / "train_unlabeled.stds").string());
    s.test = Dataset::load((fs::path(dir) / "test.stds").string());
    return s;
}

Dataset subsample_unlabeled(const Dataset& unlabeled, double fraction, uint64_t seed) {
    if (fraction >= 1.0) return unlabeled;
    if (fraction <= 0.0) {
        Dataset empty;
        empty.class_names = unlabeled.class_names;
        empty.features = Matrix(0, unlabeled.dim());
        empty.recompute_class_counts();
        return empty;
    }
    std::vector<size_t> idx(unlabeled.rows());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto rng = seeded_rng(derive_seed(seed, 0x554c /* ul subsample */));
    shuffle_vec(idx, rng);
    idx.resize(static_cast<size_t>(fraction * static_cast<double>(idx.size())));
    std::sort(idx.begin(), idx.end());
    return take_rows(unlabeled, idx, true);
}

void resolve_model_dims(TrainConfig& cfg, const Dataset& labeled) {
    if (cfg.model.input_dim == 0) cfg.model.input_dim = labeled.dim();
    if (cfg.model.num_classes == 0) cfg.model.num_classes = labeled.num_classes();
}

void write_loss_curves(const fs::path& path, const std::vector<EpochLoss>& warmup,
                       const std::vector<RoundReport>& rounds) {
    std::ostringstream out;
    out << "epoch,l_scl,l_wce,l_hy,beta\n";
    auto emit = [&](const std::vector<EpochLoss>& log) {
        for (const auto& e : log)
            out << e.epoch << "," << e.l_scl << "," << e.l_wce << "," << e.l_hy << "," << e.beta << "\n";
    };
    emit(warmup);
    for (const auto& r : rounds) emit(r.losses);
    write_text_file(path, out.str());
}

void write_audit_csv(const fs::path& path, const RoundReport& rep, const Dataset& unlabeled) {
    std::ostringstream out;
    out << "sample_index,predicted,confidence,uncertainty,kept,hidden_true_label\n";
    for (const auto& pl : rep.audit) {
        out << pl.sample_index << "," << pl.predicted_class << "," << pl.confidence << "," << pl.uncertainty
            << "," << (pl.kept ? 1 : 0) << "," << unlabeled.hidden_label(pl.sample_index) << "\n";
    }
    write_text_file(path, out.str());
}

json round_report_json(const RoundReport& rep) {
    json j;
    j["round"] = rep.round;
    j["generated"] = rep.generated;
    j["kept"] = rep.kept;
    j["after_cap"] = rep.after_cap;
    j["synthetic"] = rep.synthetic;
    j["warnings"] = rep.warnings;
    j["snapshot"] = {{"accuracy", rep.snapshot.accuracy},
                     {"macro_precision", rep.snapshot.macro_precision},
                     {"macro_recall", rep.snapshot.macro_recall},
                     {"macro_f1", rep.snapshot.macro_f1}};
    return j;
}

json metrics_json(const MetricsReport& rep) {
    json j;
    j["accuracy"] = rep.accuracy;
    j["macro_precision"] = rep.macro_precision;
    j["macro_recall"] = rep.macro_recall;
    j["macro_f1"] = rep.macro_f1;
    j["per_class_precision"] = rep.per_class_precision;
    return j;
}

// Full self-training run into `out_dir`; returns the final test metrics.
MetricsReport run_selftrain(const Splits& splits, TrainConfig cfg, double unlabeled_fraction,
                            const fs::path& out_dir, bool quiet) {
    resolve_model_dims(cfg, splits.labeled);
    Dataset pool = subsample_unlabeled(splits.unlabeled, unlabeled_fraction, cfg.seed);

    fs::create_directories(out_dir / "checkpoints");
    fs::create_directories(out_dir / "reports");
    fs::create_directories(out_dir / "audit");
    fs::create_directories(out_dir / "curves");
    json resolved = json::parse(cfg.to_json());
    resolved["unlabeled_fraction"] = unlabeled_fraction;
    write_text_file(out_dir / "config.json", resolved.dump(2));

    auto result = self_train(splits.labeled, pool, cfg);

    save_checkpoint((out_dir / "checkpoints" / "round_0.bin").string(), cfg.model, result.warmup_params);
    for (const auto& rep : result.rounds) {
        const std::string tag = "round_" + std::to_string(rep.round);
        write_text_file(out_dir / "reports" / (tag + ".json"), round_report_json(rep).dump(2));
        write_audit_csv(out_dir / "audit" / ("pseudo_" + tag + ".csv"), rep, pool);
    }
    save_checkpoint((out_dir / "checkpoints" / "final.bin").string(), cfg.model, result.params);
    write_loss_curves(out_dir / "curves" / "loss.csv", result.warmup_log, result.rounds);

    auto test_metrics = evaluate_checkpoint(result.params, cfg, splits.test);
    write_text_file(out_dir / "reports" / "final.json", metrics_json(test_metrics).dump(2));

    if (!quiet) {
        for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        for (const auto& rep : result.rounds) {
            std::cout << "round " << rep.round << ": generated=" << rep.generated << " kept=" << rep.kept
                      << " after_cap=" << rep.after_cap << " synthetic=" << rep.synthetic << "\n";
            for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
        }
        std::cout << render_table({{"selftrain", test_metrics}}, TableFormat::Text);
    }
    return test_metrics;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareOptions {
    std::vector<std::string> csv_paths;
    std::string schema_path;
    bool has_header = false;
    bool synthetic = false;
    SyntheticConfig synth;
    double test_fraction = 0.2;
    double label_fraction = 0.01;
    uint64_t seed = 1;
    std::string out_dir;
};

void write_manifest(const fs::path& out_dir, const SplitResult& splits, const PrepareOptions& opt,
                    uint64_t schema_hash) {
    json manifest;
    manifest["classes"] = splits.train_labeled.class_names;
    manifest["train_labeled_counts"] = splits.train_labeled.class_counts;
    manifest["test_counts"] = splits.test.class_counts;
    manifest["train_unlabeled_rows"] = splits.train_unlabeled.rows();
    manifest["feature_dim"] = splits.train_labeled.dim();
    manifest["test_fraction"] = opt.test_fraction;
    manifest["label_fraction"] = opt.label_fraction;
    manifest["seed"] = opt.seed;
    manifest["schema_hash"] = schema_hash;
    write_text_file(out_dir / "manifest.json", manifest.dump(2));
}

int cmd_prepare(const PrepareOptions& opt) {
    fs::create_directories(opt.out_dir);

    SplitResult splits;
    uint64_t schema_hash = 0;

    if (opt.synthetic) {
        SyntheticConfig sc = opt.synth;
        sc.seed = opt.seed;
        Dataset full = make_synthetic(sc);
        splits = split(full, opt.test_fraction, opt.label_fraction, opt.seed);
        json sj = {{"classes", sc.classes},         {"samples", sc.samples}, {"imbalance_ratio", sc.imbalance_ratio},
                   {"overlap", sc.overlap},          {"dim", sc.dim},         {"seed", sc.seed}};
        write_text_file(fs::path(opt.out_dir) / "synthetic.json", sj.dump(2));
    } else {
        if (opt.csv_paths.empty()) throw ConfigError("prepare: provide --data CSV files or --synthetic");
        if (opt.schema_path.empty()) throw ConfigError("prepare: --schema is required for CSV input");
        Schema schema = Schema::load(opt.schema_path);
        schema_hash = schema.hash();

        std::vector<RawRecord> records;
        for (const auto& path : opt.csv_paths) {
            auto part = load_csv(path, schema, opt.has_header);
            records.insert(records.end(), std::make_move_iterator(part.begin()),
                           std::make_move_iterator(part.end()));
        }
        if (records.empty()) throw ConfigError("prepare: no records loaded");

        // Resolve merged labels up front so rows can be split before any
        // statistics are fitted; the standardizer sees training rows only.
        std::vector<RawRecord> live;
        std::vector<std::string> class_names = schema.classes;
        std::vector<int> labels;
        for (auto& rec : records) {
            auto merged = schema.merge_label(rec.label);
            if (!merged) continue;
            auto it = std::find(class_names.begin(), class_names.end(), *merged);
            int idx;
            if (it == class_names.end()) {
                idx = static_cast<int>(class_names.size());
                class_names.push_back(*merged);
            } else {
                idx = static_cast<int>(it - class_names.begin());
            }
            labels.push_back(idx);
            live.push_back(std::move(rec));
        }

        auto idx = split_indices(labels, class_names.size(), opt.test_fraction, opt.label_fraction, opt.seed);
        std::vector<RawRecord> train_records;
        for (size_t i : idx.train_labeled) train_records.push_back(live[i]);
        for (size_t i : idx.train_unlabeled) train_records.push_back(live[i]);
        Standardizer st = fit_preprocess(train_records, schema);

        Schema fixed = schema;
        fixed.classes = class_names;
        Dataset full = transform(live, st, fixed);
        splits.train_labeled = take_rows(full, idx.train_labeled, false);
        splits.train_unlabeled = take_rows(full, idx.train_unlabeled, true);
        splits.test = take_rows(full, idx.test, false);
        write_text_file(fs::path(opt.out_dir) / "schema.json", fixed.to_json());
    }

    splits.train_labeled.save((fs::path(opt.out_dir) / "train_labeled.stds").string(), schema_hash);
    splits.train_unlabeled.save((fs::path(opt.out_dir) / "train_unlabeled.stds").string(), schema_hash);
    splits.test.save((fs::path(opt.out_dir) / "test.stds").string(), schema_hash);
    write_manifest(opt.out_dir, splits, opt, schema_hash);

    std::cout << "prepared " << splits.train_labeled.rows() << " labeled / " << splits.train_unlabeled.rows()
              << " unlabeled / " << splits.test.rows() << " test rows into " << opt.out_dir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const Splits& splits, TrainConfig base, const fs::path& out_dir) {
    resolve_model_dims(base, splits.labeled);
    fs::create_directories(out_dir);

    struct Cell {
        std::string label;
        bool scl;
        bool weights;
    };
    const std::vector<Cell> grid = {{"baseline", false, false},
                                    {"scl_only", true, false},
                                    {"weights_only", false, true},
                                    {"hybrid", true, true}};

    std::vector<std::pair<std::string, MetricsReport>> rows;
    for (const auto& cell : grid) {
        TrainConfig cfg = base;
        cfg.loss.use_scl = cell.scl;
        cfg.loss.use_class_weights = cell.weights;
        cfg.loss.use_reset_weights = cell.weights;
        auto trained = train_supervised(splits.labeled, cfg);
        auto metrics = evaluate_checkpoint(trained.params, cfg, splits.test);
        std::string label = cell.label + "(scl=" + (cell.scl ? "on" : "off") +
                            ",weights=" + (cell.weights ? "on" : "off") + ")";
        rows.emplace_back(label, metrics);
    }

    // Compact Pre / Macro-F1 comparison across the four configurations.
    std::ostringstream compact;
    compact << "metric";
    for (const auto& [label, rep] : rows) {
        (void)rep;
        compact << "," << label;
    }
    compact << "\nPre";
    for (const auto& [label, rep] : rows)
        compact << "," << rep.macro_precision * 100.0;
    compact << "\nMacro-F1";
    for (const auto& [label, rep] : rows)
        compact << "," << rep.macro_f1 * 100.0;
    compact << "\n";
    write_text_file(out_dir / "ablation.csv", compact.str());
    write_text_file(out_dir / "ablation_full.json", render_table(rows, TableFormat::Json));

    std::cout << compact.str();
    std::cout << render_table(rows, TableFormat::Text);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const Splits& splits, const TrainConfig& base, const std::vector<uint64_t>& seeds,
              const std::vector<double>& fractions, size_t workers, const fs::path& out_dir) {
    struct Job {
        uint64_t seed;
        double fraction;
    };
    std::vector<Job> jobs;
    for (double f : fractions)
        for (uint64_t s : seeds) jobs.push_back({s, f});

    std::vector<MetricsReport> results(jobs.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            TrainConfig cfg = base;
            cfg.seed = jobs[i].seed;
            std::ostringstream name;
            name << "seed" << jobs[i].seed << "_ul" << jobs[i].fraction;
            results[i] = run_selftrain(splits, cfg, jobs[i].fraction, out_dir / name.str(), /*quiet=*/true);
        }
    };
    const size_t n_threads = std::max<size_t>(1, std::min(workers, jobs.size()));
    std::vector<std::thread> pool;
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ostringstream out;
    out << "unlabeled_fraction,mean_precision,mean_macro_f1,seeds\n";
    std::cout << "unlabeled_fraction  mean_precision  mean_macro_f1\n";
    for (double f : fractions) {
        double sum_p = 0.0, sum_f1 = 0.0;
        size_t count = 0;
        for (size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].fraction != f) continue;
            sum_p += results[i].macro_precision;
            sum_f1 += results[i].macro_f1;
            ++count;
        }
        const double mp = 100.0 * sum_p / static_cast<double>(count);
        const double mf = 100.0 * sum_f1 / static_cast<double>(count);
        out << f << "," << mp << "," << mf << "," << count << "\n";
        std::cout << f << "  " << mp << "  " << mf << "\n";
    }
    write_text_file(out_dir / "summary.csv", out.str());
    return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Semi-supervised intrusion-detection training pipeline"};
    app.require_subcommand(1);

    // prepare ---------------------------------------------------------------
    PrepareOptions prep;
    auto* prepare = app.add_subcommand("prepare", "Encode, standardize, and split a dataset");
    prepare->add_option("--data", prep.csv_paths, "CSV input files (repeatable)");
    prepare->add_option("--schema", prep.schema_path, "Schema JSON file");
    prepare->add_flag("--header", prep.has_header, "CSV files start with a header row");
    prepare->add_flag("--synthetic", prep.synthetic, "Generate the built-in long-tailed Gaussian benchmark");
    prepare->add_option("--synth-classes", prep.synth.classes);
    prepare->add_option("--synth-samples", prep.synth.samples);
    prepare->add_option("--synth-imbalance", prep.synth.imbalance_ratio);
    prepare->add_option("--synth-overlap", prep.synth.overlap);
    prepare->add_option("--synth-dim", prep.synth.dim);
    prepare->add_option("--test-fraction", prep.test_fraction);
    prepare->add_option("--label-fraction", prep.label_fraction);
    prepare->add_option("--seed", prep.seed);
    prepare->add_option("--out", prep.out_dir, "Output directory for the split containers");

    // shared training options -----------------------------------------------
    std::string splits_dir, config_path, out_dir;
    uint64_t seed_flag = 0;
    bool seed_set = false;
    long epochs_flag = -1, round_epochs_flag = -1, rounds_flag = -1, batch_flag = -1;
    double lr_flag = -1.0, unlabeled_fraction = 1.0, validation_fraction = -1.0;

    auto add_train_opts = [&](CLI::App* cmd, bool with_rounds) {
        cmd->add_option("--splits", splits_dir, "Directory produced by prepare")->required();
        cmd->add_option("--config", config_path, "Run configuration JSON (train section or full document)");
        cmd->add_option("--out", out_dir, "Run output directory");
        cmd->add_option("--seed", seed_flag)->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--epochs", epochs_flag);
        cmd->add_option("--batch-size", batch_flag);
        cmd->add_option("--lr", lr_flag);
        cmd->add_option("--validation-fraction", validation_fraction);
        if (with_rounds) {
            cmd->add_option("--rounds", rounds_flag);
            cmd->add_option("--round-epochs", round_epochs_flag);
            cmd->add_option("--unlabeled-fraction", unlabeled_fraction);
        }
    };

    auto* train = app.add_subcommand("train", "Supervised training on the labeled split");
    add_train_opts(train, false);
    auto* selftrain = app.add_subcommand("selftrain", "Full self-training pipeline");
    add_train_opts(selftrain, true);
    auto* ablate = app.add_subcommand("ablate", "2x2 loss-component ablation grid (supervised)");
    add_train_opts(ablate, false);

    // sweep -------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "Self-training grid over seeds and unlabeled fractions");
    std::string seeds_arg = "1,2,3,4,5", fractions_arg = "0,0.5,1.0";
    size_t workers = 1;
    add_train_opts(sweep, true);
    sweep->add_option("--seeds", seeds_arg, "Comma-separated seed list");
    sweep->add_option("--unlabeled-fractions", fractions_arg, "Comma-separated fraction list");
    sweep->add_option("--workers", workers, "Concurrent runs");

    // evaluate ----------------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
    std::string ckpt_path, eval_splits, eval_out;
    evaluate->add_option("--checkpoint", ckpt_path)->required();
    evaluate->add_option("--splits", eval_splits)->required();
    evaluate->add_option("--out", eval_out, "Optional JSON report path");

    std::vector<std::string> argv_strings = args;
    std::vector<const char*> argv;
    argv.push_back("stids");
    for (const auto& a : argv_strings) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        auto apply_flags = [&](TrainConfig& cfg) {
            if (seed_set) cfg.seed = seed_flag;
            if (epochs_flag >= 0) cfg.epochs = static_cast<size_t>(epochs_flag);
            if (round_epochs_flag >= 0) cfg.round_epochs = static_cast<size_t>(round_epochs_flag);
            if (rounds_flag >= 0) cfg.rounds = static_cast<size_t>(rounds_flag);
            if (batch_flag >= 0) cfg.batch_size = static_cast<size_t>(batch_flag);
            if (lr_flag > 0.0) cfg.learning_rate = lr_flag;
            if (validation_fraction >= 0.0) cfg.validation_fraction = validation_fraction;
        };
        auto resolve_out = [&](const std::string& given, const std::string& leaf) {
            return given.empty() ? (fs::path(default_out_root()) / leaf).string() : given;
        };

        if (prepare->parsed()) {
            if (prep.out_dir.empty()) prep.out_dir = resolve_out("", "prepared");
            return cmd_prepare(prep);
        }
        if (train->parsed()) {
            Splits splits = load_splits(splits_dir);
            TrainConfig cfg = load_train_config(config_path);
            apply_flags(cfg);
            cfg.rounds = 0;
            fs::path dir = resolve_out(out_dir, "train");
            auto metrics = run_selftrain(splits, cfg, 0.0, dir, false);
            (void)metrics;
            return kExitOk;
        }
        if (selftrain->parsed()) {
            Splits splits = load_splits(splits_dir);
            TrainConfig cfg = load_train_config(config_path);
            apply_flags(cfg);
            fs::path dir = resolve_out(out_dir, "selftrain");
            run_selftrain(splits, cfg, unlabeled_fraction, dir, false);
            return kExitOk;
        }
        if (ablate->parsed()) {
            Splits splits = load_splits(splits_dir);
            TrainConfig cfg = load_train_config(config_path);
            apply_flags(cfg);
            return cmd_ablate(splits, cfg, resolve_out(out_dir, "ablate"));
        }
        if (sweep->parsed()) {
            Splits splits = load_splits(splits_dir);
            TrainConfig cfg = load_train_config(config_path);
            apply_flags(cfg);
            std::vector<uint64_t> seeds;
            for (std::stringstream ss(seeds_arg); ss.good();) {
                std::string tok;
                if (!std::getline(ss, tok, ',')) break;
                if (!tok.empty()) seeds.push_back(std::stoull(tok));
            }
            std::vector<double> fractions;
            for (std::stringstream ss(fractions_arg); ss.good();) {
                std::string tok;
                if (!std::getline(ss, tok, ',')) break;
                if (!tok.empty()) fractions.push_back(std::stod(tok));
            }
            if (seeds.empty() || fractions.empty()) throw ConfigError("sweep: empty seed or fraction list");
            return cmd_sweep(splits, cfg, seeds, fractions, workers, resolve_out(out_dir, "sweep"));
        }
        if (evaluate->parsed()) {
            Splits splits;
            splits.test = Dataset::load((fs::path(eval_splits) / "test.stds").string());
            Checkpoint ck = load_checkpoint(ckpt_path);
            TrainConfig cfg;
            cfg.model = ck.config;
            auto metrics = evaluate_checkpoint(ck.params, cfg, splits.test);
            std::cout << render_table({{"checkpoint", metrics}}, TableFormat::Text);
            if (!eval_out.empty()) write_text_file(eval_out, metrics_json(metrics).dump(2));
            return kExitOk;
        }
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace stids
