// SPDX-License-Identifier: Apache-2.0
//
// maccal: data generation, training, evaluation, sweeps and report summaries.

#include <maccal/maccal.hpp>

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;
using namespace maccal;

namespace {

// Every TrainConfig key gets a `--dashed-name` flag; a few get short aliases.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"method", "--method"},
    {"ablation", "--ablation"},
    {"seed", "--seed"},
    {"hidden_widths", "--hidden-widths"},
    {"stage1_epochs", "--stage1-epochs"},
    {"stage1_learning_rate", "--stage1-learning-rate"},
    {"momentum", "--momentum"},
    {"weight_decay", "--weight-decay"},
    {"batch_size", "--batch-size"},
    {"focal_gamma", "--focal-gamma"},
    {"ls_epsilon", "--ls-epsilon"},
    {"mixup_alpha", "--mixup-alpha,--alpha"},
    {"stage2_epochs", "--stage2-epochs"},
    {"learning_rate", "--learning-rate"},
    {"stage2_momentum", "--stage2-momentum"},
    {"stage2_weight_decay", "--stage2-weight-decay"},
    {"head_kind", "--head-kind"},
    {"hidden", "--hidden"},
    {"rectified_bottleneck", "--rectified-bottleneck"},
    {"masking", "--masking"},
    {"mask_resample", "--mask-resample"},
    {"mask_scope", "--mask-scope"},
    {"gradient_restriction", "--gradient-restriction"},
    {"controller", "--controller"},
    {"q0", "--q0"},
    {"gamma", "--gamma"},
    {"eta_init", "--eta-init"},
    {"eta_final", "--eta-final"},
    {"controller_sign", "--controller-sign"},
    {"measure_with_mask", "--measure-with-mask"},
    {"num_bins", "--num-bins,--bins"},
};

struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option *> options;

    void attach(CLI::App *app) {
        app->add_option("--config", config_file, "key = value file with TrainConfig fields")->check(CLI::ExistingFile);
        for (const auto &[key, flag] : kConfigFlags) {
            options[key] = app->add_option(flag, values[key], "TrainConfig." + key);
        }
    }

    // default < config file < command line; method and ablation go first so
    // that explicit flags can refine an ablation row.
    [[nodiscard]] TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config_file.empty()) apply_config_file(cfg, config_file);
        auto given = [&](const std::string &k) { return options.at(k)->count() > 0; };
        for (const char *first : {"method", "ablation"}) {
            if (given(first)) set_config_field(cfg, first, values.at(first));
        }
        for (const auto &[key, flag] : kConfigFlags) {
            if (key != "method" && key != "ablation" && given(key)) set_config_field(cfg, key, values.at(key));
        }
        cfg.validate();
        return cfg;
    }

    [[nodiscard]] bool seed_given() const { return options.at("seed")->count() > 0; }
};

struct DataFlags {
    DataOptions opts;
    CLI::Option *seed_opt = nullptr;
    std::uint64_t seed = 1;

    void attach(CLI::App *app, bool with_dir = true) {
        if (with_dir) app->add_option("--data", opts.dir, "directory with train/val/test CSVs from gen-data");
        app->add_option("--classes", opts.classes, "number of classes")->capture_default_str();
        app->add_option("--dim", opts.dim, "feature dimension")->capture_default_str();
        app->add_option("--per-class", opts.per_class, "samples per class")->capture_default_str();
        app->add_option("--spread", opts.spread, "blob standard deviation")->capture_default_str();
        app->add_option("--train-frac", opts.train_frac, "training fraction")->capture_default_str();
        app->add_option("--val-frac", opts.val_frac, "validation fraction")->capture_default_str();
        seed_opt = app->add_option("--data-seed", seed, "data seed (defaults to --seed)");
    }

    [[nodiscard]] DataOptions resolve(std::uint64_t fallback_seed) const {
        DataOptions d = opts;
        d.seed = seed_opt->count() > 0 ? seed : fallback_seed;
        return d;
    }
};

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

fs::path output_dir(const std::string &flag, const std::string &command) {
    if (!flag.empty()) return flag;
    const char *root = std::getenv("MACCAL_OUT");
    return fs::path(root && *root ? root : "maccal_out") / command;
}

// Tracks outputs of one command and writes its manifest.
class Manifest {
  public:
    Manifest(std::string command, fs::path dir, int argc, char **argv)
        : command_(std::move(command)), dir_(std::move(dir)), started_(utc_now()) {
        for (int i = 0; i < argc; ++i) argv_.emplace_back(argv[i]);
        fs::create_directories(dir_);
    }

    fs::path add(const std::string &name) {
        outputs_.push_back(name);
        return dir_ / name;
    }

    void write(const json &config, std::uint64_t seed, const std::string &hash) {
        for (const auto &o : outputs_) {
            const fs::path p = dir_ / o;
            if (!fs::exists(p) || fs::file_size(p) == 0) throw std::runtime_error("output missing or empty: " + p.string());
            if (p.extension() == ".json" && json::parse(read_text(p.string())).is_discarded())
                throw std::runtime_error("invalid JSON: " + p.string());
        }
        json j{{"schema_version", kSchemaVersion},
               {"command", command_},
               {"argv", argv_},
               {"config", config},
               {"seed", seed},
               {"config_hash", hash},
               {"started_at", started_},
               {"finished_at", utc_now()},
               {"output_dir", dir_.string()},
               {"outputs", outputs_}};
        write_text((dir_ / "manifest.json").string(), j.dump(2) + "\n");
    }

  private:
    std::string command_;
    fs::path dir_;
    std::string started_;
    std::vector<std::string> argv_;
    std::vector<std::string> outputs_;
};

void write_reliability(const fs::path &p, const CalibrationReport &r) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot open " + p.string());
    reliability_csv(os, r.bins);
}

CalibrationReport with_ood(const Model &m, const Dataset &test, const std::optional<Dataset> &ood, std::size_t bins) {
    const Matrix p_in = m.predict_proba(test.features);
    CalibrationReport r = evaluate(PredictionSet(p_in, test.labels), bins);
    if (ood && ood->size() > 0) {
        if (ood->dim() != test.dim()) throw ShapeError("OOD set has a different feature dimension");
        const auto in = row_max(p_in);
        const auto out = row_max(m.predict_proba(ood->features));
        r.ood = ood_scores(in, out);
    }
    return r;
}

json temperature_block(const Model &m, const Split &s, std::size_t bins) {
    const TemperatureFit fit = fit_temperature(m.logits(s.val.features), s.val.labels);
    json t = temperature_json(fit);
    t["test_after"] = metrics_json(evaluate(PredictionSet(apply_temperature(m.logits(s.test.features), fit.temperature), s.test.labels), bins));
    return t;
}

// ---------------------------------------------------------------- gen-data

int cmd_gen_data(const DataFlags &df, std::uint64_t seed, const std::string &out, int argc, char **argv) {
    const DataOptions d = df.resolve(seed);
    const DataBundle b = generate_data(d);
    Manifest man("gen-data", output_dir(out, "gen-data"), argc, argv);
    save_csv(man.add("train.csv").string(), b.split.train);
    save_csv(man.add("val.csv").string(), b.split.val);
    save_csv(man.add("test.csv").string(), b.split.test);
    save_csv(man.add("ood.csv").string(), *b.ood);
    const json cfg = data_options_json(d);
    man.write(cfg, d.seed, hex64(hash_string(cfg.dump())));
    std::cout << "wrote " << b.split.train.size() << "/" << b.split.val.size() << "/" << b.split.test.size()
              << " train/val/test rows\n";
    return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const ConfigFlags &cf, const DataFlags &df, const std::string &out, int argc, char **argv) {
    const TrainConfig cfg = cf.resolve();
    const DataOptions dopt = df.resolve(cfg.seed);
    const DataBundle data = load_data(dopt);
    const Split &s = data.split;
    Manifest man("train", output_dir(out, "train"), argc, argv);

    json report = report_header("train", cfg);
    report["data"] = data_options_json(dopt);
    report["sizes"] = json{{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}};

    Model model;
    if (cfg.two_stage()) {
        MacCalRun run = run_maccal(s.train, cfg);
        json ck1 = checkpoint_json(run.stage1, cfg, "stage1");
        ck1["data"] = data_options_json(dopt);
        write_text(man.add("checkpoint_stage1.json").string(), ck1.dump() + "\n");
        report["stage1_test"] = metrics_json(evaluate_model(run.stage1, s.test, cfg.num_bins));
        report["final_q"] = *run.model.final_q;
        report["extractor_hash"] = hex64(run.extractor_hash);
        std::ofstream st(man.add("stats.csv"));
        write_stats_csv(st, run.stats);
        model = std::move(run.model);
    } else {
        model = train_baseline(s.train, cfg).model;
    }
    const CalibrationReport r = with_ood(model, s.test, data.ood, cfg.num_bins);
    report["test"] = metrics_json(r);
    report["temperature"] = temperature_block(model, s, cfg.num_bins);

    json ck = checkpoint_json(model, cfg, cfg.two_stage() ? "stage2" : "stage1");
    ck["data"] = data_options_json(dopt);
    write_text(man.add("checkpoint.json").string(), ck.dump() + "\n");
    write_reliability(man.add("reliability.csv"), r);
    write_text(man.add("report.json").string(), report.dump(2) + "\n");
    man.write(config_to_json(cfg), cfg.seed, config_hash(cfg));
    std::printf("%s seed %llu: acc %.4f conf %.4f ece %.4f\n", to_string(cfg.method).c_str(),
                static_cast<unsigned long long>(cfg.seed), r.accuracy, r.avg_confidence, r.ece);
    return 0;
}

// ---------------------------------------------------------------- eval

struct EvalFlags {
    std::string checkpoint;
    std::string posthoc = "none";
    int severity = 0;
    std::string ood;
    std::size_t bins = kDefaultBins;
    CLI::Option *bins_opt = nullptr;
};

int cmd_eval(const EvalFlags &ef, const DataFlags &df, const std::string &out, int argc, char **argv) {
    if (!fs::exists(ef.checkpoint)) throw std::runtime_error("checkpoint not found: " + ef.checkpoint);
    const json ckj = json::parse(read_text(ef.checkpoint));
    Checkpoint ck = checkpoint_from_json(ckj);
    TrainConfig cfg = ck.config;
    if (ef.bins_opt->count() > 0) cfg.num_bins = ef.bins;

    // Data defaults to what the checkpoint was trained on; explicit flags win.
    DataOptions dopt = ckj.contains("data") ? data_options_from_json(ckj.at("data")) : df.resolve(cfg.seed);
    if (!df.opts.dir.empty()) dopt = df.resolve(cfg.seed);
    DataBundle data = load_data(dopt);
    if (!ef.ood.empty()) data.ood = load_csv(ef.ood);
    Split s = data.split;
    if (ef.severity != 0) s.test = corrupt(s.test, ef.severity, dopt.seed);
    if (ef.posthoc != "none" && ef.posthoc != "ts") throw DomainError("--posthoc must be none or ts");

    Manifest man("eval", output_dir(out, "eval"), argc, argv);
    json report = report_header("eval", cfg);
    report["checkpoint"] = ef.checkpoint;
    report["stage"] = ck.stage;
    report["data"] = data_options_json(dopt);
    report["severity"] = ef.severity;
    const CalibrationReport r = with_ood(ck.model, s.test, data.ood, cfg.num_bins);
    report["test"] = metrics_json(r);
    report["temperature"] = ef.posthoc == "ts" ? temperature_block(ck.model, s, cfg.num_bins) : json(nullptr);
    write_reliability(man.add("reliability.csv"), r);
    write_text(man.add("report.json").string(), report.dump(2) + "\n");
    man.write(config_to_json(cfg), cfg.seed, config_hash(cfg));
    std::printf("eval: acc %.4f conf %.4f ece %.4f\n", r.accuracy, r.avg_confidence, r.ece);
    return 0;
}

// ---------------------------------------------------------------- sweep

struct SweepFlags {
    std::string param;
    std::vector<std::string> values;
    std::string param2;
    std::vector<std::string> values2;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::size_t jobs = 0;
    std::size_t draws = 20;
};

struct SweepRow {
    std::string value, value2;
    std::uint64_t seed = 0;
    std::string status = "pending";
    std::string error;
    double acc = 0, conf = 0, ece = 0, aece = 0, mce = 0, nll = 0;
};

std::string param_key(const std::string &p) {
    if (p == "alpha") return "mixup_alpha";
    if (p == "q") return "q0";
    std::string k = p;
    std::replace(k.begin(), k.end(), '-', '_');
    return k;
}

void fill(SweepRow &row, const CalibrationReport &r) {
    row.acc = r.accuracy;
    row.conf = r.avg_confidence;
    row.ece = r.ece;
    row.aece = r.aece;
    row.mce = r.mce;
    row.nll = r.nll;
    row.status = "ok";
}

// Runs `work(i)` for i in [0, n) on a bounded pool; failures stay per item.
template <class F>
void run_pool(std::size_t n, std::size_t jobs, F work) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) work(i);
    };
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (auto &t : pool) t.join();
}

int cmd_sweep(const SweepFlags &sf, const ConfigFlags &cf, const DataFlags &df, const std::string &out, int argc,
              char **argv) {
    const TrainConfig base = cf.resolve();
    const std::string p1 = param_key(sf.param);
    const bool probe = p1 == "probe_q";
    const bool severity = p1 == "severity";
    if ((probe || severity) && !sf.param2.empty()) throw DomainError("probe-q and severity sweeps take a single parameter");
    if (sf.values.empty()) throw DomainError("--values is empty");
    if (!probe && !severity) {
        TrainConfig probe_cfg = base;
        set_config_field(probe_cfg, p1, sf.values.front());
        if (!sf.param2.empty()) set_config_field(probe_cfg, param_key(sf.param2), sf.values2.at(0));
    }

    std::vector<SweepRow> rows;
    const std::vector<std::string> second = sf.param2.empty() ? std::vector<std::string>{""} : sf.values2;
    for (std::uint64_t seed : sf.seeds) {
        for (const auto &v : sf.values) {
            for (const auto &v2 : second) {
                SweepRow row;
                row.value = v;
                row.value2 = v2;
                row.seed = seed;
                rows.push_back(std::move(row));
            }
        }
    }

    std::mutex log_mu;
    auto log = [&](const std::string &m) {
        std::lock_guard lk(log_mu);
        std::cerr << m << "\n";
    };
    const std::size_t jobs = sf.jobs ? sf.jobs : std::max(1u, std::thread::hardware_concurrency());

    if (probe || severity) {
        // One trained model per seed, evaluated at every grid value.
        run_pool(sf.seeds.size(), jobs, [&](std::size_t si) {
            const std::uint64_t seed = sf.seeds[si];
            const std::size_t per = sf.values.size();
            try {
                TrainConfig cfg = base;
                cfg.seed = seed;
                const DataOptions dopt = df.resolve(seed);
                const DataBundle data = load_data(dopt);
                const Model m = cfg.two_stage() ? run_maccal(data.split.train, cfg).model
                                                : train_baseline(data.split.train, cfg).model;
                for (std::size_t k = 0; k < per; ++k) {
                    SweepRow &row = rows[si * per + k];
                    try {
                        if (probe) {
                            const double q = detail::parse_real(row.value);
                            const ProbePoint pt = masked_inference_probe(m, data.split.test, q, sf.draws, seed);
                            row.acc = pt.acc;
                            row.conf = pt.conf;
                            row.status = "ok";
                        } else {
                            const int sev = static_cast<int>(detail::parse_count(row.value));
                            const Dataset t = sev == 0 ? data.split.test : corrupt(data.split.test, sev, dopt.seed);
                            fill(row, evaluate_model(m, t, cfg.num_bins));
                        }
                    } catch (const std::exception &e) {
                        row.status = "error";
                        row.error = e.what();
                    }
                }
            } catch (const std::exception &e) {
                for (std::size_t k = 0; k < per; ++k) {
                    rows[si * per + k].status = "error";
                    rows[si * per + k].error = e.what();
                }
            }
            log("seed " + std::to_string(seed) + " done");
        });
    } else {
        run_pool(rows.size(), jobs, [&](std::size_t i) {
            SweepRow &row = rows[i];
            try {
                TrainConfig cfg = base;
                cfg.seed = row.seed;
                set_config_field(cfg, p1, row.value);
                if (!sf.param2.empty()) set_config_field(cfg, param_key(sf.param2), row.value2);
                cfg.validate();
                const DataBundle data = load_data(df.resolve(row.seed));
                const Model m = cfg.two_stage() ? run_maccal(data.split.train, cfg).model
                                                : train_baseline(data.split.train, cfg).model;
                fill(row, evaluate_model(m, data.split.test, cfg.num_bins));
            } catch (const std::exception &e) {
                row.status = "error";
                row.error = e.what();
            }
            log(sf.param + "=" + row.value + " seed " + std::to_string(row.seed) + ": " + row.status);
        });
    }

    Manifest man("sweep", output_dir(out, "sweep"), argc, argv);
    {
        std::ofstream os(man.add("sweep.csv"));
        os << sf.param;
        if (!sf.param2.empty()) os << "," << sf.param2;
        os << ",seed,status,acc,conf,ece,aece,mce,nll,error\n";
        char buf[256];
        for (const auto &r : rows) {
            os << r.value;
            if (!sf.param2.empty()) os << "," << r.value2;
            std::snprintf(buf, sizeof(buf), ",%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", static_cast<unsigned long long>(r.seed),
                          r.status.c_str(), r.acc, r.conf, r.ece, r.aece, r.mce, r.nll);
            std::string err = r.error;
            std::replace(err.begin(), err.end(), ',', ';');
            std::replace(err.begin(), err.end(), '\n', ' ');
            os << buf << err << "\n";
        }
    }
    std::size_t failed = 0;
    for (const auto &r : rows) failed += r.status != "ok";
    json summary = report_header("sweep", base);
    summary["param"] = sf.param;
    summary["values"] = sf.values;
    if (!sf.param2.empty()) {
        summary["param2"] = sf.param2;
        summary["values2"] = sf.values2;
    }
    summary["seeds"] = sf.seeds;
    summary["rows"] = rows.size();
    summary["failed_rows"] = failed;
    write_text(man.add("report.json").string(), summary.dump(2) + "\n");
    man.write(config_to_json(base), base.seed, config_hash(base));
    std::cout << rows.size() << " rows, " << failed << " failed\n";
    return 0;
}

// ---------------------------------------------------------------- report

int cmd_report(const std::vector<std::string> &inputs, const std::string &csv) {
    std::ofstream os;
    if (!csv.empty()) {
        os.open(csv);
        if (!os) throw std::runtime_error("cannot open " + csv);
        os << "file,command,method,seed,config_hash,accuracy,avg_confidence,ece,aece,mce,nll,T,auroc,fpr95\n";
    }
    for (const auto &path : inputs) {
        const json j = json::parse(read_text(path));
        if (!j.contains("schema_version")) throw DomainError(path + ": missing schema_version");
        if (j.at("schema_version").get<int>() != kSchemaVersion) throw DomainError(path + ": unsupported schema_version");
        std::cout << path << "\n  command " << j.value("command", "?") << ", method " << j.value("method", "?") << ", seed "
                  << j.value("seed", 0) << ", config " << j.value("config_hash", "?") << "\n";
        if (!j.contains("test")) continue;
        const json &t = j.at("test");
        std::printf("  acc %.4f  conf %.4f  ECE %.4f  AECE %.4f  MCE %.4f  NLL %.4f\n", t.value("accuracy", 0.0),
                    t.value("avg_confidence", 0.0), t.value("ece", 0.0), t.value("aece", 0.0), t.value("mce", 0.0),
                    t.value("nll", 0.0));
        double temp = 0.0, au = 0.0, fpr = 0.0;
        if (j.contains("temperature") && j.at("temperature").is_object()) {
            temp = j.at("temperature").value("T", 0.0);
            std::printf("  T %.4f  post-TS ECE %.4f\n", temp, j.at("temperature").at("test_after").value("ece", 0.0));
        }
        if (t.contains("ood")) {
            au = t.at("ood").value("auroc", 0.0);
            fpr = t.at("ood").value("fpr95", 0.0);
            std::printf("  OOD AUROC %.4f  FPR95 %.4f\n", au, fpr);
        }
        if (j.contains("final_q")) std::printf("  final q %.4f\n", j.at("final_q").get<double>());
        if (os.is_open()) {
            char buf[512];
            std::snprintf(buf, sizeof(buf), ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t.value("accuracy", 0.0),
                          t.value("avg_confidence", 0.0), t.value("ece", 0.0), t.value("aece", 0.0), t.value("mce", 0.0),
                          t.value("nll", 0.0), temp, au, fpr);
            os << path << "," << j.value("command", "") << "," << j.value("method", "") << "," << j.value("seed", 0) << ","
               << j.value("config_hash", "") << buf;
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"Mask-based two-stage classifier calibration"};
    app.require_subcommand(1);
    std::string out;

    auto *gen = app.add_subcommand("gen-data", "generate train/val/test/ood blob CSVs");
    DataFlags gen_data;
    gen_data.attach(gen, false);
    std::uint64_t gen_seed = 1;
    gen->add_option("--seed", gen_seed, "data seed")->capture_default_str();
    gen->add_option("--out", out, "output directory (default $MACCAL_OUT/gen-data)");

    auto *train = app.add_subcommand("train", "train one model and write report, stats and checkpoints");
    ConfigFlags train_cfg;
    DataFlags train_data;
    train_cfg.attach(train);
    train_data.attach(train);
    train->add_option("--out", out, "output directory (default $MACCAL_OUT/train)");

    auto *eval = app.add_subcommand("eval", "evaluate a checkpoint");
    EvalFlags ef;
    DataFlags eval_data;
    eval_data.attach(eval);
    eval->add_option("--checkpoint", ef.checkpoint, "checkpoint JSON")->required();
    eval->add_option("--posthoc", ef.posthoc, "none or ts")->check(CLI::IsMember({"none", "ts"}));
    eval->add_option("--severity", ef.severity, "corruption severity 0..5")->check(CLI::Range(0, kMaxSeverity));
    eval->add_option("--ood", ef.ood, "OOD CSV (default: ood set of the data source)");
    ef.bins_opt = eval->add_option("--bins", ef.bins, "number of calibration bins");
    eval->add_option("--out", out, "output directory (default $MACCAL_OUT/eval)");

    auto *sweep = app.add_subcommand("sweep", "grid over one or two flags times seeds");
    SweepFlags sf;
    ConfigFlags sweep_cfg;
    DataFlags sweep_data;
    sweep_cfg.attach(sweep);
    sweep_data.attach(sweep);
    sweep->add_option("--param", sf.param, "config key, or probe-q / severity")->required();
    sweep->add_option("--values", sf.values, "grid values")->required()->delimiter(',');
    sweep->add_option("--param2", sf.param2, "optional second config key");
    sweep->add_option("--values2", sf.values2, "second grid")->delimiter(',');
    sweep->add_option("--seeds", sf.seeds, "seeds")->delimiter(',');
    sweep->add_option("--jobs", sf.jobs, "worker threads (0: hardware concurrency)");
    sweep->add_option("--draws", sf.draws, "mask draws per probe point");
    sweep->add_option("--out", out, "output directory (default $MACCAL_OUT/sweep)");

    auto *rep = app.add_subcommand("report", "summarize report JSON files");
    std::vector<std::string> inputs;
    std::string csv;
    rep->add_option("inputs", inputs, "report JSON files")->required()->check(CLI::ExistingFile);
    rep->add_option("--csv", csv, "also write the summary as CSV");

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_gen_data(gen_data, gen_seed, out, argc, argv);
        if (train->parsed()) return cmd_train(train_cfg, train_data, out, argc, argv);
        if (eval->parsed()) return cmd_eval(ef, eval_data, out, argc, argv);
        if (sweep->parsed()) return cmd_sweep(sf, sweep_cfg, sweep_data, out, argc, argv);
        if (rep->parsed()) return cmd_report(inputs, csv);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
