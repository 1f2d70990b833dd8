// SPDX-License-Identifier: Apache-2.0
//
// Config files, report / checkpoint JSON and per-epoch CSV.

#pragma once

#include <maccal/datasets.hpp>
#include <maccal/metrics.hpp>
#include <maccal/posthoc.hpp>
#include <maccal/training.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace maccal {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------- enums

[[nodiscard]] inline Method parse_method(const std::string &s) {
    if (s == "vanilla") return Method::vanilla;
    if (s == "ls") return Method::label_smoothing;
    if (s == "focal") return Method::focal;
    if (s == "flsd" || s == "flsd-like") return Method::flsd;
    if (s == "mixup") return Method::mixup;
    if (s == "maccal") return Method::maccal;
    if (s == "mixup+maccal" || s == "mixup-maccal") return Method::mixup_maccal;
    throw DomainError("unknown method '" + s + "'");
}

[[nodiscard]] inline AblationRow parse_ablation(const std::string &s) {
    for (AblationRow r : kAblationLadder) {
        if (to_string(r) == s) return r;
    }
    throw DomainError("unknown ablation row '" + s + "'");
}

[[nodiscard]] inline HeadKind parse_head_kind(const std::string &s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "bottleneck") return HeadKind::bottleneck;
    throw DomainError("unknown head kind '" + s + "'");
}

[[nodiscard]] inline MaskResample parse_mask_resample(const std::string &s) {
    if (s == "epoch") return MaskResample::epoch;
    if (s == "batch") return MaskResample::batch;
    throw DomainError("mask_resample must be epoch or batch, got '" + s + "'");
}

[[nodiscard]] inline MaskScope parse_mask_scope(const std::string &s) {
    if (s == "all") return MaskScope::all;
    if (s == "final-only" || s == "final_only") return MaskScope::final_only;
    throw DomainError("mask_scope must be all or final-only, got '" + s + "'");
}

[[nodiscard]] inline ControllerMode parse_controller(const std::string &s) {
    if (s == "fixed") return ControllerMode::fixed;
    if (s == "static") return ControllerMode::static_adaptive;
    if (s == "decaying") return ControllerMode::decaying_adaptive;
    throw DomainError("controller must be fixed, static or decaying, got '" + s + "'");
}

// ---------------------------------------------------------------- config

namespace detail {

inline bool parse_bool(const std::string &v) {
    if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "off" || v == "0" || v == "no") return false;
    throw DomainError("expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string &v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw DomainError("expected a number, got '" + v + "'");
    return d;
}

inline std::size_t parse_count(const std::string &v) {
    std::size_t used = 0;
    unsigned long long n = 0;
    try {
        n = std::stoull(v, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != v.size() || v.empty() || v.front() == '-') throw DomainError("expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(n);
}

inline std::vector<std::size_t> parse_widths(const std::string &v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_count(item));
    }
    return out;
}

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Sets one TrainConfig field by its name. Unknown keys are rejected.
inline void set_config_field(TrainConfig &cfg, const std::string &key, const std::string &value) {
    using namespace detail;
    if (key == "method") cfg.method = parse_method(value);
    else if (key == "seed") cfg.seed = parse_count(value);
    else if (key == "hidden_widths") cfg.hidden_widths = parse_widths(value);
    else if (key == "stage1_epochs") cfg.stage1_epochs = parse_count(value);
    else if (key == "stage1_learning_rate") cfg.stage1_learning_rate = parse_real(value);
    else if (key == "momentum") cfg.momentum = parse_real(value);
    else if (key == "weight_decay") cfg.weight_decay = parse_real(value);
    else if (key == "batch_size") cfg.batch_size = parse_count(value);
    else if (key == "focal_gamma") cfg.focal_gamma = parse_real(value);
    else if (key == "ls_epsilon") cfg.ls_epsilon = parse_real(value);
    else if (key == "mixup_alpha") cfg.mixup_alpha = parse_real(value);
    else if (key == "stage2_epochs") cfg.stage2_epochs = parse_count(value);
    else if (key == "learning_rate") cfg.learning_rate = parse_real(value);
    else if (key == "stage2_momentum") cfg.stage2_momentum = parse_real(value);
    else if (key == "stage2_weight_decay") cfg.stage2_weight_decay = parse_real(value);
    else if (key == "head_kind") cfg.head_kind = parse_head_kind(value);
    else if (key == "hidden") cfg.hidden = parse_count(value);
    else if (key == "rectified_bottleneck") cfg.rectified_bottleneck = parse_bool(value);
    else if (key == "masking") cfg.masking = parse_bool(value);
    else if (key == "mask_resample") cfg.mask_resample = parse_mask_resample(value);
    else if (key == "mask_scope") cfg.mask_scope = parse_mask_scope(value);
    else if (key == "gradient_restriction") cfg.gradient_restriction = parse_bool(value);
    else if (key == "controller") cfg.controller = parse_controller(value);
    else if (key == "q0") cfg.q0 = parse_real(value);
    else if (key == "gamma") cfg.gamma = parse_real(value);
    else if (key == "eta_init") cfg.eta_init = parse_real(value);
    else if (key == "eta_final") cfg.eta_final = parse_real(value);
    else if (key == "controller_sign") cfg.controller_sign = parse_real(value);
    else if (key == "measure_with_mask") cfg.measure_with_mask = parse_bool(value);
    else if (key == "num_bins") cfg.num_bins = parse_count(value);
    else if (key == "ablation") apply_ablation(cfg, parse_ablation(value));
    else throw DomainError("unknown config key '" + key + "'");
}

/// `key = value` lines; `#` starts a comment.
[[nodiscard]] inline std::vector<std::pair<std::string, std::string>> read_config_pairs(std::istream &is,
                                                                                       const std::string &name = "config") {
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw DomainError(name + ":" + std::to_string(lineno) + ": expected key = value");
        }
        out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

inline void apply_config_file(TrainConfig &cfg, const std::string &path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config file " + path);
    for (const auto &[k, v] : read_config_pairs(is, path)) {
        try {
            set_config_field(cfg, k, v);
        } catch (const DomainError &e) {
            throw DomainError(path + ": " + e.what());
        }
    }
}

[[nodiscard]] inline json config_to_json(const TrainConfig &c) {
    return json{{"method", to_string(c.method)},
                {"seed", c.seed},
                {"hidden_widths", c.hidden_widths},
                {"stage1_epochs", c.stage1_epochs},
                {"stage1_learning_rate", c.stage1_learning_rate},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"focal_gamma", c.focal_gamma},
                {"ls_epsilon", c.ls_epsilon},
                {"mixup_alpha", c.mixup_alpha},
                {"stage2_epochs", c.stage2_epochs},
                {"learning_rate", c.learning_rate},
                {"stage2_momentum", c.stage2_momentum},
                {"stage2_weight_decay", c.stage2_weight_decay},
                {"head_kind", to_string(c.head_kind)},
                {"hidden", c.hidden},
                {"rectified_bottleneck", c.rectified_bottleneck},
                {"masking", c.masking},
                {"mask_resample", to_string(c.mask_resample)},
                {"mask_scope", to_string(c.mask_scope)},
                {"gradient_restriction", c.gradient_restriction},
                {"controller", to_string(c.controller)},
                {"q0", c.q0},
                {"gamma", c.gamma},
                {"eta_init", c.eta_init},
                {"eta_final", c.eta_final},
                {"controller_sign", c.controller_sign},
                {"measure_with_mask", c.measure_with_mask},
                {"num_bins", c.num_bins}};
}

[[nodiscard]] inline TrainConfig config_from_json(const json &j) {
    TrainConfig c;
    for (const auto &[k, v] : j.items()) {
        std::string s;
        if (v.is_string()) s = v.get<std::string>();
        else if (v.is_boolean()) s = v.get<bool>() ? "true" : "false";
        else if (v.is_array()) {
            for (const auto &w : v) s += (s.empty() ? "" : ",") + std::to_string(w.get<std::size_t>());
        } else s = v.dump();
        set_config_field(c, k, s);
    }
    return c;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

[[nodiscard]] inline std::string config_hash(const TrainConfig &c) { return hex64(hash_string(config_to_json(c).dump())); }

// ---------------------------------------------------------------- data

/// Where the train/val/test (and OOD) sets come from: a directory of CSVs
/// written by gen-data, or blobs generated on the fly.
struct DataOptions {
    std::string dir;  // empty: generate
    std::size_t classes = 5;
    std::size_t dim = 20;
    std::size_t per_class = 2000;
    double spread = 0.42;
    std::uint64_t seed = 1;
    double train_frac = 0.5;
    double val_frac = 0.1;

    [[nodiscard]] BlobSpec blob_spec() const { return BlobSpec{classes, dim, per_class, spread, seed}; }
    [[nodiscard]] SplitFractions fractions() const { return SplitFractions{train_frac, val_frac}; }
};

/// Salt for the seed of the novel-class blobs used as the OOD set.
inline constexpr std::uint64_t kOodSeedSalt = 0x00d5eedULL;

struct DataBundle {
    Split split;
    std::optional<Dataset> ood;
};

[[nodiscard]] inline json data_options_json(const DataOptions &d) {
    if (!d.dir.empty()) return json{{"dir", d.dir}};
    return json{{"classes", d.classes}, {"dim", d.dim},           {"per_class", d.per_class}, {"spread", d.spread},
                {"seed", d.seed},       {"train_frac", d.train_frac}, {"val_frac", d.val_frac}};
}

[[nodiscard]] inline DataOptions data_options_from_json(const json &j) {
    DataOptions d;
    d.dir = j.value("dir", d.dir);
    d.classes = j.value("classes", d.classes);
    d.dim = j.value("dim", d.dim);
    d.per_class = j.value("per_class", d.per_class);
    d.spread = j.value("spread", d.spread);
    d.seed = j.value("seed", d.seed);
    d.train_frac = j.value("train_frac", d.train_frac);
    d.val_frac = j.value("val_frac", d.val_frac);
    return d;
}

/// Blobs around fresh centres, drawn as many as the test split.
[[nodiscard]] inline Dataset ood_blobs(const DataOptions &d, std::size_t test_size) {
    BlobSpec s = d.blob_spec();
    s.seed = d.seed ^ kOodSeedSalt;
    s.per_class = std::max<std::size_t>(1, test_size / std::max<std::size_t>(1, d.classes));
    return gen_blobs(s);
}

[[nodiscard]] inline DataBundle generate_data(const DataOptions &d) {
    if (!(d.spread > 0.0)) throw DomainError("spread must be positive");
    DataBundle b;
    b.split = split(gen_blobs(d.blob_spec()), d.fractions(), d.seed);
    b.ood = ood_blobs(d, b.split.test.size());
    return b;
}

[[nodiscard]] inline DataBundle load_data(const DataOptions &d) {
    if (d.dir.empty()) return generate_data(d);
    namespace fs = std::filesystem;
    const fs::path dir(d.dir);
    DataBundle b;
    b.split.train = load_csv((dir / "train.csv").string());
    const std::size_t k = b.split.train.num_classes;
    b.split.val = load_csv((dir / "val.csv").string(), k);
    b.split.test = load_csv((dir / "test.csv").string(), k);
    if (fs::exists(dir / "ood.csv")) b.ood = load_csv((dir / "ood.csv").string());
    return b;
}

// ---------------------------------------------------------------- reports

[[nodiscard]] inline json metrics_json(const CalibrationReport &r) {
    json j{{"num_samples", r.num_samples}, {"accuracy", r.accuracy}, {"avg_confidence", r.avg_confidence},
           {"ece", r.ece},                 {"aece", r.aece},         {"mce", r.mce},
           {"nll", r.nll}};
    if (r.ood) {
        j["ood"] = json{{"auroc", r.ood->auroc}, {"fpr95", r.ood->fpr95}};
    }
    return j;
}

[[nodiscard]] inline json temperature_json(const TemperatureFit &fit) {
    return json{{"T", fit.temperature.value()},
                {"val_nll", fit.nll},
                {"val_nll_identity", fit.nll_identity},
                {"at_boundary", fit.at_boundary}};
}

/// Common report header: schema version, command, config snapshot and hash.
[[nodiscard]] inline json report_header(const std::string &command, const TrainConfig &cfg) {
    return json{{"schema_version", kSchemaVersion}, {"command", command},           {"method", to_string(cfg.method)},
                {"seed", cfg.seed},                 {"config_hash", config_hash(cfg)}, {"num_bins", cfg.num_bins},
                {"config", config_to_json(cfg)}};
}

inline void write_stats_csv(std::ostream &os, std::span<const EpochStats> stats) {
    os << "epoch,acc,conf,q,eta,loss,q_next\n";
    char buf[256];
    for (const auto &s : stats) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.epoch, s.acc, s.conf, s.q, s.eta, s.loss,
                      s.q_next);
        os << buf;
    }
}

// ---------------------------------------------------------------- checkpoints

namespace detail {

inline json matrix_json(const Matrix &m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

inline Matrix matrix_from_json(const json &j) {
    return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), j.at("data").get<std::vector<double>>());
}

}  // namespace detail

[[nodiscard]] inline json checkpoint_json(const Model &m, const TrainConfig &cfg, const std::string &stage) {
    json layers = json::array();
    for (const auto &l : m.extractor.layers()) {
        layers.push_back(json{{"weight", detail::matrix_json(l.weight)}, {"bias", detail::matrix_json(l.bias)}});
    }
    json j{{"schema_version", kSchemaVersion},
           {"format", "maccal-checkpoint"},
           {"stage", stage},
           {"seed_lineage",
            json{{"root_seed", cfg.seed},
                 {"extractor_init", streams::extractor_init},
                 {"stage1_head_init", streams::stage1_head_init},
                 {"stage2_head_init", streams::stage2_head_init},
                 {"mask", streams::mask}}},
           {"config", config_to_json(cfg)},
           {"extractor", json{{"input_dim", m.extractor.input_dim()}, {"frozen", m.extractor.frozen()}, {"layers", layers}}}};
    j["classifier"] = m.classifier ? detail::matrix_json(m.classifier->weight) : json(nullptr);
    if (m.head) {
        json ws = json::array();
        for (const Matrix *w : m.head->weights()) ws.push_back(detail::matrix_json(*w));
        const bool rect = m.head->kind() == HeadKind::bottleneck && std::get<BottleneckHead>(m.head->head).rectified;
        j["head"] = json{{"kind", to_string(m.head->kind())}, {"rectified", rect}, {"weights", ws}};
        j["final_q"] = m.final_q ? json(*m.final_q) : json(nullptr);
    } else {
        j["head"] = nullptr;
    }
    return j;
}

struct Checkpoint {
    Model model;
    TrainConfig config;
    std::string stage;
};

[[nodiscard]] inline Checkpoint checkpoint_from_json(const json &j) {
    if (j.value("format", "") != "maccal-checkpoint") throw DomainError("not a checkpoint file");
    if (j.value("schema_version", 0) != kSchemaVersion) throw DomainError("unsupported checkpoint schema version");
    Checkpoint c;
    c.stage = j.value("stage", "");
    c.config = config_from_json(j.at("config"));
    const auto &ex = j.at("extractor");
    std::vector<DenseLayer> layers;
    for (const auto &l : ex.at("layers")) {
        layers.push_back(DenseLayer{detail::matrix_from_json(l.at("weight")), detail::matrix_from_json(l.at("bias"))});
    }
    c.model.extractor = FeatureExtractor(ex.at("input_dim").get<std::size_t>(), std::move(layers));
    if (ex.value("frozen", false)) c.model.extractor.freeze();
    if (!j.at("classifier").is_null()) c.model.classifier = LinearHead{detail::matrix_from_json(j.at("classifier"))};
    if (!j.at("head").is_null()) {
        const auto &h = j.at("head");
        const auto &ws = h.at("weights");
        MaskedHead mh;
        if (parse_head_kind(h.at("kind").get<std::string>()) == HeadKind::linear) {
            mh.head = LinearHead{detail::matrix_from_json(ws.at(0))};
        } else {
            mh.head = BottleneckHead{detail::matrix_from_json(ws.at(0)), detail::matrix_from_json(ws.at(1)),
                                     h.value("rectified", true)};
        }
        mh.reset_masks();
        c.model.head = std::move(mh);
        if (j.contains("final_q") && !j.at("final_q").is_null()) c.model.final_q = j.at("final_q").get<double>();
    }
    return c;
}

inline void write_text(const std::string &path, const std::string &text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << text;
    if (!os) throw std::runtime_error("write failed: " + path);
}

[[nodiscard]] inline std::string read_text(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace maccal
