#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "foton/activation.hpp"
#include "foton/common.hpp"
#include "foton/feedback.hpp"
#include "foton/loss.hpp"
#include "foton/rules.hpp"

namespace foton {

enum class InitKind { Orthogonal, Gaussian };
enum class Precision { Float32, Float64 };

inline constexpr std::size_t kOrthoInitOnly = 0; // distinguished ortho_rate value

// One architecture element; scalar-type independent.
struct LayerSpec {
    enum class Kind { Dense, Conv, Pool } kind = Kind::Dense;
    std::size_t units = 0;     // dense
    ActKind act = ActKind::Identity;
    double dropout = 0.0;      // dense only
    std::size_t filters = 0, ksize = 3, pad = 1; // conv
    bool bcop = false;
    std::size_t ph = 2, pw = 2; // pool
};

struct ExperimentConfig {
    std::string name = "run";
    std::string dataset = "synthetic"; // mnist | cifar10 | cifar100 | synthetic
    std::string data_dir = "data";
    Shape input_shape;                 // filled from the dataset when empty
    std::size_t num_classes = 0;
    std::vector<LayerSpec> arch;

    RuleKind rule = RuleKind::FOTON;
    PepitaVariant pepita_variant = PepitaVariant::Modified;
    LossKind loss = LossKind::mse();
    double lr = 0.1;
    double weight_decay = 0.0;
    std::size_t batch_size = 256;
    std::size_t epochs = 10;
    std::vector<std::size_t> decay_epochs; // lr *= 0.1 after these epochs (1-based)

    std::size_t ortho_rate = 1; // steps between projections; kOrthoInitOnly = init-only
    int bjorck_iters = 5;
    FeedbackMode f_mode = FeedbackMode::AlignedComposition;
    std::size_t f_refresh = 0; // steps; 0 = once per epoch, kNeverRefresh = frozen

    InitKind init = InitKind::Orthogonal;
    std::uint64_t seed = 0;
    Precision precision = Precision::Float32;

    std::string out_dir;    // metrics + checkpoints; empty = keep in memory only
    std::string resume_from;

    std::vector<std::size_t> align_epochs; // run a sweep after these epochs; 0 = at init
    std::size_t align_batch = 1024;
    bool align_on_weights = false;

    std::size_t train_subset = 0; // 0 = full split
    std::size_t eval_subset = 0;
    bool coarse_labels = false;
    std::array<double, 3> norm_mean{0.0, 0.0, 0.0};
    std::array<double, 3> norm_std{1.0, 1.0, 1.0};

    std::vector<std::size_t> synth_widths{16, 12, 8};
    std::size_t synth_samples = 256;
};

namespace detail {

inline std::string trim(const std::string &s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string &s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string &v) {
    std::vector<std::size_t> out;
    if (trim(v).empty() || trim(v) == "none") return out;
    for (const auto &tok : split(v, ','))
        if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
}

inline LayerSpec parse_layer_spec(const std::string &tok) {
    auto parts = split(tok, ':');
    if (parts.empty()) throw ConfigError("empty layer spec");
    LayerSpec spec;
    if (parts[0] == "dense") {
        if (parts.size() < 2) throw ConfigError("dense spec needs units: " + tok);
        spec.kind = LayerSpec::Kind::Dense;
        spec.units = std::stoull(parts[1]);
        if (parts.size() > 2) spec.act = act_from_name(parts[2]);
        if (parts.size() > 3) spec.dropout = std::stod(parts[3]);
    } else if (parts[0] == "conv") {
        if (parts.size() < 2) throw ConfigError("conv spec needs filters: " + tok);
        spec.kind = LayerSpec::Kind::Conv;
        spec.filters = std::stoull(parts[1]);
        if (parts.size() > 2) spec.ksize = std::stoull(parts[2]);
        if (parts.size() > 3) spec.pad = std::stoull(parts[3]);
        if (parts.size() > 4) spec.act = act_from_name(parts[4]);
        if (parts.size() > 5 && parts[5] == "bcop") spec.bcop = true;
    } else if (parts[0] == "pool") {
        spec.kind = LayerSpec::Kind::Pool;
        if (parts.size() > 1) spec.ph = spec.pw = std::stoull(parts[1]);
    } else {
        throw ConfigError("unknown layer kind: " + parts[0]);
    }
    return spec;
}

inline std::string layer_spec_str(const LayerSpec &s) {
    switch (s.kind) {
    case LayerSpec::Kind::Dense: {
        std::string out = "dense:" + std::to_string(s.units) + ":" + act_name(s.act);
        if (s.dropout > 0) out += ":" + std::to_string(s.dropout);
        return out;
    }
    case LayerSpec::Kind::Conv: {
        std::string out = "conv:" + std::to_string(s.filters) + ":" + std::to_string(s.ksize) +
                          ":" + std::to_string(s.pad) + ":" + act_name(s.act);
        if (s.bcop) out += ":bcop";
        return out;
    }
    case LayerSpec::Kind::Pool:
        return "pool:" + std::to_string(s.ph);
    }
    return "?";
}

} // namespace detail

// Flat key-value config text: one `key = value` per line, '#' comments.
inline void apply_config_entry(ExperimentConfig &cfg, const std::string &key,
                               const std::string &value) {
    using detail::parse_size_list;
    if (key == "name") cfg.name = value;
    else if (key == "dataset") cfg.dataset = value;
    else if (key == "data_dir") cfg.data_dir = value;
    else if (key == "arch") {
        cfg.arch.clear();
        for (const auto &tok : detail::split(value, ','))
            if (!tok.empty()) cfg.arch.push_back(detail::parse_layer_spec(tok));
    } else if (key == "rule") cfg.rule = rule_from_name(value);
    else if (key == "pepita_variant") {
        if (value == "original") cfg.pepita_variant = PepitaVariant::Original;
        else if (value == "modified") cfg.pepita_variant = PepitaVariant::Modified;
        else throw ConfigError("pepita_variant must be original or modified");
    } else if (key == "loss") {
        if (value == "mse") cfg.loss.type = LossType::MSE;
        else if (value == "ce") cfg.loss.type = LossType::CrossEntropyTemp;
        else throw ConfigError("loss must be mse or ce");
    } else if (key == "ce_temperature") cfg.loss.temperature = std::stod(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "batch_size") cfg.batch_size = std::stoull(value);
    else if (key == "epochs") cfg.epochs = std::stoull(value);
    else if (key == "decay_epochs") cfg.decay_epochs = parse_size_list(value);
    else if (key == "ortho_rate")
        cfg.ortho_rate = (value == "init-only" || value == "init") ? kOrthoInitOnly
                                                                   : std::stoull(value);
    else if (key == "bjorck_iters") cfg.bjorck_iters = std::stoi(value);
    else if (key == "f_mode") {
        if (value == "aligned") cfg.f_mode = FeedbackMode::AlignedComposition;
        else if (value == "materialized") cfg.f_mode = FeedbackMode::Materialized;
        else if (value == "fixed-random") cfg.f_mode = FeedbackMode::FixedRandom;
        else if (value == "exact") cfg.f_mode = FeedbackMode::ExactPerSample;
        else throw ConfigError("unknown f_mode: " + value);
    } else if (key == "f_refresh")
        cfg.f_refresh = (value == "never") ? kNeverRefresh
                        : (value == "epoch") ? 0
                                             : std::stoull(value);
    else if (key == "init") {
        if (value == "orthogonal") cfg.init = InitKind::Orthogonal;
        else if (value == "gaussian") cfg.init = InitKind::Gaussian;
        else throw ConfigError("init must be orthogonal or gaussian");
    } else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "precision") {
        if (value == "f32") cfg.precision = Precision::Float32;
        else if (value == "f64") cfg.precision = Precision::Float64;
        else throw ConfigError("precision must be f32 or f64");
    } else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "resume_from") cfg.resume_from = value;
    else if (key == "align_epochs") cfg.align_epochs = parse_size_list(value);
    else if (key == "align_batch") cfg.align_batch = std::stoull(value);
    else if (key == "align_on_weights") cfg.align_on_weights = value == "true" || value == "1";
    else if (key == "train_subset") cfg.train_subset = std::stoull(value);
    else if (key == "eval_subset") cfg.eval_subset = std::stoull(value);
    else if (key == "coarse_labels") cfg.coarse_labels = value == "true" || value == "1";
    else if (key == "norm_mean") {
        auto v = detail::split(value, ',');
        if (v.size() != 3) throw ConfigError("norm_mean needs 3 values");
        for (int i = 0; i < 3; ++i) cfg.norm_mean[i] = std::stod(v[i]);
    } else if (key == "norm_std") {
        auto v = detail::split(value, ',');
        if (v.size() != 3) throw ConfigError("norm_std needs 3 values");
        for (int i = 0; i < 3; ++i) cfg.norm_std[i] = std::stod(v[i]);
    } else if (key == "synth_widths") cfg.synth_widths = parse_size_list(value);
    else if (key == "synth_samples") cfg.synth_samples = std::stoull(value);
    else throw ConfigError("unknown config key: " + key);
}

inline ExperimentConfig parse_config_text(std::istream &in) {
    ExperimentConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                               detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError &e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        } catch (const std::exception &e) {
            throw ConfigError("line " + std::to_string(lineno) + ": bad value (" + e.what() +
                              ")");
        }
    }
    return cfg;
}

inline ExperimentConfig load_config_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config_text(in);
}

inline std::string arch_fingerprint(const ExperimentConfig &cfg) {
    std::string out = shape_str(cfg.input_shape);
    for (const auto &s : cfg.arch) out += "|" + detail::layer_spec_str(s);
    return out;
}

} // namespace foton
