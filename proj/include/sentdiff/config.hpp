#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sentdiff/model.hpp"

namespace sentdiff {

enum class AugKind { replace, insert, del, all };

enum class ExtrasMode { none, positive, negative };

inline AugKind parse_aug_kind(const std::string& s) {
    if (s == "replace") return AugKind::replace;
    if (s == "insert") return AugKind::insert;
    if (s == "delete") return AugKind::del;
    if (s == "all") return AugKind::all;
    throw std::invalid_argument("unknown augmentation kind: " + s);
}

inline std::string aug_kind_name(AugKind k) {
    switch (k) {
        case AugKind::replace: return "replace";
        case AugKind::insert: return "insert";
        case AugKind::del: return "delete";
        case AugKind::all: return "all";
    }
    return "replace";
}

// Everything one training run needs. Serializes to a flat key = value
// document; command-line flags override file values.
struct TrainConfig {
    // objective
    double lr = 1e-3;
    int64_t batch_size = 64;
    int64_t epochs = 2;
    double mask_ratio = 0.30;
    double lambda = 0.005;
    double tau = 0.05;

    // architectures
    EncoderConfig encoder;    // also carries dropout p and max_len
    EncoderConfig generator;  // smaller stack, same vocab

    // generator pretraining
    int64_t gen_pretrain_steps = 1500;
    double gen_lr = 1e-3;
    double gen_mask_ratio = 0.15;

    // optimizer
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    // run control
    uint64_t seed = 1;
    int64_t eval_every = 20;
    std::string ablation = "none";  // none|aug-positive|aug-negative|no-batchnorm
    std::string aug = "replace";    // replace|insert|delete|all
    bool rtd_branch = true;         // false skips the difference-prediction branch entirely
    bool condition_on_h = true;     // false feeds the discriminator a detached copy of h

    TrainConfig() {
        generator.num_layers = 2;
        generator.hidden = 64;
        generator.heads = 2;
        generator.ffn = 256;
    }

    ExtrasMode extras_mode() const {
        if (ablation == "aug-positive") return ExtrasMode::positive;
        if (ablation == "aug-negative") return ExtrasMode::negative;
        return ExtrasMode::none;
    }

    AugKind aug_kind() const { return parse_aug_kind(aug); }

    bool batchnorm_enabled() const { return ablation != "no-batchnorm"; }

    // The difference-prediction branch runs only in the plain setting; the
    // extras ablations train contrastive-only with a third view.
    bool rtd_active() const { return rtd_branch && extras_mode() == ExtrasMode::none; }

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
        if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
        if (mask_ratio < 0.0 || mask_ratio > 1.0)
            throw std::invalid_argument("mask_ratio must be in [0,1]");
        if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
        if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
        if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
        static const char* kModes[] = {"none", "aug-positive", "aug-negative", "no-batchnorm"};
        bool ok = false;
        for (const char* m : kModes) ok = ok || ablation == m;
        if (!ok) throw std::invalid_argument("unknown ablation mode: " + ablation);
        parse_aug_kind(aug);
        if (generator.max_len < encoder.max_len)
            throw std::invalid_argument("generator max_len must cover encoder max_len");
    }
};

namespace config_detail {

inline bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw std::invalid_argument("expected a boolean, got: " + v);
}

}  // namespace config_detail

// Applies one key = value assignment; used by both the config-file parser and
// the CLI flag overrides.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
    auto d = [&] { return std::stod(value); };
    auto i = [&] { return static_cast<int64_t>(std::stoll(value)); };
    if (key == "lr") cfg.lr = d();
    else if (key == "batch_size") cfg.batch_size = i();
    else if (key == "epochs") cfg.epochs = i();
    else if (key == "mask_ratio") cfg.mask_ratio = d();
    else if (key == "lambda") cfg.lambda = d();
    else if (key == "tau") cfg.tau = d();
    else if (key == "dropout") cfg.encoder.dropout = cfg.generator.dropout = d();
    else if (key == "layers") cfg.encoder.num_layers = i();
    else if (key == "hidden") cfg.encoder.hidden = i();
    else if (key == "heads") cfg.encoder.heads = i();
    else if (key == "ffn") cfg.encoder.ffn = i();
    else if (key == "max_len") cfg.encoder.max_len = cfg.generator.max_len = i();
    else if (key == "vocab") cfg.encoder.vocab = cfg.generator.vocab = i();
    else if (key == "gen_layers") cfg.generator.num_layers = i();
    else if (key == "gen_hidden") cfg.generator.hidden = i();
    else if (key == "gen_heads") cfg.generator.heads = i();
    else if (key == "gen_ffn") cfg.generator.ffn = i();
    else if (key == "gen_pretrain_steps") cfg.gen_pretrain_steps = i();
    else if (key == "gen_lr") cfg.gen_lr = d();
    else if (key == "gen_mask_ratio") cfg.gen_mask_ratio = d();
    else if (key == "beta1") cfg.beta1 = d();
    else if (key == "beta2") cfg.beta2 = d();
    else if (key == "adam_eps") cfg.adam_eps = d();
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "eval_every") cfg.eval_every = i();
    else if (key == "ablation") cfg.ablation = value;
    else if (key == "aug") cfg.aug = value;
    else if (key == "rtd_branch") cfg.rtd_branch = config_detail::parse_bool(value);
    else if (key == "condition_on_h") cfg.condition_on_h = config_detail::parse_bool(value);
    else throw std::invalid_argument("unknown config key: " + key);
}

// Flat key = value text; '#' starts a comment, blank lines ignored.
inline TrainConfig parse_config_text(const std::string& text, TrainConfig base = TrainConfig{}) {
    std::istringstream in(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = true;
            for (char c : line) blank = blank && std::isspace(static_cast<unsigned char>(c));
            if (blank) continue;
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        " is not key = value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

inline std::string serialize_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out.precision(17);
    out << "lr = " << cfg.lr << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "mask_ratio = " << cfg.mask_ratio << "\n";
    out << "lambda = " << cfg.lambda << "\n";
    out << "tau = " << cfg.tau << "\n";
    out << "dropout = " << cfg.encoder.dropout << "\n";
    out << "layers = " << cfg.encoder.num_layers << "\n";
    out << "hidden = " << cfg.encoder.hidden << "\n";
    out << "heads = " << cfg.encoder.heads << "\n";
    out << "ffn = " << cfg.encoder.ffn << "\n";
    out << "max_len = " << cfg.encoder.max_len << "\n";
    out << "vocab = " << cfg.encoder.vocab << "\n";
    out << "gen_layers = " << cfg.generator.num_layers << "\n";
    out << "gen_hidden = " << cfg.generator.hidden << "\n";
    out << "gen_heads = " << cfg.generator.heads << "\n";
    out << "gen_ffn = " << cfg.generator.ffn << "\n";
    out << "gen_pretrain_steps = " << cfg.gen_pretrain_steps << "\n";
    out << "gen_lr = " << cfg.gen_lr << "\n";
    out << "gen_mask_ratio = " << cfg.gen_mask_ratio << "\n";
    out << "beta1 = " << cfg.beta1 << "\n";
    out << "beta2 = " << cfg.beta2 << "\n";
    out << "adam_eps = " << cfg.adam_eps << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "eval_every = " << cfg.eval_every << "\n";
    out << "ablation = " << cfg.ablation << "\n";
    out << "aug = " << cfg.aug << "\n";
    out << "rtd_branch = " << (cfg.rtd_branch ? 1 : 0) << "\n";
    out << "condition_on_h = " << (cfg.condition_on_h ? 1 : 0) << "\n";
    return out.str();
}

}  // namespace sentdiff
