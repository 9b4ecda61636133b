#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vscg/error.hpp"

namespace vscg {

enum class SupervisionMode { Fully, Weakly };
enum class LossVariant { Full, CeAvps, CTOnly, BceOnly };
enum class CereAblation { On, ZeroInit };

inline std::string to_string(SupervisionMode m) { return m == SupervisionMode::Fully ? "fully" : "weakly"; }
inline std::string to_string(LossVariant v) {
    switch (v) {
        case LossVariant::Full: return "full";
        case LossVariant::CeAvps: return "ce_avps";
        case LossVariant::CTOnly: return "c_t_only";
        case LossVariant::BceOnly: return "bce_only";
    }
    return "full";
}

/// Every dimension, rate, threshold, loss switch, ablation flag and training
/// knob of the model. Negative r_i / lambda mean "auto": resolved from the
/// supervision mode (r_i: 0.2 fully, 0.5 weakly) and the loss variant
/// (lambda: 100 for ce_avps, else 2) by finalize().
struct ModelConfig {
    static constexpr std::size_t kAutoIndex = static_cast<std::size_t>(-1);

    // dims
    std::size_t T = 10, C = 6, d_a = 16, d_v = 24, H = 3, W = 3;
    std::size_t d_m = 32, d_l = 128, d_p = 128, d_s = 128, d_e = 64, d_i = 128, d_f = 128, d_h = 64;
    std::size_t background_index = kAutoIndex; // auto: C - 1
    // rates
    double r_s = 0.2;
    double r_i = -1.0;
    // thresholds
    double tau_psp = 0.095;
    double tau_b = 0.7;
    // loss
    double lambda = -1.0;
    SupervisionMode mode = SupervisionMode::Fully;
    LossVariant variant = LossVariant::Full;
    // ablation
    bool escm_on = true;
    CereAblation cere = CereAblation::On;
    bool shared_cere = true;
    // train
    double lr = 1e-3;
    std::size_t batch_size = 128;
    std::size_t epochs = 300;
    std::uint64_t seed = 1;
    std::size_t patience = 30;

    void finalize() {
        if (r_i < 0.0) r_i = mode == SupervisionMode::Weakly ? 0.5 : 0.2;
        if (lambda < 0.0) lambda = variant == LossVariant::CeAvps ? 100.0 : 2.0;
        if (background_index == kAutoIndex && C >= 1) background_index = C - 1;
    }

    void validate() const {
        auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
        if (C < 2) fail("C >= 2 required (at least one foreground class plus background)");
        if (background_index >= C)
            fail("background_index " + std::to_string(background_index) + " out of range for C=" +
                 std::to_string(C));
        if (escm_on && T < 4) fail("T >= 4 required: two temporal pooling halvings must leave length >= 1");
        if (d_i != 2 * d_e)
            fail("d_i must equal 2*d_e, got d_i=" + std::to_string(d_i) + ", d_e=" + std::to_string(d_e));
        if (d_l % 2 != 0) fail("d_l must be even (two concatenated recurrent directions)");
        if (!(tau_b > 0.0 && tau_b < 1.0)) fail("tau_b must lie in (0, 1)");
        if (tau_psp < 0.0 || tau_psp >= 1.0) fail("tau_psp must lie in [0, 1)");
        if (r_s < 0.0 || r_s >= 1.0) fail("r_s must lie in [0, 1)");
        if (r_i < 0.0 || r_i >= 1.0) fail("r_i must lie in [0, 1) (did finalize() run?)");
        if (lambda <= 0.0) fail("lambda must be positive");
        if (batch_size < 1) fail("batch_size >= 1 required");
        if (mode == SupervisionMode::Fully && variant == LossVariant::BceOnly)
            fail("variant bce_only applies to the weakly supervised mode");
        if (mode == SupervisionMode::Weakly &&
            (variant == LossVariant::CeAvps || variant == LossVariant::CTOnly))
            fail("variant " + to_string(variant) + " applies to the fully supervised mode");
        for (auto [name, v] : {std::pair<const char*, std::size_t>{"T", T}, {"C", C}, {"d_a", d_a},
                               {"d_v", d_v}, {"H", H}, {"W", W}, {"d_m", d_m}, {"d_l", d_l},
                               {"d_p", d_p}, {"d_s", d_s}, {"d_e", d_e}, {"d_f", d_f}, {"d_h", d_h}})
            if (v == 0) fail(std::string(name) + " must be >= 1");
    }
};

/// Desk-scale defaults: small enough that tests run in seconds.
inline ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.finalize();
    return cfg;
}

/// Full-scale preset matching the published feature dims (VGG-19 7x7x512
/// visual maps, 128-d audio embeddings, 28 event classes plus background).
/// Used for shape parity checks, not for training in this harness.
inline ModelConfig paper_config() {
    ModelConfig cfg;
    cfg.T = 10;
    cfg.C = 29;
    cfg.d_a = 128;
    cfg.d_v = 512;
    cfg.H = 7;
    cfg.W = 7;
    cfg.d_m = 64;
    cfg.d_l = 256;
    cfg.d_p = 256;
    cfg.d_s = 256;
    cfg.d_e = 64;
    cfg.d_i = 128;
    cfg.d_f = 256;
    cfg.d_h = 128;
    cfg.finalize();
    return cfg;
}

/// Tiny dims for whole-model gradient checking.
inline ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.T = 6;
    cfg.C = 3;
    cfg.d_a = 4;
    cfg.d_v = 6;
    cfg.H = 2;
    cfg.W = 2;
    cfg.d_m = 4;
    cfg.d_l = 8;
    cfg.d_p = 8;
    cfg.d_s = 8;
    cfg.d_e = 4;
    cfg.d_i = 8;
    cfg.d_f = 8;
    cfg.d_h = 4;
    cfg.batch_size = 2;
    cfg.finalize();
    return cfg;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
    try {
        const long long x = std::stoll(v);
        if (x < 0) throw std::invalid_argument("negative");
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

} // namespace detail

/// Apply `key = value` entries (flat config file contents or flag overrides)
/// on top of a base config. Unknown keys are errors. Does not finalize.
inline void apply_config_entry(ModelConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_double;
    using detail::parse_size;
    if (key == "T") cfg.T = parse_size(key, value);
    else if (key == "C") cfg.C = parse_size(key, value);
    else if (key == "d_a") cfg.d_a = parse_size(key, value);
    else if (key == "d_v") cfg.d_v = parse_size(key, value);
    else if (key == "H") cfg.H = parse_size(key, value);
    else if (key == "W") cfg.W = parse_size(key, value);
    else if (key == "d_m") cfg.d_m = parse_size(key, value);
    else if (key == "d_l") cfg.d_l = parse_size(key, value);
    else if (key == "d_p") cfg.d_p = parse_size(key, value);
    else if (key == "d_s") cfg.d_s = parse_size(key, value);
    else if (key == "d_e") cfg.d_e = parse_size(key, value);
    else if (key == "d_i") cfg.d_i = parse_size(key, value);
    else if (key == "d_f") cfg.d_f = parse_size(key, value);
    else if (key == "d_h") cfg.d_h = parse_size(key, value);
    else if (key == "background_index")
        cfg.background_index = value == "auto" ? ModelConfig::kAutoIndex : parse_size(key, value);
    else if (key == "r_s") cfg.r_s = parse_double(key, value);
    else if (key == "r_i") cfg.r_i = value == "auto" ? -1.0 : parse_double(key, value);
    else if (key == "tau_psp") cfg.tau_psp = parse_double(key, value);
    else if (key == "tau_b") cfg.tau_b = parse_double(key, value);
    else if (key == "lambda") cfg.lambda = value == "auto" ? -1.0 : parse_double(key, value);
    else if (key == "mode") {
        if (value == "fully") cfg.mode = SupervisionMode::Fully;
        else if (value == "weakly") cfg.mode = SupervisionMode::Weakly;
        else throw ConfigError("config key 'mode': expected fully|weakly, got '" + value + "'");
    } else if (key == "variant") {
        if (value == "full") cfg.variant = LossVariant::Full;
        else if (value == "ce_avps") cfg.variant = LossVariant::CeAvps;
        else if (value == "c_t_only") cfg.variant = LossVariant::CTOnly;
        else if (value == "bce_only") cfg.variant = LossVariant::BceOnly;
        else throw ConfigError("config key 'variant': expected full|ce_avps|c_t_only|bce_only, got '" + value + "'");
    } else if (key == "ablation_escm") {
        if (value == "on") cfg.escm_on = true;
        else if (value == "off") cfg.escm_on = false;
        else throw ConfigError("config key 'ablation_escm': expected on|off, got '" + value + "'");
    } else if (key == "ablation_cere") {
        if (value == "on") cfg.cere = CereAblation::On;
        else if (value == "zero_init") cfg.cere = CereAblation::ZeroInit;
        else throw ConfigError("config key 'ablation_cere': expected on|zero_init, got '" + value + "'");
    } else if (key == "ablation_shared_cere") {
        if (value == "on") cfg.shared_cere = true;
        else if (value == "off") cfg.shared_cere = false;
        else throw ConfigError("config key 'ablation_shared_cere': expected on|off, got '" + value + "'");
    } else if (key == "lr") cfg.lr = parse_double(key, value);
    else if (key == "batch_size") cfg.batch_size = parse_size(key, value);
    else if (key == "epochs") cfg.epochs = parse_size(key, value);
    else if (key == "seed") cfg.seed = parse_size(key, value);
    else if (key == "patience") cfg.patience = parse_size(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

/// Parse a flat `key = value` document (UTF-8, '#' comments). Unknown keys
/// are errors; later entries override earlier ones.
inline void apply_config_text(ModelConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        apply_config_entry(cfg, key, value);
    }
}

/// Serialize every field as a flat `key = value` document (all values
/// concrete; call finalize() first).
inline std::string config_to_text(const ModelConfig& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "T = " << cfg.T << "\n"
       << "C = " << cfg.C << "\n"
       << "d_a = " << cfg.d_a << "\n"
       << "d_v = " << cfg.d_v << "\n"
       << "H = " << cfg.H << "\n"
       << "W = " << cfg.W << "\n"
       << "d_m = " << cfg.d_m << "\n"
       << "d_l = " << cfg.d_l << "\n"
       << "d_p = " << cfg.d_p << "\n"
       << "d_s = " << cfg.d_s << "\n"
       << "d_e = " << cfg.d_e << "\n"
       << "d_i = " << cfg.d_i << "\n"
       << "d_f = " << cfg.d_f << "\n"
       << "d_h = " << cfg.d_h << "\n"
       << "background_index = " << cfg.background_index << "\n"
       << "r_s = " << cfg.r_s << "\n"
       << "r_i = " << cfg.r_i << "\n"
       << "tau_psp = " << cfg.tau_psp << "\n"
       << "tau_b = " << cfg.tau_b << "\n"
       << "lambda = " << cfg.lambda << "\n"
       << "mode = " << to_string(cfg.mode) << "\n"
       << "variant = " << to_string(cfg.variant) << "\n"
       << "ablation_escm = " << (cfg.escm_on ? "on" : "off") << "\n"
       << "ablation_cere = " << (cfg.cere == CereAblation::On ? "on" : "zero_init") << "\n"
       << "ablation_shared_cere = " << (cfg.shared_cere ? "on" : "off") << "\n"
       << "lr = " << cfg.lr << "\n"
       << "batch_size = " << cfg.batch_size << "\n"
       << "epochs = " << cfg.epochs << "\n"
       << "seed = " << cfg.seed << "\n"
       << "patience = " << cfg.patience << "\n";
    return os.str();
}

} // namespace vscg
