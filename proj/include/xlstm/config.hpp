// Flat key-value config files for ModelConfig. Unknown keys are rejected so
// typos fail loudly instead of silently using defaults.
#pragma once

#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

#include "xlstm/params.hpp"

namespace xlstm {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

}  // namespace detail

// Applies one key=value pair; throws on unknown key or a bad value.
inline void apply_config_entry(ModelConfig& cfg, const std::string& key,
                               const std::string& value) {
    auto to_u = [&](const std::string& v) -> std::size_t {
        std::size_t pos = 0;
        auto r = std::stoull(v, &pos);
        if (pos != v.size())
            throw std::invalid_argument("config: bad integer for " + key);
        return static_cast<std::size_t>(r);
    };
    auto to_d = [&](const std::string& v) -> double {
        std::size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size())
            throw std::invalid_argument("config: bad number for " + key);
        return r;
    };
    if (key == "vocab_size") cfg.vocab_size = to_u(value);
    else if (key == "num_blocks") cfg.num_blocks = to_u(value);
    else if (key == "d_model") cfg.d_model = to_u(value);
    else if (key == "num_heads") cfg.num_heads = to_u(value);
    else if (key == "ff_proj_factor") cfg.ff_proj_factor = to_d(value);
    else if (key == "gate_cap") cfg.gate_cap = to_d(value);
    else if (key == "logit_cap") cfg.logit_cap = to_d(value);
    else if (key == "norm_eps") cfg.norm_eps = to_d(value);
    else if (key == "use_qkv_bias") cfg.use_qkv_bias = detail::parse_bool(value, key);
    else if (key == "cap_gates") cfg.cap_gates = detail::parse_bool(value, key);
    else if (key == "cap_logits") cfg.cap_logits = detail::parse_bool(value, key);
    else if (key == "eod_token_id") cfg.eod_token_id = to_u(value);
    else throw std::invalid_argument("config: unknown key: " + key);
}

// Parses "key = value" lines; '#' starts a comment, blank lines are skipped.
inline ModelConfig parse_model_config(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value: " + line);
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline std::string serialize_model_config(const ModelConfig& cfg) {
    auto num = [](double v) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "vocab_size = " << cfg.vocab_size << '\n'
        << "num_blocks = " << cfg.num_blocks << '\n'
        << "d_model = " << cfg.d_model << '\n'
        << "num_heads = " << cfg.num_heads << '\n'
        << "ff_proj_factor = " << num(cfg.ff_proj_factor) << '\n'
        << "gate_cap = " << num(cfg.gate_cap) << '\n'
        << "logit_cap = " << num(cfg.logit_cap) << '\n'
        << "norm_eps = " << num(cfg.norm_eps) << '\n'
        << "use_qkv_bias = " << (cfg.use_qkv_bias ? "true" : "false") << '\n'
        << "cap_gates = " << (cfg.cap_gates ? "true" : "false") << '\n'
        << "cap_logits = " << (cfg.cap_logits ? "true" : "false") << '\n'
        << "eod_token_id = " << cfg.eod_token_id << '\n';
    return out.str();
}

}  // namespace xlstm
