#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"

namespace ctx {

/// Flat dotted-key configuration: a registry of known keys with defaults, a
/// JSON config file layer, and command-line overrides (which win). Unknown
/// keys are rejected.
class CliConfig {
public:
    CliConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults();

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ContractError("unknown config key: " + key);
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config: " + path);
        nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ContractError("config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            std::string s;
            if (value.is_string())
                s = value.get<std::string>();
            else
                s = value.dump();
            set(key, s);
        }
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw ContractError("unknown config key: " + key);
        return it->second;
    }

    double num(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ContractError("config key " + key + " is not numeric: " + s);
        }
    }

    std::int64_t integer(const std::string& key) const {
        const double v = num(key);
        return static_cast<std::int64_t>(v);
    }

    bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ContractError("config key " + key + " is not boolean: " + s);
    }

private:
    std::map<std::string, std::string> values_;
};

inline const std::map<std::string, std::string>& CliConfig::defaults() {
    static const std::map<std::string, std::string> kDefaults = {
        {"seed", "0"},
        {"out", "out"},
        {"data.count", "2000"},
        {"data.panel", "64"},
        {"data.glyph_min", "3"},
        {"data.glyph_max", "6"},
        {"data.scale_min", "1.0"},
        {"data.scale_max", "2.0"},
        {"data.val_fraction", "0.1"},
        {"prompttext.count", "429"},
        {"prompttext.panel", "128"},
        {"model.panel", "64"},
        {"model.patch", "8"},
        {"model.dim", "192"},
        {"model.heads", "3"},
        {"model.pre_depth", "1"},
        {"model.post_depth", "3"},
        {"model.dec_depth", "2"},
        {"model.mask_token", "shared"},
        {"model.fusion", "caa"},
        {"train.epochs", "20"},
        {"train.batch_size", "2"},
        {"train.accum_steps", "2"},
        {"train.mask_ratio", "0.85"},
        {"train.self_prompt_p", "0.2"},
        {"train.w_rem", "0.3"},
        {"train.w_seg", "1.0"},
        {"train.w_pix", "1.0"},
        {"train.base_lr", "0.0001"},
        {"train.min_lr", "0.0"},
        {"train.weight_decay", "0.1"},
        {"train.warmup_frac", "0.05"},
        {"train.ckpt_every", "5"},
        {"train.manifest", ""},
        {"train.mode", "chained"},
        {"infer.ckpt", ""},
        {"infer.data", ""},
        {"infer.requests", ""},
        {"infer.threshold", "0.5"},
        {"infer.demos", "1"},
        {"infer.double", "false"},
        {"eval.ckpt", ""},
        {"eval.manifest", ""},
        {"eval.pred_dir", ""},
        {"eval.name", "dataset"},
        {"bench.iters", "3"},
    };
    return kDefaults;
}

}  // namespace ctx
