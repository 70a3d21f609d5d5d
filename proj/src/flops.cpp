#include "ctx/flops.hpp"

namespace ctx {

FlopBreakdown flop_estimate(const ModelConfig& config, bool caa_on) {
    config.validate();
    const double t = static_cast<double>(config.tokens_per_panel());
    const double d = static_cast<double>(config.dim);
    const double pp = static_cast<double>(config.patch_pixels());
    const double hidden = 4.0 * d;

    // One encoder block over L query tokens attending within segments of
    // (q_len, kv_len) pairs: q/k/v/out projections + score and value products.
    const auto attention_macs = [&](double l, double q_len, double kv_len, double segments) {
        return 4.0 * l * d * d + segments * 2.0 * q_len * kv_len * d;
    };
    const auto mlp_macs = [&](double l) { return 2.0 * l * d * hidden; };

    FlopBreakdown f;
    f.patch_embed = 2.0 * (6.0 * t) * pp * d;
    f.pre_attention = config.pre_depth * 2.0 * attention_macs(6.0 * t, t, t, 6.0);
    f.pre_mlp = config.pre_depth * 2.0 * mlp_macs(6.0 * t);
    if (caa_on && config.fusion == FusionMode::caa)
        f.caa = 2.0 * attention_macs(4.0 * t, 2.0 * t, 2.0 * t, 2.0);
    f.post_attention = config.post_depth * 2.0 * attention_macs(4.0 * t, 4.0 * t, 4.0 * t, 1.0);
    f.post_mlp = config.post_depth * 2.0 * mlp_macs(4.0 * t);
    f.dec_attention = config.dec_depth * 2.0 * attention_macs(4.0 * t, t, t, 4.0);
    f.dec_mlp = config.dec_depth * 2.0 * mlp_macs(4.0 * t);
    f.head = 2.0 * (4.0 * t) * d * pp;
    return f;
}

double caa_flop_delta_pct(const ModelConfig& config) {
    ModelConfig on = config;
    on.fusion = FusionMode::caa;
    const double with_caa = flop_estimate(on, true).total();
    const double without = flop_estimate(on, false).total();
    return 100.0 * (with_caa - without) / without;
}

}  // namespace ctx
