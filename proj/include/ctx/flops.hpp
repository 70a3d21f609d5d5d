#pragma once

#include <cstdint>

#include "ctx/model.hpp"

namespace ctx {

/// Analytic inference-cost model for one chained grid: multiply-accumulate
/// counts x2, covering the patch embedding, attention (projections + score and
/// value products), MLPs, the CAA block, and the decoder with its pixel-patch
/// head. Norms, biases and the training-only pixel head are excluded.
struct FlopBreakdown {
    double patch_embed = 0.0;
    double pre_attention = 0.0;
    double pre_mlp = 0.0;
    double caa = 0.0;
    double post_attention = 0.0;
    double post_mlp = 0.0;
    double dec_attention = 0.0;
    double dec_mlp = 0.0;
    double head = 0.0;

    double total() const {
        return patch_embed + pre_attention + pre_mlp + caa + post_attention + post_mlp +
               dec_attention + dec_mlp + head;
    }
};

FlopBreakdown flop_estimate(const ModelConfig& config, bool caa_on);

/// Relative FLOP increase of CAA-on over CAA-off, in percent.
double caa_flop_delta_pct(const ModelConfig& config);

}  // namespace ctx
