#pragma once

#include <cstdint>
#include <vector>

#include "ctx/tensor.hpp"

namespace ctx {

/// Decoupled-weight-decay Adam. Moment buffers are created lazily to match
/// the parameter shapes; step_count advances by one per update.
struct AdamWState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
    std::int64_t step_count = 0;
    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
};

/// One update over a parameter list from their accumulated grads. Parameters
/// without a grad buffer are treated as zero-gradient (decay still applies).
void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr);

struct CosineSchedule {
    double base_lr = 1e-4;
    double min_lr = 0.0;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 1;
};

/// Linear warmup from 0 to base_lr, then cosine decay to min_lr.
double lr_at(const CosineSchedule& schedule, std::int64_t step);

}  // namespace ctx
