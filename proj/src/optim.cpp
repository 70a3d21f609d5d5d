#include "ctx/optim.hpp"

#include <cmath>

#include "ctx/errors.hpp"

namespace ctx {

void adamw_step(std::vector<Tensor>& params, AdamWState& state, double lr) {
    if (lr < 0) throw ContractError("adamw_step: lr must be >= 0");
    if (state.first_moment.empty()) {
        state.first_moment.resize(params.size());
        state.second_moment.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.first_moment[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
            state.second_moment[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0f);
        }
    }
    if (state.first_moment.size() != params.size())
        throw ContractError("adamw_step: state does not match parameter list");

    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        if (m.size() != p.size()) throw ShapeError("adamw_step: moment/parameter shape mismatch");
        const bool has_grad = params[i].has_grad();
        const float* g = has_grad ? params[i].grad().data() : nullptr;
        for (std::size_t j = 0; j < p.size(); ++j) {
            // Decoupled decay first, then the bias-corrected Adam update.
            p[j] -= static_cast<float>(lr * state.weight_decay) * p[j];
            const double gj = g ? g[j] : 0.0;
            m[j] = static_cast<float>(state.beta1 * m[j] + (1.0 - state.beta1) * gj);
            v[j] = static_cast<float>(state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj);
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

double lr_at(const CosineSchedule& schedule, std::int64_t step) {
    if (schedule.warmup_steps > schedule.total_steps)
        throw ContractError("lr_at: warmup_steps exceeds total_steps");
    if (step < 0 || step > schedule.total_steps)
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0, total_steps]");
    if (schedule.warmup_steps > 0 && step < schedule.warmup_steps)
        return schedule.base_lr * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
    const auto span = schedule.total_steps - schedule.warmup_steps;
    const double progress = span == 0 ? 1.0
                                      : static_cast<double>(step - schedule.warmup_steps) /
                                            static_cast<double>(span);
    return schedule.min_lr +
           0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace ctx
