#include "ctx/infer.hpp"

#include <algorithm>

#include "ctx/errors.hpp"

namespace ctx {

SampleTriple placeholder_query(const Image& query_input, float placeholder) {
    SampleTriple q;
    q.sample_id = "__query__";
    q.input = query_input;
    q.removal = Image(query_input.h, query_input.w, placeholder);
    q.seg = Image(query_input.h, query_input.w, placeholder);
    return q;
}

namespace {

InferenceResult run(const InferenceRequest& request, const ContextModel& model, bool all_demos) {
    if (request.demos.empty()) throw ContractError("inference requires at least one demonstration");
    if (request.seg_threshold <= 0.0 || request.seg_threshold >= 1.0)
        throw ContractError("seg_threshold must lie in (0,1)");
    for (const auto& [name, t] : model.named_params())
        if (!t.all_finite()) throw ContractError("model weights are not finite (" + name + ")");

    NoGradGuard no_grad;
    const SampleTriple query = placeholder_query(request.query_input);
    const auto k = all_demos ? request.demos.size() : 1;
    std::vector<CompositeGrid> grids;
    std::vector<MaskPlan> plans;
    Rng dummy(0);
    for (std::size_t i = 0; i < k; ++i) {
        grids.push_back(compose_grid(request.demos[i], query, GridMode::chained));
        plans.push_back(sample_mask_plan(dummy, 1.0, model.config().lattice_h(),
                                         model.config().lattice_w(), MaskPhase::infer));
    }

    ForwardOptions opts;
    opts.pixel_head = false;
    opts.ensemble_average = true;  // mean over one grid is exact identity
    opts.ensemble_layers = request.ensemble_layers;
    ForwardResult fwd = model.forward_batch(grids, plans, opts);

    InferenceResult result;
    result.removal = fwd.removal_panel(0, 1);
    const Image seg = fwd.seg_panel(0, 1);
    result.seg_prob = Image(seg.h, seg.w);
    result.seg_mask.h = seg.h;
    result.seg_mask.w = seg.w;
    result.seg_mask.on.resize(static_cast<std::size_t>(seg.h * seg.w));
    for (std::int64_t y = 0; y < seg.h; ++y)
        for (std::int64_t x = 0; x < seg.w; ++x) {
            const float p = (seg.at(0, y, x) + seg.at(1, y, x) + seg.at(2, y, x)) / 3.0f;
            result.seg_prob.set(y, x, p, p, p);
            result.seg_mask.on[static_cast<std::size_t>(y * seg.w + x)] =
                p >= static_cast<float>(request.seg_threshold);
        }
    return result;
}

}  // namespace

InferenceResult infer(const InferenceRequest& request, const ContextModel& model) {
    return run(request, model, false);
}

InferenceResult infer_ensemble(const InferenceRequest& request, const ContextModel& model) {
    return run(request, model, true);
}

InferenceResult infer_double(const InferenceRequest& request, const ContextModel& model) {
    InferenceResult first =
        request.demos.size() > 1 ? infer_ensemble(request, model) : infer(request, model);
    SampleTriple demo;
    demo.sample_id = "__double__";
    demo.input = request.query_input;
    demo.removal = first.removal;
    demo.seg = Image(first.seg_mask.h, first.seg_mask.w);
    for (std::int64_t y = 0; y < demo.seg.h; ++y)
        for (std::int64_t x = 0; x < demo.seg.w; ++x) {
            const float v = first.seg_mask.on[static_cast<std::size_t>(y * demo.seg.w + x)] ? 1.0f : 0.0f;
            demo.seg.set(y, x, v, v, v);
        }
    InferenceRequest second = request;
    second.demos = {std::move(demo)};
    second.double_inference = false;
    return infer(second, model);
}

}  // namespace ctx
