#include "ctx/compositor.hpp"

#include <cfenv>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"

namespace ctx {

namespace {

using json = nlohmann::json;

void blit(Image& dst, const Image& src, std::int64_t row0, std::int64_t col0) {
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < src.h; ++y)
            for (std::int64_t x = 0; x < src.w; ++x)
                dst.at(c, row0 + y, col0 + x) = src.at(c, y, x);
}

Image crop(const Image& src, std::int64_t row0, std::int64_t col0, std::int64_t h, std::int64_t w) {
    Image out(h, w);
    for (int c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                out.at(c, y, x) = src.at(c, row0 + y, col0 + x);
    return out;
}

}  // namespace

void validate_triple(const SampleTriple& t) {
    if (t.input.h != t.removal.h || t.input.w != t.removal.w || t.input.h != t.seg.h ||
        t.input.w != t.seg.w)
        throw ShapeError("triple panels disagree in size (" + t.sample_id + ")");
    for (std::int64_t y = 0; y < t.seg.h; ++y)
        for (std::int64_t x = 0; x < t.seg.w; ++x) {
            const float v = t.seg.at(0, y, x);
            if (v != 0.0f && v != 1.0f)
                throw ContractError("seg panel not binary (" + t.sample_id + ")");
            if (t.seg.at(1, y, x) != v || t.seg.at(2, y, x) != v)
                throw ContractError("seg panel channels differ (" + t.sample_id + ")");
        }
}

std::string grid_mode_name(GridMode mode) {
    switch (mode) {
        case GridMode::chained: return "chained";
        case GridMode::baseline_seg: return "baseline_seg";
        case GridMode::baseline_rem: return "baseline_rem";
    }
    throw ContractError("unknown grid mode");
}

GridMode grid_mode_from_name(const std::string& name) {
    if (name == "chained") return GridMode::chained;
    if (name == "baseline_seg") return GridMode::baseline_seg;
    if (name == "baseline_rem") return GridMode::baseline_rem;
    throw ContractError("unknown grid mode: " + name);
}

CompositeGrid compose_grid(const SampleTriple& demo, const SampleTriple& query, GridMode mode) {
    if (demo.input.h != query.input.h || demo.input.w != query.input.w)
        throw ShapeError("compose_grid: demonstration and query panel sizes disagree");
    const auto h = demo.input.h, w = demo.input.w;
    const int cols = mode == GridMode::chained ? 3 : 2;

    CompositeGrid grid;
    grid.mode = mode;
    grid.panel_h = h;
    grid.panel_w = w;
    grid.pixels = Image(2 * h, cols * w);

    const SampleTriple* rows[2] = {&demo, &query};
    for (int r = 0; r < 2; ++r) {
        const auto& t = *rows[r];
        if (t.input.h != h || t.input.w != w || t.removal.h != h || t.removal.w != w ||
            t.seg.h != h || t.seg.w != w)
            throw ShapeError("compose_grid: triple panels disagree in size");
        blit(grid.pixels, t.input, r * h, 0);
        switch (mode) {
            case GridMode::chained:
                blit(grid.pixels, t.removal, r * h, w);
                blit(grid.pixels, t.seg, r * h, 2 * w);
                break;
            case GridMode::baseline_seg:
                blit(grid.pixels, t.seg, r * h, w);
                break;
            case GridMode::baseline_rem:
                blit(grid.pixels, t.removal, r * h, w);
                break;
        }
    }
    return grid;
}

const Image& GridPanels::input_panel(int row) const { return input[row]; }

const Image& GridPanels::removal_panel(int row) const {
    if (!removal[row])
        throw ContractError("grid in mode " + grid_mode_name(mode) + " has no removal panel");
    return *removal[row];
}

const Image& GridPanels::seg_panel(int row) const {
    if (!seg[row]) throw ContractError("grid in mode " + grid_mode_name(mode) + " has no seg panel");
    return *seg[row];
}

GridPanels decompose_grid(const CompositeGrid& grid) {
    const auto h = grid.panel_h, w = grid.panel_w;
    const int cols = grid.panel_columns();
    if (grid.pixels.h != 2 * h || grid.pixels.w != cols * w)
        throw ShapeError("decompose_grid: grid pixels do not match layout " + grid_mode_name(grid.mode));
    GridPanels panels;
    panels.mode = grid.mode;
    for (int r = 0; r < 2; ++r) {
        panels.input[r] = crop(grid.pixels, r * h, 0, h, w);
        switch (grid.mode) {
            case GridMode::chained:
                panels.removal[r] = crop(grid.pixels, r * h, w, h, w);
                panels.seg[r] = crop(grid.pixels, r * h, 2 * w, h, w);
                break;
            case GridMode::baseline_seg:
                panels.seg[r] = crop(grid.pixels, r * h, w, h, w);
                break;
            case GridMode::baseline_rem:
                panels.removal[r] = crop(grid.pixels, r * h, w, h, w);
                break;
        }
    }
    return panels;
}

std::int64_t MaskPlan::masked_count(int row) const {
    std::int64_t n = 0;
    for (auto v : row_pattern[row]) n += v != 0;
    return n;
}

MaskPlan sample_mask_plan(Rng& rng, double ratio, std::int64_t grid_h, std::int64_t grid_w,
                          MaskPhase phase) {
    if (ratio < 0.0 || ratio > 1.0) throw ContractError("sample_mask_plan: ratio must be in [0,1]");
    if (grid_h <= 0 || grid_w <= 0) throw ContractError("sample_mask_plan: empty patch lattice");
    MaskPlan plan;
    plan.grid_h = grid_h;
    plan.grid_w = grid_w;
    plan.ratio = ratio;
    plan.phase = phase;
    const auto n = grid_h * grid_w;
    if (phase == MaskPhase::infer) {
        plan.row_pattern[0].assign(static_cast<std::size_t>(n), 0);
        plan.row_pattern[1].assign(static_cast<std::size_t>(n), 1);
        return plan;
    }
    // round-to-nearest, ties to even
    const auto k = static_cast<std::int64_t>(std::nearbyint(ratio * static_cast<double>(n)));
    for (int r = 0; r < 2; ++r) {
        plan.row_pattern[r].assign(static_cast<std::size_t>(n), 0);
        for (auto idx : rng.sample_without_replacement(n, k))
            plan.row_pattern[r][static_cast<std::size_t>(idx)] = 1;
    }
    return plan;
}

std::string mask_plan_to_json(const MaskPlan& plan) {
    json j;
    j["grid_h"] = plan.grid_h;
    j["grid_w"] = plan.grid_w;
    j["ratio"] = plan.ratio;
    j["phase"] = plan.phase == MaskPhase::train ? "train" : "infer";
    std::vector<int> flat;
    for (int r = 0; r < 2; ++r)
        for (auto v : plan.row_pattern[r]) flat.push_back(v != 0);
    j["pattern"] = flat;
    return j.dump();
}

MaskPlan mask_plan_from_json(const std::string& text) {
    json j = json::parse(text);
    MaskPlan plan;
    plan.grid_h = j.at("grid_h").get<std::int64_t>();
    plan.grid_w = j.at("grid_w").get<std::int64_t>();
    plan.ratio = j.at("ratio").get<double>();
    plan.phase = j.at("phase").get<std::string>() == "infer" ? MaskPhase::infer : MaskPhase::train;
    const auto flat = j.at("pattern").get<std::vector<int>>();
    const auto n = plan.grid_h * plan.grid_w;
    if (static_cast<std::int64_t>(flat.size()) != 2 * n)
        throw ContractError("mask plan pattern length mismatch");
    for (int r = 0; r < 2; ++r) {
        plan.row_pattern[r].assign(static_cast<std::size_t>(n), 0);
        for (std::int64_t p = 0; p < n; ++p)
            plan.row_pattern[r][static_cast<std::size_t>(p)] = flat[static_cast<std::size_t>(r * n + p)] != 0;
    }
    return plan;
}

const SampleTriple& select_demonstration(const DemonstrationPolicy& policy,
                                         const std::vector<SampleTriple>& pool,
                                         const SampleTriple& query, Rng& rng) {
    if (pool.empty()) throw ContractError("select_demonstration: empty pool");
    if (policy.self_prompt_probability < 0.0 || policy.self_prompt_probability > 1.0)
        throw ContractError("select_demonstration: probability must be in [0,1]");
    const double p = policy.strategy == DemonstrationStrategy::self_prompt_mixture
                         ? policy.self_prompt_probability
                         : 0.0;
    if (p > 0.0 && rng.uniform() < p) return query;
    std::vector<const SampleTriple*> candidates;
    candidates.reserve(pool.size());
    for (const auto& t : pool)
        if (t.sample_id != query.sample_id) candidates.push_back(&t);
    if (candidates.empty()) return pool.front();  // degenerate pool of just the query
    return *candidates[rng.uniform_int(candidates.size())];
}

}  // namespace ctx
