#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctx/image.hpp"
#include "ctx/rng.hpp"

namespace ctx {

/// One training/eval example: scene, erased background, binary stroke mask.
/// The seg panel stores the mask as white strokes on black with identical
/// channels.
struct SampleTriple {
    Image input;    // I
    Image removal;  // O
    Image seg;      // Y, values in {0,1}
    std::string sample_id;
};

/// Validates the panel-size and binary-mask invariants, throwing on violation.
void validate_triple(const SampleTriple& t);

enum class GridMode { chained, baseline_seg, baseline_rem };

std::string grid_mode_name(GridMode mode);
GridMode grid_mode_from_name(const std::string& name);

/// Row 0 holds the demonstration, row 1 the query. Chained layout is
/// [[I,O,Y],[I,O,Y]] (width 3w); baselines drop one label column (width 2w).
struct CompositeGrid {
    Image pixels;
    GridMode mode = GridMode::chained;
    std::int64_t panel_h = 0;
    std::int64_t panel_w = 0;

    int panel_columns() const { return mode == GridMode::chained ? 3 : 2; }
};

CompositeGrid compose_grid(const SampleTriple& demo, const SampleTriple& query, GridMode mode);

/// Panels recovered from a grid. Label accessors throw ContractError when the
/// grid's mode has no such column.
struct GridPanels {
    GridMode mode;
    Image input[2];
    std::optional<Image> removal[2];
    std::optional<Image> seg[2];

    const Image& input_panel(int row) const;
    const Image& removal_panel(int row) const;
    const Image& seg_panel(int row) const;
};

GridPanels decompose_grid(const CompositeGrid& grid);

enum class MaskPhase { train, infer };

/// Patch-level boolean masking pattern over the label columns. One pattern per
/// row, applied identically to the O and Y columns (M_O = M_Y).
struct MaskPlan {
    std::int64_t grid_h = 0;  // patch lattice of one panel
    std::int64_t grid_w = 0;
    double ratio = 0.0;
    MaskPhase phase = MaskPhase::train;
    // row_pattern[r][p] != 0 means patch p of row r's label panels is masked.
    std::vector<std::uint8_t> row_pattern[2];

    std::int64_t patches_per_panel() const { return grid_h * grid_w; }
    std::int64_t masked_count(int row) const;
};

/// Train phase: one uniform without-replacement pattern per row with exactly
/// round(ratio * patch_count) masked patches (ties to even), replicated to
/// both label columns. Infer phase: full query-row label mask, none on row 0.
MaskPlan sample_mask_plan(Rng& rng, double ratio, std::int64_t grid_h, std::int64_t grid_w,
                          MaskPhase phase);

std::string mask_plan_to_json(const MaskPlan& plan);
MaskPlan mask_plan_from_json(const std::string& text);

enum class DemonstrationStrategy { random_pool, self_prompt_mixture };

struct DemonstrationPolicy {
    DemonstrationStrategy strategy = DemonstrationStrategy::self_prompt_mixture;
    double self_prompt_probability = 0.2;
};

/// With probability p returns the query itself, otherwise a uniform draw from
/// the pool excluding the query. Indices refer to the pool.
const SampleTriple& select_demonstration(const DemonstrationPolicy& policy,
                                         const std::vector<SampleTriple>& pool,
                                         const SampleTriple& query, Rng& rng);

}  // namespace ctx
