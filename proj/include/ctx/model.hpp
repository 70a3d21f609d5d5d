#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctx/checkpoint.hpp"
#include "ctx/compositor.hpp"
#include "ctx/tensor.hpp"

namespace ctx {

enum class FusionMode { none, linear_only, caa };
enum class MaskTokenKind { shared, per_task };

std::string fusion_mode_name(FusionMode mode);
FusionMode fusion_mode_from_name(const std::string& name);

struct ModelConfig {
    std::int64_t panel_h = 64;
    std::int64_t panel_w = 64;
    std::int64_t patch = 8;
    std::int64_t dim = 192;
    int heads = 3;
    int pre_depth = 1;   // encoder blocks before fusion
    int post_depth = 3;  // encoder blocks after fusion
    int dec_depth = 2;   // weight-shared decoder blocks
    MaskTokenKind mask_token = MaskTokenKind::shared;
    FusionMode fusion = FusionMode::caa;

    void validate() const;
    std::int64_t lattice_h() const { return panel_h / patch; }
    std::int64_t lattice_w() const { return panel_w / patch; }
    std::int64_t tokens_per_panel() const { return lattice_h() * lattice_w(); }
    std::int64_t patch_pixels() const { return 3 * patch * patch; }

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

/// Token state after patch embedding + masking, before fusion. One tensor of
/// [batch * panels * T, dim] rows; chained grids carry six panels per grid in
/// the order I_i, O_i, Y_i, I_j, O_j, Y_j.
struct PanelTokens {
    Tensor x;
    std::int64_t batch = 1;
    std::int64_t tokens_per_panel = 0;
    int panels_per_grid = 6;
    GridMode mode = GridMode::chained;
};

/// Fused label streams. Chained grids have four streams per grid in the order
/// O_i, Y_i, O_j, Y_j; baseline grids two (L_i, L_j).
struct FusedStreams {
    Tensor x;
    std::int64_t batch = 1;
    std::int64_t tokens_per_panel = 0;
    int streams_per_grid = 4;
    GridMode mode = GridMode::chained;
};

struct ForwardOptions {
    bool pixel_head = true;  // training-only supervision head
    bool ensemble_average = false;  // average query tokens across the batch
    std::vector<int> ensemble_layers;  // post blocks to average after; empty = all
};

/// Row-major patch matrix [gh*gw, 3*P*P] of the region at (y0, x0); per-patch
/// layout is channel-major [c][dy][dx]. The model's embedding and the training
/// targets share this ordering.
std::vector<float> region_patches(const Image& im, std::int64_t y0, std::int64_t x0,
                                  std::int64_t h, std::int64_t w, std::int64_t patch);

struct ForwardResult {
    GridMode mode = GridMode::chained;
    std::int64_t batch = 1;
    std::int64_t panel_h = 0, panel_w = 0, patch = 0;
    /// Decoded pixel patches after the sigmoid, [batch * streams * T, 3*P*P];
    /// stream order matches FusedStreams.
    Tensor pixels;
    /// Pixel-head logits per grid, [2, 2h, w] over the stacked seg rows.
    /// Empty when the head is disabled or the mode has no seg column.
    std::vector<Tensor> seg_logits;

    bool has_removal() const { return mode != GridMode::baseline_seg; }
    bool has_seg() const { return mode != GridMode::baseline_rem; }
    /// Row range of one task panel inside `pixels`.
    std::pair<std::int64_t, std::int64_t> panel_rows(std::int64_t grid, int row, bool seg_task) const;
    Image removal_panel(std::int64_t grid, int row) const;
    Image seg_panel(std::int64_t grid, int row) const;
};

/// The ConText network: patch embedding with label masking, per-panel
/// pre-fusion encoder, context-aware aggregation, post-fusion encoder over the
/// concatenated streams, one weight-shared decoder for both tasks, and a
/// training-only two-convolution pixel head.
class ContextModel {
public:
    ContextModel(ModelConfig config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }

    /// Stable-order parameter list (always includes the fusion scalars so
    /// checkpoints are layout-independent of the fusion mode).
    std::vector<NamedTensor> named_params() const;
    /// Parameters the optimizer updates; excludes the fusion scalars when
    /// fusion is "none" (they stay fixed at zero).
    std::vector<Tensor> trainable_params() const;
    Tensor param(const std::string& name) const;
    void zero_grads() const;
    std::int64_t param_count() const;

    PanelTokens embed_and_mask(const CompositeGrid& grid, const MaskPlan& plan) const;
    PanelTokens embed_and_mask_batch(std::span<const CompositeGrid> grids,
                                     std::span<const MaskPlan> plans) const;
    /// Per-panel pre-fusion encoder blocks.
    PanelTokens encode_panels(PanelTokens tokens) const;
    /// Context-free fusion F1: O-stream = I + O~ + a_y*Y~, Y-stream = I + a_o*O~ + Y~.
    FusedStreams linear_fuse(const PanelTokens& tokens) const;
    /// Adds the shared-cross-attention F2 into each stream (identity unless
    /// fusion mode is caa).
    FusedStreams caa_fuse(FusedStreams streams) const;

    ForwardResult forward(const CompositeGrid& grid, const MaskPlan& plan,
                          const ForwardOptions& opts = {}) const;
    ForwardResult forward_batch(std::span<const CompositeGrid> grids,
                                std::span<const MaskPlan> plans,
                                const ForwardOptions& opts = {}) const;

    void save(const std::string& path) const;
    static ContextModel load(const std::string& path);

private:
    struct Block {
        Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2_g, ln2_b, w1, b1, w2, b2;
    };

    Block make_block(Rng& rng) const;
    Tensor run_block(const Block& block, Tensor x, const std::vector<AttentionSpan>& spans) const;
    void collect_block(const std::string& prefix, const Block& block,
                       std::vector<NamedTensor>& out) const;

    ModelConfig config_;
    Tensor embed_w_, embed_b_;
    Tensor pos_embed_;            // [T, d]
    Tensor panel_embed_;          // [3, d] for I/O/Y columns
    Tensor row_embed_;            // [2, d]
    Tensor mask_token_;           // [1, d] shared or [2, d] per task
    Tensor alpha_o_, alpha_y_;    // fusion scalars
    std::vector<Block> pre_, post_, dec_;
    Tensor caa_wq_, caa_bq_, caa_wk_, caa_bk_, caa_wv_, caa_bv_, caa_wo_, caa_bo_;
    Tensor enc_norm_g_, enc_norm_b_;
    Tensor dec_norm_g_, dec_norm_b_;
    Tensor head_w_, head_b_;
    Tensor px1_k_, px1_b_, px2_k_, px2_b_;
};

}  // namespace ctx
