#include "ctx/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"

namespace ctx {

namespace {

using json = nlohmann::json;

int label_columns(GridMode mode) { return mode == GridMode::chained ? 2 : 1; }
int panels_per_grid(GridMode mode) { return mode == GridMode::chained ? 6 : 4; }
int streams_per_grid(GridMode mode) { return mode == GridMode::chained ? 4 : 2; }

/// Panel-kind index (into panel_embed) of column `col` of a grid row.
int panel_kind(GridMode mode, int col) {
    switch (mode) {
        case GridMode::chained: return col;  // I,O,Y
        case GridMode::baseline_seg: return col == 0 ? 0 : 2;
        case GridMode::baseline_rem: return col == 0 ? 0 : 1;
    }
    throw ContractError("unknown grid mode");
}

}  // namespace

std::string fusion_mode_name(FusionMode mode) {
    switch (mode) {
        case FusionMode::none: return "none";
        case FusionMode::linear_only: return "linear_only";
        case FusionMode::caa: return "caa";
    }
    throw ContractError("unknown fusion mode");
}

FusionMode fusion_mode_from_name(const std::string& name) {
    if (name == "none") return FusionMode::none;
    if (name == "linear_only") return FusionMode::linear_only;
    if (name == "caa") return FusionMode::caa;
    throw ContractError("unknown fusion mode: " + name);
}

void ModelConfig::validate() const {
    if (panel_h <= 0 || panel_w <= 0 || patch <= 0) throw ContractError("ModelConfig: empty panel");
    if (panel_h % patch != 0 || panel_w % patch != 0)
        throw ContractError("ModelConfig: panel size must be divisible by the patch size");
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
        throw ContractError("ModelConfig: dim must be divisible by head count");
    if (pre_depth < 1 || post_depth < 1 || dec_depth < 1)
        throw ContractError("ModelConfig: depths must be >= 1");
}

std::string ModelConfig::to_json() const {
    json j;
    j["panel_h"] = panel_h;
    j["panel_w"] = panel_w;
    j["patch"] = patch;
    j["dim"] = dim;
    j["heads"] = heads;
    j["pre_depth"] = pre_depth;
    j["post_depth"] = post_depth;
    j["dec_depth"] = dec_depth;
    j["mask_token"] = mask_token == MaskTokenKind::shared ? "shared" : "per_task";
    j["fusion"] = fusion_mode_name(fusion);
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.panel_h = j.at("panel_h").get<std::int64_t>();
    c.panel_w = j.at("panel_w").get<std::int64_t>();
    c.patch = j.at("patch").get<std::int64_t>();
    c.dim = j.at("dim").get<std::int64_t>();
    c.heads = j.at("heads").get<int>();
    c.pre_depth = j.at("pre_depth").get<int>();
    c.post_depth = j.at("post_depth").get<int>();
    c.dec_depth = j.at("dec_depth").get<int>();
    c.mask_token = j.at("mask_token").get<std::string>() == "per_task" ? MaskTokenKind::per_task
                                                                       : MaskTokenKind::shared;
    c.fusion = fusion_mode_from_name(j.at("fusion").get<std::string>());
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

ContextModel::Block ContextModel::make_block(Rng& rng) const {
    const auto d = config_.dim;
    const auto hidden = 4 * d;
    Block b;
    b.ln1_g = Tensor::full({d}, 1.0f, true);
    b.ln1_b = Tensor::zeros({d}, true);
    b.wq = Tensor::randn({d, d}, rng, 0.02f, true);
    b.bq = Tensor::zeros({d}, true);
    b.wk = Tensor::randn({d, d}, rng, 0.02f, true);
    b.bk = Tensor::zeros({d}, true);
    b.wv = Tensor::randn({d, d}, rng, 0.02f, true);
    b.bv = Tensor::zeros({d}, true);
    b.wo = Tensor::randn({d, d}, rng, 0.02f, true);
    b.bo = Tensor::zeros({d}, true);
    b.ln2_g = Tensor::full({d}, 1.0f, true);
    b.ln2_b = Tensor::zeros({d}, true);
    b.w1 = Tensor::randn({d, hidden}, rng, 0.02f, true);
    b.b1 = Tensor::zeros({hidden}, true);
    b.w2 = Tensor::randn({hidden, d}, rng, 0.02f, true);
    b.b2 = Tensor::zeros({d}, true);
    return b;
}

ContextModel::ContextModel(ModelConfig config, std::uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng = Rng::substream(init_seed, "init");
    const auto d = config_.dim;
    const auto t = config_.tokens_per_panel();
    embed_w_ = Tensor::randn({config_.patch_pixels(), d}, rng, 0.02f, true);
    embed_b_ = Tensor::zeros({d}, true);
    pos_embed_ = Tensor::randn({t, d}, rng, 0.02f, true);
    panel_embed_ = Tensor::randn({3, d}, rng, 0.02f, true);
    row_embed_ = Tensor::randn({2, d}, rng, 0.02f, true);
    mask_token_ = Tensor::randn({config_.mask_token == MaskTokenKind::per_task ? 2 : 1, d}, rng,
                                0.02f, true);
    const bool learn_alpha = config_.fusion != FusionMode::none;
    alpha_o_ = Tensor::full({1}, learn_alpha ? 0.5f : 0.0f, true);
    alpha_y_ = Tensor::full({1}, learn_alpha ? 0.5f : 0.0f, true);
    for (int i = 0; i < config_.pre_depth; ++i) pre_.push_back(make_block(rng));
    caa_wq_ = Tensor::randn({d, d}, rng, 0.02f, true);
    caa_bq_ = Tensor::zeros({d}, true);
    caa_wk_ = Tensor::randn({d, d}, rng, 0.02f, true);
    caa_bk_ = Tensor::zeros({d}, true);
    caa_wv_ = Tensor::randn({d, d}, rng, 0.02f, true);
    caa_bv_ = Tensor::zeros({d}, true);
    caa_wo_ = Tensor::randn({d, d}, rng, 0.02f, true);
    caa_bo_ = Tensor::zeros({d}, true);
    for (int i = 0; i < config_.post_depth; ++i) post_.push_back(make_block(rng));
    enc_norm_g_ = Tensor::full({d}, 1.0f, true);
    enc_norm_b_ = Tensor::zeros({d}, true);
    for (int i = 0; i < config_.dec_depth; ++i) dec_.push_back(make_block(rng));
    dec_norm_g_ = Tensor::full({d}, 1.0f, true);
    dec_norm_b_ = Tensor::zeros({d}, true);
    head_w_ = Tensor::randn({d, config_.patch_pixels()}, rng, 0.02f, true);
    head_b_ = Tensor::zeros({config_.patch_pixels()}, true);
    const auto half = std::max<std::int64_t>(1, d / 2);
    px1_k_ = Tensor::randn({half, d, 3, 3}, rng, 0.02f, true);
    px1_b_ = Tensor::zeros({half}, true);
    px2_k_ = Tensor::randn({2, half, 3, 3}, rng, 0.02f, true);
    px2_b_ = Tensor::zeros({2}, true);
}

void ContextModel::collect_block(const std::string& prefix, const Block& b,
                                 std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".ln1.g", b.ln1_g});
    out.push_back({prefix + ".ln1.b", b.ln1_b});
    out.push_back({prefix + ".wq", b.wq});
    out.push_back({prefix + ".bq", b.bq});
    out.push_back({prefix + ".wk", b.wk});
    out.push_back({prefix + ".bk", b.bk});
    out.push_back({prefix + ".wv", b.wv});
    out.push_back({prefix + ".bv", b.bv});
    out.push_back({prefix + ".wo", b.wo});
    out.push_back({prefix + ".bo", b.bo});
    out.push_back({prefix + ".ln2.g", b.ln2_g});
    out.push_back({prefix + ".ln2.b", b.ln2_b});
    out.push_back({prefix + ".w1", b.w1});
    out.push_back({prefix + ".b1", b.b1});
    out.push_back({prefix + ".w2", b.w2});
    out.push_back({prefix + ".b2", b.b2});
}

std::vector<NamedTensor> ContextModel::named_params() const {
    std::vector<NamedTensor> out;
    out.push_back({"embed.w", embed_w_});
    out.push_back({"embed.b", embed_b_});
    out.push_back({"pos_embed", pos_embed_});
    out.push_back({"panel_embed", panel_embed_});
    out.push_back({"row_embed", row_embed_});
    out.push_back({"mask_token", mask_token_});
    out.push_back({"alpha_o", alpha_o_});
    out.push_back({"alpha_y", alpha_y_});
    for (std::size_t i = 0; i < pre_.size(); ++i) collect_block("pre." + std::to_string(i), pre_[i], out);
    out.push_back({"caa.wq", caa_wq_});
    out.push_back({"caa.bq", caa_bq_});
    out.push_back({"caa.wk", caa_wk_});
    out.push_back({"caa.bk", caa_bk_});
    out.push_back({"caa.wv", caa_wv_});
    out.push_back({"caa.bv", caa_bv_});
    out.push_back({"caa.wo", caa_wo_});
    out.push_back({"caa.bo", caa_bo_});
    for (std::size_t i = 0; i < post_.size(); ++i) collect_block("post." + std::to_string(i), post_[i], out);
    out.push_back({"enc_norm.g", enc_norm_g_});
    out.push_back({"enc_norm.b", enc_norm_b_});
    for (std::size_t i = 0; i < dec_.size(); ++i) collect_block("dec." + std::to_string(i), dec_[i], out);
    out.push_back({"dec_norm.g", dec_norm_g_});
    out.push_back({"dec_norm.b", dec_norm_b_});
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_});
    out.push_back({"pixel.conv1.k", px1_k_});
    out.push_back({"pixel.conv1.b", px1_b_});
    out.push_back({"pixel.conv2.k", px2_k_});
    out.push_back({"pixel.conv2.b", px2_b_});
    return out;
}

std::vector<Tensor> ContextModel::trainable_params() const {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named_params()) {
        if (config_.fusion == FusionMode::none && (name == "alpha_o" || name == "alpha_y")) continue;
        if (config_.fusion != FusionMode::caa && name.rfind("caa.", 0) == 0) continue;
        out.push_back(t);
    }
    return out;
}

Tensor ContextModel::param(const std::string& name) const {
    for (const auto& nt : named_params())
        if (nt.name == name) return nt.tensor;
    throw ContractError("unknown parameter: " + name);
}

void ContextModel::zero_grads() const {
    for (auto& nt : named_params()) {
        Tensor t = nt.tensor;
        t.zero_grad();
    }
}

std::int64_t ContextModel::param_count() const {
    std::int64_t n = 0;
    for (const auto& nt : named_params()) n += nt.tensor.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

std::vector<float> region_patches(const Image& im, std::int64_t y0, std::int64_t x0,
                                  std::int64_t h, std::int64_t w, std::int64_t patch) {
    const auto gh = h / patch, gw = w / patch;
    std::vector<float> out(static_cast<std::size_t>(gh * gw * 3 * patch * patch));
    for (std::int64_t py = 0; py < gh; ++py)
        for (std::int64_t px = 0; px < gw; ++px) {
            float* dst = out.data() + (py * gw + px) * 3 * patch * patch;
            for (int c = 0; c < 3; ++c)
                for (std::int64_t dy = 0; dy < patch; ++dy)
                    for (std::int64_t dx = 0; dx < patch; ++dx)
                        dst[(c * patch + dy) * patch + dx] =
                            im.at(c, y0 + py * patch + dy, x0 + px * patch + dx);
        }
    return out;
}

PanelTokens ContextModel::embed_and_mask(const CompositeGrid& grid, const MaskPlan& plan) const {
    return embed_and_mask_batch(std::span(&grid, 1), std::span(&plan, 1));
}

PanelTokens ContextModel::embed_and_mask_batch(std::span<const CompositeGrid> grids,
                                               std::span<const MaskPlan> plans) const {
    if (grids.empty() || grids.size() != plans.size())
        throw ContractError("embed_and_mask: need one plan per grid");
    const auto mode = grids[0].mode;
    const auto p = config_.patch;
    const auto gh = config_.lattice_h(), gw = config_.lattice_w();
    const auto t = config_.tokens_per_panel();
    const int panels = panels_per_grid(mode);
    const int cols = label_columns(mode) + 1;
    const auto batch = static_cast<std::int64_t>(grids.size());

    // Raw patch matrix [batch*panels*T, 3*P*P].
    std::vector<float> raw(static_cast<std::size_t>(batch * panels * t * config_.patch_pixels()));
    std::vector<std::uint8_t> mask0(static_cast<std::size_t>(batch * panels * t), 0);
    std::vector<std::uint8_t> mask1;
    const bool per_task = config_.mask_token == MaskTokenKind::per_task;
    if (per_task) mask1.assign(mask0.size(), 0);

    for (std::int64_t g = 0; g < batch; ++g) {
        const auto& grid = grids[static_cast<std::size_t>(g)];
        const auto& plan = plans[static_cast<std::size_t>(g)];
        if (grid.mode != mode) throw ContractError("embed_and_mask: mixed grid modes in a batch");
        if (grid.panel_h != config_.panel_h || grid.panel_w != config_.panel_w)
            throw ShapeError("embed_and_mask: grid panel size does not match the model config");
        if (plan.grid_h != gh || plan.grid_w != gw)
            throw ShapeError("embed_and_mask: mask plan lattice does not match the model config");
        for (int row = 0; row < 2; ++row) {
            for (int col = 0; col < cols; ++col) {
                const auto panel_idx = g * panels + row * cols + col;
                const auto patches = region_patches(grid.pixels, row * config_.panel_h,
                                                    col * config_.panel_w, config_.panel_h,
                                                    config_.panel_w, p);
                std::copy(patches.begin(), patches.end(),
                          raw.begin() + panel_idx * t * config_.patch_pixels());
                if (col == 0) continue;  // input panels are never masked
                const int kind = panel_kind(mode, col);
                auto& mask = per_task && kind == 2 ? mask1 : mask0;
                for (std::int64_t patch_i = 0; patch_i < t; ++patch_i)
                    if (plan.row_pattern[row][static_cast<std::size_t>(patch_i)])
                        mask[static_cast<std::size_t>(panel_idx * t + patch_i)] = 1;
            }
        }
    }

    Tensor x = Tensor::from_data({batch * panels * t, config_.patch_pixels()}, std::move(raw));
    x = add_bias(matmul(x, embed_w_), embed_b_);
    x = replace_rows(x, mask0, slice_rows(mask_token_, 0, 1));
    if (per_task) x = replace_rows(x, mask1, slice_rows(mask_token_, 1, 2));

    // Positional + panel + row embeddings, shared across grids.
    std::vector<Tensor> extras_one;
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < cols; ++col) {
            const int kind = panel_kind(mode, col);
            extras_one.push_back(add_bias(add_bias(pos_embed_, slice_rows(panel_embed_, kind, kind + 1)),
                                          slice_rows(row_embed_, row, row + 1)));
        }
    std::vector<Tensor> extras;
    for (std::int64_t g = 0; g < batch; ++g)
        extras.insert(extras.end(), extras_one.begin(), extras_one.end());
    x = add(x, concat_rows(extras));

    PanelTokens tokens;
    tokens.x = x;
    tokens.batch = batch;
    tokens.tokens_per_panel = t;
    tokens.panels_per_grid = panels;
    tokens.mode = mode;
    return tokens;
}

Tensor ContextModel::run_block(const Block& block, Tensor x,
                               const std::vector<AttentionSpan>& spans) const {
    Tensor h = layer_norm(x, block.ln1_g, block.ln1_b);
    Tensor q = add_bias(matmul(h, block.wq), block.bq);
    Tensor k = add_bias(matmul(h, block.wk), block.bk);
    Tensor v = add_bias(matmul(h, block.wv), block.bv);
    Tensor att = multihead_attention(q, k, v, config_.heads, spans);
    x = add(x, add_bias(matmul(att, block.wo), block.bo));
    Tensor m = layer_norm(x, block.ln2_g, block.ln2_b);
    m = add_bias(matmul(m, block.w1), block.b1);
    m = gelu(m);
    m = add_bias(matmul(m, block.w2), block.b2);
    return add(x, m);
}

PanelTokens ContextModel::encode_panels(PanelTokens tokens) const {
    const auto t = tokens.tokens_per_panel;
    std::vector<AttentionSpan> spans;
    for (std::int64_t s = 0; s < tokens.batch * tokens.panels_per_grid; ++s)
        spans.push_back({s * t, (s + 1) * t, s * t, (s + 1) * t});
    for (const auto& block : pre_) tokens.x = run_block(block, tokens.x, spans);
    return tokens;
}

FusedStreams ContextModel::linear_fuse(const PanelTokens& tokens) const {
    const auto t = tokens.tokens_per_panel;
    const int panels = tokens.panels_per_grid;
    std::vector<Tensor> parts;
    for (std::int64_t g = 0; g < tokens.batch; ++g) {
        const auto base = g * panels * t;
        for (int row = 0; row < 2; ++row) {
            if (tokens.mode == GridMode::chained) {
                Tensor i_r = slice_rows(tokens.x, base + (row * 3) * t, base + (row * 3 + 1) * t);
                Tensor o_r = slice_rows(tokens.x, base + (row * 3 + 1) * t, base + (row * 3 + 2) * t);
                Tensor y_r = slice_rows(tokens.x, base + (row * 3 + 2) * t, base + (row * 3 + 3) * t);
                if (config_.fusion == FusionMode::none) {
                    parts.push_back(add(i_r, o_r));
                    parts.push_back(add(i_r, y_r));
                } else {
                    parts.push_back(add(add(i_r, o_r), scale_by(y_r, alpha_y_)));
                    parts.push_back(add(add(i_r, y_r), scale_by(o_r, alpha_o_)));
                }
            } else {
                Tensor i_r = slice_rows(tokens.x, base + (row * 2) * t, base + (row * 2 + 1) * t);
                Tensor l_r = slice_rows(tokens.x, base + (row * 2 + 1) * t, base + (row * 2 + 2) * t);
                parts.push_back(add(i_r, l_r));
            }
        }
    }
    FusedStreams streams;
    streams.x = concat_rows(parts);
    streams.batch = tokens.batch;
    streams.tokens_per_panel = t;
    streams.streams_per_grid = streams_per_grid(tokens.mode);
    streams.mode = tokens.mode;
    return streams;
}

FusedStreams ContextModel::caa_fuse(FusedStreams streams) const {
    if (config_.fusion != FusionMode::caa) return streams;
    const auto t = streams.tokens_per_panel;
    const int s = streams.streams_per_grid;
    const auto row_len = (s / 2) * t;  // tokens of one row's streams
    Tensor q = add_bias(matmul(streams.x, caa_wq_), caa_bq_);
    Tensor k = add_bias(matmul(streams.x, caa_wk_), caa_bk_);
    Tensor v = add_bias(matmul(streams.x, caa_wv_), caa_bv_);
    std::vector<AttentionSpan> spans;
    for (std::int64_t g = 0; g < streams.batch; ++g) {
        const auto base = g * s * t;
        // Row i streams attend to row j's fused streams and vice versa.
        spans.push_back({base, base + row_len, base + row_len, base + 2 * row_len});
        spans.push_back({base + row_len, base + 2 * row_len, base, base + row_len});
    }
    Tensor att = multihead_attention(q, k, v, config_.heads, spans);
    Tensor f2 = add_bias(matmul(att, caa_wo_), caa_bo_);
    streams.x = add(streams.x, f2);  // F1 + F2
    return streams;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

/// Replaces every grid's query-row stream tokens by their mean over the batch.
/// Inference-only (the tape is not kept).
Tensor average_query_rows(const Tensor& x, std::int64_t batch, std::int64_t rows_per_grid,
                          std::int64_t q_begin, std::int64_t q_len) {
    if (GradMode::enabled())
        throw ContractError("ensemble averaging is an inference-time operation");
    const auto cols = x.dim(1);
    std::vector<float> data(x.data().begin(), x.data().end());
    for (std::int64_t r = 0; r < q_len; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::int64_t g = 0; g < batch; ++g)
                acc += data[static_cast<std::size_t>((g * rows_per_grid + q_begin + r) * cols + c)];
            const float m = static_cast<float>(acc / static_cast<double>(batch));
            for (std::int64_t g = 0; g < batch; ++g)
                data[static_cast<std::size_t>((g * rows_per_grid + q_begin + r) * cols + c)] = m;
        }
    }
    return Tensor::from_data(x.shape(), std::move(data));
}

}  // namespace

ForwardResult ContextModel::forward(const CompositeGrid& grid, const MaskPlan& plan,
                                    const ForwardOptions& opts) const {
    return forward_batch(std::span(&grid, 1), std::span(&plan, 1), opts);
}

ForwardResult ContextModel::forward_batch(std::span<const CompositeGrid> grids,
                                          std::span<const MaskPlan> plans,
                                          const ForwardOptions& opts) const {
    PanelTokens tokens = encode_panels(embed_and_mask_batch(grids, plans));
    FusedStreams streams = caa_fuse(linear_fuse(tokens));

    const auto t = streams.tokens_per_panel;
    const int s = streams.streams_per_grid;
    const auto batch = streams.batch;
    const auto grid_len = s * t;
    const auto row_len = (s / 2) * t;

    std::vector<AttentionSpan> full_spans;
    for (std::int64_t g = 0; g < batch; ++g)
        full_spans.push_back({g * grid_len, (g + 1) * grid_len, g * grid_len, (g + 1) * grid_len});
    Tensor z = streams.x;
    for (std::size_t bi = 0; bi < post_.size(); ++bi) {
        z = run_block(post_[bi], z, full_spans);
        const bool avg_here =
            opts.ensemble_average &&
            (opts.ensemble_layers.empty() ||
             std::find(opts.ensemble_layers.begin(), opts.ensemble_layers.end(),
                       static_cast<int>(bi)) != opts.ensemble_layers.end());
        if (avg_here) z = average_query_rows(z, batch, grid_len, row_len, row_len);
    }
    z = layer_norm(z, enc_norm_g_, enc_norm_b_);

    std::vector<AttentionSpan> stream_spans;
    for (std::int64_t i = 0; i < batch * s; ++i)
        stream_spans.push_back({i * t, (i + 1) * t, i * t, (i + 1) * t});
    for (const auto& block : dec_) z = run_block(block, z, stream_spans);
    Tensor features = layer_norm(z, dec_norm_g_, dec_norm_b_);
    Tensor pix = sigmoid(add_bias(matmul(features, head_w_), head_b_));

    ForwardResult result;
    result.mode = streams.mode;
    result.batch = batch;
    result.panel_h = config_.panel_h;
    result.panel_w = config_.panel_w;
    result.patch = config_.patch;
    result.pixels = pix;

    if (opts.pixel_head && streams.mode != GridMode::baseline_rem) {
        const auto gh = config_.lattice_h(), gw = config_.lattice_w();
        for (std::int64_t g = 0; g < batch; ++g) {
            Tensor row_logits[2];
            for (int row = 0; row < 2; ++row) {
                // Y-stream feature map of this row, [d, gh, gw].
                const auto stream = streams.mode == GridMode::chained ? row * 2 + 1 : row;
                const auto begin = g * grid_len + stream * t;
                Tensor f = slice_rows(features, begin, begin + t);
                Tensor fmap = reshape(transpose2d(f), {config_.dim, gh, gw});
                Tensor l = conv3x3(fmap, px1_k_, px1_b_);
                l = gelu(l);
                l = conv3x3(l, px2_k_, px2_b_);
                l = upsample_nearest(l, static_cast<int>(config_.patch));
                row_logits[row] = reshape(l, {2, config_.panel_h * config_.panel_w});
            }
            // Stack both rows into [2, 2h, w] matching the grid's seg column.
            Tensor stacked = concat_rows({slice_rows(row_logits[0], 0, 1), slice_rows(row_logits[1], 0, 1),
                                          slice_rows(row_logits[0], 1, 2), slice_rows(row_logits[1], 1, 2)});
            result.seg_logits.push_back(reshape(stacked, {2, 2 * config_.panel_h, config_.panel_w}));
        }
    }
    return result;
}

std::pair<std::int64_t, std::int64_t> ForwardResult::panel_rows(std::int64_t grid, int row,
                                                                bool seg_task) const {
    const auto t = (panel_h / patch) * (panel_w / patch);
    std::int64_t stream;
    if (mode == GridMode::chained) {
        stream = row * 2 + (seg_task ? 1 : 0);
    } else {
        if (seg_task && mode == GridMode::baseline_rem)
            throw ContractError("grid has no segmentation stream");
        if (!seg_task && mode == GridMode::baseline_seg)
            throw ContractError("grid has no removal stream");
        stream = row;
    }
    const auto s = mode == GridMode::chained ? 4 : 2;
    const auto begin = grid * s * t + stream * t;
    return {begin, begin + t};
}

namespace {

Image tokens_to_panel(const Tensor& pix, std::int64_t begin, std::int64_t h, std::int64_t w,
                      std::int64_t p) {
    Image out(h, w);
    const auto gw = w / p;
    const auto data = pix.data();
    const auto cols = pix.dim(1);
    for (std::int64_t py = 0; py < h / p; ++py)
        for (std::int64_t px = 0; px < gw; ++px) {
            const float* src = data.data() + (begin + py * gw + px) * cols;
            for (int c = 0; c < 3; ++c)
                for (std::int64_t dy = 0; dy < p; ++dy)
                    for (std::int64_t dx = 0; dx < p; ++dx)
                        out.at(c, py * p + dy, px * p + dx) =
                            std::clamp(src[(c * p + dy) * p + dx], 0.0f, 1.0f);
        }
    return out;
}

}  // namespace

Image ForwardResult::removal_panel(std::int64_t grid, int row) const {
    const auto [begin, end] = panel_rows(grid, row, false);
    (void)end;
    return tokens_to_panel(pixels, begin, panel_h, panel_w, patch);
}

Image ForwardResult::seg_panel(std::int64_t grid, int row) const {
    const auto [begin, end] = panel_rows(grid, row, true);
    (void)end;
    return tokens_to_panel(pixels, begin, panel_h, panel_w, patch);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

void ContextModel::save(const std::string& path) const {
    save_checkpoint(path, named_params(), config_.to_json());
}

ContextModel ContextModel::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.config_json.empty()) throw IoError("checkpoint missing model config: " + path);
    ContextModel model(ModelConfig::from_json(ckpt.config_json), 0);
    auto params = model.named_params();
    if (params.size() != ckpt.tensors.size())
        throw IoError("checkpoint parameter count mismatch: " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (ckpt.tensors[i].name != params[i].name)
            throw IoError("checkpoint parameter order mismatch at " + ckpt.tensors[i].name);
        if (ckpt.tensors[i].tensor.shape() != params[i].tensor.shape())
            throw IoError("checkpoint shape mismatch at " + ckpt.tensors[i].name);
        auto dst = params[i].tensor.mutable_data();
        auto src = ckpt.tensors[i].tensor.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return model;
}

}  // namespace ctx
