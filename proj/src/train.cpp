#include "ctx/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"
#include "ctx/infer.hpp"
#include "ctx/metrics.hpp"

namespace ctx {

namespace {

using json = nlohmann::json;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.8g", v);
    return buf;
}

}  // namespace

void TrainConfig::validate() const {
    if (mask_ratio < 0.0 || mask_ratio > 1.0) throw ContractError("TrainConfig: mask_ratio in [0,1]");
    if (self_prompt_p < 0.0 || self_prompt_p > 1.0)
        throw ContractError("TrainConfig: self_prompt_p in [0,1]");
    if (weights.w_rem < 0 || weights.w_seg < 0 || weights.w_pix < 0)
        throw ContractError("TrainConfig: loss weights must be >= 0");
    if (accum_steps < 1) throw ContractError("TrainConfig: accum_steps must be >= 1");
    if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
    if (epochs < 1) throw ContractError("TrainConfig: epochs must be >= 1");
}

std::string StepLog::to_json() const {
    return std::string("{\"type\":\"step\",\"step\":") + std::to_string(step) + ",\"lr\":" +
           fmt_double(lr) + ",\"loss\":" + fmt_double(loss) + ",\"loss_rem\":" + fmt_double(loss_rem) +
           ",\"loss_seg\":" + fmt_double(loss_seg) + ",\"loss_pix\":" + fmt_double(loss_pix) +
           ",\"mask_ratio\":" + fmt_double(realized_mask_ratio) + "}";
}

std::string EpochLog::to_json() const {
    return std::string("{\"type\":\"epoch\",\"epoch\":") + std::to_string(epoch) + ",\"val_fgiou\":" +
           fmt_double(val_fgiou) + ",\"val_psnr\":" + fmt_double(val_psnr) + "}";
}

std::string TrainLog::to_jsonl() const {
    std::string out;
    std::size_t ei = 0;
    // Steps and epochs interleave naturally by step index; emit steps then the
    // epoch line that closed them.
    const std::size_t steps_per_epoch = epochs.empty() ? steps.size() : steps.size() / epochs.size();
    for (std::size_t i = 0; i < steps.size(); ++i) {
        out += steps[i].to_json();
        out += "\n";
        if (!epochs.empty() && steps_per_epoch > 0 && (i + 1) % steps_per_epoch == 0 &&
            ei < epochs.size()) {
            out += epochs[ei++].to_json();
            out += "\n";
        }
    }
    for (; ei < epochs.size(); ++ei) {
        out += epochs[ei].to_json();
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

LossParts total_loss(const ForwardResult& fwd, std::span<const CompositeGrid> grids,
                     std::span<const MaskPlan> plans, const LossWeights& weights) {
    if (grids.size() != static_cast<std::size_t>(fwd.batch) || plans.size() != grids.size())
        throw ContractError("total_loss: batch mismatch");
    const auto t = (fwd.panel_h / fwd.patch) * (fwd.panel_w / fwd.patch);
    const auto cols = 3 * fwd.patch * fwd.patch;
    const int streams = fwd.mode == GridMode::chained ? 4 : 2;
    const auto rows = fwd.batch * streams * t;
    if (fwd.pixels.dim(0) != rows) throw ShapeError("total_loss: unexpected prediction layout");

    // Patch-space targets and per-task masks aligned with the stream layout.
    std::vector<float> target(static_cast<std::size_t>(rows * cols), 0.0f);
    std::vector<float> mask_rem(static_cast<std::size_t>(rows * cols), 0.0f);
    std::vector<float> mask_seg(static_cast<std::size_t>(rows * cols), 0.0f);
    for (std::int64_t g = 0; g < fwd.batch; ++g) {
        const auto panels = decompose_grid(grids[static_cast<std::size_t>(g)]);
        const auto& plan = plans[static_cast<std::size_t>(g)];
        for (int row = 0; row < 2; ++row) {
            for (int s = 0; s < streams / 2; ++s) {
                const bool seg_task = fwd.mode == GridMode::chained
                                          ? s == 1
                                          : fwd.mode == GridMode::baseline_seg;
                const auto stream = (streams / 2) * row + s;
                const auto base = (g * streams + stream) * t;
                const Image& panel = seg_task ? panels.seg_panel(row) : panels.removal_panel(row);
                const auto patches = region_patches(panel, 0, 0, fwd.panel_h, fwd.panel_w, fwd.patch);
                std::copy(patches.begin(), patches.end(), target.begin() + base * cols);
                auto& mask = seg_task ? mask_seg : mask_rem;
                for (std::int64_t pi = 0; pi < t; ++pi)
                    if (plan.row_pattern[row][static_cast<std::size_t>(pi)])
                        std::fill_n(mask.begin() + (base + pi) * cols, cols, 1.0f);
            }
        }
    }

    const Shape shape{rows, cols};
    Tensor target_t = Tensor::from_data(shape, std::move(target));
    LossParts parts;
    Tensor total = Tensor::zeros({1});
    if (fwd.has_removal()) {
        Tensor l = smooth_l1(fwd.pixels, target_t, Tensor::from_data(shape, std::move(mask_rem)));
        parts.rem = l.item();
        total = add(total, scale(l, static_cast<float>(weights.w_rem)));
    }
    if (fwd.has_seg()) {
        Tensor l = smooth_l1(fwd.pixels, target_t, Tensor::from_data(shape, std::move(mask_seg)));
        parts.seg = l.item();
        total = add(total, scale(l, static_cast<float>(weights.w_seg)));
    }
    if (!fwd.seg_logits.empty()) {
        Tensor pix_sum = Tensor::zeros({1});
        for (std::int64_t g = 0; g < fwd.batch; ++g) {
            const auto panels = decompose_grid(grids[static_cast<std::size_t>(g)]);
            std::vector<float> labels(static_cast<std::size_t>(2 * fwd.panel_h * fwd.panel_w));
            for (int row = 0; row < 2; ++row) {
                const Image& seg = panels.seg_panel(row);
                for (std::int64_t y = 0; y < fwd.panel_h; ++y)
                    for (std::int64_t x = 0; x < fwd.panel_w; ++x)
                        labels[static_cast<std::size_t>((row * fwd.panel_h + y) * fwd.panel_w + x)] =
                            seg.at(0, y, x);
            }
            pix_sum = add(pix_sum, pixel_cross_entropy(fwd.seg_logits[static_cast<std::size_t>(g)],
                                                       labels));
        }
        Tensor pix_mean = scale(pix_sum, 1.0f / static_cast<float>(fwd.batch));
        parts.pix = pix_mean.item();
        total = add(total, scale(pix_mean, static_cast<float>(weights.w_pix)));
    }
    total.assert_finite("total_loss");
    parts.total = total;
    return parts;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

ValScores validate_model(const ContextModel& model, const std::vector<SampleTriple>& queries,
                         const std::vector<const SampleTriple*>& demos, double seg_threshold) {
    if (queries.size() != demos.size()) throw ContractError("validate_model: one demo per query");
    if (queries.empty()) return {};
    double fgiou_acc = 0.0, psnr_acc = 0.0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        InferenceRequest req;
        req.query_input = queries[i].input;
        req.demos = {*demos[i]};
        req.seg_threshold = seg_threshold;
        const InferenceResult r = infer(req, model);
        psnr_acc += psnr(r.removal, queries[i].removal);
        fgiou_acc += fgiou_fscore(r.seg_mask, MaskPlane::from_image(queries[i].seg)).fgiou;
    }
    return {fgiou_acc / static_cast<double>(queries.size()),
            psnr_acc / static_cast<double>(queries.size())};
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(ContextModel& model, TrainConfig config, std::int64_t steps_per_epoch)
    : model_(model), config_(config) {
    config_.validate();
    trainable_ = model_.trainable_params();
    opt_state_.beta1 = config_.beta1;
    opt_state_.beta2 = config_.beta2;
    opt_state_.eps = config_.adam_eps;
    opt_state_.weight_decay = config_.weight_decay;
    schedule_.base_lr = config_.base_lr;
    schedule_.min_lr = config_.min_lr;
    schedule_.total_steps = std::max<std::int64_t>(1, config_.epochs * steps_per_epoch);
    schedule_.warmup_steps =
        static_cast<std::int64_t>(std::llround(config_.warmup_frac * static_cast<double>(schedule_.total_steps)));
    snapshot();
}

void Trainer::snapshot() {
    last_good_.resize(trainable_.size());
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
        auto d = trainable_[i].data();
        last_good_[i].assign(d.begin(), d.end());
    }
}

void Trainer::restore_and_dump(const std::string& path) {
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
        auto d = trainable_[i].mutable_data();
        std::copy(last_good_[i].begin(), last_good_[i].end(), d.begin());
    }
    if (!path.empty()) model_.save(path);
}

StepLog Trainer::train_step(const std::vector<const SampleTriple*>& queries,
                            const std::vector<SampleTriple>& pool, Rng& demo_rng, Rng& mask_rng) {
    if (queries.empty()) throw ContractError("train_step: empty batch");
    DemonstrationPolicy policy;
    policy.self_prompt_probability = config_.self_prompt_p;
    const double lr = lr_at(schedule_, std::min(step_, schedule_.total_steps));

    StepLog log;
    log.step = step_;
    log.lr = lr;

    const auto micro = static_cast<std::size_t>(config_.batch_size);
    const auto accum = (queries.size() + micro - 1) / micro;
    double mask_acc = 0.0;
    std::size_t qi = 0;
    for (std::size_t a = 0; a < accum; ++a) {
        std::vector<CompositeGrid> grids;
        std::vector<MaskPlan> plans;
        for (std::size_t b = 0; b < micro && qi < queries.size(); ++b, ++qi) {
            const SampleTriple& query = *queries[qi];
            const SampleTriple& demo = select_demonstration(policy, pool, query, demo_rng);
            grids.push_back(compose_grid(demo, query, config_.mode));
            plans.push_back(sample_mask_plan(mask_rng, config_.mask_ratio, model_.config().lattice_h(),
                                             model_.config().lattice_w(), MaskPhase::train));
            mask_acc += static_cast<double>(plans.back().masked_count(0)) /
                        static_cast<double>(plans.back().patches_per_panel());
        }
        ForwardResult fwd = model_.forward_batch(grids, plans,
                                                 {.pixel_head = config_.weights.w_pix > 0.0});
        LossParts parts = total_loss(fwd, grids, plans, config_.weights);
        log.loss += parts.total.item() / static_cast<double>(accum);
        log.loss_rem += parts.rem / static_cast<double>(accum);
        log.loss_seg += parts.seg / static_cast<double>(accum);
        log.loss_pix += parts.pix / static_cast<double>(accum);
        Tensor scaled = scale(parts.total, 1.0f / static_cast<float>(accum));
        scaled.backward();
    }
    log.realized_mask_ratio = mask_acc / static_cast<double>(queries.size());

    adamw_step(trainable_, opt_state_, lr);
    for (auto& p : trainable_) p.zero_grad();
    ++step_;
    snapshot();
    return log;
}

TrainLog Trainer::run(const std::vector<SampleTriple>& train_split,
                      const std::vector<SampleTriple>& val_split) {
    if (train_split.empty()) throw ContractError("Trainer::run: empty training split");
    namespace fs = std::filesystem;
    const bool to_disk = !config_.out_dir.empty();
    if (to_disk) fs::create_directories(config_.out_dir);

    TrainLog full_log;
    const auto chunk = static_cast<std::size_t>(config_.batch_size * config_.accum_steps);
    std::ofstream log_stream;
    if (to_disk) log_stream.open(fs::path(config_.out_dir) / "trainlog.jsonl");

    for (std::int64_t epoch = 0; epoch < config_.epochs; ++epoch) {
        Rng order_rng = Rng::substream(config_.seed, "order", static_cast<std::uint64_t>(epoch));
        Rng demo_rng = Rng::substream(config_.seed, "demo", static_cast<std::uint64_t>(epoch));
        Rng mask_rng = Rng::substream(config_.seed, "mask", static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order(train_split.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[order_rng.uniform_int(i)]);

        for (std::size_t at = 0; at < order.size(); at += chunk) {
            std::vector<const SampleTriple*> queries;
            for (std::size_t k = at; k < std::min(order.size(), at + chunk); ++k)
                queries.push_back(&train_split[order[k]]);
            StepLog log;
            try {
                log = train_step(queries, train_split, demo_rng, mask_rng);
            } catch (const TrainingDivergedError&) {
                restore_and_dump(to_disk ? (fs::path(config_.out_dir) / "diverged.ctckpt").string()
                                         : "");
                throw;
            }
            if (log_stream) log_stream << log.to_json() << "\n";
            full_log.steps.push_back(log);
        }

        if (!val_split.empty()) {
            Rng val_rng = Rng::substream(config_.seed, "val_demo", static_cast<std::uint64_t>(epoch));
            std::vector<const SampleTriple*> demos;
            demos.reserve(val_split.size());
            for (std::size_t i = 0; i < val_split.size(); ++i)
                demos.push_back(&train_split[val_rng.uniform_int(train_split.size())]);
            const ValScores scores = validate_model(model_, val_split, demos);
            EpochLog elog{epoch, scores.fgiou, scores.psnr};
            if (log_stream) log_stream << elog.to_json() << "\n";
            full_log.epochs.push_back(elog);
        }
        if (to_disk && config_.ckpt_every_epochs > 0 &&
            ((epoch + 1) % config_.ckpt_every_epochs == 0 || epoch + 1 == config_.epochs)) {
            char name[64];
            std::snprintf(name, sizeof(name), "epoch%04lld.ctckpt", static_cast<long long>(epoch + 1));
            model_.save((fs::path(config_.out_dir) / name).string());
        }
    }
    if (to_disk) model_.save((fs::path(config_.out_dir) / "final.ctckpt").string());
    return full_log;
}

// ---------------------------------------------------------------------------
// Overfit probe
// ---------------------------------------------------------------------------

OverfitProbeResult overfit_probe(const SampleTriple& sample, ContextModel& model,
                                 std::int64_t steps, double lr, double mask_ratio,
                                 double target_psnr, std::uint64_t seed) {
    if (steps < 0) throw ContractError("overfit_probe: steps must be >= 0");
    const CompositeGrid grid = compose_grid(sample, sample, GridMode::chained);
    Rng mask_rng = Rng::substream(seed, "probe_mask");
    auto trainable = model.trainable_params();
    AdamWState state;
    state.weight_decay = 0.0;

    const auto eval_psnr = [&]() {
        InferenceRequest req;
        req.query_input = sample.input;
        req.demos = {sample};
        return psnr(infer(req, model).removal, sample.removal);
    };

    OverfitProbeResult result;
    CosineSchedule warm{lr, lr, 20, std::max<std::int64_t>(21, steps)};
    for (std::int64_t s = 0; s < steps; ++s) {
        const MaskPlan plan = sample_mask_plan(mask_rng, mask_ratio, model.config().lattice_h(),
                                               model.config().lattice_w(), MaskPhase::train);
        ForwardResult fwd = model.forward(grid, plan);
        const CompositeGrid grids_arr[1] = {grid};
        const MaskPlan plans_arr[1] = {plan};
        LossParts parts = total_loss(fwd, grids_arr, plans_arr, LossWeights{});
        parts.total.backward();
        adamw_step(trainable, state, lr_at(warm, std::min<std::int64_t>(s, warm.total_steps)));
        for (auto& p : trainable) p.zero_grad();
        result.steps_run = s + 1;
        result.final_loss = parts.total.item();
        if (s + 1 == 50) result.loss_at_50 = parts.total.item();
        if (target_psnr > 0.0 && s + 1 >= 100 && (s + 1) % 25 == 0) {
            result.final_psnr = eval_psnr();
            if (result.final_psnr > target_psnr) return result;
        }
    }
    result.final_psnr = eval_psnr();
    return result;
}

}  // namespace ctx
