#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctx/compositor.hpp"
#include "ctx/model.hpp"
#include "ctx/optim.hpp"

namespace ctx {

struct LossWeights {
    double w_rem = 0.3;  // removal reconstruction weight
    double w_seg = 1.0;
    double w_pix = 1.0;  // pixel-level supervision weight
};

struct TrainConfig {
    std::int64_t epochs = 20;
    std::int64_t batch_size = 2;
    std::int64_t accum_steps = 2;
    double mask_ratio = 0.85;
    double self_prompt_p = 0.2;
    LossWeights weights;
    double base_lr = 1e-4;
    double min_lr = 0.0;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double warmup_frac = 0.05;
    std::uint64_t seed = 0;
    std::int64_t ckpt_every_epochs = 5;
    std::string out_dir;  // checkpoints + logs; empty disables file output
    GridMode mode = GridMode::chained;

    void validate() const;
};

struct StepLog {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double loss_rem = 0.0;
    double loss_seg = 0.0;
    double loss_pix = 0.0;
    double realized_mask_ratio = 0.0;

    std::string to_json() const;
};

struct EpochLog {
    std::int64_t epoch = 0;
    double val_fgiou = 0.0;
    double val_psnr = 0.0;

    std::string to_json() const;
};

struct TrainLog {
    std::vector<StepLog> steps;
    std::vector<EpochLog> epochs;

    std::string to_jsonl() const;
};

struct LossParts {
    Tensor total;
    double rem = 0.0;
    double seg = 0.0;
    double pix = 0.0;
};

/// Masked-position reconstruction losses plus the pixel-level supervision
/// term: w_rem*smoothL1(rem) + w_seg*smoothL1(seg) + w_pix*pixelCE. Loss is
/// taken over the patches the plan masked, expanded to pixels. Throws
/// TrainingDivergedError if the result is not finite.
LossParts total_loss(const ForwardResult& fwd, std::span<const CompositeGrid> grids,
                     std::span<const MaskPlan> plans, const LossWeights& weights);

/// Mean validation scores under inference-style masking with caller-chosen
/// demonstrations (one per query).
struct ValScores {
    double fgiou = 0.0;
    double psnr = 0.0;
};

ValScores validate_model(const ContextModel& model, const std::vector<SampleTriple>& queries,
                         const std::vector<const SampleTriple*>& demos, double seg_threshold = 0.5);

/// The Appendix-recipe training loop at desk scale: self-prompt demonstration
/// mixing, shared O/Y mask plans, gradient accumulation, AdamW with cosine
/// schedule, per-epoch validation with random-pool demonstrations.
class Trainer {
public:
    Trainer(ContextModel& model, TrainConfig config, std::int64_t steps_per_epoch);

    /// One optimizer step from batch_size*accum_steps query samples.
    StepLog train_step(const std::vector<const SampleTriple*>& queries,
                       const std::vector<SampleTriple>& pool, Rng& demo_rng, Rng& mask_rng);

    TrainLog run(const std::vector<SampleTriple>& train_split,
                 const std::vector<SampleTriple>& val_split);

    const CosineSchedule& schedule() const { return schedule_; }
    std::int64_t step_count() const { return step_; }

private:
    ContextModel& model_;
    TrainConfig config_;
    CosineSchedule schedule_;
    AdamWState opt_state_;
    std::vector<Tensor> trainable_;
    std::int64_t step_ = 0;
    std::vector<std::vector<float>> last_good_;  // parameter snapshot

    void snapshot();
    void restore_and_dump(const std::string& path);
};

struct OverfitProbeResult {
    double final_psnr = 0.0;
    std::int64_t steps_run = 0;
    double loss_at_50 = 0.0;
    double final_loss = 0.0;
};

/// Sanity harness: trains on a single self-prompted composite and reports the
/// PSNR between the predicted and true query removal panel under a full
/// inference mask. Stops early (after at least 100 steps) once target_psnr is
/// reached; target_psnr <= 0 disables early stopping.
OverfitProbeResult overfit_probe(const SampleTriple& sample, ContextModel& model,
                                 std::int64_t steps, double lr = 1e-3, double mask_ratio = 0.85,
                                 double target_psnr = 0.0, std::uint64_t seed = 0);

}  // namespace ctx
