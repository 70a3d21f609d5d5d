#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctx/compositor.hpp"
#include "ctx/image.hpp"
#include "ctx/rng.hpp"

namespace ctx {

enum class BackgroundKind { solid, gradient, noise };

/// Scene recipe for one exact-ground-truth text panel. Glyphs are placed fully
/// inside the panel without overlap, and their color is chosen so the
/// grayscale contrast against every covered background pixel is at least
/// min_contrast (which keeps segmentation labels derivable).
struct SceneSpec {
    std::int64_t panel_h = 64;
    std::int64_t panel_w = 64;
    BackgroundKind background = BackgroundKind::solid;
    int glyph_count_min = 3;
    int glyph_count_max = 6;
    double glyph_scale_min = 1.0;
    double glyph_scale_max = 2.0;
    double bg_gray_min = 0.10;  // background luma clamp
    double bg_gray_max = 0.90;
    double noise_amplitude = 0.04;
    double min_contrast = 40.0 / 255.0;
    std::uint64_t rng_seed = 0;
};

/// Renders I (background + glyphs), O (background only) and the exact glyph
/// coverage mask Y. Pure function of (spec, rng state).
SampleTriple generate_triple(const SceneSpec& spec, Rng& rng);

/// Convenience wrapper: derives per-sample substreams from spec.rng_seed and
/// cycles background kinds. sample_ids are "syn%06d".
std::vector<SampleTriple> generate_dataset(const SceneSpec& spec, std::int64_t count);

/// Appendix-style label derivation: mask(p) = 1 iff the grayscale distance
/// between the two images at p exceeds tau. Returns a binary 3-channel panel.
Image seg_from_removal(const Image& input, const Image& removal, double tau = 25.0 / 255.0);

// ---------------------------------------------------------------------------
// PromptText: the marker-instruction evaluation benchmark.
// ---------------------------------------------------------------------------

enum class MarkerKind { stroke, box, circle };

std::string marker_kind_name(MarkerKind kind);

struct PromptTextSpec {
    std::vector<double> erase_probabilities = {0.3, 0.5, 0.7};
    std::int64_t sample_count = 429;
    std::int64_t panel_h = 128;
    std::int64_t panel_w = 128;
    int instances_min = 3;
    int instances_max = 6;
    int word_len_min = 1;
    int word_len_max = 3;
    double glyph_scale_min = 1.5;
    double glyph_scale_max = 3.0;
    std::uint64_t rng_seed = 0;
};

/// One annotation level of a PromptText image: the marker-decorated input and
/// the targets rebuilt so only marked instances are removed/segmented.
struct PromptTextLevel {
    double erase_probability = 0.0;
    MarkerKind kind = MarkerKind::stroke;
    int color_index = 0;  // 0 red, 1 green, 2 blue
    std::vector<std::uint8_t> instance_marked;
    Image marked_input;
    Image target_removal;
    Image target_seg;  // binary
};

struct PromptTextSample {
    std::string sample_id;
    std::int64_t instance_count = 0;
    Image base_input;   // clean scene
    Image background;   // all text removed
    Image full_seg;     // all-instance stroke mask
    std::vector<PromptTextLevel> levels;
};

std::vector<PromptTextSample> generate_prompttext(const PromptTextSpec& spec);

}  // namespace ctx
