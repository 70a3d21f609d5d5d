#include "ctx/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ctx/errors.hpp"
#include "font5x7.hpp"

namespace ctx {

namespace {

struct Raster {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> on;  // h*w
    std::uint8_t at(std::int64_t y, std::int64_t x) const {
        return on[static_cast<std::size_t>(y * w + x)];
    }
};

Raster raster_glyph(int glyph_index, double scale) {
    const auto* rows = font::kGlyphRows[glyph_index];
    Raster r;
    r.h = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::lround(font::kGlyphH * scale)));
    r.w = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::lround(font::kGlyphW * scale)));
    r.on.assign(static_cast<std::size_t>(r.h * r.w), 0);
    for (std::int64_t y = 0; y < r.h; ++y) {
        const auto sy = std::min<std::int64_t>(font::kGlyphH - 1, y * font::kGlyphH / r.h);
        for (std::int64_t x = 0; x < r.w; ++x) {
            const auto sx = std::min<std::int64_t>(font::kGlyphW - 1, x * font::kGlyphW / r.w);
            r.on[static_cast<std::size_t>(y * r.w + x)] = rows[sy][sx] == '1';
        }
    }
    return r;
}

/// Renders a 1-3 glyph word into one raster with a 1-source-cell gap.
Raster raster_word(const std::vector<int>& glyphs, double scale) {
    std::vector<Raster> parts;
    parts.reserve(glyphs.size());
    const auto gap = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::lround(scale)));
    std::int64_t w = 0, h = 0;
    for (int g : glyphs) {
        parts.push_back(raster_glyph(g, scale));
        w += parts.back().w;
        h = std::max(h, parts.back().h);
    }
    w += gap * static_cast<std::int64_t>(parts.size() - 1);
    Raster out;
    out.h = h;
    out.w = w;
    out.on.assign(static_cast<std::size_t>(h * w), 0);
    std::int64_t x0 = 0;
    for (const auto& p : parts) {
        for (std::int64_t y = 0; y < p.h; ++y)
            for (std::int64_t x = 0; x < p.w; ++x)
                if (p.at(y, x)) out.on[static_cast<std::size_t>(y * w + x0 + x)] = 1;
        x0 += p.w + gap;
    }
    return out;
}

struct Box {
    std::int64_t y0, x0, h, w;
    std::int64_t y1() const { return y0 + h; }
    std::int64_t x1() const { return x0 + w; }
};

bool boxes_overlap(const Box& a, const Box& b, std::int64_t margin) {
    return a.x0 - margin < b.x1() && b.x0 - margin < a.x1() && a.y0 - margin < b.y1() &&
           b.y0 - margin < a.y1();
}

struct Rgb {
    float r, g, b;
    float gray() const { return 0.299f * r + 0.587f * g + 0.114f * b; }
};

Rgb random_color(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
            static_cast<float>(rng.uniform())};
}

/// Rescales a color toward black or white so its luma equals `target` exactly
/// (luma is linear in RGB).
Rgb with_gray(Rgb c, float target) {
    const float g = c.gray();
    if (g <= 0.0f) return {target, target, target};
    if (target <= g) {
        const float t = target / g;
        return {c.r * t, c.g * t, c.b * t};
    }
    const float t = (target - g) / (1.0f - g);
    return {c.r + (1.0f - c.r) * t, c.g + (1.0f - c.g) * t, c.b + (1.0f - c.b) * t};
}

Image paint_background(const SceneSpec& spec, Rng& rng) {
    Image bg(spec.panel_h, spec.panel_w);
    const float glo = static_cast<float>(spec.bg_gray_min);
    const float ghi = static_cast<float>(spec.bg_gray_max);
    switch (spec.background) {
        case BackgroundKind::solid: {
            const Rgb c = with_gray(random_color(rng), static_cast<float>(rng.uniform(glo, ghi)));
            for (std::int64_t y = 0; y < bg.h; ++y)
                for (std::int64_t x = 0; x < bg.w; ++x) bg.set(y, x, c.r, c.g, c.b);
            break;
        }
        case BackgroundKind::gradient: {
            const Rgb c0 = with_gray(random_color(rng), static_cast<float>(rng.uniform(glo, ghi)));
            const Rgb c1 = with_gray(random_color(rng), static_cast<float>(rng.uniform(glo, ghi)));
            const int dir = static_cast<int>(rng.uniform_int(3));  // 0 horiz, 1 vert, 2 diag
            for (std::int64_t y = 0; y < bg.h; ++y)
                for (std::int64_t x = 0; x < bg.w; ++x) {
                    float t = 0.0f;
                    if (dir == 0)
                        t = bg.w > 1 ? static_cast<float>(x) / static_cast<float>(bg.w - 1) : 0.0f;
                    else if (dir == 1)
                        t = bg.h > 1 ? static_cast<float>(y) / static_cast<float>(bg.h - 1) : 0.0f;
                    else
                        t = static_cast<float>(x + y) / static_cast<float>(bg.w + bg.h - 2);
                    bg.set(y, x, c0.r + (c1.r - c0.r) * t, c0.g + (c1.g - c0.g) * t,
                           c0.b + (c1.b - c0.b) * t);
                }
            break;
        }
        case BackgroundKind::noise: {
            const Rgb c = with_gray(random_color(rng), static_cast<float>(rng.uniform(glo, ghi)));
            const float a = static_cast<float>(spec.noise_amplitude);
            for (std::int64_t y = 0; y < bg.h; ++y)
                for (std::int64_t x = 0; x < bg.w; ++x) {
                    const float n = static_cast<float>(rng.uniform(-a, a));
                    bg.set(y, x, std::clamp(c.r + n, 0.0f, 1.0f), std::clamp(c.g + n, 0.0f, 1.0f),
                           std::clamp(c.b + n, 0.0f, 1.0f));
                }
            break;
        }
    }
    return bg;
}

/// Picks a glyph color whose luma clears min_contrast against every covered
/// background pixel. The covered luma band is narrow by construction, so a
/// feasible side always exists.
Rgb pick_glyph_color(const Image& bg, const Box& box, const Raster& mask, const SceneSpec& spec,
                     Rng& rng) {
    float lo = 1.0f, hi = 0.0f;
    for (std::int64_t y = 0; y < mask.h; ++y)
        for (std::int64_t x = 0; x < mask.w; ++x)
            if (mask.at(y, x)) {
                const float g = gray_at(bg, box.y0 + y, box.x0 + x);
                lo = std::min(lo, g);
                hi = std::max(hi, g);
            }
    const float c = static_cast<float>(spec.min_contrast);
    const float dark_max = lo - c;
    const float light_min = hi + c;
    const bool dark_ok = dark_max >= 0.0f;
    const bool light_ok = light_min <= 1.0f;
    if (!dark_ok && !light_ok)
        throw GenerationError("no feasible glyph color for required contrast");
    float target;
    if (dark_ok && light_ok)
        target = rng.uniform() < 0.5 ? static_cast<float>(rng.uniform(0.0, dark_max))
                                     : static_cast<float>(rng.uniform(light_min, 1.0));
    else if (dark_ok)
        target = static_cast<float>(rng.uniform(0.0, dark_max));
    else
        target = static_cast<float>(rng.uniform(light_min, 1.0));
    return with_gray(random_color(rng), target);
}

struct PlacedInstance {
    Box box;
    Raster mask;
    Rgb color;
};

/// Places `count` rasters inside the panel, disjoint with a 2px margin.
std::vector<PlacedInstance> place_instances(const Image& bg, const SceneSpec& spec, Rng& rng,
                                            int count, int word_len_min, int word_len_max,
                                            std::int64_t edge_pad) {
    std::vector<PlacedInstance> placed;
    for (int i = 0; i < count; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            const double scale = rng.uniform(spec.glyph_scale_min, spec.glyph_scale_max);
            const int len = word_len_min +
                            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                                word_len_max - word_len_min + 1)));
            std::vector<int> glyphs;
            for (int k = 0; k < len; ++k)
                glyphs.push_back(static_cast<int>(rng.uniform_int(font::kGlyphCount)));
            Raster mask = len == 1 ? raster_glyph(glyphs[0], scale) : raster_word(glyphs, scale);
            if (mask.h + 2 * edge_pad > bg.h || mask.w + 2 * edge_pad > bg.w) continue;
            Box box;
            box.h = mask.h;
            box.w = mask.w;
            box.y0 = edge_pad + static_cast<std::int64_t>(rng.uniform_int(
                                    static_cast<std::uint64_t>(bg.h - mask.h - 2 * edge_pad + 1)));
            box.x0 = edge_pad + static_cast<std::int64_t>(rng.uniform_int(
                                    static_cast<std::uint64_t>(bg.w - mask.w - 2 * edge_pad + 1)));
            bool clash = false;
            for (const auto& p : placed)
                if (boxes_overlap(box, p.box, 2)) {
                    clash = true;
                    break;
                }
            if (clash) continue;
            PlacedInstance inst;
            inst.box = box;
            inst.mask = std::move(mask);
            inst.color = pick_glyph_color(bg, box, inst.mask, spec, rng);
            placed.push_back(std::move(inst));
            ok = true;
        }
        if (!ok) throw GenerationError("glyph placement failed after 100 retries");
    }
    return placed;
}

void draw_instance(Image& im, Image& seg, const PlacedInstance& inst) {
    for (std::int64_t y = 0; y < inst.mask.h; ++y)
        for (std::int64_t x = 0; x < inst.mask.w; ++x)
            if (inst.mask.at(y, x)) {
                im.set(inst.box.y0 + y, inst.box.x0 + x, inst.color.r, inst.color.g, inst.color.b);
                seg.set(inst.box.y0 + y, inst.box.x0 + x, 1.0f, 1.0f, 1.0f);
            }
}

}  // namespace

SampleTriple generate_triple(const SceneSpec& spec, Rng& rng) {
    if (spec.panel_h <= 0 || spec.panel_w <= 0) throw ContractError("generate_triple: empty panel");
    if (spec.glyph_count_min < 0 || spec.glyph_count_max < spec.glyph_count_min)
        throw ContractError("generate_triple: bad glyph count range");
    SampleTriple t;
    t.removal = paint_background(spec, rng);
    t.input = t.removal;
    t.seg = Image(spec.panel_h, spec.panel_w, 0.0f);
    const int count = spec.glyph_count_min +
                      static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                          spec.glyph_count_max - spec.glyph_count_min + 1)));
    for (const auto& inst : place_instances(t.removal, spec, rng, count, 1, 1, 1))
        draw_instance(t.input, t.seg, inst);
    return t;
}

std::vector<SampleTriple> generate_dataset(const SceneSpec& spec, std::int64_t count) {
    std::vector<SampleTriple> out;
    out.reserve(static_cast<std::size_t>(count));
    const BackgroundKind kinds[3] = {BackgroundKind::solid, BackgroundKind::gradient,
                                     BackgroundKind::noise};
    for (std::int64_t i = 0; i < count; ++i) {
        SceneSpec s = spec;
        s.background = kinds[i % 3];
        Rng rng = Rng::substream(spec.rng_seed, "data", static_cast<std::uint64_t>(i));
        auto t = generate_triple(s, rng);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "syn%06lld", static_cast<long long>(i));
        t.sample_id = buf;
        out.push_back(std::move(t));
    }
    return out;
}

Image seg_from_removal(const Image& input, const Image& removal, double tau) {
    if (input.h != removal.h || input.w != removal.w)
        throw ShapeError("seg_from_removal: image sizes disagree");
    if (tau <= 0.0 || tau >= 1.0) throw ContractError("seg_from_removal: tau must be in (0,1)");
    Image mask(input.h, input.w, 0.0f);
    for (std::int64_t y = 0; y < input.h; ++y)
        for (std::int64_t x = 0; x < input.w; ++x)
            if (std::abs(gray_at(input, y, x) - gray_at(removal, y, x)) > tau)
                mask.set(y, x, 1.0f, 1.0f, 1.0f);
    return mask;
}

// ---------------------------------------------------------------------------
// PromptText
// ---------------------------------------------------------------------------

std::string marker_kind_name(MarkerKind kind) {
    switch (kind) {
        case MarkerKind::stroke: return "stroke";
        case MarkerKind::box: return "box";
        case MarkerKind::circle: return "circle";
    }
    throw ContractError("unknown marker kind");
}

namespace {

const Rgb kMarkerColors[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

/// Owner map cell: -1 background, else instance index of the visible glyph.
using OwnerMap = std::vector<std::int16_t>;

void put_marker_pixel(Image& im, const OwnerMap& owner, std::int64_t inst, std::int64_t y,
                      std::int64_t x, const Rgb& c) {
    if (y < 0 || y >= im.h || x < 0 || x >= im.w) return;
    const auto own = owner[static_cast<std::size_t>(y * im.w + x)];
    // Never paint over another instance's glyph pixels; targets must keep
    // unmarked instances bit-identical.
    if (own >= 0 && own != inst) return;
    im.set(y, x, c.r, c.g, c.b);
}

void draw_marker(Image& im, const OwnerMap& owner, const PlacedInstance& inst, std::int64_t index,
                 MarkerKind kind, const Rgb& color) {
    const Box& b = inst.box;
    switch (kind) {
        case MarkerKind::stroke: {
            // Glyph strokes dilated by 1px.
            for (std::int64_t y = -1; y <= b.h; ++y)
                for (std::int64_t x = -1; x <= b.w; ++x) {
                    bool near = false;
                    for (std::int64_t dy = -1; dy <= 1 && !near; ++dy)
                        for (std::int64_t dx = -1; dx <= 1 && !near; ++dx) {
                            const auto yy = y + dy, xx = x + dx;
                            if (yy >= 0 && yy < b.h && xx >= 0 && xx < b.w && inst.mask.at(yy, xx))
                                near = true;
                        }
                    if (near) put_marker_pixel(im, owner, index, b.y0 + y, b.x0 + x, color);
                }
            break;
        }
        case MarkerKind::box: {
            // 2px outline just outside the tight bounding box.
            for (int ring = 1; ring <= 2; ++ring) {
                const auto y0 = b.y0 - ring, y1 = b.y1() - 1 + ring;
                const auto x0 = b.x0 - ring, x1 = b.x1() - 1 + ring;
                for (std::int64_t x = x0; x <= x1; ++x) {
                    put_marker_pixel(im, owner, index, y0, x, color);
                    put_marker_pixel(im, owner, index, y1, x, color);
                }
                for (std::int64_t y = y0; y <= y1; ++y) {
                    put_marker_pixel(im, owner, index, y, x0, color);
                    put_marker_pixel(im, owner, index, y, x1, color);
                }
            }
            break;
        }
        case MarkerKind::circle: {
            // Circumscribed circle of the box annotation, 2px ring.
            const double cy = b.y0 + (b.h - 1) / 2.0;
            const double cx = b.x0 + (b.w - 1) / 2.0;
            const double r = std::sqrt(b.h * b.h + b.w * b.w) / 2.0 + 2.0;
            for (std::int64_t y = static_cast<std::int64_t>(std::floor(cy - r - 2));
                 y <= static_cast<std::int64_t>(std::ceil(cy + r + 2)); ++y)
                for (std::int64_t x = static_cast<std::int64_t>(std::floor(cx - r - 2));
                     x <= static_cast<std::int64_t>(std::ceil(cx + r + 2)); ++x) {
                    const double dist = std::sqrt((y - cy) * (y - cy) + (x - cx) * (x - cx));
                    if (dist >= r - 1.0 && dist <= r + 1.0)
                        put_marker_pixel(im, owner, index, y, x, color);
                }
            break;
        }
    }
}

}  // namespace

std::vector<PromptTextSample> generate_prompttext(const PromptTextSpec& spec) {
    if (spec.erase_probabilities.empty())
        throw ContractError("generate_prompttext: no erase probabilities");
    for (double p : spec.erase_probabilities)
        if (p < 0.0 || p > 1.0) throw ContractError("generate_prompttext: probability outside [0,1]");

    SceneSpec scene;
    scene.panel_h = spec.panel_h;
    scene.panel_w = spec.panel_w;
    scene.glyph_scale_min = spec.glyph_scale_min;
    scene.glyph_scale_max = spec.glyph_scale_max;

    std::vector<PromptTextSample> out;
    out.reserve(static_cast<std::size_t>(spec.sample_count));
    const BackgroundKind kinds[3] = {BackgroundKind::solid, BackgroundKind::gradient,
                                     BackgroundKind::noise};
    for (std::int64_t i = 0; i < spec.sample_count; ++i) {
        Rng rng = Rng::substream(spec.rng_seed, "prompttext", static_cast<std::uint64_t>(i));
        SceneSpec s = scene;
        s.background = kinds[i % 3];

        PromptTextSample sample;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "pt%06lld", static_cast<long long>(i));
        sample.sample_id = buf;
        sample.background = paint_background(s, rng);
        sample.base_input = sample.background;
        sample.full_seg = Image(spec.panel_h, spec.panel_w, 0.0f);

        const int count = spec.instances_min +
                          static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                              spec.instances_max - spec.instances_min + 1)));
        auto instances = place_instances(sample.background, s, rng, count, spec.word_len_min,
                                         spec.word_len_max, 4);
        sample.instance_count = static_cast<std::int64_t>(instances.size());

        OwnerMap owner(static_cast<std::size_t>(spec.panel_h * spec.panel_w), -1);
        for (std::size_t k = 0; k < instances.size(); ++k) {
            draw_instance(sample.base_input, sample.full_seg, instances[k]);
            const auto& inst = instances[k];
            for (std::int64_t y = 0; y < inst.box.h; ++y)
                for (std::int64_t x = 0; x < inst.box.w; ++x)
                    if (inst.mask.at(y, x))
                        owner[static_cast<std::size_t>((inst.box.y0 + y) * spec.panel_w +
                                                       inst.box.x0 + x)] = static_cast<std::int16_t>(k);
        }

        for (double erase_p : spec.erase_probabilities) {
            PromptTextLevel level;
            level.erase_probability = erase_p;
            level.kind = static_cast<MarkerKind>(rng.uniform_int(3));
            level.color_index = static_cast<int>(rng.uniform_int(3));
            level.instance_marked.resize(instances.size());
            for (std::size_t k = 0; k < instances.size(); ++k)
                level.instance_marked[k] = rng.uniform() >= erase_p;

            level.marked_input = sample.base_input;
            level.target_removal = sample.base_input;
            level.target_seg = Image(spec.panel_h, spec.panel_w, 0.0f);
            for (std::size_t k = 0; k < instances.size(); ++k) {
                if (!level.instance_marked[k]) continue;
                const auto& inst = instances[k];
                draw_marker(level.marked_input, owner, inst, static_cast<std::int64_t>(k),
                            level.kind, kMarkerColors[level.color_index]);
                for (std::int64_t y = 0; y < inst.box.h; ++y)
                    for (std::int64_t x = 0; x < inst.box.w; ++x)
                        if (inst.mask.at(y, x)) {
                            const auto yy = inst.box.y0 + y, xx = inst.box.x0 + x;
                            level.target_seg.set(yy, xx, 1.0f, 1.0f, 1.0f);
                            for (int c = 0; c < 3; ++c)
                                level.target_removal.at(c, yy, xx) = sample.background.at(c, yy, xx);
                        }
            }
            sample.levels.push_back(std::move(level));
        }
        out.push_back(std::move(sample));
    }
    return out;
}

}  // namespace ctx
