#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctx/errors.hpp"
#include "ctx/manifest.hpp"
#include "ctx/metrics.hpp"
#include "ctx/synthetic.hpp"

using namespace ctx;

TEST_CASE("zero glyphs: input equals removal, mask empty") {
    SceneSpec spec;
    spec.glyph_count_min = spec.glyph_count_max = 0;
    Rng rng(1);
    const auto t = generate_triple(spec, rng);
    CHECK(t.input == t.removal);
    for (auto v : t.seg.pix) CHECK(v == 0.0f);
}

TEST_CASE("glyph pixels carry the mask and only them") {
    SceneSpec spec;
    Rng rng(2);
    const auto t = generate_triple(spec, rng);
    validate_triple(t);
    bool any = false;
    for (std::int64_t y = 0; y < t.input.h; ++y)
        for (std::int64_t x = 0; x < t.input.w; ++x) {
            if (t.seg.at(0, y, x) == 1.0f) {
                any = true;
            } else {
                // I == O wherever Y == 0, exactly
                for (int c = 0; c < 3; ++c) CHECK(t.input.at(c, y, x) == t.removal.at(c, y, x));
            }
        }
    CHECK(any);
}

TEST_CASE("glyph contrast of at least 40/255 against covered background") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SceneSpec spec;
        spec.background = static_cast<BackgroundKind>(seed % 3);
        Rng rng(seed);
        const auto t = generate_triple(spec, rng);
        for (std::int64_t y = 0; y < t.input.h; ++y)
            for (std::int64_t x = 0; x < t.input.w; ++x)
                if (t.seg.at(0, y, x) == 1.0f) {
                    const float diff = std::abs(gray_at(t.input, y, x) - gray_at(t.removal, y, x));
                    CHECK(diff >= 40.0f / 255.0f - 1e-5f);
                }
    }
}

TEST_CASE("generation is deterministic under a fixed seed") {
    SceneSpec spec;
    Rng a(42), b(42);
    const auto t1 = generate_triple(spec, a);
    const auto t2 = generate_triple(spec, b);
    CHECK(t1.input == t2.input);
    CHECK(t1.removal == t2.removal);
    CHECK(t1.seg == t2.seg);
}

TEST_CASE("infeasible placement raises a generation error") {
    SceneSpec spec;
    spec.panel_h = spec.panel_w = 16;
    spec.glyph_count_min = spec.glyph_count_max = 30;
    spec.glyph_scale_min = spec.glyph_scale_max = 2.0;
    Rng rng(3);
    CHECK_THROWS_AS(generate_triple(spec, rng), GenerationError);
}

TEST_CASE("seg_from_removal basics") {
    SceneSpec spec;
    Rng rng(4);
    const auto t = generate_triple(spec, rng);
    // identical images -> all-zero mask
    const auto zero = seg_from_removal(t.removal, t.removal, 25.0 / 255.0);
    for (auto v : zero.pix) CHECK(v == 0.0f);
    // single differing pixel
    Image a(8, 8, 0.2f), b(8, 8, 0.2f);
    b.set(3, 4, 0.7f, 0.7f, 0.7f);
    const auto one = seg_from_removal(a, b, 0.1);
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x)
            CHECK(one.at(0, y, x) == ((y == 3 && x == 4) ? 1.0f : 0.0f));
    CHECK_THROWS_AS(seg_from_removal(a, Image(4, 4), 0.1), ShapeError);
    CHECK_THROWS_AS(seg_from_removal(a, b, 0.0), ContractError);
}

TEST_CASE("seg_from_removal recovers generator masks at fgIoU >= 95%") {
    double worst = 100.0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        SceneSpec spec;
        spec.background = static_cast<BackgroundKind>(seed % 3);
        Rng rng(100 + seed);
        const auto t = generate_triple(spec, rng);
        const auto derived = seg_from_removal(t.input, t.removal);
        const auto s = fgiou_fscore(MaskPlane::from_image(derived), MaskPlane::from_image(t.seg));
        worst = std::min(worst, s.fgiou);
    }
    CHECK(worst >= 95.0);
}

TEST_CASE("prompttext limit cases: p=1 marks nothing, p=0 marks everything") {
    PromptTextSpec spec;
    spec.sample_count = 4;
    spec.erase_probabilities = {1.0, 0.0};
    const auto samples = generate_prompttext(spec);
    REQUIRE(samples.size() == 4);
    for (const auto& s : samples) {
        REQUIRE(s.levels.size() == 2);
        const auto& all_erased = s.levels[0];
        CHECK(all_erased.marked_input == s.base_input);
        CHECK(all_erased.target_removal == s.base_input);
        for (auto v : all_erased.target_seg.pix) CHECK(v == 0.0f);

        const auto& none_erased = s.levels[1];
        CHECK(none_erased.target_removal == s.background);
        CHECK(none_erased.target_seg == s.full_seg);
    }
}

TEST_CASE("prompttext default spec: 3 levels and binomial marked fraction") {
    PromptTextSpec spec;
    spec.sample_count = 120;  // smaller than the benchmark but ample for the bound
    const auto samples = generate_prompttext(spec);
    std::int64_t marked = 0, total = 0;
    for (const auto& s : samples) {
        REQUIRE(s.levels.size() == 3);
        CHECK(s.levels[0].erase_probability == 0.3);
        CHECK(s.levels[1].erase_probability == 0.5);
        CHECK(s.levels[2].erase_probability == 0.7);
        for (auto m : s.levels[1].instance_marked) {
            marked += m != 0;
            ++total;
        }
    }
    const double frac = static_cast<double>(marked) / static_cast<double>(total);
    CHECK(frac > 0.45);
    CHECK(frac < 0.55);
}

TEST_CASE("prompttext invariants: unmarked pixels identical, markers never in seg") {
    PromptTextSpec spec;
    spec.sample_count = 12;
    const auto samples = generate_prompttext(spec);
    for (const auto& s : samples) {
        for (const auto& level : s.levels) {
            for (std::int64_t y = 0; y < s.base_input.h; ++y)
                for (std::int64_t x = 0; x < s.base_input.w; ++x) {
                    const bool in_full = s.full_seg.at(0, y, x) == 1.0f;
                    const bool in_level = level.target_seg.at(0, y, x) == 1.0f;
                    // target seg is a subset of the union of instance masks
                    if (in_level) CHECK(in_full);
                    // unmarked instances' glyph pixels are bit-identical
                    // between the marked input and the target removal
                    if (in_full && !in_level) {
                        for (int c = 0; c < 3; ++c) {
                            CHECK(level.marked_input.at(c, y, x) == s.base_input.at(c, y, x));
                            CHECK(level.target_removal.at(c, y, x) == s.base_input.at(c, y, x));
                        }
                    }
                }
        }
    }
}

TEST_CASE("prompttext reruns are bit-identical") {
    PromptTextSpec spec;
    spec.sample_count = 6;
    spec.rng_seed = 9;
    const auto a = generate_prompttext(spec);
    const auto b = generate_prompttext(spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].base_input == b[i].base_input);
        for (std::size_t l = 0; l < a[i].levels.size(); ++l) {
            CHECK(a[i].levels[l].marked_input == b[i].levels[l].marked_input);
            CHECK(a[i].levels[l].target_removal == b[i].levels[l].target_removal);
            CHECK(a[i].levels[l].target_seg == b[i].levels[l].target_seg);
            CHECK(a[i].levels[l].instance_marked == b[i].levels[l].instance_marked);
        }
    }
}

TEST_CASE("dataset write/read round-trip through manifest and PNGs") {
    SceneSpec spec;
    spec.rng_seed = 77;
    const auto triples = generate_dataset(spec, 10);
    const auto dir = (std::filesystem::temp_directory_path() / "ctx_ds_test").string();
    std::filesystem::remove_all(dir);
    const auto manifest = write_dataset(dir, triples, 0.2);
    const auto records = read_manifest(manifest);
    REQUIRE(records.size() == 10);
    CHECK(records[0].split == "train");
    CHECK(records[9].split == "val");
    int val = 0;
    for (const auto& r : records) val += r.split == "val";
    CHECK(val == 2);

    // loaded panels match the originals on the 8-bit grid
    const auto t0 = load_triple(manifest, records[0]);
    CHECK(t0.sample_id == triples[0].sample_id);
    for (std::size_t i = 0; i < t0.input.pix.size(); ++i)
        CHECK(std::abs(t0.input.pix[i] - triples[0].input.pix[i]) <= 0.5f / 255.0f + 1e-6f);
    CHECK(t0.seg == triples[0].seg);

    const auto train = load_split(manifest, "train");
    CHECK(train.size() == 8);
    std::filesystem::remove_all(dir);
}
