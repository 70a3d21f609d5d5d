#include <doctest.h>

#include <cmath>

#include "ctx/compositor.hpp"
#include "ctx/errors.hpp"
#include "ctx/synthetic.hpp"

using namespace ctx;

namespace {

SampleTriple make_triple(std::uint64_t seed, std::int64_t size = 64) {
    SceneSpec spec;
    spec.panel_h = spec.panel_w = size;
    if (size < 48) {
        spec.glyph_count_min = 1;
        spec.glyph_count_max = 2;
        spec.glyph_scale_max = 1.2;
    }
    Rng rng(seed);
    auto t = generate_triple(spec, rng);
    t.sample_id = "t" + std::to_string(seed);
    return t;
}

}  // namespace

TEST_CASE("compose_grid shapes") {
    const auto a = make_triple(1), b = make_triple(2);
    const auto chained = compose_grid(a, b, GridMode::chained);
    CHECK(chained.pixels.h == 128);
    CHECK(chained.pixels.w == 192);
    const auto seg = compose_grid(a, b, GridMode::baseline_seg);
    CHECK(seg.pixels.h == 128);
    CHECK(seg.pixels.w == 128);
    const auto rem = compose_grid(a, b, GridMode::baseline_rem);
    CHECK(rem.pixels.w == 128);

    const auto small = make_triple(3, 32);
    CHECK_THROWS_AS(compose_grid(a, small, GridMode::chained), ShapeError);
}

TEST_CASE("compose then decompose is the identity on panels, bit-exact") {
    const auto a = make_triple(4), b = make_triple(5);
    for (auto mode : {GridMode::chained, GridMode::baseline_seg, GridMode::baseline_rem}) {
        const auto panels = decompose_grid(compose_grid(a, b, mode));
        CHECK(panels.input_panel(0) == a.input);
        CHECK(panels.input_panel(1) == b.input);
        if (mode != GridMode::baseline_seg) {
            CHECK(panels.removal_panel(0) == a.removal);
            CHECK(panels.removal_panel(1) == b.removal);
        }
        if (mode != GridMode::baseline_rem) {
            CHECK(panels.seg_panel(0) == a.seg);
            CHECK(panels.seg_panel(1) == b.seg);
        }
    }
}

TEST_CASE("label panels absent from a baseline mode raise contract errors") {
    const auto a = make_triple(6), b = make_triple(7);
    const auto seg_panels = decompose_grid(compose_grid(a, b, GridMode::baseline_seg));
    CHECK_THROWS_AS(seg_panels.removal_panel(0), ContractError);
    const auto rem_panels = decompose_grid(compose_grid(a, b, GridMode::baseline_rem));
    CHECK_THROWS_AS(rem_panels.seg_panel(1), ContractError);
}

TEST_CASE("mask plan ratio endpoints") {
    Rng rng(11);
    const auto none = sample_mask_plan(rng, 0.0, 8, 8, MaskPhase::train);
    CHECK(none.masked_count(0) == 0);
    CHECK(none.masked_count(1) == 0);
    const auto all = sample_mask_plan(rng, 1.0, 8, 8, MaskPhase::train);
    CHECK(all.masked_count(0) == 64);
    CHECK(all.masked_count(1) == 64);
    CHECK_THROWS_AS(sample_mask_plan(rng, 1.2, 8, 8, MaskPhase::train), ContractError);
    CHECK_THROWS_AS(sample_mask_plan(rng, -0.1, 8, 8, MaskPhase::train), ContractError);
}

TEST_CASE("masked count is round(ratio * patches), ties to even") {
    Rng rng(12);
    // 0.85 over an 8x8 lattice -> round(54.4) = 54
    const auto p85 = sample_mask_plan(rng, 0.85, 8, 8, MaskPhase::train);
    CHECK(p85.masked_count(0) == 54);
    CHECK(p85.masked_count(1) == 54);
    // ties to even: 0.125*4 = 0.5 -> 0, 0.375*4 = 1.5 -> 2
    const auto t0 = sample_mask_plan(rng, 0.125, 2, 2, MaskPhase::train);
    CHECK(t0.masked_count(0) == 0);
    const auto t2 = sample_mask_plan(rng, 0.375, 2, 2, MaskPhase::train);
    CHECK(t2.masked_count(0) == 2);
}

TEST_CASE("inference plans mask the whole query row and nothing else") {
    Rng rng(13);
    const auto p = sample_mask_plan(rng, 0.85, 8, 8, MaskPhase::infer);
    CHECK(p.masked_count(0) == 0);
    CHECK(p.masked_count(1) == 64);
}

TEST_CASE("the O-column pattern translated by one panel equals the Y-column pattern") {
    // The plan stores one pattern per row applied to both label columns; the
    // property is checked on the expanded chained-grid lattice over 1,000
    // sampled plans and ratios.
    Rng rng(14);
    for (int trial = 0; trial < 1000; ++trial) {
        const double ratio = rng.uniform();
        const auto plan = sample_mask_plan(rng, ratio, 8, 8, MaskPhase::train);
        for (int row = 0; row < 2; ++row) {
            std::vector<std::uint8_t> lattice(8 * 24, 0);
            for (std::int64_t py = 0; py < 8; ++py)
                for (std::int64_t px = 0; px < 8; ++px) {
                    const auto m = plan.row_pattern[row][static_cast<std::size_t>(py * 8 + px)];
                    lattice[static_cast<std::size_t>(py * 24 + 8 + px)] = m;   // O column
                    lattice[static_cast<std::size_t>(py * 24 + 16 + px)] = m;  // Y column
                }
            for (std::int64_t py = 0; py < 8; ++py)
                for (std::int64_t px = 0; px < 8; ++px)
                    CHECK(lattice[static_cast<std::size_t>(py * 24 + 8 + px)] ==
                          lattice[static_cast<std::size_t>(py * 24 + 16 + px)]);
        }
        const auto want = static_cast<std::int64_t>(std::nearbyint(ratio * 64.0));
        CHECK(plan.masked_count(0) == want);
        CHECK(plan.masked_count(1) == want);
    }
}

TEST_CASE("mask plans are bit-identical under the same seed") {
    Rng a(42), b(42);
    const auto pa = sample_mask_plan(a, 0.6, 8, 8, MaskPhase::train);
    const auto pb = sample_mask_plan(b, 0.6, 8, 8, MaskPhase::train);
    CHECK(pa.row_pattern[0] == pb.row_pattern[0]);
    CHECK(pa.row_pattern[1] == pb.row_pattern[1]);
}

TEST_CASE("mask plan JSON round-trip") {
    Rng rng(15);
    const auto plan = sample_mask_plan(rng, 0.4, 4, 6, MaskPhase::train);
    const auto back = mask_plan_from_json(mask_plan_to_json(plan));
    CHECK(back.grid_h == 4);
    CHECK(back.grid_w == 6);
    CHECK(back.ratio == doctest::Approx(0.4));
    CHECK(back.row_pattern[0] == plan.row_pattern[0]);
    CHECK(back.row_pattern[1] == plan.row_pattern[1]);
}

TEST_CASE("select_demonstration endpoints and frequency") {
    std::vector<SampleTriple> pool;
    for (int i = 0; i < 10; ++i) pool.push_back(make_triple(100 + static_cast<std::uint64_t>(i), 16));
    const auto& query = pool[3];

    DemonstrationPolicy always{DemonstrationStrategy::self_prompt_mixture, 1.0};
    Rng r1(1);
    for (int i = 0; i < 50; ++i)
        CHECK(select_demonstration(always, pool, query, r1).sample_id == query.sample_id);

    DemonstrationPolicy never{DemonstrationStrategy::self_prompt_mixture, 0.0};
    Rng r2(2);
    for (int i = 0; i < 200; ++i)
        CHECK(select_demonstration(never, pool, query, r2).sample_id != query.sample_id);

    // 10,000 seeded draws at p = 0.2: frequency within 0.20 +- 0.02
    DemonstrationPolicy p02{DemonstrationStrategy::self_prompt_mixture, 0.2};
    Rng r3(3);
    int self_count = 0;
    for (int i = 0; i < 10000; ++i)
        if (select_demonstration(p02, pool, query, r3).sample_id == query.sample_id) ++self_count;
    const double freq = self_count / 10000.0;
    CHECK(freq > 0.18);
    CHECK(freq < 0.22);

    CHECK_THROWS_AS(select_demonstration(p02, {}, query, r3), ContractError);
}

TEST_CASE("grid PNG export is deterministic and well-formed") {
    const auto a = make_triple(20), b = make_triple(21);
    const auto grid = compose_grid(a, b, GridMode::chained);
    const auto bytes1 = encode_png(grid.pixels);
    const auto bytes2 = encode_png(grid.pixels);
    CHECK(bytes1 == bytes2);
    REQUIRE(bytes1.size() > 8);
    CHECK(bytes1[0] == 0x89);
    CHECK(bytes1[1] == 'P');
}
