#include <doctest.h>

#include <cmath>

#include "ctx/errors.hpp"
#include "ctx/metrics.hpp"
#include "oracles.hpp"

using namespace ctx;

TEST_CASE("psnr: cap, closed form, oracle, symmetry") {
    Image a(8, 8, 0.3f);
    CHECK(psnr(a, a) == 99.0);

    Image zeros(8, 8, 0.0f), half(8, 8, 0.5f);
    CHECK(psnr(zeros, half) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));

    Rng rng(1);
    for (int t = 0; t < 25; ++t) {
        const auto x = oracle::random_image(rng, 8, 8);
        const auto y = oracle::random_image(rng, 8, 8);
        CHECK(std::abs(psnr(x, y) - oracle::psnr_bf(x, y)) < 1e-5);
        CHECK(psnr(x, y) == psnr(y, x));
    }
    CHECK_THROWS_AS(psnr(a, Image(4, 4)), ShapeError);
}

TEST_CASE("mssim: identity, constant closed form, oracle") {
    Image a(16, 16);
    Rng rng(2);
    for (auto& v : a.pix) v = static_cast<float>(rng.uniform());
    CHECK(mssim(a, a) == doctest::Approx(100.0).epsilon(1e-9));

    // constant 0 vs constant 1: SSIM reduces to C1/(1+C1); in percent that is
    // 100 * 1e-4 / (1 + 1e-4).
    Image zeros(16, 16, 0.0f), ones(16, 16, 1.0f);
    const double want = 100.0 * 1e-4 / (1.0 + 1e-4);
    CHECK(mssim(zeros, ones) == doctest::Approx(want).epsilon(1e-6));

    for (int t = 0; t < 6; ++t) {
        const auto x = oracle::random_image(rng, 13, 15);
        const auto y = oracle::random_image(rng, 13, 15);
        CHECK(std::abs(mssim(x, y) - oracle::mssim_bf(x, y)) < 1e-5);
    }
    CHECK_THROWS_AS(mssim(Image(8, 8), Image(8, 8)), ContractError);
}

TEST_CASE("mse/age/peps/pceps: identities and threshold arithmetic") {
    Image a(8, 8, 0.4f);
    CHECK(mse_pct(a, a) == 0.0);
    CHECK(age(a, a) == 0.0);
    CHECK(peps(a, a) == 0.0);
    CHECK(pceps(a, a) == 0.0);

    // uniform gray offset of 10/255: age exactly 10, below the pEPs threshold
    Image b = a;
    for (auto& v : b.pix) v += 10.0f / 255.0f;
    CHECK(age(a, b) == doctest::Approx(10.0).epsilon(1e-5));
    CHECK(peps(a, b) == 0.0);
    CHECK(pceps(a, b) == 0.0);

    // single interior error pixel of gray diff 30/255: isolated
    Image c = a;
    for (int ch = 0; ch < 3; ++ch) c.at(ch, 4, 4) += 30.0f / 255.0f;
    CHECK(peps(a, c) == doctest::Approx(1.0 / 64.0));
    CHECK(pceps(a, c) == 0.0);

    Rng rng(3);
    for (int t = 0; t < 25; ++t) {
        const auto x = oracle::random_image(rng, 11, 13);
        const auto y = oracle::random_image(rng, 11, 13);
        CHECK(std::abs(mse_pct(x, y) - oracle::mse_pct_bf(x, y)) < 1e-5);
        CHECK(std::abs(age(x, y) - oracle::age_bf(x, y)) < 1e-5);
        CHECK(peps(x, y) == oracle::peps_bf(x, y));
        CHECK(pceps(x, y) == oracle::pceps_bf(x, y));
        CHECK(mse_pct(x, y) == mse_pct(y, x));
        CHECK(age(x, y) == age(y, x));
    }
}

namespace {

GaussianStats diag_stats(std::vector<double> mean, std::vector<double> diag) {
    GaussianStats g;
    g.mean = std::move(mean);
    const auto d = g.mean.size();
    g.cov.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) g.cov[i * d + i] = diag[i];
    return g;
}

}  // namespace

TEST_CASE("frechet distance closed forms") {
    // identical stats -> 0
    Rng rng(4);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 40; ++i) {
        std::vector<double> r(5);
        for (auto& v : r) v = rng.normal();
        rows.push_back(std::move(r));
    }
    const auto g = GaussianStats::from_embeddings(rows);
    CHECK(std::abs(frechet_distance(g, g)) < 1e-6);

    // 1-D N(0,1) vs N(1,1) -> 1
    CHECK(frechet_distance(diag_stats({0.0}, {1.0}), diag_stats({1.0}, {1.0})) ==
          doctest::Approx(1.0).epsilon(1e-9));

    // commuting diagonals: diag(1,4) vs diag(4,1) -> (1-2)^2 + (2-1)^2 = 2
    CHECK(frechet_distance(diag_stats({0, 0}, {1, 4}), diag_stats({0, 0}, {4, 1})) ==
          doctest::Approx(2.0).epsilon(1e-9));

    CHECK_THROWS_AS(frechet_distance(diag_stats({0}, {1}), diag_stats({0, 0}, {1, 1})), ShapeError);
}

TEST_CASE("frechet distance is nonnegative, zero iff equal, symmetric") {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        std::vector<std::vector<double>> ra, rb;
        for (int i = 0; i < 30; ++i) {
            std::vector<double> x(4), y(4);
            for (auto& v : x) v = rng.normal();
            for (auto& v : y) v = rng.normal() * 1.3 + 0.2;
            ra.push_back(std::move(x));
            rb.push_back(std::move(y));
        }
        const auto p = GaussianStats::from_embeddings(ra);
        const auto q = GaussianStats::from_embeddings(rb);
        const double d = frechet_distance(p, q);
        CHECK(d >= -1e-9);
        CHECK(frechet_distance(q, p) == doctest::Approx(d).epsilon(1e-6));
        CHECK(std::abs(frechet_distance(p, p)) < 1e-6);
        if (d < 1e-6) CHECK(false);  // distinct random stats must not collide
    }
}

TEST_CASE("fgiou/fscore counting and conventions") {
    MaskPlane gt{4, 4, std::vector<std::uint8_t>(16, 0)};
    MaskPlane pred = gt;
    // equal nonempty
    gt.on[0] = gt.on[1] = gt.on[2] = gt.on[3] = 1;
    pred.on = gt.on;
    auto s = fgiou_fscore(pred, gt);
    CHECK(s.fgiou == 100.0);
    CHECK(s.fscore == 1.0);

    // pred covers exactly half of gt, no false positives
    pred.on.assign(16, 0);
    pred.on[0] = pred.on[1] = 1;
    s = fgiou_fscore(pred, gt);
    CHECK(s.fgiou == doctest::Approx(50.0));
    CHECK(s.precision == doctest::Approx(1.0));
    CHECK(s.recall == doctest::Approx(0.5));
    CHECK(s.fscore == doctest::Approx(2.0 / 3.0));

    // both empty: vacuously perfect
    MaskPlane empty{4, 4, std::vector<std::uint8_t>(16, 0)};
    s = fgiou_fscore(empty, empty);
    CHECK(s.fgiou == 100.0);
    CHECK(s.fscore == 1.0);

    // empty vs nonempty: zero scores
    s = fgiou_fscore(empty, gt);
    CHECK(s.fgiou == 0.0);
    CHECK(s.fscore == 0.0);
    s = fgiou_fscore(gt, empty);
    CHECK(s.fgiou == 0.0);

    MaskPlane bad{4, 4, std::vector<std::uint8_t>(16, 2)};
    CHECK_THROWS_AS(fgiou_fscore(bad, gt), ContractError);

    Image nonbinary(4, 4, 0.5f);
    CHECK_THROWS_AS(MaskPlane::from_image(nonbinary), ContractError);
}

TEST_CASE("F-score dominates IoU on random masks") {
    Rng rng(6);
    for (int t = 0; t < 1000; ++t) {
        MaskPlane a{6, 6, {}}, b{6, 6, {}};
        a.on.resize(36);
        b.on.resize(36);
        for (auto& v : a.on) v = rng.uniform() < 0.5;
        for (auto& v : b.on) v = rng.uniform() < 0.5;
        const auto s = fgiou_fscore(a, b);
        CHECK(s.fscore + 1e-12 >= s.fgiou / 100.0);
    }
}

TEST_CASE("toy embedding is deterministic and size 64") {
    Rng rng(7);
    const auto im = oracle::random_image(rng, 32, 32);
    const auto e1 = toy_embedding(im);
    const auto e2 = toy_embedding(im);
    CHECK(e1.size() == 64);
    CHECK(e1 == e2);
}

TEST_CASE("report table lists the paper's column order") {
    MetricReport r;
    r.psnr = 12.3;
    r.frechet = 4.5;
    const auto table = report_table({{"demo", r}});
    const auto psnr_at = table.find("PSNR");
    const auto fid_at = table.find("FID");
    const auto fgiou_at = table.find("fgIoU");
    CHECK(psnr_at != std::string::npos);
    CHECK(fid_at != std::string::npos);
    CHECK(fgiou_at != std::string::npos);
    CHECK(psnr_at < fid_at);
    CHECK(fid_at < fgiou_at);
}
