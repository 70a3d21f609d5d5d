#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "ctx/errors.hpp"
#include "ctx/tensor.hpp"
#include "oracles.hpp"

using namespace ctx;

TEST_CASE("matmul values") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto r = matmul(eye, m);
    CHECK(r.data()[0] == 1);
    CHECK(r.data()[1] == 2);
    CHECK(r.data()[2] == 3);
    CHECK(r.data()[3] == 4);

    auto a = Tensor::from_data({1, 2}, {1, 2});
    auto b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0));

    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), ShapeError);
}

TEST_CASE("matmul gradient of sum(a*b) w.r.t. a is b^T broadcast to rows") {
    auto a = Tensor::from_data({2, 3}, {0.3f, -1.2f, 0.7f, 1.5f, 0.2f, -0.4f}, true);
    auto b = Tensor::from_data({3, 2}, {0.5f, -0.7f, 1.1f, 0.4f, -0.9f, 0.8f});
    auto loss = sum(matmul(a, b));
    loss.backward();
    // d/da[i,k] = sum_j b[k,j], identical across rows i.
    for (int i = 0; i < 2; ++i) {
        CHECK(a.grad()[i * 3 + 0] == doctest::Approx(0.5 - 0.7));
        CHECK(a.grad()[i * 3 + 1] == doctest::Approx(1.1 + 0.4));
        CHECK(a.grad()[i * 3 + 2] == doctest::Approx(-0.9 + 0.8));
    }
}

TEST_CASE("softmax_rows values and invariants") {
    auto s0 = softmax_rows(Tensor::from_data({1, 2}, {0, 0}));
    CHECK(s0.data()[0] == doctest::Approx(0.5));

    auto s1 = softmax_rows(Tensor::from_data({1, 2}, {1000, 1000}));
    CHECK(s1.data()[0] == doctest::Approx(0.5));
    CHECK(s1.all_finite());

    auto s2 = softmax_rows(Tensor::from_data({1, 2}, {0.0f, std::log(3.0f)}));
    CHECK(s2.data()[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(s2.data()[1] == doctest::Approx(0.75).epsilon(1e-6));

    Rng rng(11);
    for (int seed = 0; seed < 30; ++seed) {
        auto x = Tensor::randn({4, 7}, rng, 2.0f);
        auto y = softmax_rows(x);
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
        // shift invariance
        std::vector<float> shifted(x.data().begin(), x.data().end());
        const float c0 = static_cast<float>(rng.uniform(-3.0, 3.0));
        for (auto& v : shifted) v += c0;
        auto y2 = softmax_rows(Tensor::from_data({4, 7}, shifted));
        for (std::int64_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y.data()[i] - y2.data()[i]) < 1e-6);
    }
}

TEST_CASE("layer_norm values") {
    auto g = Tensor::full({3}, 1.0f);
    auto b = Tensor::zeros({3});
    auto constant = layer_norm(Tensor::full({2, 3}, 5.0f), g, b, 1e-6f);
    for (auto v : constant.data()) CHECK(std::abs(v) < 1e-3);

    auto g2 = Tensor::full({2}, 1.0f);
    auto b2 = Tensor::zeros({2});
    auto ln = layer_norm(Tensor::from_data({1, 2}, {1, 3}), g2, b2, 0.0f);
    CHECK(ln.data()[0] == doctest::Approx(-1.0));
    CHECK(ln.data()[1] == doctest::Approx(1.0));
}

TEST_CASE("smooth_l1 values") {
    auto t = Tensor::zeros({1});
    auto m = Tensor::full({1}, 1.0f);
    CHECK(smooth_l1(Tensor::zeros({1}), t, m).item() == 0.0f);
    CHECK(smooth_l1(Tensor::from_data({1}, {0.5f}), t, m).item() == doctest::Approx(0.125));
    CHECK(smooth_l1(Tensor::from_data({1}, {2.0f}), t, m).item() == doctest::Approx(1.5));
    // all-zero mask
    CHECK(smooth_l1(Tensor::from_data({1}, {2.0f}), t, Tensor::zeros({1})).item() == 0.0f);
}

TEST_CASE("pixel_cross_entropy values and brute-force oracle") {
    // uniform logits -> ln 2 per pixel
    auto logits = Tensor::zeros({2, 2, 2});
    std::vector<float> labels = {0, 1, 1, 0};
    CHECK(pixel_cross_entropy(logits, labels).item() == doctest::Approx(std::log(2.0)));

    // +50 margin toward the true class -> ~0
    std::vector<float> z(8, 0.0f);
    for (int i = 0; i < 4; ++i) z[static_cast<std::size_t>((labels[i] > 0.5f ? 1 : 0) * 4 + i)] = 50.0f;
    CHECK(pixel_cross_entropy(Tensor::from_data({2, 2, 2}, z), labels).item() < 1e-6);

    // random 4x4 against a per-pixel loop
    Rng rng(5);
    std::vector<float> zr(32);
    std::vector<float> lr(16);
    for (auto& v : zr) v = static_cast<float>(rng.normal());
    for (auto& v : lr) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    const auto loss = pixel_cross_entropy(Tensor::from_data({2, 4, 4}, zr), lr).item();
    double want = 0.0;
    for (int i = 0; i < 16; ++i) {
        const double z0 = zr[static_cast<std::size_t>(i)], z1 = zr[static_cast<std::size_t>(16 + i)];
        const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
        want += -std::log(lr[static_cast<std::size_t>(i)] > 0.5f ? p1 : 1.0 - p1);
    }
    want /= 16.0;
    CHECK(std::abs(loss - want) < 1e-6);

    CHECK_THROWS_AS(pixel_cross_entropy(logits, std::vector<float>{0, 2, 1, 0}), ContractError);
}

TEST_CASE("backward basics") {
    auto x = Tensor::from_data({3}, {1, 2, 3}, true);
    sum(x).backward();
    for (auto g : x.grad()) CHECK(g == 1.0f);

    auto y = Tensor::from_data({2}, {1, 2}, true);
    sum(mul(y, y)).backward();
    CHECK(y.grad()[0] == doctest::Approx(2.0));
    CHECK(y.grad()[1] == doctest::Approx(4.0));

    auto z = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(mul(z, z).backward(), ContractError);
}

TEST_CASE("backward accumulates over reuse and across calls") {
    auto x = Tensor::from_data({2}, {0.7f, -0.3f}, true);
    // x used twice: loss = sum(x) + sum(x*x)
    auto loss = add(sum(x), sum(mul(x, x)));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(1.0 + 2 * 0.7));
    CHECK(x.grad()[1] == doctest::Approx(1.0 - 2 * 0.3));
    // second backward accumulates additively
    sum(x).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0 + 2 * 0.7));
}

TEST_CASE("only bias broadcasting is permitted") {
    auto x = Tensor::zeros({4, 3});
    CHECK_NOTHROW(add_bias(x, Tensor::zeros({3})));
    CHECK_THROWS_AS(add_bias(x, Tensor::zeros({4})), ShapeError);
    CHECK_THROWS_AS(add(x, Tensor::zeros({3, 4})), ShapeError);
    CHECK_THROWS_AS(mul(x, Tensor::zeros({12})), ShapeError);
}

TEST_CASE("deterministic ops: identical inputs give bit-identical outputs") {
    Rng rng(99);
    auto a = Tensor::randn({33, 17}, rng);
    auto b = Tensor::randn({17, 29}, rng);
    auto r1 = matmul(a, b);
    auto r2 = matmul(a, b);
    CHECK(std::memcmp(r1.data().data(), r2.data().data(), sizeof(float) * r1.numel()) == 0);
    auto s1 = softmax_rows(a);
    auto s2 = softmax_rows(a);
    CHECK(std::memcmp(s1.data().data(), s2.data().data(), sizeof(float) * s1.numel()) == 0);
    CHECK(sum(a).item() == sum(a).item());
}

TEST_CASE("no-grad mode builds no graph") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
}

namespace {

template <typename MakeCase>
double sweep(MakeCase make_case, int seeds = 20) {
    double worst = 0.0;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + static_cast<std::uint64_t>(s));
        worst = std::max(worst, make_case(rng));
    }
    return worst;
}

}  // namespace

TEST_CASE("finite-difference gradients for every differentiable op") {
    // Analytic engine gradients against central differences (step 1e-3) of
    // independent double-precision references.

    // matmul, both operands
    CHECK(sweep([](Rng& rng) {
              auto a = Tensor::randn({3, 4}, rng, 1.0f, true);
              auto b = Tensor::randn({4, 2}, rng, 1.0f, true);
              auto probe = oracle::random_probe(rng, 6);
              const std::vector<double> av(a.data().begin(), a.data().end());
              const std::vector<double> bv(b.data().begin(), b.data().end());
              const auto ref = [&](const std::vector<double>& aa, const std::vector<double>& bb) {
                  std::vector<double> out(6, 0.0);
                  for (int i = 0; i < 3; ++i)
                      for (int j = 0; j < 2; ++j)
                          for (int t = 0; t < 4; ++t) out[i * 2 + j] += aa[i * 4 + t] * bb[t * 2 + j];
                  return oracle::dot_probe(out, probe);
              };
              double w = oracle::max_grad_rel_err_vs_ref(
                  a, [&] { return matmul(a, b); }, [&](const std::vector<double>& x) { return ref(x, bv); },
                  probe);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               b, [&] { return matmul(a, b); },
                               [&](const std::vector<double>& x) { return ref(av, x); }, probe));
              return w;
          }) < 1e-4);

    // elementwise arithmetic, the permitted bias broadcast, learnable scaling
    CHECK(sweep([](Rng& rng) {
              auto a = Tensor::randn({3, 3}, rng, 1.0f, true);
              auto b = Tensor::randn({3, 3}, rng, 1.0f, true);
              auto alpha = Tensor::from_data({1}, {0.8f}, true);
              auto bias = Tensor::randn({3}, rng, 1.0f, true);
              auto probe = oracle::random_probe(rng, 9);
              const std::vector<double> av(a.data().begin(), a.data().end());
              const std::vector<double> bv(b.data().begin(), b.data().end());
              const std::vector<double> biasv(bias.data().begin(), bias.data().end());
              double w = oracle::max_grad_rel_err_vs_ref(
                  a, [&] { return mul(add(a, b), sub(a, b)); },
                  [&](const std::vector<double>& x) {
                      std::vector<double> out(9);
                      for (int i = 0; i < 9; ++i) out[i] = (x[i] + bv[i]) * (x[i] - bv[i]);
                      return oracle::dot_probe(out, probe);
                  },
                  probe);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               alpha, [&] { return scale_by(a, alpha); },
                               [&](const std::vector<double>& x) {
                                   std::vector<double> out(9);
                                   for (int i = 0; i < 9; ++i) out[i] = av[i] * x[0];
                                   return oracle::dot_probe(out, probe);
                               },
                               probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               bias, [&] { return mul(add_bias(a, bias), a); },
                               [&](const std::vector<double>& x) {
                                   std::vector<double> out(9);
                                   for (int r = 0; r < 3; ++r)
                                       for (int c = 0; c < 3; ++c)
                                           out[r * 3 + c] = (av[r * 3 + c] + x[c]) * av[r * 3 + c];
                                   return oracle::dot_probe(out, probe);
                               },
                               probe));
              return w;
          }) < 1e-4);

    // softmax_rows / layer_norm / gelu / sigmoid
    CHECK(sweep([](Rng& rng) {
              auto x = Tensor::randn({4, 5}, rng, 1.0f, true);
              auto g = Tensor::randn({5}, rng, 0.5f, true);
              auto b = Tensor::randn({5}, rng, 0.5f, true);
              auto probe = oracle::random_probe(rng, 20);
              const std::vector<double> xv(x.data().begin(), x.data().end());
              const std::vector<double> gv(g.data().begin(), g.data().end());
              const std::vector<double> bv(b.data().begin(), b.data().end());
              const auto ln_ref = [&](const std::vector<double>& xx, const std::vector<double>& gg,
                                      const std::vector<double>& bb) {
                  std::vector<double> out(20);
                  for (int r = 0; r < 4; ++r) {
                      double mu = 0;
                      for (int c = 0; c < 5; ++c) mu += xx[r * 5 + c];
                      mu /= 5;
                      double var = 0;
                      for (int c = 0; c < 5; ++c) var += (xx[r * 5 + c] - mu) * (xx[r * 5 + c] - mu);
                      var /= 5;
                      for (int c = 0; c < 5; ++c)
                          out[r * 5 + c] = (xx[r * 5 + c] - mu) / std::sqrt(var + 1e-5) * gg[c] + bb[c];
                  }
                  return oracle::dot_probe(out, probe);
              };
              double w = oracle::max_grad_rel_err_vs_ref(
                  x, [&] { return softmax_rows(x); },
                  [&](const std::vector<double>& xx) {
                      return oracle::dot_probe(oracle::ref_softmax_rows(xx, 4, 5), probe);
                  },
                  probe);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               x, [&] { return layer_norm(x, g, b, 1e-5f); },
                               [&](const std::vector<double>& xx) { return ln_ref(xx, gv, bv); }, probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               g, [&] { return layer_norm(x, g, b, 1e-5f); },
                               [&](const std::vector<double>& gg) { return ln_ref(xv, gg, bv); }, probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               b, [&] { return layer_norm(x, g, b, 1e-5f); },
                               [&](const std::vector<double>& bb) { return ln_ref(xv, gv, bb); }, probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               x, [&] { return gelu(x); },
                               [&](const std::vector<double>& xx) {
                                   std::vector<double> out(20);
                                   for (int i = 0; i < 20; ++i)
                                       out[i] = xx[i] * 0.5 * (1.0 + std::erf(xx[i] / std::sqrt(2.0)));
                                   return oracle::dot_probe(out, probe);
                               },
                               probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               x, [&] { return sigmoid(x); },
                               [&](const std::vector<double>& xx) {
                                   std::vector<double> out(20);
                                   for (int i = 0; i < 20; ++i) out[i] = 1.0 / (1.0 + std::exp(-xx[i]));
                                   return oracle::dot_probe(out, probe);
                               },
                               probe));
              return w;
          }) < 1e-4);

    // losses (smooth-L1 residuals kept away from the |d|=1 kink)
    CHECK(sweep([](Rng& rng) {
              auto pred = Tensor::randn({3, 4}, rng, 1.0f, true);
              std::vector<float> tv(12);
              std::vector<float> mv(12);
              for (std::size_t i = 0; i < tv.size(); ++i) {
                  double d = rng.uniform(-0.85, 0.85);
                  if (rng.uniform() < 0.5) d += d > 0 ? 0.4 : -0.4;
                  if (std::abs(std::abs(d) - 1.0) < 0.1) d = 0.5;
                  tv[i] = pred.data()[i] - static_cast<float>(d);
                  mv[i] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
              }
              mv[0] = 1.0f;
              auto target = Tensor::from_data({3, 4}, tv);
              auto mask = Tensor::from_data({3, 4}, mv);
              double w = oracle::max_grad_rel_err_vs_ref(
                  pred, [&] { return smooth_l1(pred, target, mask); },
                  [&](const std::vector<double>& p) {
                      double acc = 0;
                      int count = 0;
                      for (int i = 0; i < 12; ++i) {
                          if (mv[i] == 0.0f) continue;
                          ++count;
                          const double d = p[i] - tv[i];
                          acc += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
                      }
                      return count ? acc / count : 0.0;
                  });
              auto logits = Tensor::randn({2, 3, 3}, rng, 1.0f, true);
              std::vector<float> labels(9);
              for (auto& v : labels) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               logits, [&] { return pixel_cross_entropy(logits, labels); },
                               [&](const std::vector<double>& z) {
                                   double acc = 0;
                                   for (int i = 0; i < 9; ++i) {
                                       const double lse = std::log(std::exp(z[i]) + std::exp(z[9 + i]));
                                       acc += lse - (labels[i] > 0.5f ? z[9 + i] : z[i]);
                                   }
                                   return acc / 9.0;
                               }));
              return w;
          }) < 1e-4);

    // structural ops (copies are exact; conv and upsample carry arithmetic)
    CHECK(sweep([](Rng& rng) {
              auto x = Tensor::randn({6, 4}, rng, 1.0f, true);
              auto row = Tensor::randn({1, 4}, rng, 1.0f, true);
              std::vector<std::uint8_t> rm = {1, 0, 0, 1, 0, 1};
              auto probe = oracle::random_probe(rng, 24);
              const std::vector<double> xv(x.data().begin(), x.data().end());
              const std::vector<double> rv(row.data().begin(), row.data().end());
              const auto replace_ref = [&](const std::vector<double>& xx, const std::vector<double>& rr) {
                  std::vector<double> out(24);
                  for (int r = 0; r < 6; ++r)
                      for (int c = 0; c < 4; ++c) out[r * 4 + c] = rm[r] ? rr[c] : xx[r * 4 + c];
                  return oracle::dot_probe(out, probe);
              };
              double w = oracle::max_grad_rel_err_vs_ref(
                  x, [&] { return concat_rows({slice_rows(x, 0, 2), slice_rows(x, 2, 6)}); },
                  [&](const std::vector<double>& xx) { return oracle::dot_probe(xx, probe); }, probe);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               x, [&] { return replace_rows(x, rm, row); },
                               [&](const std::vector<double>& xx) { return replace_ref(xx, rv); }, probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               row, [&] { return replace_rows(x, rm, row); },
                               [&](const std::vector<double>& rr) { return replace_ref(xv, rr); }, probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               x, [&] { return transpose2d(x); },
                               [&](const std::vector<double>& xx) {
                                   std::vector<double> out(24);
                                   for (int i = 0; i < 6; ++i)
                                       for (int j = 0; j < 4; ++j) out[j * 6 + i] = xx[i * 4 + j];
                                   return oracle::dot_probe(out, probe);
                               },
                               probe));

              auto img = Tensor::randn({2, 3, 3}, rng, 1.0f, true);
              auto kernel = Tensor::randn({2, 2, 3, 3}, rng, 0.5f, true);
              auto cbias = Tensor::randn({2}, rng, 0.5f, true);
              auto cprobe = oracle::random_probe(rng, 18);
              const std::vector<double> iv(img.data().begin(), img.data().end());
              const std::vector<double> kv(kernel.data().begin(), kernel.data().end());
              const std::vector<double> cbv(cbias.data().begin(), cbias.data().end());
              const auto conv_ref = [&](const std::vector<double>& ii, const std::vector<double>& kk,
                                        const std::vector<double>& bb) {
                  return oracle::dot_probe(oracle::ref_conv3x3(ii, kk, bb, 2, 2, 3, 3), cprobe);
              };
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               img, [&] { return conv3x3(img, kernel, cbias); },
                               [&](const std::vector<double>& ii) { return conv_ref(ii, kv, cbv); },
                               cprobe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               kernel, [&] { return conv3x3(img, kernel, cbias); },
                               [&](const std::vector<double>& kk) { return conv_ref(iv, kk, cbv); },
                               cprobe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               cbias, [&] { return conv3x3(img, kernel, cbias); },
                               [&](const std::vector<double>& bb) { return conv_ref(iv, kv, bb); },
                               cprobe));
              auto up_probe = oracle::random_probe(rng, 72);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               img, [&] { return upsample_nearest(img, 2); },
                               [&](const std::vector<double>& ii) {
                                   std::vector<double> out(72);
                                   for (int c = 0; c < 2; ++c)
                                       for (int y = 0; y < 6; ++y)
                                           for (int z = 0; z < 6; ++z)
                                               out[(c * 6 + y) * 6 + z] = ii[(c * 3 + y / 2) * 3 + z / 2];
                                   return oracle::dot_probe(out, up_probe);
                               },
                               up_probe));
              return w;
          }) < 1e-4);

    // fused attention, segment spans included
    CHECK(sweep([](Rng& rng) {
              auto q = Tensor::randn({6, 8}, rng, 1.0f, true);
              auto k = Tensor::randn({6, 8}, rng, 1.0f, true);
              auto v = Tensor::randn({6, 8}, rng, 1.0f, true);
              std::vector<AttentionSpan> spans = {{0, 3, 3, 6}, {3, 6, 0, 3}};
              auto probe = oracle::random_probe(rng, 48);
              const std::vector<double> qv(q.data().begin(), q.data().end());
              const std::vector<double> kv(k.data().begin(), k.data().end());
              const std::vector<double> vv(v.data().begin(), v.data().end());
              const auto att_ref = [&](const std::vector<double>& qq, const std::vector<double>& kk,
                                       const std::vector<double>& vvv) {
                  return oracle::dot_probe(
                      oracle::ref_multihead_attention(qq, kk, vvv, 6, 6, 8, 2, spans), probe);
              };
              const auto att = [&] { return multihead_attention(q, k, v, 2, spans); };
              double w = oracle::max_grad_rel_err_vs_ref(
                  q, att, [&](const std::vector<double>& xx) { return att_ref(xx, kv, vv); }, probe);
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               k, att, [&](const std::vector<double>& xx) { return att_ref(qv, xx, vv); },
                               probe));
              w = std::max(w, oracle::max_grad_rel_err_vs_ref(
                               v, att, [&](const std::vector<double>& xx) { return att_ref(qv, kv, xx); },
                               probe));
              return w;
          }) < 1e-4);
}

TEST_CASE("finiteness surfacing") {
    auto bad = Tensor::from_data({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_FALSE(bad.all_finite());
    CHECK_THROWS_AS(bad.assert_finite("test"), TrainingDivergedError);
}
