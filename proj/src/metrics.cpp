#include "ctx/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ctx/errors.hpp"
#include "ctx/rng.hpp"

namespace ctx {

namespace {

void require_same_size(const Image& a, const Image& b, const char* op) {
    if (a.h != b.h || a.w != b.w)
        throw ShapeError(std::string(op) + ": image sizes disagree");
}

double raw_mse(const Image& a, const Image& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pix.size(); ++i) {
        const double d = static_cast<double>(a.pix[i]) - b.pix[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pix.size());
}

constexpr double kPepsThreshold = 20.0 / 255.0;

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_size(a, b, "psnr");
    const double m = raw_mse(a, b);
    if (m <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

double mse_pct(const Image& a, const Image& b) {
    require_same_size(a, b, "mse");
    return 100.0 * raw_mse(a, b);
}

double age(const Image& a, const Image& b) {
    require_same_size(a, b, "age");
    const auto ga = to_gray(a), gb = to_gray(b);
    double acc = 0.0;
    for (std::size_t i = 0; i < ga.size(); ++i) acc += std::abs(static_cast<double>(ga[i]) - gb[i]);
    return 255.0 * acc / static_cast<double>(ga.size());
}

double peps(const Image& a, const Image& b) {
    require_same_size(a, b, "peps");
    const auto ga = to_gray(a), gb = to_gray(b);
    std::int64_t count = 0;
    for (std::size_t i = 0; i < ga.size(); ++i)
        if (std::abs(static_cast<double>(ga[i]) - gb[i]) > kPepsThreshold) ++count;
    return static_cast<double>(count) / static_cast<double>(ga.size());
}

double pceps(const Image& a, const Image& b) {
    require_same_size(a, b, "pceps");
    const auto ga = to_gray(a), gb = to_gray(b);
    const auto h = a.h, w = a.w;
    std::vector<std::uint8_t> err(ga.size());
    for (std::size_t i = 0; i < ga.size(); ++i)
        err[i] = std::abs(static_cast<double>(ga[i]) - gb[i]) > kPepsThreshold;
    // Error pixels whose four neighbors are all error pixels; out-of-image
    // neighbors count as non-error.
    std::int64_t count = 0;
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            if (!err[static_cast<std::size_t>(y * w + x)]) continue;
            if (y == 0 || y == h - 1 || x == 0 || x == w - 1) continue;
            if (err[static_cast<std::size_t>((y - 1) * w + x)] &&
                err[static_cast<std::size_t>((y + 1) * w + x)] &&
                err[static_cast<std::size_t>(y * w + x - 1)] &&
                err[static_cast<std::size_t>(y * w + x + 1)])
                ++count;
        }
    return static_cast<double>(count) / static_cast<double>(ga.size());
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace {

// 11-tap Gaussian, sigma 1.5, normalized.
std::vector<double> gaussian_kernel11() {
    std::vector<double> k(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double x = i - 5;
        k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
        s += k[static_cast<std::size_t>(i)];
    }
    for (auto& v : k) v /= s;
    return k;
}

std::int64_t reflect(std::int64_t i, std::int64_t n) {
    // Symmetric reflection without edge repeat: -1 -> 0 is wrong; mirror about
    // the border pixel (OpenCV BORDER_REFLECT_101 style would skip it; here we
    // use simple reflection including the edge: -1 -> 0, n -> n-1).
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - i - 1;
    return i;
}

/// Separable Gaussian blur with reflected borders.
std::vector<double> blur(const std::vector<double>& src, std::int64_t h, std::int64_t w) {
    static const std::vector<double> k = gaussian_kernel11();
    std::vector<double> tmp(src.size()), out(src.size());
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -5; t <= 5; ++t)
                acc += k[static_cast<std::size_t>(t + 5)] *
                       src[static_cast<std::size_t>(y * w + reflect(x + t, w))];
            tmp[static_cast<std::size_t>(y * w + x)] = acc;
        }
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -5; t <= 5; ++t)
                acc += k[static_cast<std::size_t>(t + 5)] *
                       tmp[static_cast<std::size_t>(reflect(y + t, h) * w + x)];
            out[static_cast<std::size_t>(y * w + x)] = acc;
        }
    return out;
}

}  // namespace

double mssim(const Image& a, const Image& b) {
    require_same_size(a, b, "mssim");
    if (a.h < 11 || a.w < 11) throw ContractError("mssim: images must be at least 11x11");
    const auto gaf = to_gray(a), gbf = to_gray(b);
    std::vector<double> ga(gaf.begin(), gaf.end()), gb(gbf.begin(), gbf.end());
    const auto h = a.h, w = a.w;
    const auto n = ga.size();
    std::vector<double> ga2(n), gb2(n), gab(n);
    for (std::size_t i = 0; i < n; ++i) {
        ga2[i] = ga[i] * ga[i];
        gb2[i] = gb[i] * gb[i];
        gab[i] = ga[i] * gb[i];
    }
    const auto mu_a = blur(ga, h, w), mu_b = blur(gb, h, w);
    const auto m_a2 = blur(ga2, h, w), m_b2 = blur(gb2, h, w), m_ab = blur(gab, h, w);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double va = m_a2[i] - mu_a[i] * mu_a[i];
        const double vb = m_b2[i] - mu_b[i] * mu_b[i];
        const double cov = m_ab[i] - mu_a[i] * mu_b[i];
        acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
               ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return 100.0 * acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

MaskPlane MaskPlane::from_image(const Image& im) {
    MaskPlane m;
    m.h = im.h;
    m.w = im.w;
    m.on.resize(static_cast<std::size_t>(im.h * im.w));
    for (std::int64_t y = 0; y < im.h; ++y)
        for (std::int64_t x = 0; x < im.w; ++x) {
            const float v = im.at(0, y, x);
            if (v != 0.0f && v != 1.0f) throw ContractError("MaskPlane: panel is not binary");
            m.on[static_cast<std::size_t>(y * im.w + x)] = v != 0.0f;
        }
    return m;
}

SegScores fgiou_fscore(const MaskPlane& pred, const MaskPlane& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("fgiou_fscore: mask sizes disagree");
    for (auto v : pred.on)
        if (v > 1) throw ContractError("fgiou_fscore: non-binary mask");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.on.size(); ++i) {
        const bool p = pred.on[i] != 0, g = gt.on[i] != 0;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
    }
    SegScores s;
    if (tp + fp + fn == 0) {
        // Empty versus empty: vacuously perfect.
        s.fgiou = 100.0;
        s.precision = s.recall = s.fscore = 1.0;
        return s;
    }
    if (tp == 0) return s;  // all zeros
    s.fgiou = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    s.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.fscore = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

GaussianStats GaussianStats::from_embeddings(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw ContractError("GaussianStats: no embeddings");
    const auto d = rows[0].size();
    GaussianStats g;
    g.mean.assign(d, 0.0);
    g.cov.assign(d * d, 0.0);
    for (const auto& r : rows) {
        if (r.size() != d) throw ShapeError("GaussianStats: embedding dims disagree");
        for (std::size_t i = 0; i < d; ++i) g.mean[i] += r[i];
    }
    for (auto& v : g.mean) v /= static_cast<double>(rows.size());
    const double denom = rows.size() > 1 ? static_cast<double>(rows.size() - 1) : 1.0;
    for (const auto& r : rows)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                g.cov[i * d + j] += (r[i] - g.mean[i]) * (r[j] - g.mean[j]) / denom;
    return g;
}

double frechet_distance(const GaussianStats& p, const GaussianStats& q) {
    const auto d = p.dim();
    if (q.dim() != d) throw ShapeError("frechet_distance: dimensions disagree");
    using Mat = Eigen::MatrixXd;
    Mat sp(d, d), sq(d, d);
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = 0; j < d; ++j) {
            sp(i, j) = p.cov[static_cast<std::size_t>(i * d + j)];
            sq(i, j) = q.cov[static_cast<std::size_t>(i * d + j)];
        }
    if ((sp - sp.transpose()).cwiseAbs().maxCoeff() > 1e-6 ||
        (sq - sq.transpose()).cwiseAbs().maxCoeff() > 1e-6)
        throw ContractError("frechet_distance: covariance not symmetric");
    sp = 0.5 * (sp + sp.transpose());
    sq = 0.5 * (sq + sq.transpose());

    // sqrt(Sp) via symmetric eigendecomposition, eigenvalues clamped at 0.
    Eigen::SelfAdjointEigenSolver<Mat> es_p(sp);
    if (es_p.eigenvalues().minCoeff() < -1e-6)
        throw ContractError("frechet_distance: covariance not PSD");
    Mat root_p = es_p.eigenvectors() *
                 es_p.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                 es_p.eigenvectors().transpose();

    Eigen::SelfAdjointEigenSolver<Mat> es_m(root_p * sq * root_p);
    const double tr_sqrt = es_m.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double mean_term = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        const double dm = p.mean[static_cast<std::size_t>(i)] - q.mean[static_cast<std::size_t>(i)];
        mean_term += dm * dm;
    }
    return mean_term + sp.trace() + sq.trace() - 2.0 * tr_sqrt;
}

std::vector<double> toy_embedding(const Image& im) {
    // 8x8 average pooling per channel (192 dims), then a fixed seeded random
    // projection to 64 dims.
    constexpr int kGrid = 8;
    constexpr int kOut = 64;
    std::vector<double> pooled(3 * kGrid * kGrid, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int gy = 0; gy < kGrid; ++gy)
            for (int gx = 0; gx < kGrid; ++gx) {
                const auto y0 = im.h * gy / kGrid, y1 = im.h * (gy + 1) / kGrid;
                const auto x0 = im.w * gx / kGrid, x1 = im.w * (gx + 1) / kGrid;
                double acc = 0.0;
                std::int64_t n = 0;
                for (std::int64_t y = y0; y < std::max(y0 + 1, y1); ++y)
                    for (std::int64_t x = x0; x < std::max(x0 + 1, x1); ++x) {
                        acc += im.at(c, std::min(y, im.h - 1), std::min(x, im.w - 1));
                        ++n;
                    }
                pooled[static_cast<std::size_t>((c * kGrid + gy) * kGrid + gx)] =
                    acc / static_cast<double>(n);
            }
    static const std::vector<double> proj = [] {
        Rng rng(0x706f6f6cULL);  // fixed seed: the projection is part of the metric
        std::vector<double> m(static_cast<std::size_t>(kOut) * 3 * kGrid * kGrid);
        for (auto& v : m) v = rng.normal() / std::sqrt(3.0 * kGrid * kGrid);
        return m;
    }();
    std::vector<double> out(kOut, 0.0);
    for (int o = 0; o < kOut; ++o)
        for (std::size_t i = 0; i < pooled.size(); ++i)
            out[static_cast<std::size_t>(o)] += proj[static_cast<std::size_t>(o) * pooled.size() + i] * pooled[i];
    return out;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["psnr"] = psnr;
    j["mssim"] = mssim;
    j["mse"] = mse;
    j["age"] = age;
    j["peps"] = peps;
    j["pceps"] = pceps;
    if (frechet) j["fid"] = *frechet;
    j["fgiou"] = fgiou;
    j["precision"] = precision;
    j["recall"] = recall;
    j["fscore"] = fscore;
    return j.dump(2);
}

std::string report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-20s %8s %8s %8s %8s %8s %8s %8s | %8s %8s\n", "dataset",
                  "PSNR", "MSSIM", "MSE", "AGE", "pEPs", "pCEPs", "FID", "fgIoU", "F-score");
    os << line;
    for (const auto& [name, r] : rows) {
        char fid[16];
        if (r.frechet)
            std::snprintf(fid, sizeof(fid), "%8.3f", *r.frechet);
        else
            std::snprintf(fid, sizeof(fid), "%8s", "-");
        std::snprintf(line, sizeof(line), "%-20s %8.2f %8.2f %8.4f %8.3f %8.4f %8.4f %s | %8.2f %8.4f\n",
                      name.c_str(), r.psnr, r.mssim, r.mse, r.age, r.peps, r.pceps, fid, r.fgiou,
                      r.fscore);
        os << line;
    }
    return os.str();
}

}  // namespace ctx
