#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctx/image.hpp"

namespace ctx {

/// The nine evaluation quantities with the paper's unit conventions.
/// mssim, mse and fgiou are percentages; psnr is dB (capped at 99.0 for
/// identical images); age is on the 0-255 gray scale.
struct MetricReport {
    double psnr = 0.0;
    double mssim = 0.0;
    double mse = 0.0;
    double age = 0.0;
    double peps = 0.0;
    double pceps = 0.0;
    std::optional<double> frechet;
    double fgiou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fscore = 0.0;

    std::string to_json() const;
};

/// Aligned plain-text table, paper column order:
/// PSNR, MSSIM, MSE, AGE, pEPs, pCEPs, FID | fgIoU, F-score.
std::string report_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

double psnr(const Image& a, const Image& b);
double mssim(const Image& a, const Image& b);
double mse_pct(const Image& a, const Image& b);
double age(const Image& a, const Image& b);
double peps(const Image& a, const Image& b);
double pceps(const Image& a, const Image& b);

/// Binary masks as row-major {0,1} planes.
struct MaskPlane {
    std::int64_t h = 0, w = 0;
    std::vector<std::uint8_t> on;

    static MaskPlane from_image(const Image& im);  // requires binary panel
};

struct SegScores {
    double fgiou = 0.0;  // percent
    double precision = 0.0;
    double recall = 0.0;
    double fscore = 0.0;
};

SegScores fgiou_fscore(const MaskPlane& pred, const MaskPlane& gt);

/// Mean and covariance of a set of embeddings (rows). Covariance uses the
/// N-1 normalizer and is symmetrized.
struct GaussianStats {
    std::vector<double> mean;
    std::vector<double> cov;  // d*d row-major

    std::int64_t dim() const { return static_cast<std::int64_t>(mean.size()); }
    static GaussianStats from_embeddings(const std::vector<std::vector<double>>& rows);
};

/// Squared Frechet distance between two Gaussians:
/// |mu_p - mu_q|^2 + Tr(Sp + Sq - 2(Sp Sq)^(1/2)).
double frechet_distance(const GaussianStats& p, const GaussianStats& q);

/// Built-in toy feature extractor: 8x8 average pooling per channel followed by
/// a fixed seeded random projection to dim 64. Self-contained FID-style
/// comparisons only; not comparable to Inception-based FID numbers.
std::vector<double> toy_embedding(const Image& im);

}  // namespace ctx
