#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctx {

/// Planar RGB float image, values in [0,1], layout [3][h][w].
struct Image {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<float> pix;  // 3*h*w

    Image() = default;
    Image(std::int64_t height, std::int64_t width, float fill = 0.0f)
        : h(height), w(width), pix(static_cast<std::size_t>(3 * height * width), fill) {}

    float& at(int c, std::int64_t y, std::int64_t x) {
        return pix[static_cast<std::size_t>((c * h + y) * w + x)];
    }
    float at(int c, std::int64_t y, std::int64_t x) const {
        return pix[static_cast<std::size_t>((c * h + y) * w + x)];
    }
    void set(std::int64_t y, std::int64_t x, float r, float g, float b) {
        at(0, y, x) = r;
        at(1, y, x) = g;
        at(2, y, x) = b;
    }
    bool operator==(const Image& o) const { return h == o.h && w == o.w && pix == o.pix; }
};

/// Rec.601 luma of one pixel.
inline float gray_at(const Image& im, std::int64_t y, std::int64_t x) {
    return 0.299f * im.at(0, y, x) + 0.587f * im.at(1, y, x) + 0.114f * im.at(2, y, x);
}

/// Full grayscale plane.
std::vector<float> to_gray(const Image& im);

/// 8-bit RGB PNG, values x255 with round-half-up.
void write_png(const std::string& path, const Image& im);
Image read_png(const std::string& path);

/// In-memory PNG encoding (used for byte-identity checks).
std::vector<std::uint8_t> encode_png(const Image& im);

}  // namespace ctx
