#include "ctx/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "ctx/errors.hpp"

namespace ctx {

std::vector<float> to_gray(const Image& im) {
    std::vector<float> g(static_cast<std::size_t>(im.h * im.w));
    for (std::int64_t y = 0; y < im.h; ++y)
        for (std::int64_t x = 0; x < im.w; ++x)
            g[static_cast<std::size_t>(y * im.w + x)] = gray_at(im, y, x);
    return g;
}

namespace {

std::uint8_t to_byte(float v) {
    const float scaled = v * 255.0f + 0.5f;  // round half up
    const float clamped = scaled < 0.0f ? 0.0f : (scaled > 255.0f ? 255.0f : scaled);
    return static_cast<std::uint8_t>(clamped);
}

std::vector<std::uint8_t> interleave(const Image& im) {
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(im.h * im.w * 3));
    for (std::int64_t y = 0; y < im.h; ++y)
        for (std::int64_t x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c)
                rows[static_cast<std::size_t>((y * im.w + x) * 3 + c)] = to_byte(im.at(c, y, x));
    return rows;
}

void png_error_fn(png_structp png, png_const_charp msg) {
    (void)png;
    throw IoError(std::string("libpng: ") + msg);
}

void encode_to(png_structp png, png_infop info, const Image& im) {
    png_set_IHDR(png, info, static_cast<png_uint_32>(im.w), static_cast<png_uint_32>(im.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto rows = interleave(im);
    for (std::int64_t y = 0; y < im.h; ++y)
        png_write_row(png, const_cast<png_bytep>(rows.data() + y * im.w * 3));
    png_write_end(png, nullptr);
}

}  // namespace

void write_png(const std::string& path, const Image& im) {
    if (im.h <= 0 || im.w <= 0) throw ContractError("write_png: empty image");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, fp);
        encode_to(png, info, im);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

std::vector<std::uint8_t> encode_png(const Image& im) {
    if (im.h <= 0 || im.w <= 0) throw ContractError("encode_png: empty image");
    std::vector<std::uint8_t> out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    png_infop info = png_create_info_struct(png);
    png_set_write_fn(
        png, &out,
        [](png_structp p, png_bytep data, png_size_t len) {
            auto* buf = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
            buf->insert(buf->end(), data, data + len);
        },
        nullptr);
    try {
        encode_to(png, info, im);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
    return out;
}

Image read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn, nullptr);
    png_infop info = png_create_info_struct(png);
    Image im;
    try {
        png_init_io(png, fp);
        png_read_info(png, info);
        const auto w = png_get_image_width(png, info);
        const auto h = png_get_image_height(png, info);
        // Normalize any input to 8-bit RGB.
        png_set_expand(png);
        png_set_strip_16(png);
        png_set_strip_alpha(png);
        const auto color = png_get_color_type(png, info);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
            png_set_gray_to_rgb(png);
        png_read_update_info(png, info);
        im = Image(static_cast<std::int64_t>(h), static_cast<std::int64_t>(w));
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
        for (png_uint_32 y = 0; y < h; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (png_uint_32 x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    im.at(c, y, x) = static_cast<float>(row[x * 3 + c]) / 255.0f;
        }
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return im;
}

}  // namespace ctx
