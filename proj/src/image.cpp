#include "fetnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace fetnet {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

double quantize8(double v) {
    const double c = std::min(1.0, std::max(0.0, v));
    return std::nearbyint(c * 255.0) / 255.0;
}

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png reader allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png info allocation failed for " + path);
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<png_byte> pixels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode " + path);
    }

    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const png_byte channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("unsupported channel count in " + path);
    }

    const size_t rowbytes = png_get_rowbytes(png, info);
    pixels.resize(rowbytes * h);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = pixels.data() + y * rowbytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(static_cast<int64_t>(h), static_cast<int64_t>(w), channels);
    for (int64_t y = 0; y < img.h; ++y) {
        const png_byte* row = pixels.data() + static_cast<size_t>(y) * rowbytes;
        for (int64_t i = 0; i < img.w * img.c; ++i)
            img.data[static_cast<size_t>((y * img.w * img.c) + i)] =
                static_cast<double>(row[i]) / 255.0;
    }
    return img;
}

void write_png(const std::string& path, const Image& img) {
    if (img.c != 1 && img.c != 3) throw ShapeError("write_png: image must have 1 or 3 channels");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png writer allocation failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png info allocation failed for " + path);
    }
    std::vector<png_byte> row(static_cast<size_t>(img.w * img.c));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < img.h; ++y) {
        for (int64_t i = 0; i < img.w * img.c; ++i) {
            const double v = img.data[static_cast<size_t>(y * img.w * img.c + i)];
            const double c = std::min(1.0, std::max(0.0, v));
            row[static_cast<size_t>(i)] = static_cast<png_byte>(std::nearbyint(c * 255.0));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image to_gray(const Image& img) {
    if (img.c == 1) return img;
    Image g(img.h, img.w, 1);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x)
            g.at(y, x, 0) =
                0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    return g;
}

Tensor to_chw(const Image& img) {
    Tensor t({1, img.c, img.h, img.w});
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) t.at(0, ch, y, x) = img.at(y, x, ch);
    return t;
}

Image from_chw(const Tensor& t, int64_t b, bool clamp) {
    if (t.rank() != 4) throw ShapeError("from_chw: expects rank-4 tensor");
    if (b < 0 || b >= t.dim(0)) throw ParamError("from_chw: batch index out of range");
    Image img(t.dim(2), t.dim(3), t.dim(1));
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) {
                double v = t.at(b, ch, y, x);
                if (clamp) v = std::min(1.0, std::max(0.0, v));
                img.at(y, x, ch) = v;
            }
    return img;
}

} // namespace fetnet
