#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fetnet/errors.hpp"
#include "fetnet/tensor.hpp"

namespace fetnet {

/// Interleaved HWC image, values in [0,1]. 1 (gray) or 3 (RGB) channels.
/// 8-bit quantization happens only at the PNG boundary.
struct Image {
    int64_t h = 0, w = 0, c = 0;
    std::vector<double> data;

    Image() = default;
    Image(int64_t h_, int64_t w_, int64_t c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_ * w_ * c_), fill) {
        if (h_ <= 0 || w_ <= 0 || (c_ != 1 && c_ != 3))
            throw ShapeError("Image: bad dimensions");
    }

    double& at(int64_t y, int64_t x, int64_t ch) {
        return data[static_cast<size_t>((y * w + x) * c + ch)];
    }
    double at(int64_t y, int64_t x, int64_t ch) const {
        return data[static_cast<size_t>((y * w + x) * c + ch)];
    }

    int64_t numel() const { return h * w * c; }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

/// Decodes an 8/16-bit PNG; palette and gray+alpha are normalized, alpha is
/// dropped. Result has 1 or 3 channels. Throws IoError with the path.
Image read_png(const std::string& path);

/// Writes an 8-bit PNG (gray or RGB); values are clamped and rounded.
void write_png(const std::string& path, const Image& img);

/// BT.601 luminance (0.299, 0.587, 0.114); gray images pass through.
Image to_gray(const Image& img);

/// Image -> (1,C,H,W) tensor.
Tensor to_chw(const Image& img);

/// Batch slice b of a (B,C,H,W) tensor -> image, optionally clamped to [0,1].
Image from_chw(const Tensor& t, int64_t b = 0, bool clamp = true);

/// Round-trip through the 8-bit grid without touching the filesystem.
double quantize8(double v);

} // namespace fetnet
