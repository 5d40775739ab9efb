#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "fetnet/image.hpp"

namespace fetnet {

/// Corpus-level summary. psnr_excluded counts images whose PSNR was the
/// infinity sentinel (identical pair) and therefore left out of the mean.
struct MetricReport {
    double psnr = 0.0; // dB; +inf when every pair was identical
    double mssim = 0.0; // percentage
    double mse = 0.0;   // [0,1] scale
    double age = 0.0;   // gray levels, 0-255 scale
    double peps = 0.0;  // fraction
    double pceps = 0.0; // fraction
    int64_t n_images = 0;
    int64_t psnr_excluded = 0;
};

/// Mean squared difference over all elements; inputs on the [0,1] scale.
double mse_metric(const Image& a, const Image& b);

/// 10*log10(1/mse); +infinity sentinel when mse is 0.
double psnr_metric(const Image& a, const Image& b);

/// Mean SSIM over 11x11 Gaussian windows (sigma 1.5, K1=0.01, K2=0.03,
/// dynamic range 1) on luminance, reported as a percentage. Images smaller
/// than the window raise ParamError.
double mssim_metric(const Image& a, const Image& b);

/// Average gray-level error, error-pixel fraction, and clustered-error
/// fraction on 0-255 luminance. An error pixel exceeds tau; a clustered error
/// pixel is an error pixel whose four 4-connected neighbors (replicate
/// border) are all error pixels.
std::tuple<double, double, double> age_peps_pceps(const Image& a, const Image& b,
                                                  double tau = 20.0);

/// PSNR restricted to mask=1 pixels (all channels). Empty mask or shape
/// mismatch raises ParamError.
double masked_psnr(const Image& a, const Image& b, const Image& mask);

/// All six measures for one pair.
MetricReport evaluate_pair(const Image& out, const Image& gt);

/// Unweighted mean over pairs; infinite PSNR values are excluded from the
/// PSNR mean and counted. Empty input raises ParamError.
MetricReport evaluate_corpus(const std::vector<std::pair<Image, Image>>& pairs);

/// Per-image rows plus a "mean" summary row.
/// Columns: id,psnr,mssim,mse,age,peps,pceps.
void write_metric_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<MetricReport>& rows, const MetricReport& summary);

} // namespace fetnet
