#include "fetnet/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fetnet {

namespace {

void check_pair(const Image& a, const Image& b, const char* op) {
    if (!a.same_shape(b))
        throw ParamError(std::string(op) + ": image shapes differ");
}

std::vector<double> gray255(const Image& img) {
    Image g = to_gray(img);
    std::vector<double> out(g.data.size());
    for (size_t i = 0; i < g.data.size(); ++i) out[i] = g.data[i] * 255.0;
    return out;
}

} // namespace

double mse_metric(const Image& a, const Image& b) {
    check_pair(a, b, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

double psnr_metric(const Image& a, const Image& b) {
    const double m = mse_metric(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

double mssim_metric(const Image& a, const Image& b) {
    check_pair(a, b, "mssim");
    constexpr int64_t win = 11;
    constexpr double sigma = 1.5;
    constexpr double c1 = 0.01 * 0.01; // (K1*L)^2, L = 1
    constexpr double c2 = 0.03 * 0.03;
    if (a.h < win || a.w < win)
        throw ParamError("mssim: image smaller than the 11x11 window");

    double kernel[win * win];
    double ksum = 0.0;
    for (int64_t y = 0; y < win; ++y)
        for (int64_t x = 0; x < win; ++x) {
            const double dy = static_cast<double>(y - win / 2);
            const double dx = static_cast<double>(x - win / 2);
            kernel[y * win + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            ksum += kernel[y * win + x];
        }
    for (double& k : kernel) k /= ksum;

    // constants above assume dynamic range 1; use [0,1] luminance directly
    const Image ga = to_gray(a), gb = to_gray(b);
    const int64_t H = a.h, W = a.w;
    double acc = 0.0;
    int64_t count = 0;
    for (int64_t oy = 0; oy + win <= H; ++oy)
        for (int64_t ox = 0; ox + win <= W; ++ox) {
            double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
            for (int64_t ky = 0; ky < win; ++ky)
                for (int64_t kx = 0; kx < win; ++kx) {
                    const double k = kernel[ky * win + kx];
                    const double va = ga.data[static_cast<size_t>((oy + ky) * W + ox + kx)];
                    const double vb = gb.data[static_cast<size_t>((oy + ky) * W + ox + kx)];
                    mx += k * va;
                    my += k * vb;
                    xx += k * va * va;
                    yy += k * vb * vb;
                    xy += k * (va * vb); // grouping keeps the metric symmetric
                }
            const double sx = xx - mx * mx;
            const double sy = yy - my * my;
            const double sxy = xy - mx * my;
            const double ssim = ((2 * (mx * my) + c1) * (2 * sxy + c2)) /
                                ((mx * mx + my * my + c1) * (sx + sy + c2));
            acc += ssim;
            ++count;
        }
    return 100.0 * acc / static_cast<double>(count);
}

std::tuple<double, double, double> age_peps_pceps(const Image& a, const Image& b, double tau) {
    check_pair(a, b, "age_peps_pceps");
    const std::vector<double> ga = gray255(a), gb = gray255(b);
    const int64_t H = a.h, W = a.w, N = H * W;
    std::vector<char> err(static_cast<size_t>(N));
    double age = 0.0;
    int64_t eps = 0;
    for (int64_t i = 0; i < N; ++i) {
        const double d = std::abs(ga[static_cast<size_t>(i)] - gb[static_cast<size_t>(i)]);
        age += d;
        err[static_cast<size_t>(i)] = d > tau ? 1 : 0;
        eps += err[static_cast<size_t>(i)];
    }
    age /= static_cast<double>(N);

    auto at = [&](int64_t y, int64_t x) {
        y = std::min(std::max<int64_t>(y, 0), H - 1); // replicate border
        x = std::min(std::max<int64_t>(x, 0), W - 1);
        return err[static_cast<size_t>(y * W + x)];
    };
    int64_t ceps = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            if (at(y, x) && at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1)) ++ceps;

    return {age, static_cast<double>(eps) / static_cast<double>(N),
            static_cast<double>(ceps) / static_cast<double>(N)};
}

double masked_psnr(const Image& a, const Image& b, const Image& mask) {
    check_pair(a, b, "masked_psnr");
    if (mask.h != a.h || mask.w != a.w || mask.c != 1)
        throw ParamError("masked_psnr: mask must be single-channel at the image size");
    double acc = 0.0;
    int64_t n = 0;
    for (int64_t y = 0; y < a.h; ++y)
        for (int64_t x = 0; x < a.w; ++x)
            if (mask.at(y, x, 0) > 0.5)
                for (int64_t ch = 0; ch < a.c; ++ch, ++n) {
                    const double d = a.at(y, x, ch) - b.at(y, x, ch);
                    acc += d * d;
                }
    if (n == 0) throw ParamError("masked_psnr: empty mask");
    const double m = acc / static_cast<double>(n);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

MetricReport evaluate_pair(const Image& out, const Image& gt) {
    MetricReport r;
    r.mse = mse_metric(out, gt);
    r.psnr = psnr_metric(out, gt);
    r.mssim = mssim_metric(out, gt);
    std::tie(r.age, r.peps, r.pceps) = age_peps_pceps(out, gt);
    r.n_images = 1;
    r.psnr_excluded = std::isinf(r.psnr) ? 1 : 0;
    return r;
}

MetricReport evaluate_corpus(const std::vector<std::pair<Image, Image>>& pairs) {
    if (pairs.empty()) throw ParamError("evaluate_corpus: no image pairs");
    MetricReport sum;
    double psnr_acc = 0.0;
    int64_t psnr_n = 0;
    for (const auto& [out, gt] : pairs) {
        MetricReport r = evaluate_pair(out, gt);
        sum.mse += r.mse;
        sum.mssim += r.mssim;
        sum.age += r.age;
        sum.peps += r.peps;
        sum.pceps += r.pceps;
        if (std::isinf(r.psnr)) {
            ++sum.psnr_excluded;
        } else {
            psnr_acc += r.psnr;
            ++psnr_n;
        }
        ++sum.n_images;
    }
    const double n = static_cast<double>(sum.n_images);
    sum.mse /= n;
    sum.mssim /= n;
    sum.age /= n;
    sum.peps /= n;
    sum.pceps /= n;
    sum.psnr = psnr_n > 0 ? psnr_acc / static_cast<double>(psnr_n)
                          : std::numeric_limits<double>::infinity();
    return sum;
}

void write_metric_csv(const std::string& path, const std::vector<std::string>& ids,
                      const std::vector<MetricReport>& rows, const MetricReport& summary) {
    if (ids.size() != rows.size())
        throw ParamError("write_metric_csv: id/row count mismatch");
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "id,psnr,mssim,mse,age,peps,pceps\n";
    auto emit = [&f](const std::string& id, const MetricReport& r) {
        std::ostringstream line;
        line.precision(10);
        line << id << ',';
        if (std::isinf(r.psnr))
            line << "inf";
        else
            line << r.psnr;
        line << ',' << r.mssim << ',' << r.mse << ',' << r.age << ',' << r.peps << ','
             << r.pceps;
        f << line.str() << "\n";
    };
    for (size_t i = 0; i < ids.size(); ++i) emit(ids[i], rows[i]);
    emit("mean", summary);
}

} // namespace fetnet
