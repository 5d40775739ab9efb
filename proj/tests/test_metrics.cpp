#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "fetnet/metrics.hpp"
#include "fetnet/rng.hpp"

using namespace fetnet;

namespace {

Image rnd_img(int64_t h, int64_t w, Rng& rng) {
    Image im(h, w, 3);
    for (double& v : im.data) v = rng.uniform(0.0, 1.0);
    return im;
}

double lum255(const Image& im, int64_t y, int64_t x) {
    return 255.0 * (0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2));
}

} // namespace

TEST_CASE("mse/psnr: identical images and the uniform-shift golden") {
    Rng rng = Rng::seeded(1);
    Image a = rnd_img(16, 16, rng);
    CHECK(mse_metric(a, a) == 0.0);
    CHECK(std::isinf(psnr_metric(a, a)));

    Image base(16, 16, 3, 0.4), shifted(16, 16, 3, 0.5);
    CHECK(mse_metric(base, shifted) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(psnr_metric(base, shifted) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("mse/psnr: double-loop oracle on random pairs") {
    Rng rng = Rng::seeded(2);
    for (int t = 0; t < 5; ++t) {
        Image a = rnd_img(12, 9, rng), b = rnd_img(12, 9, rng);
        double acc = 0.0;
        for (size_t i = 0; i < a.data.size(); ++i) {
            const double d = a.data[i] - b.data[i];
            acc += d * d;
        }
        acc /= static_cast<double>(a.data.size());
        CHECK(mse_metric(a, b) == doctest::Approx(acc).epsilon(1e-12));
        CHECK(psnr_metric(a, b) == doctest::Approx(10.0 * std::log10(1.0 / acc)).epsilon(1e-9));
    }
}

TEST_CASE("metrics: mismatched or undersized inputs are rejected") {
    Image a(16, 16, 3), b(16, 12, 3), tiny(8, 8, 3);
    CHECK_THROWS_AS(mse_metric(a, b), ParamError);
    CHECK_THROWS_AS(mssim_metric(tiny, tiny), ParamError);
    Image m(12, 12, 1);
    CHECK_THROWS_AS(masked_psnr(a, a, m), ParamError);
}

TEST_CASE("mssim: identical images score 100, scale sits in [0,100]") {
    Rng rng = Rng::seeded(3);
    Image a = rnd_img(16, 16, rng);
    CHECK(mssim_metric(a, a) == doctest::Approx(100.0).epsilon(1e-10));
    Image b = rnd_img(16, 16, rng);
    const double v = mssim_metric(a, b);
    CHECK(v >= -100.0); // windows with negative covariance push below zero
    CHECK(v <= 100.0);
    CHECK(mssim_metric(a, b) == mssim_metric(b, a)); // symmetric bitwise
}

TEST_CASE("mssim: constant images match the closed form") {
    // For constants a and b every window has zero variance, so
    // ssim = (2 mu_a mu_b + c1) (c2) / ((mu_a^2 + mu_b^2 + c1) (c2))
    Image a(11, 11, 3, 0.3), b(11, 11, 3, 0.7);
    const double ma = 0.3, mb = 0.7, c1 = 1e-4;
    const double want = 100.0 * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    CHECK(mssim_metric(a, b) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("mssim: direct per-window oracle on a random pair") {
    Rng rng = Rng::seeded(4);
    Image a = rnd_img(14, 13, rng), b = rnd_img(14, 13, rng);

    // independent implementation: same Gaussian window, plain loops
    const int win = 11;
    const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
    double kern[11][11];
    double ksum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dy = y - 5.0, dx = x - 5.0;
            kern[y][x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            ksum += kern[y][x];
        }
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) kern[y][x] /= ksum;

    auto ga = [&](int64_t y, int64_t x) { return lum255(a, y, x) / 255.0; };
    auto gb = [&](int64_t y, int64_t x) { return lum255(b, y, x) / 255.0; };
    double total = 0.0;
    int64_t count = 0;
    for (int64_t oy = 0; oy + win <= 14; ++oy)
        for (int64_t ox = 0; ox + win <= 13; ++ox) {
            double mua = 0, mub = 0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    mua += kern[y][x] * ga(oy + y, ox + x);
                    mub += kern[y][x] * gb(oy + y, ox + x);
                }
            double va = 0, vb = 0, cov = 0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double da = ga(oy + y, ox + x) - mua;
                    const double db = gb(oy + y, ox + x) - mub;
                    va += kern[y][x] * da * da;
                    vb += kern[y][x] * db * db;
                    cov += kern[y][x] * da * db;
                }
            total += ((2 * mua * mub + c1) * (2 * cov + c2)) /
                     ((mua * mua + mub * mub + c1) * (va + vb + c2));
            ++count;
        }
    const double want = 100.0 * total / static_cast<double>(count);
    CHECK(mssim_metric(a, b) == doctest::Approx(want).epsilon(1e-8));
}

TEST_CASE("age/peps/pceps: hand-built error geometry") {
    Image a(8, 8, 3, 0.5), b(8, 8, 3, 0.5);

    // identical -> all zero
    auto [age0, peps0, pceps0] = age_peps_pceps(a, b);
    CHECK(age0 == 0.0);
    CHECK(peps0 == 0.0);
    CHECK(pceps0 == 0.0);

    // one isolated gray-level jump of 51 (0.2 in [0,1]) at (2,2):
    // AGE = 51/64, pEPs = 1/64, no cluster
    Image c = b;
    for (int64_t ch = 0; ch < 3; ++ch) c.at(2, 2, ch) = 0.7;
    auto [age1, peps1, pceps1] = age_peps_pceps(a, c);
    CHECK(age1 == doctest::Approx(51.0 / 64.0).epsilon(1e-9));
    CHECK(peps1 == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
    CHECK(pceps1 == 0.0);

    // a filled 3x3 block: only its center has all four neighbours in error
    Image d = b;
    for (int64_t y = 2; y <= 4; ++y)
        for (int64_t x = 2; x <= 4; ++x)
            for (int64_t ch = 0; ch < 3; ++ch) d.at(y, x, ch) = 0.7;
    auto [age2, peps2, pceps2] = age_peps_pceps(a, d);
    CHECK(age2 == doctest::Approx(9.0 * 51.0 / 64.0).epsilon(1e-9));
    CHECK(peps2 == doctest::Approx(9.0 / 64.0).epsilon(1e-12));
    CHECK(pceps2 == doctest::Approx(1.0 / 64.0).epsilon(1e-12));
}

TEST_CASE("age/peps/pceps: threshold is strict and the border replicates") {
    Image a(4, 4, 3, 0.0), b(4, 4, 3, 0.0);
    // luminance difference of exactly tau must NOT count
    for (int64_t ch = 0; ch < 3; ++ch) b.at(1, 1, ch) = 20.0 / 255.0;
    auto [age, peps, pceps] = age_peps_pceps(a, b, 20.0);
    CHECK(age == doctest::Approx(20.0 / 16.0).epsilon(1e-9));
    CHECK(peps == 0.0);
    CHECK(pceps == 0.0);

    // whole image in error: replicated border means every pixel clusters
    Image c(4, 4, 3, 0.5);
    auto [age3, peps3, pceps3] = age_peps_pceps(a, c, 20.0);
    CHECK(peps3 == 1.0);
    CHECK(pceps3 == 1.0);
    CHECK(age3 == doctest::Approx(127.5).epsilon(1e-6));
}

TEST_CASE("masked_psnr: matches a double-loop oracle and rejects empty masks") {
    Rng rng = Rng::seeded(5);
    Image a = rnd_img(10, 10, rng), b = rnd_img(10, 10, rng);
    Image m(10, 10, 1);
    for (int64_t y = 0; y < 10; ++y)
        for (int64_t x = 0; x < 10; ++x) m.at(y, x, 0) = (y < 5) ? 1.0 : 0.0;

    double acc = 0.0;
    int64_t n = 0;
    for (int64_t y = 0; y < 10; ++y)
        for (int64_t x = 0; x < 10; ++x) {
            if (m.at(y, x, 0) <= 0.5) continue;
            for (int64_t ch = 0; ch < 3; ++ch) {
                const double d = a.at(y, x, ch) - b.at(y, x, ch);
                acc += d * d;
                ++n;
            }
        }
    const double want = 10.0 * std::log10(1.0 / (acc / static_cast<double>(n)));
    CHECK(masked_psnr(a, b, m) == doctest::Approx(want).epsilon(1e-9));

    CHECK(std::isinf(masked_psnr(a, a, m)));
    Image empty(10, 10, 1, 0.0);
    CHECK_THROWS_AS(masked_psnr(a, b, empty), ParamError);

    // off-mask pixels must not influence the score
    Image b2 = b;
    for (int64_t x = 0; x < 10; ++x) b2.at(9, x, 1) = 0.0;
    CHECK(masked_psnr(a, b2, m) == masked_psnr(a, b, m));
}

TEST_CASE("metrics degrade monotonically as noise grows") {
    Rng rng = Rng::seeded(6);
    Image a = rnd_img(16, 16, rng);
    double last_psnr = std::numeric_limits<double>::infinity();
    double last_mssim = 101.0, last_mse = -1.0;
    for (double amp : {0.01, 0.05, 0.15, 0.4}) {
        Image b = a;
        Rng noise = Rng::seeded(7);
        for (double& v : b.data) v = std::min(1.0, std::max(0.0, v + noise.uniform(-amp, amp)));
        const double p = psnr_metric(a, b), s = mssim_metric(a, b), m = mse_metric(a, b);
        CHECK(p < last_psnr);
        CHECK(s < last_mssim);
        CHECK(m > last_mse);
        last_psnr = p;
        last_mssim = s;
        last_mse = m;
    }
}

TEST_CASE("evaluate_pair and evaluate_corpus agree and average correctly") {
    Rng rng = Rng::seeded(8);
    Image a = rnd_img(16, 16, rng), b = rnd_img(16, 16, rng);
    Image c = rnd_img(16, 16, rng), d = rnd_img(16, 16, rng);

    MetricReport one = evaluate_corpus({{a, b}});
    CHECK(one.n_images == 1);
    CHECK(one.psnr == psnr_metric(a, b));
    CHECK(one.mssim == mssim_metric(a, b));
    CHECK(one.mse == mse_metric(a, b));

    MetricReport two = evaluate_corpus({{a, b}, {c, d}});
    CHECK(two.n_images == 2);
    CHECK(two.mse == doctest::Approx((mse_metric(a, b) + mse_metric(c, d)) / 2.0).epsilon(1e-12));
    CHECK(two.psnr ==
          doctest::Approx((psnr_metric(a, b) + psnr_metric(c, d)) / 2.0).epsilon(1e-9));
    CHECK(two.psnr_excluded == 0);

    // an identical pair yields +inf psnr which is excluded from the mean
    MetricReport three = evaluate_corpus({{a, b}, {a, a}});
    CHECK(three.n_images == 2);
    CHECK(three.psnr_excluded == 1);
    CHECK(three.psnr == doctest::Approx(psnr_metric(a, b)).epsilon(1e-9));
    CHECK(three.mse == doctest::Approx(mse_metric(a, b) / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(evaluate_corpus({}), ParamError);
}

TEST_CASE("write_metric_csv: layout, precision, and the inf sentinel") {
    Rng rng = Rng::seeded(9);
    Image a = rnd_img(16, 16, rng), b = rnd_img(16, 16, rng);
    MetricReport r1 = evaluate_pair(a, b);
    MetricReport r2 = evaluate_pair(a, a);
    MetricReport summary = evaluate_corpus({{a, b}, {a, a}});

    const std::string path = "metrics_test_out.csv";
    write_metric_csv(path, {"img_000", "img_001"}, {r1, r2}, summary);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "id,psnr,mssim,mse,age,peps,pceps");
    std::getline(in, line);
    CHECK(line.substr(0, 8) == "img_000,");
    std::getline(in, line);
    CHECK(line.substr(0, 8) == "img_001,");
    CHECK(line.find("inf") != std::string::npos); // identical pair
    std::getline(in, line);
    CHECK(line.substr(0, 5) == "mean,");
    {
        std::stringstream ss(line.substr(5));
        std::string cell;
        std::getline(ss, cell, ',');
        CHECK(std::stod(cell) == doctest::Approx(summary.psnr).epsilon(1e-9));
    }
    CHECK_FALSE(std::getline(in, line));
    in.close();
    std::remove(path.c_str());
}
