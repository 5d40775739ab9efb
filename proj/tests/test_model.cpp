#include <doctest.h>

#include <cmath>

#include "fetnet/datagen.hpp"
#include "fetnet/image.hpp"
#include "fetnet/model.hpp"

using namespace fetnet;
using ad::Var;

namespace {

Tensor rnd_image(int64_t b, int64_t h, int64_t w, uint64_t seed) {
    Rng rng = Rng::seeded(seed);
    Tensor t({b, 3, h, w});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
    return t;
}

bool all_finite(const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

Var find_param(Generator& g, const std::string& name) {
    for (auto& [n, v] : g.params())
        if (n == name) return v;
    throw std::runtime_error("param not found: " + name);
}

} // namespace

TEST_CASE("encode: five pyramid levels at scales 1, 1/2, 1/4, 1/8, 1/16") {
    Generator g(GeneratorConfig::toy(), 1);
    FeaturePyramid pyr = g.encode(ad::constant(rnd_image(1, 64, 64, 2)));
    REQUIRE(pyr.levels.size() == 5);
    const int64_t expect_hw[5] = {64, 32, 16, 8, 4};
    const auto& w = g.config().enc_widths;
    for (int i = 0; i < 5; ++i) {
        const Tensor& t = pyr.levels[static_cast<size_t>(i)].value();
        CHECK(t.dim(0) == 1);
        CHECK(t.dim(1) == w[static_cast<size_t>(i)]);
        CHECK(t.dim(2) == expect_hw[i]);
        CHECK(t.dim(3) == expect_hw[i]);
    }
}

TEST_CASE("encode: rectangular input keeps both scale chains") {
    Generator g(GeneratorConfig::toy(), 1);
    FeaturePyramid pyr = g.encode(ad::constant(rnd_image(2, 32, 64, 3)));
    CHECK(pyr.levels[4].value().dim(2) == 2);
    CHECK(pyr.levels[4].value().dim(3) == 4);
}

TEST_CASE("encode: zero image stays finite") {
    Generator g(GeneratorConfig::toy(), 4);
    FeaturePyramid pyr = g.encode(ad::constant(Tensor({1, 3, 64, 64}, 0.0)));
    for (const auto& l : pyr.levels) CHECK(all_finite(l.value()));
}

TEST_CASE("encode: rejects sizes not divisible by 16 and non-rgb input") {
    Generator g(GeneratorConfig::toy(), 1);
    CHECK_THROWS_AS(g.encode(ad::constant(Tensor({1, 3, 40, 64}))), ShapeError);
    CHECK_THROWS_AS(g.encode(ad::constant(Tensor({1, 1, 64, 64}))), ShapeError);
}

TEST_CASE("determinism: same seed gives identical parameters and outputs") {
    Generator a(GeneratorConfig::toy(), 7);
    Generator b(GeneratorConfig::toy(), 7);
    REQUIRE(a.params().size() == b.params().size());
    for (size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].first == b.params()[i].first);
        CHECK(tensors_equal(a.params()[i].second.value(), b.params()[i].second.value()));
    }
    Tensor img = rnd_image(1, 64, 64, 5);
    Generator::Out o1 = a.forward(ad::constant(img));
    Generator::Out o2 = a.forward(ad::constant(img));
    CHECK(tensors_equal(o1.image.value(), o2.image.value()));
    CHECK(tensors_equal(o1.ct.value(), o2.ct.value()));

    Generator c(GeneratorConfig::toy(), 8);
    bool all_same = true;
    for (size_t i = 0; i < a.params().size() && all_same; ++i)
        all_same = tensors_equal(a.params()[i].second.value(), c.params()[i].second.value());
    CHECK(!all_same);
}

TEST_CASE("segment: confidence map at 1/4 scale with values in [0,1]") {
    Generator g(GeneratorConfig::toy(), 9);
    FeaturePyramid pyr = g.encode(ad::constant(rnd_image(1, 64, 64, 10)));
    Var ct = g.segment(pyr);
    const Tensor& t = ct.value();
    REQUIRE(t.shape() == std::vector<int64_t>{1, 1, 16, 16});
    for (int64_t i = 0; i < t.numel(); ++i) {
        CHECK(t[i] >= 0.0);
        CHECK(t[i] <= 1.0);
    }
    // resized to full scale it stays bounded
    Tensor up = ad::resize_bilinear(ct, 64, 64).value();
    for (int64_t i = 0; i < up.numel(); ++i) {
        CHECK(up[i] >= 0.0);
        CHECK(up[i] <= 1.0);
    }
}

TEST_CASE("forward: output matches input shape, range [0,1], trace complete") {
    Generator g(GeneratorConfig::toy(), 11);
    ForwardTrace trace;
    Generator::Out out = g.forward(ad::constant(rnd_image(2, 64, 64, 12)), &trace);
    REQUIRE(out.image.value().shape() == std::vector<int64_t>{2, 3, 64, 64});
    const Tensor& img = out.image.value();
    for (int64_t i = 0; i < img.numel(); ++i) {
        CHECK(img[i] >= 0.0);
        CHECK(img[i] <= 1.0);
    }
    CHECK(out.ct.value().shape() == std::vector<int64_t>{2, 1, 16, 16});

    // full preset places a block on every layer
    CHECK(trace.fem_io.size() == 5);
    CHECK(trace.skips.size() == 5);
    REQUIRE(trace.attention.defined());
    REQUIRE(trace.attention.shape() == std::vector<int64_t>{2, 256, 16, 16});
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t q = 0; q < 256; ++q) {
            double s = 0;
            for (int64_t k = 0; k < 256; ++k)
                s += trace.attention.at(b, q, k / 16, k % 16);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("forward: plain-skip configuration runs and differs from the full model") {
    GeneratorConfig plain = GeneratorConfig::toy();
    plain.fet = {FetKind::none, FetKind::none, FetKind::none, FetKind::none, FetKind::none};
    plain.use_fem = plain.use_ftm = plain.use_similarity = false;
    Generator gp(plain, 13);
    Generator gf(GeneratorConfig::toy(), 13);

    ImageTriplet t = generate_triplet([] {
        SceneSpec s;
        s.seed = 7;
        s.n_texts = 2;
        return s;
    }());
    Var img = ad::constant(to_chw(t.input));
    Tensor a = gp.forward(img).image.value();
    Tensor b = gf.forward(img).image.value();
    REQUIRE(a.same_shape(b));
    double diff = 0;
    for (int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("forward: zero confidence map makes erasing the identity") {
    GeneratorConfig cfg = GeneratorConfig::toy();
    cfg.hard_mask = true; // threshold the map so we can force it to exact zeros
    Generator g(cfg, 14);
    find_param(g, "seg.head.b").value().fill(-12.0); // sigmoid(-12) ~ 6e-6 < 0.5
    ForwardTrace trace;
    g.forward(ad::constant(rnd_image(1, 64, 64, 15)), &trace);
    for (int64_t i = 0; i < trace.ct.numel(); ++i) CHECK(trace.ct[i] < 0.5);
    REQUIRE(trace.fem_io.size() == 5);
    for (const auto& io : trace.fem_io) CHECK(tensors_equal(io.in, io.out));
}

TEST_CASE("forward: attention position ceiling is enforced") {
    GeneratorConfig cfg = GeneratorConfig::toy();
    cfg.max_attention_positions = 100; // 16x16 = 256 positions at 64x64 input
    Generator g(cfg, 16);
    CHECK_THROWS_AS(g.forward(ad::constant(rnd_image(1, 64, 64, 17))), ParamError);
}

TEST_CASE("threshold_mask: saturated maps and the brute-force count oracle") {
    Tensor hi({1, 1, 4, 4}, 0.9), lo({1, 1, 4, 4}, 0.1);
    Tensor mh = threshold_mask(hi, 4, 4, 0.5);
    Tensor ml = threshold_mask(lo, 4, 4, 0.5);
    for (int64_t i = 0; i < 16; ++i) {
        CHECK(mh[i] == 1.0);
        CHECK(ml[i] == 0.0);
    }
    Rng rng = Rng::seeded(18);
    Tensor mixed({1, 1, 6, 6});
    for (int64_t i = 0; i < 36; ++i) mixed[i] = rng.uniform(0.0, 1.0);
    Tensor m = threshold_mask(mixed, 6, 6, 0.5);
    int64_t want = 0, got = 0;
    for (int64_t i = 0; i < 36; ++i) {
        want += mixed[i] > 0.5 ? 1 : 0;
        got += m[i] == 1.0 ? 1 : 0;
        CHECK((m[i] == 0.0 || m[i] == 1.0));
    }
    CHECK(got == want);
    // upsampling happens before thresholding
    CHECK(threshold_mask(mixed, 12, 12, 0.5).shape() == std::vector<int64_t>{1, 1, 12, 12});
    CHECK_THROWS_AS(threshold_mask(mixed, 6, 6, 0.0), ParamError);
    CHECK_THROWS_AS(threshold_mask(mixed, 6, 6, 1.0), ParamError);
}

TEST_CASE("config: json round trip preserves every field") {
    GeneratorConfig c = GeneratorConfig::full();
    c.fet = {FetKind::none, FetKind::texture, FetKind::structure, FetKind::none, FetKind::texture};
    c.use_fem = false;
    c.hard_mask = true;
    c.masked_attention = true;
    c.max_attention_positions = 1234;
    GeneratorConfig d = config_from_json(config_to_json(c));
    CHECK(d.enc_widths == c.enc_widths);
    CHECK(d.dec_widths == c.dec_widths);
    CHECK(d.aggregate_width == c.aggregate_width);
    CHECK(d.se_reduction == c.se_reduction);
    CHECK(d.fet == c.fet);
    CHECK(d.use_fem == c.use_fem);
    CHECK(d.use_ftm == c.use_ftm);
    CHECK(d.use_similarity == c.use_similarity);
    CHECK(d.hard_mask == c.hard_mask);
    CHECK(d.masked_attention == c.masked_attention);
    CHECK(d.max_attention_positions == c.max_attention_positions);
}

TEST_CASE("config: invalid schedules are rejected") {
    GeneratorConfig c = GeneratorConfig::toy();
    c.enc_widths = {8, 16, 32};
    CHECK_THROWS_AS(Generator(c, 1), ParamError);
    GeneratorConfig c2 = GeneratorConfig::toy();
    c2.dec_widths[2] = 0;
    CHECK_THROWS_AS(Generator(c2, 1), ParamError);
}

TEST_CASE("param registry: names unique, count consistent, presets differ") {
    Generator toy(GeneratorConfig::toy(), 20);
    int64_t n = 0;
    std::vector<std::string> names;
    for (const auto& [name, v] : toy.params()) {
        names.push_back(name);
        n += v.value().numel();
        CHECK(v.requires_grad());
    }
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
    CHECK(n == toy.param_count());
    CHECK(toy.param_count() > 0);
    Generator full(GeneratorConfig::full(), 20);
    CHECK(full.param_count() > toy.param_count());
}

TEST_CASE("forward: gradients reach sampled parameters (finite differences)") {
    GeneratorConfig cfg;
    cfg.enc_widths = {2, 2, 2, 2, 2};
    cfg.dec_widths = {2, 2, 2, 2, 2};
    cfg.aggregate_width = 3;
    cfg.se_reduction = 2;
    Generator g(cfg, 21);
    Tensor img = rnd_image(1, 16, 16, 22);

    auto loss_value = [&]() {
        Generator::Out out = g.forward(ad::constant(img));
        return ad::s_add(ad::sum(out.image), ad::sum(out.ct));
    };

    Var loss = loss_value();
    ad::backward(loss);

    const char* picks[6] = {"enc1.c1.w", "seg.head.w", "sam.w_f",
                            "cam4.w1",   "dec.in.w",   "dec.head.b"};
    const double h = 1e-5;
    for (const char* name : picks) {
        Var p = find_param(g, name);
        REQUIRE(p.has_grad());
        const int64_t idxs[3] = {0, p.value().numel() / 2, p.value().numel() - 1};
        for (int64_t idx : idxs) {
            const double keep = p.value()[idx];
            p.value()[idx] = keep + h;
            const double up = ad::item(loss_value());
            p.value()[idx] = keep - h;
            const double dn = ad::item(loss_value());
            p.value()[idx] = keep;
            const double fd = (up - dn) / (2 * h);
            const double an = p.grad()[idx];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1.0});
            INFO(name << "[" << idx << "] analytic " << an << " fd " << fd);
            CHECK(rel < 1e-4);
        }
    }
}
