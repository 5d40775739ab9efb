#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "fetnet/datagen.hpp"
#include "fetnet/image.hpp"

using namespace fetnet;
namespace fs = std::filesystem;

namespace {

double mask_count(const Image& m) {
    double c = 0;
    for (double v : m.data) c += v > 0.5 ? 1 : 0;
    return c;
}

double mask_iou(const Image& a, const Image& b) {
    REQUIRE(a.same_shape(b));
    double inter = 0, uni = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] > 0.5, y = b.data[i] > 0.5;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni > 0 ? inter / uni : 1.0;
}

bool images_equal(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data == b.data;
}

SceneSpec spec_for(uint64_t seed, int n_texts, BackgroundKind k = BackgroundKind::gradient) {
    SceneSpec s;
    s.seed = seed;
    s.n_texts = n_texts;
    s.background_kind = k;
    return s;
}

} // namespace

TEST_CASE("generate_triplet: no-text case gives identical planes and empty mask") {
    ImageTriplet t = generate_triplet(spec_for(7, 0));
    CHECK(images_equal(t.input, t.gt));
    CHECK(mask_count(t.mask) == 0);
}

TEST_CASE("generate_triplet: equal specs are bit-identical") {
    ImageTriplet a = generate_triplet(spec_for(7, 2));
    ImageTriplet b = generate_triplet(spec_for(7, 2));
    CHECK(images_equal(a.input, b.input));
    CHECK(images_equal(a.gt, b.gt));
    CHECK(images_equal(a.mask, b.mask));
}

TEST_CASE("generate_triplet: text actually lands and differs from the background") {
    ImageTriplet t = generate_triplet(spec_for(7, 2));
    const double n = mask_count(t.mask);
    CHECK(n > 0);
    double diff = 0;
    for (int64_t y = 0; y < t.input.h; ++y)
        for (int64_t x = 0; x < t.input.w; ++x)
            if (t.mask.at(y, x, 0) > 0.5)
                for (int64_t ch = 0; ch < 3; ++ch)
                    diff += std::abs(t.input.at(y, x, ch) - t.gt.at(y, x, ch));
    diff /= n * 3;
    CHECK(diff > 0.05);
}

TEST_CASE("generate_triplet: planes share shape, mask is exactly binary") {
    for (auto k : {BackgroundKind::gradient, BackgroundKind::noise_blobs, BackgroundKind::geometric}) {
        ImageTriplet t = generate_triplet(spec_for(11, 2, k));
        CHECK(t.input.h == t.gt.h);
        CHECK(t.input.w == t.gt.w);
        CHECK(t.mask.h == t.input.h);
        CHECK(t.mask.w == t.input.w);
        CHECK(t.mask.c == 1);
        for (double v : t.mask.data) CHECK((v == 0.0 || v == 1.0));
    }
}

TEST_CASE("generate_triplet: input equals gt exactly off the mask") {
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        ImageTriplet t = generate_triplet(
            spec_for(seed, 2, static_cast<BackgroundKind>(seed % 3)));
        double worst = 0;
        for (int64_t y = 0; y < t.input.h; ++y)
            for (int64_t x = 0; x < t.input.w; ++x)
                if (t.mask.at(y, x, 0) < 0.5)
                    for (int64_t ch = 0; ch < 3; ++ch)
                        worst = std::max(worst,
                                         std::abs(t.input.at(y, x, ch) - t.gt.at(y, x, ch)));
        CHECK(worst == 0.0); // hard-alpha compositing: stronger than the 1/255 contract
    }
}

TEST_CASE("generate_triplet: parameter validation") {
    CHECK_THROWS_AS(generate_triplet(spec_for(1, -1)), ParamError);
    SceneSpec tiny = spec_for(1, 1);
    tiny.height = 8;
    CHECK_THROWS_AS(generate_triplet(tiny), ParamError);
    SceneSpec bad = spec_for(1, 1);
    bad.glyph.stroke_rel_min = 0.5;
    bad.glyph.stroke_rel_max = 0.2; // inverted range
    CHECK_THROWS_AS(generate_triplet(bad), ParamError);
    SceneSpec neg = spec_for(1, 1);
    neg.glyph.height_rel_min = -0.1;
    CHECK_THROWS_AS(generate_triplet(neg), ParamError);
}

TEST_CASE("derive_mask: identical images give an empty mask") {
    ImageTriplet t = generate_triplet(spec_for(3, 0));
    Image m = derive_mask(t.input, t.gt);
    CHECK(mask_count(m) == 0);
}

TEST_CASE("derive_mask: single differing pixel dilates to a 3x3 block") {
    Image a(9, 9, 3, 0.2), b(9, 9, 3, 0.2);
    for (int64_t ch = 0; ch < 3; ++ch) a.at(4, 4, ch) += 0.5;
    Image m = derive_mask(a, b, 25.0 / 255.0, 1);
    for (int64_t y = 0; y < 9; ++y)
        for (int64_t x = 0; x < 9; ++x) {
            const bool in_block = std::abs(y - 4) <= 1 && std::abs(x - 4) <= 1;
            CHECK(m.at(y, x, 0) == (in_block ? 1.0 : 0.0));
        }
}

TEST_CASE("derive_mask: raising tau never adds pixels (pre-dilation)") {
    ImageTriplet t = generate_triplet(spec_for(9, 2, BackgroundKind::noise_blobs));
    Image lo = derive_mask(t.input, t.gt, 10.0 / 255.0, 0);
    Image hi = derive_mask(t.input, t.gt, 60.0 / 255.0, 0);
    for (size_t i = 0; i < lo.data.size(); ++i)
        if (hi.data[i] > 0.5) CHECK(lo.data[i] > 0.5);
}

TEST_CASE("derive_mask: shape mismatch is rejected") {
    Image a(8, 8, 3), b(8, 10, 3);
    CHECK_THROWS_AS(derive_mask(a, b), ParamError);
}

TEST_CASE("derive_mask agrees with the generator mask at IoU >= 0.8 (50 seeds)") {
    const BackgroundKind kinds[3] = {BackgroundKind::gradient, BackgroundKind::noise_blobs,
                                     BackgroundKind::geometric};
    double worst = 1.0;
    for (uint64_t s = 1; s <= 50; ++s) {
        ImageTriplet t = generate_triplet(spec_for(s, 2, kinds[s % 3]));
        Image d = derive_mask(t.input, t.gt);
        worst = std::min(worst, mask_iou(d, t.mask));
    }
    CHECK(worst >= 0.8);
}

TEST_CASE("apply_geometric: identity transform is an exact copy") {
    ImageTriplet t = generate_triplet(spec_for(4, 2));
    CHECK(images_equal(apply_geometric(t.input, false, 0.0), t.input));
}

TEST_CASE("apply_geometric: horizontal flip reverses columns and self-inverts") {
    ImageTriplet t = generate_triplet(spec_for(4, 2));
    Image f = apply_geometric(t.mask, true, 0.0);
    for (int64_t y = 0; y < f.h; ++y)
        for (int64_t x = 0; x < f.w; ++x)
            CHECK(f.at(y, x, 0) == t.mask.at(y, f.w - 1 - x, 0));
    CHECK(images_equal(apply_geometric(f, true, 0.0), t.mask));
}

TEST_CASE("augment: some seed produces the exact identity") {
    ImageTriplet t = generate_triplet(spec_for(5, 2));
    bool found = false;
    for (uint64_t s = 0; s < 600 && !found; ++s) {
        ImageTriplet a = augment(t, s);
        if (images_equal(a.input, t.input) && images_equal(a.gt, t.gt) &&
            images_equal(a.mask, t.mask))
            found = true;
    }
    CHECK(found);
}

TEST_CASE("augment: masks stay binary and keep their pixel count within 15%") {
    ImageTriplet t = generate_triplet(spec_for(6, 2, BackgroundKind::geometric));
    const double c0 = mask_count(t.mask);
    REQUIRE(c0 > 0);
    for (uint64_t s = 100; s < 120; ++s) {
        ImageTriplet a = augment(t, s);
        for (double v : a.mask.data) CHECK((v == 0.0 || v == 1.0));
        CHECK(std::abs(mask_count(a.mask) - c0) / c0 <= 0.15);
        CHECK(a.input.h == t.input.h);
        CHECK(a.input.w == t.input.w);
    }
}

TEST_CASE("dataset round trip: save, load, verify order and content") {
    const fs::path root = fs::temp_directory_path() / "fetnet_ds_test";
    fs::remove_all(root);
    auto specs = corpus_specs(3, 21, 64, 64);
    auto ids = save_dataset(root.string(), specs);
    REQUIRE(ids.size() == 3);
    CHECK(fs::exists(root / "manifest.json"));

    DatasetStream ds = load_dataset(root.string());
    REQUIRE(ds.size() == 3);
    CHECK(ds.ids() == ids);
    CHECK(ds.has_mask_dir());

    // loaded values match the generated ones after 8-bit quantization
    for (int64_t i = 0; i < 3; ++i) {
        ImageTriplet got = ds.at(i);
        ImageTriplet want = generate_triplet(specs[static_cast<size_t>(i)]);
        REQUIRE(got.input.same_shape(want.input));
        double worst = 0;
        for (size_t k = 0; k < got.input.data.size(); ++k)
            worst = std::max(worst,
                             std::abs(got.input.data[k] - quantize8(want.input.data[k])));
        CHECK(worst == 0.0);
        for (size_t k = 0; k < got.mask.data.size(); ++k)
            CHECK(got.mask.data[k] == want.mask.data[k]);
    }

    // sequential interface agrees with random access
    ImageTriplet t;
    int64_t n = 0;
    while (ds.next(t)) {
        CHECK(t.id == ids[static_cast<size_t>(n)]);
        ++n;
    }
    CHECK(n == 3);
    fs::remove_all(root);
}

TEST_CASE("dataset: missing mask directory falls back to derive_mask") {
    const fs::path root = fs::temp_directory_path() / "fetnet_ds_nomask";
    fs::remove_all(root);
    save_dataset(root.string(), corpus_specs(2, 33, 64, 64));
    fs::remove_all(root / "mask");

    DatasetStream ds = load_dataset(root.string());
    CHECK(!ds.has_mask_dir());
    ImageTriplet t = ds.at(0);
    Image expect = derive_mask(t.input, t.gt);
    CHECK(t.mask.data == expect.data);
    fs::remove_all(root);
}

TEST_CASE("dataset: orphan files are reported by name") {
    const fs::path root = fs::temp_directory_path() / "fetnet_ds_orphan";
    fs::remove_all(root);
    save_dataset(root.string(), corpus_specs(2, 40, 64, 64));
    fs::remove(root / "gt" / "000001.png");
    bool threw = false;
    try {
        load_dataset(root.string());
    } catch (const IoError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("000001") != std::string::npos);
    }
    CHECK(threw);
    fs::remove_all(root);
}

TEST_CASE("dataset: empty input/gt directories give an empty stream") {
    const fs::path root = fs::temp_directory_path() / "fetnet_ds_empty";
    fs::remove_all(root);
    fs::create_directories(root / "input");
    fs::create_directories(root / "gt");
    DatasetStream ds = load_dataset(root.string());
    CHECK(ds.size() == 0);
    ImageTriplet t;
    CHECK(!ds.next(t));
    fs::remove_all(root);
}

TEST_CASE("png io: round trip preserves 8-bit values and rejects bad paths") {
    const fs::path p = fs::temp_directory_path() / "fetnet_io_test.png";
    ImageTriplet t = generate_triplet(spec_for(2, 1, BackgroundKind::noise_blobs));
    write_png(p.string(), t.input);
    Image back = read_png(p.string());
    REQUIRE(back.same_shape(t.input));
    for (size_t i = 0; i < back.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(quantize8(t.input.data[i])).epsilon(1e-12));
    fs::remove(p);
    CHECK_THROWS_AS(read_png((fs::temp_directory_path() / "no_such_file.png").string()), IoError);
}
