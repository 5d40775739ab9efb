#include "fetnet/datagen.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace fetnet {

namespace fs = std::filesystem;

std::string to_string(BackgroundKind k) {
    switch (k) {
    case BackgroundKind::gradient: return "gradient";
    case BackgroundKind::noise_blobs: return "noise-blobs";
    case BackgroundKind::geometric: return "geometric";
    }
    return "gradient";
}

BackgroundKind background_kind_from_string(const std::string& s) {
    if (s == "gradient") return BackgroundKind::gradient;
    if (s == "noise-blobs") return BackgroundKind::noise_blobs;
    if (s == "geometric") return BackgroundKind::geometric;
    throw ParamError("unknown background kind: " + s);
}

namespace {

// Backgrounds keep every channel inside [kBgLo, kBgHi] so glyph colors
// pushed to the extremes always clear the mask-derivation threshold.
constexpr double kBgLo = 0.18;
constexpr double kBgHi = 0.82;

void render_gradient(Image& img, Rng& rng) {
    double c0[3], c1[3];
    for (int i = 0; i < 3; ++i) c0[i] = rng.uniform(kBgLo, kBgHi);
    for (int i = 0; i < 3; ++i) c1[i] = rng.uniform(kBgLo, kBgHi);
    const double phi = rng.uniform(0.0, 6.283185307179586);
    const double dx = std::cos(phi), dy = std::sin(phi);
    const double pmin = std::min({0.0, dx * (img.w - 1.0), dy * (img.h - 1.0),
                                  dx * (img.w - 1.0) + dy * (img.h - 1.0)});
    const double pmax = std::max({0.0, dx * (img.w - 1.0), dy * (img.h - 1.0),
                                  dx * (img.w - 1.0) + dy * (img.h - 1.0)});
    const double span = std::max(pmax - pmin, 1e-9);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const double t = (dx * x + dy * y - pmin) / span;
            for (int64_t ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = c0[ch] + (c1[ch] - c0[ch]) * t;
        }
}

void render_noise_blobs(Image& img, Rng& rng) {
    double base[3];
    for (int i = 0; i < 3; ++i) base[i] = rng.uniform(0.25, 0.75);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = base[ch];
    const double scale = static_cast<double>(std::min(img.h, img.w));
    const int n = 6 + static_cast<int>(rng.randint(5));
    for (int b = 0; b < n; ++b) {
        const double cx = rng.uniform(0.0, static_cast<double>(img.w));
        const double cy = rng.uniform(0.0, static_cast<double>(img.h));
        const double sigma = rng.uniform(0.08, 0.25) * scale;
        const double wgt = rng.uniform(0.3, 0.8);
        double col[3];
        for (int i = 0; i < 3; ++i) col[i] = rng.uniform(kBgLo, kBgHi);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                const double a = wgt * std::exp(-d2 * inv2s2);
                for (int64_t ch = 0; ch < 3; ++ch)
                    img.at(y, x, ch) += a * (col[ch] - img.at(y, x, ch));
            }
    }
}

void render_geometric(Image& img, Rng& rng) {
    double base[3];
    for (int i = 0; i < 3; ++i) base[i] = rng.uniform(kBgLo, kBgHi);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x)
            for (int64_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = base[ch];
    const double scale = static_cast<double>(std::min(img.h, img.w));
    const int n = 4 + static_cast<int>(rng.randint(5));
    for (int s = 0; s < n; ++s) {
        double col[3];
        for (int i = 0; i < 3; ++i) col[i] = rng.uniform(kBgLo, kBgHi);
        if (rng.bernoulli(0.5)) {
            double x0 = rng.uniform(0.0, static_cast<double>(img.w));
            double x1 = rng.uniform(0.0, static_cast<double>(img.w));
            double y0 = rng.uniform(0.0, static_cast<double>(img.h));
            double y1 = rng.uniform(0.0, static_cast<double>(img.h));
            if (x0 > x1) std::swap(x0, x1);
            if (y0 > y1) std::swap(y0, y1);
            for (int64_t y = static_cast<int64_t>(y0); y < static_cast<int64_t>(y1); ++y)
                for (int64_t x = static_cast<int64_t>(x0); x < static_cast<int64_t>(x1); ++x)
                    for (int64_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
        } else {
            const double cx = rng.uniform(0.0, static_cast<double>(img.w));
            const double cy = rng.uniform(0.0, static_cast<double>(img.h));
            const double r = rng.uniform(0.08, 0.30) * scale;
            const double r2 = r * r;
            for (int64_t y = 0; y < img.h; ++y)
                for (int64_t x = 0; x < img.w; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2)
                        for (int64_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = col[ch];
        }
    }
}

double rng_color_dark(Rng& r) { return r.uniform(0.0, 0.03); }
double rng_color_light(Rng& r) { return r.uniform(0.97, 1.0); }

struct BarRect {
    double x0, y0, x1, y1; // fractions of the glyph box
};

// Blocky pseudo-characters built from thick axis-aligned bars. tx/ty are the
// bar thickness as a fraction of the box width/height.
std::vector<BarRect> glyph_pattern(int id, double tx, double ty) {
    const double vx0 = 0.5 - tx / 2, vx1 = 0.5 + tx / 2;
    const double hy0 = 0.5 - ty / 2, hy1 = 0.5 + ty / 2;
    switch (id % 8) {
    case 0: return {{0, 0, 1, 1}};                                               // block
    case 1: return {{0, 0, tx, 1}, {0, 1 - ty, 1, 1}};                           // L
    case 2: return {{0, 0, 1, ty}, {vx0, 0, vx1, 1}};                            // T
    case 3: return {{0, 0, tx, 1}, {1 - tx, 0, 1, 1}, {0, 1 - ty, 1, 1}};        // U
    case 4: return {{0, 0, tx, 1}, {1 - tx, 0, 1, 1}, {0, hy0, 1, hy1}};         // H
    case 5: return {{vx0, 0, vx1, 1}, {0, hy0, 1, hy1}};                         // +
    case 6: return {{0, 0, tx, 1}, {1 - tx, 0, 1, 1}, {0, 0, 1, ty}, {0, 1 - ty, 1, 1}}; // O
    default: return {{0, 0, 1, ty}, {1 - tx, 0, 1, 1}};                          // 7
    }
}

struct GlyphRun {
    double cx, cy;      // center, canvas px
    double width, height; // box before rotation
    double cos_t, sin_t;
    double char_w, gap;
    int n_chars;
    std::vector<std::vector<BarRect>> chars;
};

bool inside_run(const GlyphRun& r, double px, double py) {
    const double ox = px - r.cx, oy = py - r.cy;
    const double u = r.cos_t * ox + r.sin_t * oy;   // un-rotate
    const double v = -r.sin_t * ox + r.cos_t * oy;
    if (std::abs(v) > r.height / 2 || std::abs(u) > r.width / 2) return false;
    const double t = (v + r.height / 2) / r.height;
    double left = -r.width / 2;
    for (int i = 0; i < r.n_chars; ++i) {
        if (u >= left && u <= left + r.char_w) {
            const double s = (u - left) / r.char_w;
            for (const BarRect& b : r.chars[static_cast<size_t>(i)])
                if (s >= b.x0 && s <= b.x1 && t >= b.y0 && t <= b.y1) return true;
            return false;
        }
        left += r.char_w + r.gap;
    }
    return false;
}

} // namespace

ImageTriplet generate_triplet(const SceneSpec& spec) {
    if (spec.height < 16 || spec.width < 16)
        throw ParamError("generate_triplet: canvas must be at least 16x16");
    if (spec.n_texts < 0) throw ParamError("generate_triplet: n_texts must be >= 0");
    const GlyphParams& gp = spec.glyph;
    if (gp.height_rel_min <= 0 || gp.height_rel_max < gp.height_rel_min ||
        gp.stroke_rel_min <= 0 || gp.stroke_rel_max < gp.stroke_rel_min ||
        gp.height_rel_max > 1.0 || gp.rotation_max_deg < 0)
        throw ParamError("generate_triplet: degenerate glyph params");

    Rng root = Rng::seeded(spec.seed);
    Rng rbg = root.fork(1);

    ImageTriplet t;
    t.gt = Image(spec.height, spec.width, 3);
    switch (spec.background_kind) {
    case BackgroundKind::gradient: render_gradient(t.gt, rbg); break;
    case BackgroundKind::noise_blobs: render_noise_blobs(t.gt, rbg); break;
    case BackgroundKind::geometric: render_geometric(t.gt, rbg); break;
    }
    t.input = t.gt;
    t.mask = Image(spec.height, spec.width, 1);

    const double minside = static_cast<double>(std::min(spec.height, spec.width));
    Rng rtexts = root.fork(2);
    for (int ti = 0; ti < spec.n_texts; ++ti) {
        Rng rt = rtexts.fork(static_cast<uint64_t>(ti));

        double hg = rt.uniform(gp.height_rel_min, gp.height_rel_max) * minside;
        const double theta = rt.uniform(-gp.rotation_max_deg, gp.rotation_max_deg) *
                             (3.141592653589793 / 180.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        int n_chars = 1 + static_cast<int>(rt.randint(3));

        // shrink until the rotated run fits with a 1px margin
        double char_w = 0, gap = 0, run_w = 0, rot_w = 0, rot_h = 0;
        bool fits = false;
        for (int attempt = 0; attempt < 40 && !fits; ++attempt) {
            char_w = 0.72 * hg;
            gap = 0.18 * hg;
            run_w = n_chars * char_w + (n_chars - 1) * gap;
            rot_w = run_w * std::abs(ct) + hg * std::abs(st);
            rot_h = run_w * std::abs(st) + hg * std::abs(ct);
            if (rot_w <= spec.width - 2 && rot_h <= spec.height - 2) {
                fits = true;
            } else if (n_chars > 1) {
                --n_chars;
            } else {
                hg *= 0.85;
            }
        }
        if (!fits || hg < 6.0)
            throw ParamError("generate_triplet: glyphs cannot fit the canvas");

        GlyphRun run;
        run.width = run_w;
        run.height = hg;
        run.cos_t = ct;
        run.sin_t = st;
        run.char_w = char_w;
        run.gap = gap;
        run.n_chars = n_chars;
        run.cx = rt.uniform(rot_w / 2 + 1, spec.width - 1 - rot_w / 2);
        run.cy = rt.uniform(rot_h / 2 + 1, spec.height - 1 - rot_h / 2);
        const double stroke_px =
            rt.uniform(gp.stroke_rel_min, gp.stroke_rel_max) * std::min(char_w, hg);
        for (int i = 0; i < n_chars; ++i) {
            const int pattern = static_cast<int>(rt.randint(8));
            run.chars.push_back(glyph_pattern(pattern, stroke_px / char_w, stroke_px / hg));
        }

        // pick a color at the far end of the range from the local mean
        const int64_t bx0 = std::max<int64_t>(0, static_cast<int64_t>(run.cx - rot_w / 2) - 1);
        const int64_t bx1 = std::min<int64_t>(spec.width, static_cast<int64_t>(run.cx + rot_w / 2) + 2);
        const int64_t by0 = std::max<int64_t>(0, static_cast<int64_t>(run.cy - rot_h / 2) - 1);
        const int64_t by1 = std::min<int64_t>(spec.height, static_cast<int64_t>(run.cy + rot_h / 2) + 2);
        double boxmean = 0.0;
        int64_t cnt = 0;
        for (int64_t y = by0; y < by1; ++y)
            for (int64_t x = bx0; x < bx1; ++x, ++cnt)
                boxmean += (t.gt.at(y, x, 0) + t.gt.at(y, x, 1) + t.gt.at(y, x, 2)) / 3.0;
        boxmean /= std::max<int64_t>(cnt, 1);
        double color[3];
        if (boxmean > 0.5)
            for (int i = 0; i < 3; ++i) color[i] = rng_color_dark(rt);
        else
            for (int i = 0; i < 3; ++i) color[i] = rng_color_light(rt);

        // hard alpha: a pixel is either fully glyph or fully background
        for (int64_t y = by0; y < by1; ++y)
            for (int64_t x = bx0; x < bx1; ++x)
                if (inside_run(run, x + 0.5, y + 0.5)) {
                    for (int64_t ch = 0; ch < 3; ++ch) t.input.at(y, x, ch) = color[ch];
                    t.mask.at(y, x, 0) = 1.0;
                }
    }
    return t;
}

Image derive_mask(const Image& input, const Image& gt, double tau, int dilate_iters) {
    if (!input.same_shape(gt)) throw ParamError("derive_mask: input/gt shape mismatch");
    if (dilate_iters < 0) throw ParamError("derive_mask: dilate_iters must be >= 0");
    Image mask(input.h, input.w, 1);
    for (int64_t y = 0; y < input.h; ++y)
        for (int64_t x = 0; x < input.w; ++x) {
            double d = 0.0;
            for (int64_t ch = 0; ch < input.c; ++ch)
                d += std::abs(input.at(y, x, ch) - gt.at(y, x, ch));
            d /= static_cast<double>(input.c);
            mask.at(y, x, 0) = d > tau ? 1.0 : 0.0;
        }
    for (int it = 0; it < dilate_iters; ++it) {
        Image next(mask.h, mask.w, 1);
        for (int64_t y = 0; y < mask.h; ++y)
            for (int64_t x = 0; x < mask.w; ++x) {
                double v = 0.0;
                for (int64_t dy = -1; dy <= 1 && v == 0.0; ++dy)
                    for (int64_t dx = -1; dx <= 1; ++dx) {
                        const int64_t yy = y + dy, xx = x + dx;
                        if (yy >= 0 && yy < mask.h && xx >= 0 && xx < mask.w &&
                            mask.at(yy, xx, 0) > 0.5) {
                            v = 1.0;
                            break;
                        }
                    }
                next.at(y, x, 0) = v;
            }
        mask = std::move(next);
    }
    return mask;
}

Image apply_geometric(const Image& img, bool hflip, double angle_deg) {
    if (!hflip && angle_deg == 0.0) return img;

    const double theta = angle_deg * (3.141592653589793 / 180.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cx = static_cast<double>(img.w) / 2.0;
    const double cy = static_cast<double>(img.h) / 2.0;

    auto reflect = [](int64_t i, int64_t n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -1 - i;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };

    Image out(img.h, img.w, img.c);
    for (int64_t y = 0; y < img.h; ++y)
        for (int64_t x = 0; x < img.w; ++x) {
            const double ox = x + 0.5 - cx, oy = y + 0.5 - cy;
            // inverse of (flip, then rotate): un-rotate, then un-flip
            double su = ct * ox + st * oy;
            const double sv = -st * ox + ct * oy;
            if (hflip) su = -su;
            const double sx = su + cx - 0.5;
            const double sy = sv + cy - 0.5;
            const int64_t x0 = static_cast<int64_t>(std::floor(sx));
            const int64_t y0 = static_cast<int64_t>(std::floor(sy));
            const double fx = sx - static_cast<double>(x0);
            const double fy = sy - static_cast<double>(y0);
            const int64_t xa = reflect(x0, img.w), xb = reflect(x0 + 1, img.w);
            const int64_t ya = reflect(y0, img.h), yb = reflect(y0 + 1, img.h);
            for (int64_t ch = 0; ch < img.c; ++ch) {
                const double top = img.at(ya, xa, ch) * (1 - fx) + img.at(ya, xb, ch) * fx;
                const double bot = img.at(yb, xa, ch) * (1 - fx) + img.at(yb, xb, ch) * fx;
                out.at(y, x, ch) = top * (1 - fy) + bot * fy;
            }
        }
    return out;
}

ImageTriplet augment(const ImageTriplet& t, uint64_t seed) {
    Rng rng = Rng::seeded(seed);
    const bool flip = rng.bernoulli(0.5);
    // 0.5-degree steps over [-10, +10]; step 20 is an exact identity
    const int step = static_cast<int>(rng.randint(41));
    const double angle = (step - 20) * 0.5;

    ImageTriplet out;
    out.id = t.id;
    out.input = apply_geometric(t.input, flip, angle);
    out.gt = apply_geometric(t.gt, flip, angle);
    out.mask = apply_geometric(t.mask, flip, angle);
    for (double& v : out.mask.data) v = v > 0.5 ? 1.0 : 0.0;
    return out;
}

// ---------------------------------------------------------------- datasets

namespace {

std::vector<std::string> list_png_stems(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw IoError("missing directory " + dir.string());
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png")
            out.push_back(e.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
}

void check_matched(const std::vector<std::string>& a, const std::vector<std::string>& b,
                   const std::string& da, const std::string& db) {
    std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    for (const auto& x : a)
        if (!sb.count(x)) throw IoError("unmatched file: " + da + "/" + x + ".png has no " + db +
                                        " counterpart");
    for (const auto& x : b)
        if (!sa.count(x)) throw IoError("unmatched file: " + db + "/" + x + ".png has no " + da +
                                        " counterpart");
}

} // namespace

DatasetStream::DatasetStream(std::string root) : root_(std::move(root)) {
    const fs::path base(root_);
    auto inputs = list_png_stems(base / "input");
    auto gts = list_png_stems(base / "gt");
    check_matched(inputs, gts, "input", "gt");
    has_mask_ = fs::is_directory(base / "mask");
    if (has_mask_) {
        auto masks = list_png_stems(base / "mask");
        check_matched(inputs, masks, "input", "mask");
    }
    ids_ = std::move(inputs);
}

ImageTriplet DatasetStream::at(int64_t i) const {
    if (i < 0 || i >= size()) throw ParamError("DatasetStream: index out of range");
    const fs::path base(root_);
    const std::string& id = ids_[static_cast<size_t>(i)];
    ImageTriplet t;
    t.id = id;
    t.input = read_png((base / "input" / (id + ".png")).string());
    t.gt = read_png((base / "gt" / (id + ".png")).string());
    if (!t.input.same_shape(t.gt))
        throw IoError("triplet " + id + ": input and gt sizes differ");
    if (has_mask_) {
        Image m = read_png((base / "mask" / (id + ".png")).string());
        if (m.c != 1) m = to_gray(m);
        for (double& v : m.data) v = v > 0.5 ? 1.0 : 0.0;
        if (m.h != t.input.h || m.w != t.input.w)
            throw IoError("triplet " + id + ": mask size differs");
        t.mask = std::move(m);
    } else {
        t.mask = derive_mask(t.input, t.gt);
    }
    return t;
}

bool DatasetStream::next(ImageTriplet& out) {
    if (pos_ >= size()) return false;
    out = at(pos_++);
    return true;
}

DatasetStream load_dataset(const std::string& dir) { return DatasetStream(dir); }

std::vector<std::string> save_dataset(const std::string& dir,
                                      const std::vector<SceneSpec>& specs) {
    const fs::path base(dir);
    fs::create_directories(base / "input");
    fs::create_directories(base / "gt");
    fs::create_directories(base / "mask");

    nlohmann::json manifest;
    manifest["items"] = nlohmann::json::array();
    std::vector<std::string> ids;
    char buf[16];
    for (size_t i = 0; i < specs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%06zu", i);
        const std::string id(buf);
        ImageTriplet t = generate_triplet(specs[i]);
        write_png((base / "input" / (id + ".png")).string(), t.input);
        write_png((base / "gt" / (id + ".png")).string(), t.gt);
        write_png((base / "mask" / (id + ".png")).string(), t.mask);
        const SceneSpec& s = specs[i];
        manifest["items"].push_back({{"id", id},
                                     {"seed", s.seed},
                                     {"height", s.height},
                                     {"width", s.width},
                                     {"n_texts", s.n_texts},
                                     {"background", to_string(s.background_kind)},
                                     {"glyph",
                                      {{"height_rel_min", s.glyph.height_rel_min},
                                       {"height_rel_max", s.glyph.height_rel_max},
                                       {"stroke_rel_min", s.glyph.stroke_rel_min},
                                       {"stroke_rel_max", s.glyph.stroke_rel_max},
                                       {"rotation_max_deg", s.glyph.rotation_max_deg}}}});
        ids.push_back(id);
    }
    std::ofstream mf(base / "manifest.json");
    if (!mf) throw IoError("cannot write " + (base / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
    return ids;
}

std::vector<SceneSpec> corpus_specs(int n, uint64_t seed0, int64_t height, int64_t width,
                                    int n_texts) {
    std::vector<SceneSpec> specs;
    const BackgroundKind kinds[3] = {BackgroundKind::gradient, BackgroundKind::noise_blobs,
                                     BackgroundKind::geometric};
    for (int i = 0; i < n; ++i) {
        SceneSpec s;
        s.seed = seed0 + static_cast<uint64_t>(i);
        s.height = height;
        s.width = width;
        s.n_texts = n_texts;
        s.background_kind = kinds[i % 3];
        specs.push_back(s);
    }
    return specs;
}

} // namespace fetnet
