#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fetnet/image.hpp"
#include "fetnet/rng.hpp"

namespace fetnet {

/// One training unit: text image, text-free ground truth, binary text mask
/// (1 = text). After generation, input == gt wherever mask == 0.
struct ImageTriplet {
    Image input;
    Image gt;
    Image mask; // single channel, values exactly 0 or 1
    std::string id;
};

/// Glyph geometry, expressed relative to the canvas so one set of defaults
/// works at any resolution. Bars this thick keep subtraction-derived masks
/// close to the true glyph support.
struct GlyphParams {
    double height_rel_min = 0.50; // glyph box height / min(H, W)
    double height_rel_max = 0.70;
    double stroke_rel_min = 0.44; // bar thickness / glyph box min side
    double stroke_rel_max = 0.56;
    double rotation_max_deg = 10.0; // whole-run rotation
};

enum class BackgroundKind { gradient, noise_blobs, geometric };

std::string to_string(BackgroundKind k);
BackgroundKind background_kind_from_string(const std::string& s);

/// Full recipe for one synthetic scene; equal specs give bit-identical
/// triplets.
struct SceneSpec {
    uint64_t seed = 0;
    int64_t height = 64;
    int64_t width = 64;
    int n_texts = 2;
    BackgroundKind background_kind = BackgroundKind::gradient;
    GlyphParams glyph;
};

/// Renders background + procedural stroke glyphs. gt is the background
/// alone; glyph alpha is hard-thresholded before compositing so input and gt
/// agree exactly off the mask.
ImageTriplet generate_triplet(const SceneSpec& spec);

/// Text mask from an (input, gt) pair: mean-channel gray difference > tau,
/// then `dilate_iters` rounds of 3x3 dilation.
Image derive_mask(const Image& input, const Image& gt, double tau = 25.0 / 255.0,
                  int dilate_iters = 1);

/// Identical geometric transform (horizontal flip p=0.5, rotation in
/// [-10, +10] degrees quantized to 0.5-degree steps) applied to all three
/// planes; bilinear with reflect padding; mask re-binarized at 0.5.
ImageTriplet augment(const ImageTriplet& t, uint64_t seed);

/// The transform core used by augment; exact copy when flip is off and the
/// angle is zero.
Image apply_geometric(const Image& img, bool hflip, double angle_deg);

/// Directory-backed triplet source. Scans `<root>/input` and `<root>/gt`
/// (and `<root>/mask` when present) at construction; images load lazily in
/// lexicographic id order. Missing mask directory -> derive_mask defaults.
class DatasetStream {
public:
    explicit DatasetStream(std::string root);

    int64_t size() const { return static_cast<int64_t>(ids_.size()); }
    const std::vector<std::string>& ids() const { return ids_; }
    bool has_mask_dir() const { return has_mask_; }

    ImageTriplet at(int64_t i) const;

    /// Sequential read; returns false when exhausted.
    bool next(ImageTriplet& out);
    void reset() { pos_ = 0; }

private:
    std::string root_;
    std::vector<std::string> ids_;
    bool has_mask_ = false;
    int64_t pos_ = 0;
};

DatasetStream load_dataset(const std::string& dir);

/// Generates every spec, writes `input/ gt/ mask/` PNGs plus a
/// `manifest.json` listing the recipes. Returns the generated ids.
std::vector<std::string> save_dataset(const std::string& dir,
                                      const std::vector<SceneSpec>& specs);

/// Convenience corpus builder: n triplets with seeds seed0..seed0+n-1,
/// cycling through the background kinds.
std::vector<SceneSpec> corpus_specs(int n, uint64_t seed0, int64_t height, int64_t width,
                                    int n_texts = 2);

} // namespace fetnet
