#include "fetnet/losses.hpp"

#include <cmath>

#include "fetnet/init.hpp"

namespace fetnet {

using ad::Var;

namespace {
constexpr double kLogEps = 1e-7;
}

FeatureExtractor::FeatureExtractor(uint64_t seed, std::vector<int64_t> widths) {
    if (widths.size() < 2) throw ParamError("FeatureExtractor: need at least 2 stages");
    Rng rng = Rng::seeded(seed);
    int64_t in = 3;
    for (int64_t wch : widths) {
        if (wch < 1) throw ParamError("FeatureExtractor: widths must be positive");
        Stage s;
        s.w = ad::constant(he_normal({wch, in, 3, 3}, in * 9, rng));
        s.b = ad::constant(Tensor({wch}));
        stages_.push_back(s);
        in = wch;
    }
}

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor(IdentityTag{}); }

std::vector<Var> FeatureExtractor::operator()(const Var& image) const {
    if (identity_) return {image};
    std::vector<Var> acts;
    Var x = image;
    for (const Stage& s : stages_) {
        x = ad::relu(ad::conv2d(x, s.w, s.b, 2, 1));
        acts.push_back(x);
    }
    return acts;
}

Var reconstruction_loss(const Var& out, const Var& gt, const Var& mask, double lambda_t) {
    Var diff = ad::sub(out, gt);
    Var bg = ad::l1_mean(ad::mul_map(diff, ad::one_minus(mask)));
    Var tx = ad::l1_mean(ad::mul_map(diff, mask));
    return ad::s_add(bg, ad::scale(tx, lambda_t));
}

Var compose(const Var& in, const Var& out, const Var& mask) {
    return ad::add(ad::mul_map(in, ad::one_minus(mask)), ad::mul_map(out, mask));
}

Var perceptual_loss(const Var& out, const Var& composed, const Var& gt,
                    const FeatureExtractor& fx) {
    std::vector<Var> fo = fx(out), fc = fx(composed), fg = fx(gt);
    Var acc;
    for (size_t i = 0; i < fg.size(); ++i) {
        Var term = ad::s_add(ad::l1_mean(ad::sub(fo[i], fg[i])),
                             ad::l1_mean(ad::sub(fc[i], fg[i])));
        acc = acc.defined() ? ad::s_add(acc, term) : term;
    }
    return acc;
}

Var style_loss(const Var& out, const Var& composed, const Var& gt, const FeatureExtractor& fx) {
    std::vector<Var> fo = fx(out), fc = fx(composed), fg = fx(gt);
    Var acc;
    for (size_t i = 0; i < fg.size(); ++i) {
        Var gg = ad::gram(fg[i]);
        Var term = ad::s_add(ad::l1_mean(ad::sub(ad::gram(fo[i]), gg)),
                             ad::l1_mean(ad::sub(ad::gram(fc[i]), gg)));
        acc = acc.defined() ? ad::s_add(acc, term) : term;
    }
    return acc;
}

Var dice_loss(const Var& pred, const Var& target) {
    if (!pred.value().same_shape(target.value()))
        throw ShapeError("dice_loss: shape mismatch " + pred.value().shape_str() + " vs " +
                         target.value().shape_str());
    Var inter = ad::sum(ad::mul(pred, target));
    Var denom = ad::s_add(ad::sum(ad::square(pred)), ad::sum(ad::square(target)));
    if (ad::item(denom) == 0.0) return ad::constant(Tensor::scalar(0.0));
    return ad::s_sub(ad::constant(Tensor::scalar(1.0)), ad::s_div(ad::scale(inter, 2.0), denom));
}

namespace {

// mean log over patch scores and local score, the two heads weighted equally
Var head_log_mean(const DiscOutput& d, bool complement) {
    auto prep = [&](const Var& v) {
        return ad::mean(ad::log_clamped(complement ? ad::one_minus(v) : v, kLogEps));
    };
    return ad::scale(ad::s_add(prep(d.global_scores), prep(d.local_score)), 0.5);
}

} // namespace

Var adversarial_g_loss(const DiscOutput& fake) { return ad::scale(head_log_mean(fake, false), -1.0); }

Var adversarial_d_loss(const DiscOutput& real, const DiscOutput& fake) {
    return ad::s_add(head_log_mean(real, false), head_log_mean(fake, true));
}

Var total_loss(const Var& rec, const Var& style, const Var& perc, const Var& seg, const Var& adv,
               const LossWeights& w) {
    const struct {
        const Var* v;
        const char* name;
    } parts[] = {{&rec, "reconstruction"},
                 {&style, "style"},
                 {&perc, "perceptual"},
                 {&seg, "segmentation"},
                 {&adv, "adversarial"}};
    for (const auto& p : parts)
        if (!std::isfinite(ad::item(*p.v)))
            throw TrainError(std::string("total_loss: non-finite ") + p.name + " component");
    // accumulate the lightly weighted terms first: summing in ascending
    // magnitude keeps the small contributions from being rounded away
    Var acc = rec;
    acc = ad::s_add(acc, ad::scale(perc, w.lambda_p));
    acc = ad::s_add(acc, ad::scale(seg, w.lambda_m));
    acc = ad::s_add(acc, ad::scale(adv, w.lambda_g));
    acc = ad::s_add(acc, ad::scale(style, w.lambda_s));
    return acc;
}

} // namespace fetnet
