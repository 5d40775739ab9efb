#include "fetnet/model.hpp"

#include <json.hpp>

#include <cmath>

#include "fetnet/init.hpp"

namespace fetnet {

using ad::Var;

std::string to_string(FetKind k) {
    switch (k) {
    case FetKind::none: return "none";
    case FetKind::texture: return "texture";
    case FetKind::structure: return "structure";
    }
    return "none";
}

FetKind fet_kind_from_string(const std::string& s) {
    if (s == "none") return FetKind::none;
    if (s == "texture") return FetKind::texture;
    if (s == "structure") return FetKind::structure;
    throw ParamError("unknown fet kind: " + s);
}

GeneratorConfig GeneratorConfig::toy() { return GeneratorConfig{}; }

GeneratorConfig GeneratorConfig::full() {
    GeneratorConfig c;
    c.enc_widths = {32, 64, 128, 256, 256};
    c.dec_widths = {256, 192, 128, 64, 32};
    c.aggregate_width = 128;
    c.se_reduction = 16;
    return c;
}

std::string config_to_json(const GeneratorConfig& c) {
    nlohmann::json j;
    j["enc_widths"] = c.enc_widths;
    j["dec_widths"] = c.dec_widths;
    j["aggregate_width"] = c.aggregate_width;
    j["se_reduction"] = c.se_reduction;
    std::vector<std::string> fets;
    for (FetKind k : c.fet) fets.push_back(to_string(k));
    j["fet"] = fets;
    j["use_fem"] = c.use_fem;
    j["use_ftm"] = c.use_ftm;
    j["use_similarity"] = c.use_similarity;
    j["hard_mask"] = c.hard_mask;
    j["masked_attention"] = c.masked_attention;
    j["max_attention_positions"] = c.max_attention_positions;
    return j.dump(2);
}

GeneratorConfig config_from_json(const std::string& s) {
    nlohmann::json j = nlohmann::json::parse(s);
    GeneratorConfig c;
    c.enc_widths = j.at("enc_widths").get<std::vector<int64_t>>();
    c.dec_widths = j.at("dec_widths").get<std::vector<int64_t>>();
    c.aggregate_width = j.at("aggregate_width").get<int64_t>();
    c.se_reduction = j.at("se_reduction").get<int>();
    auto fets = j.at("fet").get<std::vector<std::string>>();
    if (fets.size() != 5) throw ParamError("config: fet must list 5 layers");
    for (size_t i = 0; i < 5; ++i) c.fet[i] = fet_kind_from_string(fets[i]);
    c.use_fem = j.at("use_fem").get<bool>();
    c.use_ftm = j.at("use_ftm").get<bool>();
    c.use_similarity = j.at("use_similarity").get<bool>();
    c.hard_mask = j.at("hard_mask").get<bool>();
    c.masked_attention = j.at("masked_attention").get<bool>();
    c.max_attention_positions = j.at("max_attention_positions").get<int64_t>();
    return c;
}

// ----------------------------------------------------------------- building

Var Generator::reg(const std::string& name, Tensor t) {
    Var v = ad::param(std::move(t), name);
    params_.emplace_back(name, v);
    return v;
}

Generator::ConvP Generator::make_conv(const std::string& name, int64_t in, int64_t out, int k,
                                      int stride, Rng& rng, bool head) {
    ConvP p;
    const int64_t fan = in * k * k;
    p.w = reg(name + ".w",
              head ? head_normal({out, in, k, k}, fan, rng) : he_normal({out, in, k, k}, fan, rng));
    p.b = reg(name + ".b", Tensor({out}));
    p.stride = stride;
    p.pad = (k - 1) / 2;
    return p;
}

Generator::ConvP Generator::make_deconv(const std::string& name, int64_t in, int64_t out, int k,
                                        int stride, Rng& rng) {
    ConvP p;
    p.w = reg(name + ".w", he_normal({in, out, k, k}, in * k * k, rng));
    p.b = reg(name + ".b", Tensor({out}));
    p.stride = stride;
    p.pad = k == 4 ? 1 : (k - 1) / 2; // k4s2 doubles; k3s1 preserves
    return p;
}

Var Generator::conv(const Var& x, const ConvP& p) const {
    return ad::conv2d(x, p.w, p.b, p.stride, p.pad);
}

Var Generator::deconv(const Var& x, const ConvP& p) const {
    return ad::conv_transpose2d(x, p.w, p.b, p.stride, p.pad);
}

Generator::Generator(GeneratorConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.enc_widths.size() != 5 || cfg_.dec_widths.size() != 5)
        throw ParamError("Generator: width schedules must list 5 layers");
    for (int64_t w : cfg_.enc_widths)
        if (w < 1) throw ParamError("Generator: widths must be positive");
    for (int64_t w : cfg_.dec_widths)
        if (w < 1) throw ParamError("Generator: widths must be positive");
    if (cfg_.aggregate_width < 3) throw ParamError("Generator: aggregate width must be >= 3");

    Rng rng = Rng::seeded(seed);
    const auto& ew = cfg_.enc_widths;
    const auto& dw = cfg_.dec_widths;

    const int kernels[5] = {7, 5, 3, 3, 3};
    const int strides[5] = {1, 2, 2, 2, 2};
    int64_t in_ch = 3;
    for (int i = 0; i < 5; ++i) {
        const std::string base = "enc" + std::to_string(i + 1);
        enc_[static_cast<size_t>(i)].c1 =
            make_conv(base + ".c1", in_ch, ew[static_cast<size_t>(i)], kernels[i], strides[i], rng);
        enc_[static_cast<size_t>(i)].c2 =
            make_conv(base + ".c2", ew[static_cast<size_t>(i)], ew[static_cast<size_t>(i)], 3, 1, rng);
        enc_[static_cast<size_t>(i)].proj =
            make_conv(base + ".proj", in_ch, ew[static_cast<size_t>(i)], 1, strides[i], rng);
        in_ch = ew[static_cast<size_t>(i)];
    }

    seg_up1_ = make_deconv("seg.up1", ew[4], ew[3], 4, 2, rng);
    seg_fuse1_ = make_conv("seg.fuse1", ew[3] * 2, ew[3], 3, 1, rng);
    seg_up2_ = make_deconv("seg.up2", ew[3], ew[2], 4, 2, rng);
    seg_fuse2_ = make_conv("seg.fuse2", ew[2] * 2, ew[2], 3, 1, rng);
    seg_up3_ = make_deconv("seg.up3", ew[2], ew[2], 3, 1, rng);
    seg_head_ = make_conv("seg.head", ew[2], 1, 1, 1, rng, /*head=*/true);

    for (FetKind k : cfg_.fet)
        if (k == FetKind::texture) has_texture_ = true;
    if (has_texture_) {
        const int64_t a0 = (cfg_.aggregate_width + 2) / 3;
        const int64_t a1 = (cfg_.aggregate_width + 1) / 3;
        const int64_t a2 = cfg_.aggregate_width / 3;
        agg_[0] = make_conv("agg.t1", ew[0], a0, 1, 1, rng);
        agg_[1] = make_conv("agg.t2", ew[1], a1, 1, 1, rng);
        agg_[2] = make_conv("agg.t3", ew[2], a2, 1, 1, rng);
        Rng srng = rng.fork(101);
        sam_ = make_sam_params(cfg_.aggregate_width, 3, srng);
        for (auto& [n, v] : {std::pair<std::string, Var>{"sam.w_g", sam_.w_g},
                             {"sam.b_g", sam_.b_g},
                             {"sam.w_f", sam_.w_f},
                             {"sam.b_f", sam_.b_f}})
            params_.emplace_back(n, v);
    }

    for (int i = 0; i < 5; ++i) {
        if (cfg_.fet[static_cast<size_t>(i)] != FetKind::structure) continue;
        Rng crng = rng.fork(200 + static_cast<uint64_t>(i));
        cam_[static_cast<size_t>(i)] =
            make_cam_params(ew[static_cast<size_t>(i)], cfg_.se_reduction, crng);
        has_cam_[static_cast<size_t>(i)] = true;
        const std::string base = "cam" + std::to_string(i + 1);
        const CamParams& cp = cam_[static_cast<size_t>(i)];
        params_.emplace_back(base + ".w1", cp.w1);
        params_.emplace_back(base + ".b1", cp.b1);
        params_.emplace_back(base + ".w2", cp.w2);
        params_.emplace_back(base + ".b2", cp.b2);
    }

    const int64_t init_ch = ew[4] + (has_texture_ ? cfg_.aggregate_width : 0);
    dec_in_ = make_conv("dec.in", init_ch, dw[0], 3, 1, rng);
    const int64_t skip_ch[4] = {ew[3], ew[2], ew[1], ew[0]};
    for (int i = 0; i < 4; ++i) {
        dec_up_[static_cast<size_t>(i)] = make_deconv(
            "dec.up" + std::to_string(i + 1), dw[static_cast<size_t>(i)],
            dw[static_cast<size_t>(i) + 1], 4, 2, rng);
        dec_fuse_[static_cast<size_t>(i)] = make_conv(
            "dec.fuse" + std::to_string(i + 1), dw[static_cast<size_t>(i) + 1] + skip_ch[i],
            dw[static_cast<size_t>(i) + 1], 3, 1, rng);
    }
    out_head_ = make_conv("dec.head", dw[4], 3, 3, 1, rng, /*head=*/true);
}

int64_t Generator::param_count() const {
    int64_t n = 0;
    for (const auto& [name, v] : params_) n += v.value().numel();
    return n;
}

// ------------------------------------------------------------------ forward

FeaturePyramid Generator::encode(const Var& image) const {
    const Tensor& t = image.value();
    if (t.rank() != 4 || t.dim(1) != 3)
        throw ShapeError("encode: expects (B,3,H,W), got " + t.shape_str());
    if (t.dim(2) % 16 != 0 || t.dim(3) % 16 != 0)
        throw ShapeError("encode: H and W must be divisible by 16");
    FeaturePyramid pyr;
    Var x = image;
    for (int i = 0; i < 5; ++i) {
        const EncLayer& L = enc_[static_cast<size_t>(i)];
        Var h = ad::relu(conv(x, L.c1));
        h = conv(h, L.c2);
        Var s = conv(x, L.proj);
        x = ad::relu(ad::add(h, s));
        pyr.levels.push_back(x);
    }
    return pyr;
}

Var Generator::segment(const FeaturePyramid& pyr) const {
    if (pyr.levels.size() != 5) throw ShapeError("segment: pyramid must have 5 levels");
    Var u = ad::relu(deconv(pyr.levels[4], seg_up1_));
    u = ad::relu(conv(ad::concat_ch({u, pyr.levels[3]}), seg_fuse1_));
    u = ad::relu(deconv(u, seg_up2_));
    u = ad::relu(conv(ad::concat_ch({u, pyr.levels[2]}), seg_fuse2_));
    u = ad::relu(deconv(u, seg_up3_));
    return ad::sigmoid(conv(u, seg_head_));
}

Generator::Out Generator::forward(const Var& image, ForwardTrace* trace) const {
    FeaturePyramid pyr = encode(image);
    Var ct = segment(pyr);
    if (trace) trace->ct = ct.value();

    // the map the FET blocks see; output_mask-style configs use a frozen
    // binary mask instead of the live probabilities
    Var ct_fet = cfg_.hard_mask ? ad::hard_threshold(ct, 0.5) : ct;
    const int64_t h_att = ct.value().dim(2), w_att = ct.value().dim(3);

    auto ct_at = [&](int64_t h, int64_t w) {
        if (h == h_att && w == w_att) return ct_fet;
        Var r = ad::resize_bilinear(ct_fet, h, w);
        return cfg_.hard_mask ? ad::hard_threshold(r, 0.5) : r;
    };

    // shared attention pipeline over aggregated shallow features
    Var attn, texture_out;
    if (has_texture_) {
        if (h_att * w_att > cfg_.max_attention_positions)
            throw ParamError("forward: attention grid " + std::to_string(h_att * w_att) +
                             " exceeds the configured position ceiling");
        Var f1r = ad::resize_bilinear(pyr.levels[0], h_att, w_att);
        Var f2r = ad::resize_bilinear(pyr.levels[1], h_att, w_att);
        Var f_at = ad::concat_ch(
            {conv(f1r, agg_[0]), conv(f2r, agg_[1]), conv(pyr.levels[2], agg_[2])});
        Var f_at_e = cfg_.use_fem ? fem(f_at, ct_fet) : f_at;
        Var filled;
        if (cfg_.use_similarity || !cfg_.use_ftm) filled = sam_fill(f_at_e, ct_fet, sam_);
        attn = cfg_.use_similarity
                   ? ad::background_attention(ad::cosine_similarity_map(filled, 1e-8), ct_fet,
                                              cfg_.masked_attention)
                   : ad::uniform_background_attention(ct_fet);
        texture_out = cfg_.use_ftm ? ftm_t(f_at_e, attn, ct_fet) : filled;
        if (trace) trace->attention = attn.value();
    }

    // per-layer skip features
    std::vector<Var> skips;
    for (int i = 0; i < 5; ++i) {
        const Var& f = pyr.levels[static_cast<size_t>(i)];
        const FetKind kind = cfg_.fet[static_cast<size_t>(i)];
        if (kind == FetKind::none) {
            skips.push_back(f);
            if (trace) trace->skips.emplace_back(i + 1, f.value());
            continue;
        }
        const int64_t h = f.value().dim(2), w = f.value().dim(3);
        Var cti = ct_at(h, w);
        Var f_e = cfg_.use_fem ? fem(f, cti) : f;
        if (trace) trace->fem_io.push_back({i + 1, f.value(), f_e.value()});

        Var out;
        if (!cfg_.use_ftm) {
            out = f_e;
        } else if (kind == FetKind::texture) {
            if (h == h_att && w == w_att) {
                out = ftm_t(f_e, attn, cti);
            } else if (h % h_att == 0 && w % w_att == 0) {
                out = ftm_t_rescaled(f_e, attn, static_cast<int>(h / h_att), cti);
            } else {
                out = ftm_t(f_e, ad::rescale_attention(attn, h, w), cti);
            }
        } else { // structure
            Var gate = cam(f_e, cam_[static_cast<size_t>(i)]);
            out = ftm_s(f, gate);
        }
        skips.push_back(out);
        if (trace) trace->skips.emplace_back(i + 1, out.value());
    }

    // decoder: deepest skip (plus pooled texture output) upward
    Var d = skips[4];
    if (has_texture_) {
        const int64_t h5 = d.value().dim(2);
        const int factor = static_cast<int>(h_att / h5);
        d = ad::concat_ch({d, ad::blockmean(texture_out, factor)});
    }
    d = ad::relu(conv(d, dec_in_));
    for (int i = 0; i < 4; ++i) {
        d = ad::relu(deconv(d, dec_up_[static_cast<size_t>(i)]));
        d = ad::relu(
            conv(ad::concat_ch({d, skips[static_cast<size_t>(3 - i)]}), dec_fuse_[static_cast<size_t>(i)]));
    }
    Out o;
    o.image = ad::sigmoid(conv(d, out_head_));
    o.ct = ct;
    return o;
}

Tensor threshold_mask(const Tensor& ct, int64_t out_h, int64_t out_w, double theta) {
    if (theta <= 0.0 || theta >= 1.0) throw ParamError("threshold_mask: theta must be in (0,1)");
    if (ct.rank() != 4 || ct.dim(1) != 1)
        throw ShapeError("threshold_mask: expects (B,1,h,w), got " + ct.shape_str());
    Tensor up = ad::resize_bilinear(ad::constant(ct), out_h, out_w).value();
    for (int64_t i = 0; i < up.numel(); ++i) up[i] = up[i] > theta ? 1.0 : 0.0;
    return up;
}

} // namespace fetnet
