#include "fetnet/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>

namespace fetnet {

using ad::Var;

// ------------------------------------------------------------ configuration

TrainConfig TrainConfig::toy() { return TrainConfig{}; }

TrainConfig TrainConfig::full() {
    TrainConfig c;
    c.preset = "full";
    c.image_size = 256;
    c.batch_size = 6;
    c.steps = 20000;
    c.corpus_size = 64;
    c.augment_data = true;
    c.checkpoint_every = 1000;
    return c;
}

void validate(const TrainConfig& cfg) {
    if (cfg.preset != "toy" && cfg.preset != "full")
        throw ParamError("config: unknown preset '" + cfg.preset + "'");
    if (cfg.image_size < 16 || cfg.image_size % 16 != 0)
        throw ParamError("config: image_size must be a positive multiple of 16");
    if (cfg.batch_size < 1) throw ParamError("config: batch_size must be >= 1");
    if (cfg.steps < 0) throw ParamError("config: steps must be >= 0");
    if (cfg.lr_g <= 0.0 || cfg.lr_d <= 0.0) throw ParamError("config: learning rates must be > 0");
    if (cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
        throw ParamError("config: betas must lie in [0, 1)");
    if (cfg.adam_eps <= 0.0) throw ParamError("config: adam_eps must be > 0");
    if (cfg.weights.lambda_t < 0 || cfg.weights.lambda_s < 0 || cfg.weights.lambda_p < 0 ||
        cfg.weights.lambda_m < 0 || cfg.weights.lambda_g < 0)
        throw ParamError("config: loss weights must be nonnegative");
    if (cfg.corpus_size < 1) throw ParamError("config: corpus_size must be >= 1");
    if (cfg.n_texts < 0) throw ParamError("config: n_texts must be >= 0");
    if (cfg.checkpoint_every < 0) throw ParamError("config: checkpoint_every must be >= 0");
    if (cfg.log_every < 1) throw ParamError("config: log_every must be >= 1");
    apply_variant(GeneratorConfig{}, cfg.variant); // throws on unknown id
}

std::string train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["preset"] = c.preset;
    j["image_size"] = c.image_size;
    j["batch_size"] = c.batch_size;
    j["steps"] = c.steps;
    j["lr_g"] = c.lr_g;
    j["lr_d"] = c.lr_d;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["weights"] = {{"lambda_t", c.weights.lambda_t},
                    {"lambda_s", c.weights.lambda_s},
                    {"lambda_p", c.weights.lambda_p},
                    {"lambda_m", c.weights.lambda_m},
                    {"lambda_g", c.weights.lambda_g}};
    j["seed"] = c.seed;
    j["deterministic"] = c.deterministic;
    j["variant"] = c.variant;
    j["corpus_size"] = c.corpus_size;
    j["n_texts"] = c.n_texts;
    j["augment_data"] = c.augment_data;
    j["checkpoint_every"] = c.checkpoint_every;
    j["log_every"] = c.log_every;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParamError(std::string("config: invalid JSON: ") + e.what());
    }
    TrainConfig c;
    try {
        c.preset = j.at("preset").get<std::string>();
        c.image_size = j.at("image_size").get<int64_t>();
        c.batch_size = j.at("batch_size").get<int64_t>();
        c.steps = j.at("steps").get<int64_t>();
        c.lr_g = j.at("lr_g").get<double>();
        c.lr_d = j.at("lr_d").get<double>();
        c.beta1 = j.at("beta1").get<double>();
        c.beta2 = j.at("beta2").get<double>();
        c.adam_eps = j.at("adam_eps").get<double>();
        const auto& w = j.at("weights");
        c.weights.lambda_t = w.at("lambda_t").get<double>();
        c.weights.lambda_s = w.at("lambda_s").get<double>();
        c.weights.lambda_p = w.at("lambda_p").get<double>();
        c.weights.lambda_m = w.at("lambda_m").get<double>();
        c.weights.lambda_g = w.at("lambda_g").get<double>();
        c.seed = j.at("seed").get<uint64_t>();
        c.deterministic = j.at("deterministic").get<bool>();
        c.variant = j.at("variant").get<std::string>();
        c.corpus_size = j.at("corpus_size").get<int64_t>();
        c.n_texts = j.at("n_texts").get<int>();
        c.augment_data = j.at("augment_data").get<bool>();
        c.checkpoint_every = j.at("checkpoint_every").get<int64_t>();
        c.log_every = j.at("log_every").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParamError(std::string("config: missing or mistyped field: ") + e.what());
    }
    return c;
}

// ----------------------------------------------------------------- variants

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> ids = {
        "full",      "no_fem",   "no_ftm",    "no_similarity", "output_mask",
        "no_fet_t",  "no_fet_s", "all_fet_t", "all_fet_s"};
    return ids;
}

GeneratorConfig apply_variant(const GeneratorConfig& base, const std::string& id) {
    GeneratorConfig c = base;
    if (id == "full") return c;
    if (id == "no_fem") {
        c.use_fem = false;
        return c;
    }
    if (id == "no_ftm") {
        c.use_ftm = false;
        return c;
    }
    if (id == "no_similarity") {
        c.use_similarity = false;
        return c;
    }
    if (id == "output_mask") {
        c.hard_mask = true;
        return c;
    }
    if (id == "no_fet_t") {
        for (auto& k : c.fet)
            if (k == FetKind::texture) k = FetKind::none;
        return c;
    }
    if (id == "no_fet_s") {
        for (auto& k : c.fet)
            if (k == FetKind::structure) k = FetKind::none;
        return c;
    }
    if (id == "all_fet_t") {
        c.fet.fill(FetKind::texture);
        return c;
    }
    if (id == "all_fet_s") {
        c.fet.fill(FetKind::structure);
        return c;
    }
    throw ParamError("unknown ablation variant: " + id);
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::step(std::vector<std::pair<std::string, ad::Var>>& params) {
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& [name, p] : params) {
            (void)name;
            m_.emplace_back(p.value().shape());
            v_.emplace_back(p.value().shape());
        }
    }
    if (m_.size() != params.size())
        throw ParamError("adam: parameter vector changed size between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Var& p = params[i].second;
        if (!p.has_grad()) continue;
        const Tensor& g = p.grad();
        Tensor& val = p.value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t k = 0; k < val.numel(); ++k) {
            m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
            v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
            val[k] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
        }
    }
}

// ------------------------------------------------------------------ corpora

std::vector<ImageTriplet> load_corpus(const TrainConfig& cfg, const std::string& data_dir) {
    std::vector<ImageTriplet> data;
    if (!data_dir.empty()) {
        DatasetStream ds = load_dataset(data_dir);
        if (ds.size() == 0) throw ParamError("load_corpus: no triplets under " + data_dir);
        data.reserve(static_cast<size_t>(ds.size()));
        for (int64_t i = 0; i < ds.size(); ++i) data.push_back(ds.at(i));
    } else {
        for (const SceneSpec& sp :
             corpus_specs(static_cast<int>(cfg.corpus_size), cfg.seed, cfg.image_size,
                          cfg.image_size, cfg.n_texts))
            data.push_back(generate_triplet(sp));
    }
    return data;
}

// ----------------------------------------------------------------- training

namespace {

void copy_plane(Tensor& dst, int64_t b, const Tensor& chw) {
    const int64_t n = chw.numel();
    std::memcpy(dst.data() + b * n, chw.data(), sizeof(double) * static_cast<size_t>(n));
}

uint64_t mix_seed(uint64_t seed, uint64_t step, uint64_t lane) {
    uint64_t x = seed ^ (0x9e3779b97f4a7c15ull + step * 0xbf58476d1ce4e5b9ull + lane * 0x94d049bb133111ebull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    return x;
}

} // namespace

Batch make_batch(const std::vector<ImageTriplet>& data, const std::vector<int64_t>& indices) {
    if (indices.empty()) throw ParamError("make_batch: empty index list");
    const Image& first = data.at(static_cast<size_t>(indices[0])).input;
    const int64_t B = static_cast<int64_t>(indices.size()), H = first.h, W = first.w;
    Tensor tin({B, 3, H, W}), tgt({B, 3, H, W}), tm({B, 1, H, W});
    for (int64_t b = 0; b < B; ++b) {
        const ImageTriplet& t = data.at(static_cast<size_t>(indices[static_cast<size_t>(b)]));
        if (t.input.h != H || t.input.w != W)
            throw ShapeError("make_batch: mixed sizes in one batch");
        copy_plane(tin, b, to_chw(t.input));
        copy_plane(tgt, b, to_chw(t.gt));
        copy_plane(tm, b, to_chw(t.mask));
    }
    return Batch{ad::constant(std::move(tin)), ad::constant(std::move(tgt)),
                 ad::constant(std::move(tm))};
}

StepLog train_step(int64_t step, Generator& gen, Discriminator* disc, const FeatureExtractor& fx,
                   Adam& adam_g, Adam* adam_d, const Batch& batch, const LossWeights& w) {
    const int64_t H = batch.input.value().dim(2), W = batch.input.value().dim(3);
    const bool use_disc = disc != nullptr && w.lambda_g > 0.0;

    Generator::Out out = gen.forward(batch.input);

    double d_adv_val = 0.0;
    Var adv;
    if (use_disc) {
        // discriminator update on (real, detached fake), then a fresh pass on
        // the live fake for the generator objective
        DiscOutput real = disc->discriminate(batch.gt, batch.mask);
        DiscOutput fake_det = disc->discriminate(ad::stopgrad(out.image), batch.mask);
        Var ld = adversarial_d_loss(real, fake_det);
        d_adv_val = ad::item(ld);
        if (!std::isfinite(d_adv_val))
            throw TrainError("train_step: non-finite discriminator loss");
        ad::backward(ad::scale(ld, -1.0)); // gradient ascent on the bounded objective
        if (adam_d == nullptr) throw ParamError("train_step: discriminator without optimizer");
        adam_d->step(disc->params());
        for (auto& p : disc->params()) p.second.clear_grad();
        adv = adversarial_g_loss(disc->discriminate(out.image, batch.mask));
    } else {
        adv = ad::constant(Tensor::scalar(0.0));
    }

    Var rec = reconstruction_loss(out.image, batch.gt, batch.mask, w.lambda_t);
    Var comp = compose(batch.input, out.image, batch.mask);
    Var perc = perceptual_loss(out.image, comp, batch.gt, fx);
    Var style = style_loss(out.image, comp, batch.gt, fx);
    Var seg = dice_loss(ad::resize_bilinear(out.ct, H, W), batch.mask);
    Var total = total_loss(rec, style, perc, seg, adv, w); // throws TrainError on NaN

    ad::backward(total);
    adam_g.step(gen.params());
    for (auto& p : gen.params()) p.second.clear_grad();
    if (use_disc)
        for (auto& p : disc->params()) p.second.clear_grad();

    return StepLog{step,        ad::item(rec), ad::item(style), ad::item(perc),
                   ad::item(seg), ad::item(adv), d_adv_val,       ad::item(total)};
}

namespace {

void write_log_row(std::ofstream& out, const StepLog& r) {
    out << r.step << ',' << std::setprecision(10) << r.rec << ',' << r.style << ',' << r.perc
        << ',' << r.seg << ',' << r.adv << ',' << r.d_adv << ',' << r.total << '\n';
}

} // namespace

TrainResult train(const TrainConfig& cfg_in, const std::string& data_dir,
                  const std::string& out_root_in) {
    TrainConfig cfg = cfg_in;
    validate(cfg);
    if (!cfg.deterministic) {
        const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
        cfg.seed = mix_seed(cfg.seed, static_cast<uint64_t>(now), 0xabcdull);
    }

    const std::string out_root = resolve_out_root(out_root_in);
    const std::string run_dir =
        make_run_dir(out_root, "run_" + cfg.variant + "_s" + std::to_string(cfg.seed));

    std::vector<ImageTriplet> data = load_corpus(cfg, data_dir);
    for (const ImageTriplet& t : data) {
        if (t.input.h != cfg.image_size || t.input.w != cfg.image_size)
            throw ParamError("train: triplet '" + t.id + "' is " + std::to_string(t.input.h) +
                             "x" + std::to_string(t.input.w) + ", config wants " +
                             std::to_string(cfg.image_size));
    }

    const GeneratorConfig gcfg = apply_variant(
        cfg.preset == "toy" ? GeneratorConfig::toy() : GeneratorConfig::full(), cfg.variant);
    Generator gen(gcfg, cfg.seed);
    const bool use_disc = cfg.weights.lambda_g > 0.0;
    std::optional<Discriminator> disc;
    std::optional<Adam> adam_d;
    if (use_disc) {
        disc.emplace(cfg.preset == "toy" ? DiscConfig::toy() : DiscConfig::full(), cfg.seed + 1);
        adam_d.emplace(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.adam_eps);
    }
    FeatureExtractor fx(17);
    Adam adam_g(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.adam_eps);

    {
        std::ofstream cfg_out(run_dir + "/config.json");
        nlohmann::json merged;
        merged["train"] = nlohmann::json::parse(train_config_to_json(cfg));
        merged["generator"] = nlohmann::json::parse(config_to_json(gcfg));
        cfg_out << merged.dump(2) << '\n';
    }

    TrainResult res;
    res.run_dir = run_dir;
    res.log_path = run_dir + "/train_log.csv";
    res.checkpoint_path = run_dir + "/checkpoint_final.ckpt";

    std::ofstream log(res.log_path);
    if (!log) throw IoError("train: cannot open log " + res.log_path);
    log << "step,rec,style,perc,seg,adv,d_adv,total\n";

    Checkpoint last_good =
        snapshot(gen, disc ? &*disc : nullptr, cfg.seed, 0, cfg.variant);
    const int64_t n = static_cast<int64_t>(data.size());

    try {
        for (int64_t s = 0; s < cfg.steps; ++s) {
            std::vector<int64_t> idx(static_cast<size_t>(cfg.batch_size));
            for (int64_t j = 0; j < cfg.batch_size; ++j) idx[static_cast<size_t>(j)] = (s * cfg.batch_size + j) % n;

            Batch batch;
            if (cfg.augment_data) {
                std::vector<ImageTriplet> tmp;
                std::vector<int64_t> seq;
                tmp.reserve(idx.size());
                for (size_t j = 0; j < idx.size(); ++j) {
                    tmp.push_back(augment(data[static_cast<size_t>(idx[j])],
                                          mix_seed(cfg.seed, static_cast<uint64_t>(s), j)));
                    seq.push_back(static_cast<int64_t>(j));
                }
                batch = make_batch(tmp, seq);
            } else {
                batch = make_batch(data, idx);
            }

            StepLog row = train_step(s, gen, disc ? &*disc : nullptr, fx, adam_g,
                                     adam_d ? &*adam_d : nullptr, batch, cfg.weights);
            res.log.push_back(row);
            write_log_row(log, row);
            if ((s + 1) % cfg.log_every == 0 || s + 1 == cfg.steps)
                std::cerr << "[train " << cfg.variant << " s" << cfg.seed << "] step " << (s + 1)
                          << "/" << cfg.steps << " total " << std::setprecision(6) << row.total
                          << " rec " << row.rec << " seg " << row.seg << '\n';

            last_good = snapshot(gen, disc ? &*disc : nullptr, cfg.seed, s + 1, cfg.variant);
            if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0)
                save_checkpoint(run_dir + "/checkpoint_step_" + std::to_string(s + 1) + ".ckpt",
                                last_good);
        }
    } catch (const TrainError& e) {
        log.flush();
        const std::string lg_path = run_dir + "/checkpoint_lastgood.ckpt";
        save_checkpoint(lg_path, last_good);
        throw TrainError(std::string(e.what()) + " (last-good checkpoint: " + lg_path + ")");
    }

    log.flush();
    save_checkpoint(res.checkpoint_path, last_good);
    return res;
}

// --------------------------------------------------------------- evaluation

std::vector<EvalRow> evaluate_triplets(const Generator& g,
                                       const std::vector<ImageTriplet>& data) {
    std::vector<EvalRow> rows;
    rows.reserve(data.size());
    for (const ImageTriplet& t : data) {
        EvalRow r;
        r.id = t.id;
        if (t.input.h % 16 != 0 || t.input.w % 16 != 0) {
            r.skipped = true;
            rows.push_back(std::move(r));
            continue;
        }
        Generator::Out out = g.forward(ad::constant(to_chw(t.input)));
        const Image io = from_chw(out.image.value());
        r.rep = evaluate_pair(io, t.gt);
        double mask_sum = 0.0;
        for (double v : t.mask.data) mask_sum += v;
        if (mask_sum > 0.0) {
            r.masked_psnr_out = masked_psnr(io, t.gt, t.mask);
            r.masked_psnr_in = masked_psnr(t.input, t.gt, t.mask);
        } else {
            r.masked_psnr_out = std::numeric_limits<double>::quiet_NaN();
            r.masked_psnr_in = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

MetricReport summarize(const std::vector<EvalRow>& rows) {
    MetricReport rep;
    double psnr_acc = 0.0;
    int64_t psnr_n = 0;
    for (const EvalRow& r : rows) {
        if (r.skipped) continue;
        ++rep.n_images;
        rep.mssim += r.rep.mssim;
        rep.mse += r.rep.mse;
        rep.age += r.rep.age;
        rep.peps += r.rep.peps;
        rep.pceps += r.rep.pceps;
        if (std::isinf(r.rep.psnr)) {
            ++rep.psnr_excluded;
        } else {
            psnr_acc += r.rep.psnr;
            ++psnr_n;
        }
    }
    if (rep.n_images == 0) throw ParamError("summarize: no evaluable rows");
    const double n = static_cast<double>(rep.n_images);
    rep.mssim /= n;
    rep.mse /= n;
    rep.age /= n;
    rep.peps /= n;
    rep.pceps /= n;
    rep.psnr = psnr_n > 0 ? psnr_acc / static_cast<double>(psnr_n)
                          : std::numeric_limits<double>::infinity();
    return rep;
}

namespace {

void write_metric_cells(std::ofstream& out, const MetricReport& rep, double masked) {
    auto cell = [&out](double v) {
        if (std::isinf(v))
            out << ",inf";
        else
            out << ',' << std::setprecision(10) << v;
    };
    cell(rep.psnr);
    cell(rep.mssim);
    cell(rep.mse);
    cell(rep.age);
    cell(rep.peps);
    cell(rep.pceps);
    if (std::isnan(masked))
        out << ",";
    else
        cell(masked);
}

} // namespace

void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_eval_csv: cannot open " + path);
    out << "id,psnr,mssim,mse,age,peps,pceps,masked_psnr,note\n";
    for (const EvalRow& r : rows) {
        if (r.skipped) {
            out << r.id << ",,,,,,,,skipped_indivisible\n";
            continue;
        }
        out << r.id;
        write_metric_cells(out, r.rep, r.masked_psnr_out);
        out << ",\n";
    }
    const MetricReport mean = summarize(rows);
    double macc = 0.0;
    int64_t mn = 0;
    for (const EvalRow& r : rows)
        if (!r.skipped && std::isfinite(r.masked_psnr_out)) {
            macc += r.masked_psnr_out;
            ++mn;
        }
    out << "mean";
    write_metric_cells(out, mean, mn > 0 ? macc / static_cast<double>(mn)
                                         : std::numeric_limits<double>::quiet_NaN());
    out << ",\n";
}

MetricReport evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                      const std::string& out_csv) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Generator g = restore_generator(ck);
    DatasetStream ds = load_dataset(data_dir);
    if (ds.size() == 0) throw ParamError("evaluate: no triplets under " + data_dir);
    std::vector<ImageTriplet> data;
    data.reserve(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) data.push_back(ds.at(i));
    const std::vector<EvalRow> rows = evaluate_triplets(g, data);
    write_eval_csv(out_csv, rows);
    return summarize(rows);
}

// ---------------------------------------------------------------- inference

namespace {

Image reflect_pad(const Image& img, int64_t Hp, int64_t Wp) {
    if (img.h == Hp && img.w == Wp) return img;
    Image out(Hp, Wp, img.c);
    for (int64_t y = 0; y < Hp; ++y) {
        int64_t sy = y < img.h ? y : 2 * img.h - 2 - y;
        sy = std::clamp<int64_t>(sy, 0, img.h - 1);
        for (int64_t x = 0; x < Wp; ++x) {
            int64_t sx = x < img.w ? x : 2 * img.w - 2 - x;
            sx = std::clamp<int64_t>(sx, 0, img.w - 1);
            for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    }
    return out;
}

Image crop(const Image& img, int64_t h, int64_t w) {
    if (img.h == h && img.w == w) return img;
    Image out(h, w, img.c);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, x, ch);
    return out;
}

/// Tile the channels of a (1,C,h,w) map into one near-square grid image,
/// normalized over the whole tensor, 1-pixel separators.
Image channel_grid(const Tensor& t) {
    const int64_t C = t.dim(1), h = t.dim(2), w = t.dim(3);
    const int64_t cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(C))));
    const int64_t grid_rows = (C + cols - 1) / cols;
    double lo = t[0], hi = t[0];
    for (int64_t i = 0; i < t.numel(); ++i) {
        lo = std::min(lo, t[i]);
        hi = std::max(hi, t[i]);
    }
    const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
    Image out(grid_rows * (h + 1) - 1, cols * (w + 1) - 1, 1);
    for (double& v : out.data) v = 0.5; // separator gray
    for (int64_t ch = 0; ch < C; ++ch) {
        const int64_t gy = (ch / cols) * (h + 1), gx = (ch % cols) * (w + 1);
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.at(gy + y, gx + x, 0) = (t.at(0, ch, y, x) - lo) / span;
    }
    return out;
}

} // namespace

InferResult infer(const std::string& checkpoint_path, const std::string& image_path,
                  const std::string& out_dir, bool dump_features) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Generator g = restore_generator(ck);
    Image img = read_png(image_path);
    if (img.c == 1) {
        Image rgb(img.h, img.w, 3);
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                for (int64_t ch = 0; ch < 3; ++ch) rgb.at(y, x, ch) = img.at(y, x, 0);
        img = std::move(rgb);
    }
    const int64_t H = img.h, W = img.w;
    const int64_t Hp = (H + 15) / 16 * 16, Wp = (W + 15) / 16 * 16;
    const Image padded = reflect_pad(img, Hp, Wp);

    std::filesystem::create_directories(out_dir);
    ForwardTrace trace;
    const Generator::Out out = g.forward(ad::constant(to_chw(padded)), &trace);

    InferResult res;
    res.output_path = out_dir + "/output.png";
    write_png(res.output_path, crop(from_chw(out.image.value()), H, W));

    const Tensor ct_full = ad::resize_bilinear(ad::constant(out.ct.value()), Hp, Wp).value();
    res.heatmap_path = out_dir + "/text_confidence.png";
    write_png(res.heatmap_path, crop(from_chw(ct_full), H, W));

    const Tensor mo = threshold_mask(out.ct.value(), Hp, Wp);
    res.mask_path = out_dir + "/mask.png";
    write_png(res.mask_path, crop(from_chw(mo), H, W));

    if (dump_features) {
        const std::string fdir = out_dir + "/features";
        std::filesystem::create_directories(fdir);
        for (const ForwardTrace::LayerIo& io : trace.fem_io) {
            const std::string in_path =
                fdir + "/layer" + std::to_string(io.layer) + "_in.png";
            const std::string out_path =
                fdir + "/layer" + std::to_string(io.layer) + "_out.png";
            write_png(in_path, channel_grid(io.in));
            write_png(out_path, channel_grid(io.out));
            res.feature_grids.push_back(in_path);
            res.feature_grids.push_back(out_path);
        }
    }
    return res;
}

// ----------------------------------------------------------------- ablation

std::vector<AblateRow> ablate(const TrainConfig& base, const std::vector<std::string>& variants,
                              const std::vector<uint64_t>& seeds, const std::string& data_dir,
                              const std::string& out_root_in, const std::string& eval_data_dir) {
    validate(base);
    if (variants.empty() || seeds.empty())
        throw ParamError("ablate: need at least one variant and one seed");
    for (const std::string& v : variants) apply_variant(GeneratorConfig{}, v);

    const std::string out_root = resolve_out_root(out_root_in);
    const std::string sweep_dir = make_run_dir(out_root, "ablate");
    const std::vector<ImageTriplet> held_out =
        eval_data_dir.empty() ? std::vector<ImageTriplet>{} : load_corpus(base, eval_data_dir);

    std::vector<AblateRow> rows;
    for (const std::string& v : variants) {
        for (uint64_t s : seeds) {
            TrainConfig cfg = base;
            cfg.variant = v;
            cfg.seed = s;
            AblateRow row;
            row.variant = v;
            row.seed = s;
            try {
                const TrainResult tr = train(cfg, data_dir, sweep_dir);
                const Generator g = restore_generator(load_checkpoint(tr.checkpoint_path));
                const std::vector<ImageTriplet> data =
                    eval_data_dir.empty() ? load_corpus(cfg, data_dir) : held_out;
                const std::vector<EvalRow> evals = evaluate_triplets(g, data);
                row.rep = summarize(evals);
                double acc_out = 0.0, acc_in = 0.0;
                int64_t n = 0;
                for (const EvalRow& e : evals)
                    if (!e.skipped && std::isfinite(e.masked_psnr_out) &&
                        std::isfinite(e.masked_psnr_in)) {
                        acc_out += e.masked_psnr_out;
                        acc_in += e.masked_psnr_in;
                        ++n;
                    }
                row.masked_psnr_out = n > 0 ? acc_out / static_cast<double>(n)
                                            : std::numeric_limits<double>::quiet_NaN();
                row.masked_psnr_in = n > 0 ? acc_in / static_cast<double>(n)
                                           : std::numeric_limits<double>::quiet_NaN();
            } catch (const TrainError&) {
                row.failed = true;
            }
            rows.push_back(std::move(row));
        }
    }
    write_ablate_csv(sweep_dir + "/ablation.csv", rows);
    return rows;
}

void write_ablate_csv(const std::string& path, const std::vector<AblateRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_ablate_csv: cannot open " + path);
    out << "variant,seed,psnr,mssim,mse,age,peps,pceps,masked_psnr,status\n";
    for (const AblateRow& r : rows) {
        out << r.variant << ',' << r.seed;
        if (r.failed) {
            out << ",,,,,,,,failed\n";
            continue;
        }
        write_metric_cells(out, r.rep, r.masked_psnr_out);
        out << ",ok\n";
    }
}

// -------------------------------------------------------------------- misc

std::string resolve_out_root(const std::string& explicit_root) {
    if (!explicit_root.empty()) return explicit_root;
    if (const char* env = std::getenv("FETNET_OUT_ROOT"); env != nullptr && env[0] != '\0')
        return env;
    return "./runs";
}

std::string make_run_dir(const std::string& out_root, const std::string& stem) {
    std::filesystem::create_directories(out_root);
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
    std::string base = out_root + "/" + stem + "_" + stamp;
    std::string dir = base;
    int k = 1;
    while (std::filesystem::exists(dir)) dir = base + "_" + std::to_string(k++);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace fetnet
