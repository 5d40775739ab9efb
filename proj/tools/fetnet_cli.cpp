#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "fetnet/harness.hpp"

using namespace fetnet;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

// Options shared by train and ablate; applied over the config-file values
// only when actually passed on the command line.
struct TrainFlags {
    std::string config_path, preset, variant;
    int64_t image_size = 0, batch_size = 0, steps = -1, corpus_size = 0, checkpoint_every = -1;
    int n_texts = -1;
    double lr_g = 0, lr_d = 0, lambda_g = -1;
    uint64_t seed = 0;
    bool augment = false, no_augment = false, not_deterministic = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (see train --dump-config)");
        cmd->add_option("--preset", preset, "toy|full");
        cmd->add_option("--variant", variant, "ablation variant id");
        cmd->add_option("--size", image_size, "square image side, multiple of 16");
        cmd->add_option("--batch", batch_size, "batch size");
        cmd->add_option("--steps", steps, "training steps");
        cmd->add_option("--corpus", corpus_size, "synthetic corpus size");
        cmd->add_option("--n-texts", n_texts, "glyph runs per synthetic image");
        cmd->add_option("--lr-g", lr_g, "generator learning rate");
        cmd->add_option("--lr-d", lr_d, "discriminator learning rate");
        cmd->add_option("--lambda-g", lambda_g, "adversarial weight (0 disables the GAN)");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--checkpoint-every", checkpoint_every, "periodic checkpoint cadence");
        cmd->add_flag("--augment", augment, "enable paired augmentation");
        cmd->add_flag("--no-augment", no_augment, "disable paired augmentation");
        cmd->add_flag("--non-deterministic", not_deterministic, "mix time into the seed");
    }

    TrainConfig resolve(const CLI::App* cmd) const {
        TrainConfig cfg = TrainConfig::toy();
        if (cmd->count("--config")) cfg = train_config_from_json(slurp(config_path));
        if (cmd->count("--preset")) {
            cfg = preset == "full" ? TrainConfig::full() : TrainConfig::toy();
            if (cmd->count("--config"))
                throw ParamError("pass either --config or --preset, not both");
        }
        if (cmd->count("--variant")) cfg.variant = variant;
        if (cmd->count("--size")) cfg.image_size = image_size;
        if (cmd->count("--batch")) cfg.batch_size = batch_size;
        if (cmd->count("--steps")) cfg.steps = steps;
        if (cmd->count("--corpus")) cfg.corpus_size = corpus_size;
        if (cmd->count("--n-texts")) cfg.n_texts = n_texts;
        if (cmd->count("--lr-g")) cfg.lr_g = lr_g;
        if (cmd->count("--lr-d")) cfg.lr_d = lr_d;
        if (cmd->count("--lambda-g")) cfg.weights.lambda_g = lambda_g;
        if (cmd->count("--seed")) cfg.seed = seed;
        if (cmd->count("--checkpoint-every")) cfg.checkpoint_every = checkpoint_every;
        if (augment) cfg.augment_data = true;
        if (no_augment) cfg.augment_data = false;
        if (not_deterministic) cfg.deterministic = false;
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fetnet: scene-text removal — data generation, training, "
                 "evaluation, inference, and ablation sweeps"};
    app.require_subcommand(1);

    // ------------------------------------------------------------- gen-data
    auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic triplet dataset");
    std::string gd_out = "data";
    int gd_n = 8;
    uint64_t gd_seed = 1;
    int64_t gd_size = 64;
    int gd_texts = 2;
    gen_cmd->add_option("--out", gd_out, "output directory")->required();
    gen_cmd->add_option("--n", gd_n, "number of triplets");
    gen_cmd->add_option("--seed", gd_seed, "first scene seed");
    gen_cmd->add_option("--size", gd_size, "square image side");
    gen_cmd->add_option("--n-texts", gd_texts, "glyph runs per image");

    // ---------------------------------------------------------------- train
    auto* train_cmd = app.add_subcommand("train", "train a model");
    TrainFlags tf;
    tf.attach(train_cmd);
    std::string tr_data, tr_out_root;
    bool tr_dump_config = false;
    train_cmd->add_option("--data", tr_data, "dataset directory (default: synthetic corpus)");
    train_cmd->add_option("--out-root", tr_out_root, "runs root (default $FETNET_OUT_ROOT or ./runs)");
    train_cmd->add_flag("--dump-config", tr_dump_config, "print the resolved config and exit");

    // ----------------------------------------------------------------- eval
    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint against a dataset");
    std::string ev_ckpt, ev_data, ev_out = "eval.csv";
    eval_cmd->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", ev_data, "dataset directory")->required();
    eval_cmd->add_option("--out", ev_out, "output CSV path");

    // ---------------------------------------------------------------- infer
    auto* infer_cmd = app.add_subcommand("infer", "run one image through a checkpoint");
    std::string in_ckpt, in_img, in_out = "infer_out";
    bool in_dump = false;
    infer_cmd->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
    infer_cmd->add_option("--image", in_img, "input PNG")->required();
    infer_cmd->add_option("--out-dir", in_out, "output directory");
    infer_cmd->add_flag("--dump-features", in_dump, "also write per-layer channel grids");

    // --------------------------------------------------------------- ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train and score a variant matrix");
    TrainFlags af;
    af.attach(ablate_cmd);
    std::string ab_variants = "full,no_fem,no_ftm,no_similarity,output_mask";
    std::string ab_seeds = "1,2,3", ab_data, ab_out_root, ab_eval_data;
    ablate_cmd->add_option("--variants", ab_variants, "comma-separated variant ids");
    ablate_cmd->add_option("--seeds", ab_seeds, "comma-separated seeds");
    ablate_cmd->add_option("--data", ab_data, "dataset directory (default: synthetic corpus)");
    ablate_cmd->add_option("--out-root", ab_out_root, "runs root");
    ablate_cmd->add_option("--eval-data", ab_eval_data,
                           "score runs on this held-out dataset instead of the training data");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen_cmd->parsed()) {
            const auto ids = save_dataset(gd_out, corpus_specs(gd_n, gd_seed, gd_size, gd_size, gd_texts));
            std::cout << "wrote " << ids.size() << " triplets under " << gd_out << '\n';
        } else if (train_cmd->parsed()) {
            TrainConfig cfg = tf.resolve(train_cmd);
            if (tr_dump_config) {
                std::cout << train_config_to_json(cfg) << '\n';
                return 0;
            }
            const TrainResult res = train(cfg, tr_data, tr_out_root);
            std::cout << "run dir:    " << res.run_dir << '\n'
                      << "checkpoint: " << res.checkpoint_path << '\n'
                      << "log:        " << res.log_path << '\n';
            if (!res.log.empty())
                std::cout << "final total loss: " << res.log.back().total << '\n';
        } else if (eval_cmd->parsed()) {
            const MetricReport rep = evaluate(ev_ckpt, ev_data, ev_out);
            std::cout << "images: " << rep.n_images << "  psnr: " << rep.psnr
                      << "  mssim: " << rep.mssim << "  mse: " << rep.mse << "  age: " << rep.age
                      << "  peps: " << rep.peps << "  pceps: " << rep.pceps << '\n'
                      << "csv: " << ev_out << '\n';
        } else if (infer_cmd->parsed()) {
            const InferResult res = infer(in_ckpt, in_img, in_out, in_dump);
            std::cout << "output:  " << res.output_path << '\n'
                      << "heatmap: " << res.heatmap_path << '\n'
                      << "mask:    " << res.mask_path << '\n';
            if (!res.feature_grids.empty())
                std::cout << "feature grids: " << res.feature_grids.size() << " files\n";
        } else if (ablate_cmd->parsed()) {
            TrainConfig base = af.resolve(ablate_cmd);
            std::vector<uint64_t> seeds;
            for (const std::string& s : split_list(ab_seeds)) seeds.push_back(std::stoull(s));
            const auto rows =
                ablate(base, split_list(ab_variants), seeds, ab_data, ab_out_root, ab_eval_data);
            for (const AblateRow& r : rows) {
                std::cout << r.variant << " seed " << r.seed << ": ";
                if (r.failed)
                    std::cout << "FAILED\n";
                else
                    std::cout << "psnr " << r.rep.psnr << "  masked_psnr " << r.masked_psnr_out
                              << '\n';
            }
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
