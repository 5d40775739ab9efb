#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fetnet/adversary.hpp"
#include "fetnet/datagen.hpp"
#include "fetnet/losses.hpp"
#include "fetnet/metrics.hpp"
#include "fetnet/model.hpp"

namespace fetnet {

// --------------------------------------------------------------- checkpoint

/// Serializable training state: configs, provenance, and every named
/// parameter tensor for the generator (and the discriminator when one was
/// trained). The on-disk container is versioned and carries an integrity
/// digest; see save_checkpoint.
struct Checkpoint {
    GeneratorConfig gen_config;
    DiscConfig disc_config;
    bool has_discriminator = false;
    uint64_t seed = 0;
    int64_t step = 0;
    std::string variant = "full";
    std::vector<std::pair<std::string, Tensor>> gen_params;
    std::vector<std::pair<std::string, Tensor>> disc_params;
};

/// Deep-copies current parameter values out of the live models.
Checkpoint snapshot(const Generator& g, const Discriminator* d, uint64_t seed, int64_t step,
                    const std::string& variant);

void save_checkpoint(const std::string& path, const Checkpoint& ck);

/// Throws IoError on missing file, bad magic, unsupported version, manifest
/// mismatch, or digest mismatch.
Checkpoint load_checkpoint(const std::string& path);

/// Rebuilds the model and overwrites its parameters from the snapshot;
/// forward outputs are bit-identical to the saved model's.
Generator restore_generator(const Checkpoint& ck);
Discriminator restore_discriminator(const Checkpoint& ck);

// ------------------------------------------------------------ configuration

/// Everything one training run needs. `variant` names an ablation variant
/// (see ablation_variants); `corpus_size`/`n_texts` describe the synthetic
/// corpus used when no dataset directory is given.
struct TrainConfig {
    std::string preset = "toy"; // toy | full
    int64_t image_size = 64;    // divisible by 16
    int64_t batch_size = 4;
    int64_t steps = 600;
    double lr_g = 1e-3;
    double lr_d = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    LossWeights weights;
    uint64_t seed = 1;
    bool deterministic = true;
    std::string variant = "full";
    int64_t corpus_size = 8;
    int n_texts = 2;
    bool augment_data = false; // paired flip/rotation on sampled batches
    int64_t checkpoint_every = 0; // 0: write only the final checkpoint
    int64_t log_every = 50;       // stderr progress cadence; the CSV logs every step

    static TrainConfig toy();
    static TrainConfig full();
};

/// Throws ParamError on nonpositive rates/sizes, size not divisible by 16,
/// unknown preset, or unknown variant id.
void validate(const TrainConfig& cfg);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// ----------------------------------------------------------------- variants

/// The defined ablation set, `full` first.
const std::vector<std::string>& ablation_variants();

/// Maps a variant id onto the base generator configuration; every id changes
/// exactly the documented fields and nothing else. Unknown id -> ParamError.
GeneratorConfig apply_variant(const GeneratorConfig& base, const std::string& id);

// ---------------------------------------------------------------- optimizer

/// Adam with bias correction; state is index-aligned with the parameter
/// vector it is fed (feed it the same models's params every step).
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps);

    /// Applies one update to every parameter that has a gradient, then
    /// leaves the gradients untouched (caller clears them).
    void step(std::vector<std::pair<std::string, ad::Var>>& params);

    int64_t t() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// ----------------------------------------------------------------- training

/// One row of the training log; the CSV schema is fixed:
/// step,rec,style,perc,seg,adv,d_adv,total
struct StepLog {
    int64_t step = 0;
    double rec = 0, style = 0, perc = 0, seg = 0, adv = 0, d_adv = 0, total = 0;
};

struct TrainResult {
    std::string run_dir;
    std::string checkpoint_path; // final checkpoint
    std::string log_path;        // per-step CSV
    std::vector<StepLog> log;
};

/// One training batch as graph constants.
struct Batch {
    ad::Var input, gt, mask;
};

/// Stacks the listed triplets; all must share one resolution.
Batch make_batch(const std::vector<ImageTriplet>& data, const std::vector<int64_t>& indices);

/// One alternating update: a discriminator ascent step on (real, detached
/// fake) when `disc` is given and lambda_g > 0, then a generator descent step
/// on the full objective. Gradients are cleared before returning. Non-finite
/// losses raise TrainError naming the component.
StepLog train_step(int64_t step, Generator& gen, Discriminator* disc, const FeatureExtractor& fx,
                   Adam& adam_g, Adam* adam_d, const Batch& batch, const LossWeights& w);

/// Trains per the config. `data_dir` empty -> deterministic synthetic corpus
/// (corpus_size triplets seeded from cfg.seed). `out_root` empty -> the
/// FETNET_OUT_ROOT environment variable, else ./runs. Artifacts live in a
/// fresh per-run directory together with the resolved config. A non-finite
/// loss aborts with TrainError naming the component after writing a
/// last-good checkpoint (parameters as of the last completed step).
TrainResult train(const TrainConfig& cfg, const std::string& data_dir = "",
                  const std::string& out_root = "");

// --------------------------------------------------------------- evaluation

struct EvalRow {
    std::string id;
    MetricReport rep;             // I_o vs I_gt, all six measures
    double masked_psnr_out = 0.0; // PSNR of I_o vs I_gt inside the text mask
    double masked_psnr_in = 0.0;  // PSNR of I_i vs I_gt inside the text mask
    bool skipped = false;         // size-indivisible input
};

/// Forward + metrics per triplet; rows keep dataset order. Triplets whose
/// size is not divisible by 16 come back with skipped=true.
std::vector<EvalRow> evaluate_triplets(const Generator& g,
                                       const std::vector<ImageTriplet>& data);

/// Unweighted means over the non-skipped rows (ParamError if none).
MetricReport summarize(const std::vector<EvalRow>& rows);

/// Writes per-image rows, skip-warning rows, and a final mean row.
/// Columns: id,psnr,mssim,mse,age,peps,pceps,masked_psnr,note
void write_eval_csv(const std::string& path, const std::vector<EvalRow>& rows);

/// Checkpoint + dataset directory -> CSV at out_csv; returns the summary.
MetricReport evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                      const std::string& out_csv);

// ---------------------------------------------------------------- inference

struct InferResult {
    std::string output_path;  // text-removed image
    std::string heatmap_path; // text confidence, upsampled, grayscale
    std::string mask_path;    // thresholded binary mask
    std::vector<std::string> feature_grids; // with dump_features, per layer
};

/// Runs one image through a restored model. Inputs whose sides are not
/// divisible by 16 are reflect-padded, then the outputs are cropped back.
/// dump_features additionally writes one channel-grid image per
/// erase-equipped layer input and output.
InferResult infer(const std::string& checkpoint_path, const std::string& image_path,
                  const std::string& out_dir, bool dump_features = false);

// ----------------------------------------------------------------- ablation

struct AblateRow {
    std::string variant;
    uint64_t seed = 0;
    bool failed = false;      // training aborted; metrics meaningless
    MetricReport rep;         // corpus means
    double masked_psnr_out = 0.0;
    double masked_psnr_in = 0.0;
};

/// Trains every (variant, seed) pair on identical data and writes one CSV
/// row per pair. Each run is scored on its training corpus by default; pass
/// eval_data_dir to score all runs on a held-out dataset instead, which
/// compares how the variants generalize rather than how well they memorize.
/// A variant whose training aborts is recorded as failed and the sweep
/// continues.
/// CSV columns: variant,seed,psnr,mssim,mse,age,peps,pceps,masked_psnr,status
std::vector<AblateRow> ablate(const TrainConfig& base, const std::vector<std::string>& variants,
                              const std::vector<uint64_t>& seeds,
                              const std::string& data_dir = "", const std::string& out_root = "",
                              const std::string& eval_data_dir = "");

void write_ablate_csv(const std::string& path, const std::vector<AblateRow>& rows);

// -------------------------------------------------------------------- misc

/// out_root precedence: explicit argument, FETNET_OUT_ROOT, "./runs".
std::string resolve_out_root(const std::string& explicit_root);

/// Creates <out_root>/<stem>_<utc timestamp>[_k]; suffixes on collision.
std::string make_run_dir(const std::string& out_root, const std::string& stem);

/// Loads a triplet corpus: from a dataset directory when `data_dir` is
/// nonempty, otherwise the deterministic synthetic corpus for the config.
std::vector<ImageTriplet> load_corpus(const TrainConfig& cfg, const std::string& data_dir);

} // namespace fetnet
