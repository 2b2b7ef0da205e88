#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tokmark/codebook.hpp"
#include "tokmark/coder.hpp"
#include "tokmark/config.hpp"
#include "tokmark/corpus.hpp"
#include "tokmark/generator.hpp"
#include "tokmark/sync.hpp"
#include "tokmark/transforms.hpp"
#include "tokmark/wm_core.hpp"

namespace tokmark {

enum class Variant : uint8_t { base, ft, ft_augs, ft_augs_sync };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Everything a detection run needs in memory.
struct Artifacts {
    Codebook codebook;
    std::vector<uint8_t> alive;
    LinearCoder coder_ft;      // finetuned without augmentations
    LinearCoder coder_ft_augs; // finetuned with the augmentation ramp
    BigramModel model;

    const LinearCoder* coder_for(Variant v) const;
};

struct ExperimentConfig {
    uint64_t seed = 1;
    int workers = 1;
    std::string out_dir = "out";

    // watermark
    WatermarkConfig wm;          // split_mode applies to image streams
    int stream_length = 64;      // tokens per generated image (8x8 grid)

    // tokenizer / corpus
    int corpus_count = 200;
    int image_size = 64;
    int codebook_k = 256;
    int patch_size = 8;
    int kmeans_iters = 25;

    // generator
    double smoothing = 0.05;
    double temperature = 1.0;

    // finetune
    FinetuneConfig ft;

    // sync
    SyncConfig sync;

    // eval
    std::vector<Variant> variants{Variant::base, Variant::ft, Variant::ft_augs,
                                  Variant::ft_augs_sync};
    int samples = 200;
    std::vector<double> fprs{0.01};
    bool summary_only = false;

    // joint detection
    int joint_trials = 200;
    int text_length = 32;
    int text_vocab = 512;
    double zipf_exponent = 1.05;
    std::vector<double> corruption_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    double weak_noise = 0.1;
    double strong_noise = 0.4;

    // fpr-check
    int h0_samples = 5000;
    int h0_stream_length = 256;
    int drift_samples = 201;
    int drift_stream_length = 100000;
    int n_alive_override = 0; // 0: use the codebook's own alive set

    static ExperimentConfig from_config(const Config& cfg);
    uint64_t config_hash() const;
};

/// Trains codebook + coders + generator from a fresh synthetic corpus.
/// Deterministic in cfg.seed.
Artifacts build_artifacts(const ExperimentConfig& cfg);

struct DetectionOutcome {
    double p_value = 1.0;
    double token_match = 0.0;
    bool sync_reverted = false;
};

/// One end-to-end watermarked sample: generate, decode with the variant's
/// decoder, optionally embed the sync signal, attack, optionally estimate and
/// revert, re-encode with the variant's encoder replica, score.
DetectionOutcome run_sample(const Artifacts& art, const ExperimentConfig& cfg,
                            Variant variant, const TransformSpec& attack,
                            uint64_t sample_seed);

struct EvalRow {
    std::string variant;
    std::string family;
    double parameter = 0.0;
    bool is_summary = false;
    int samples = 0;
    std::vector<double> tpr; // aligned with cfg.fprs
    double mean_tm = 0.0;
    double mean_p = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<double> fprs;
    uint64_t seed = 0;
    uint64_t config_hash = 0;
    int64_t detections = 0;

    std::string to_csv() const;
    std::string to_json() const;
};

EvalReport run_eval(const Artifacts& art, const ExperimentConfig& cfg);

struct FprRow {
    std::string split;      // "uniform" | "stratified"
    std::string gamma_mode; // "gamma" | "gamma_prime"
    int stream_length = 0;
    int samples = 0;
    double ks = 0.0;        // two-sided
    double ks_plus = 0.0;   // anti-conservative excess; the soundness gate
    double median_p = 0.0;
};

struct FprReport {
    std::vector<FprRow> rows;
    std::vector<double> histogram; // 20-bin H0 p-value histogram, stratified run
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    std::string to_csv() const;
    std::string to_json() const;
};

FprReport run_fpr_check(const Artifacts& art, const ExperimentConfig& cfg);

struct JointRow {
    double corruption = 0.0;
    double image_noise = 0.0;
    int trials = 0;
    double text_tpr = 0.0;
    double joint_tpr = 0.0;
};

struct JointReport {
    std::vector<JointRow> rows;
    uint64_t seed = 0;
    uint64_t config_hash = 0;

    std::string to_csv() const;
    std::string to_json() const;
};

JointReport run_joint(const Artifacts& art, const ExperimentConfig& cfg);

/// Deterministic parallel map: results land in index order no matter how many
/// workers run.
void parallel_for(int64_t count, int workers,
                  const std::function<void(int64_t)>& fn);

} // namespace tokmark
