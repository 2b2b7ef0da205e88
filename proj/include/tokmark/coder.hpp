#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tokmark/transforms.hpp"
#include "tokmark/wm_core.hpp"

namespace tokmark {

struct Codebook;

/// Linear decoder D (codebook vector -> pixel patch) and encoder replica E'
/// (pixel patch -> latent), both d x d with bias, plus the frozen initial
/// decoder D0. Both start as the identity map, matching the default
/// paste-the-entry decoder and the frozen encoder.
struct LinearCoder {
    Eigen::MatrixXd D;
    Eigen::VectorXd d_bias;
    Eigen::MatrixXd E;
    Eigen::VectorXd e_bias;
    Eigen::MatrixXd D0;
    Eigen::VectorXd d0_bias;

    static LinearCoder identity(int dim);

    int dim() const { return int(D.rows()); }
    bool is_identity_decoder() const;

    /// patch_out = clamp01(D * z + d_bias), in float pixel space.
    void decode_patch(const float* z, float* patch_out) const;
    /// latent_out = E * patch + e_bias.
    void encode_patch(const float* patch, float* latent_out) const;
};

struct CoderGradients {
    Eigen::MatrixXd dD;
    Eigen::VectorXd dd_bias;
    Eigen::MatrixXd dE;
    Eigen::VectorXd de_bias;
};

/// Augmentation schedule: consecutive stages, each active for `epochs` epochs.
struct AugStage {
    int epochs = 0;
    std::vector<TransformSpec> augs;
};

struct FinetuneConfig {
    double lambda = 1.0;
    double p_aug = 0.5;
    int epochs = 10;
    int batch_size = 16;
    double learning_rate = 5e-3;
    double lr_decay = 0.9;
    std::vector<AugStage> stages;

    void validate() const;
    /// The default ramp: 1 epoch without augmentations, then three
    /// progressively harder stages (1 + 4 + the rest of the epochs).
    static FinetuneConfig defaults(int epochs = 10);
};

/// Reverse-cycle loss for one token stream:
///   L = mean_i || z_i - E'(a(D(z_i))) ||^2,  z_i = C[s_i].
/// Gradients for E' are exact. Gradients for D use the straight-through
/// convention: the augmentation acts in the forward pass but is treated as
/// the identity in the backward pass (the residual between augmented and
/// raw decoded pixels is held fixed).
double rcc_loss(const TokenStream& tokens, const LinearCoder& coder,
                const Codebook& cb, const TransformSpec& aug,
                CoderGradients* grads = nullptr);

/// Regularizer anchoring the decoder to its initial weights:
///   L = mean_i || D(z_i) - D0(z_i) ||^2,  exact gradients.
double reg_loss(const TokenStream& tokens, const LinearCoder& coder,
                const Codebook& cb, CoderGradients* grads = nullptr);

struct EpochTrace {
    int epoch = 0;
    double rcc = 0.0;
    double reg = 0.0;
};

/// Mini-batch SGD on L_RCC + lambda * L_reg over pre-tokenized streams.
/// Each step samples one augmentation from the active stage with probability
/// p_aug (identity otherwise). Deterministic given (cfg, seed). Throws on
/// NaN loss. The codebook is never touched.
std::vector<EpochTrace> finetune(const std::vector<TokenStream>& dataset,
                                 LinearCoder& coder, const Codebook& cb,
                                 const FinetuneConfig& cfg, uint64_t seed);

/// Checkpoint: magic "TKCODER1", u32 d, u32 version, then f64 D, d_bias, E,
/// e_bias, D0, d0_bias.
void save_coder(const LinearCoder& coder, const std::string& path);
LinearCoder load_coder(const std::string& path);

void write_trace_csv(const std::vector<EpochTrace>& trace, const std::string& path);

} // namespace tokmark
