#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "cast/feature_extractor.hpp"
#include "cast/style_projector.hpp"

namespace cast {

/// Weights of the generator objective and the contrastive temperature.
struct LossWeights {
  double adv = 1.0;
  double cyc = 2.0;
  double contra = 0.2;
  double tau = 0.07;

  void validate() const;
};

/// Per-step scalar loss values. `total` is the weighted generator objective;
/// `contra_msp` and `d_loss` are reported alongside but not part of it.
struct LossReport {
  int64_t step = 0;
  double adv = 0.0;
  double cyc = 0.0;
  double contra_msp = 0.0;
  double contra_g = 0.0;
  double total = 0.0;
  double d_loss = 0.0;
  double lr = 0.0;

  /// "step,adv,cyc,contra_msp,contra_g,total"
  static std::string csv_header();
  std::string csv_row() const;
  static LossReport from_csv_row(const std::string& row);
};

// ---------------------------------------------------------------------------
// Contrastive style loss

/// InfoNCE over M code layers. For each layer i and batch row b:
///   -log( exp(a.p / tau) / (exp(a.p / tau) + sum_j exp(a.n_j / tau)) )
/// averaged over the batch and summed over layers. `negatives[i]` is
/// [N, K_i]; with N = 0 the loss is exactly zero. Inputs are expected to be
/// unit norm.
torch::Tensor info_nce(const std::vector<torch::Tensor>& anchor, const std::vector<torch::Tensor>& positive,
                       const std::vector<torch::Tensor>& negatives, double tau);

inline torch::Tensor info_nce(const StyleCode& anchor, const StyleCode& positive,
                              const std::vector<torch::Tensor>& negatives, double tau) {
  return info_nce(anchor.layers, positive.layers, negatives, tau);
}

// ---------------------------------------------------------------------------
// Adversarial loss over the two domain discriminators

enum class GeneratorAdvForm {
  non_saturating,  // -log D(fake)
  saturating,      // log(1 - D(fake))
};

struct AdversarialTerms {
  torch::Tensor d_loss;  // minimized by the discriminators
  torch::Tensor g_loss;  // minimized by the generator
};

/// Discriminator side for one domain: -[E log D(real) + E log(1 - D(fake))].
torch::Tensor domain_d_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);
/// Generator side for one domain.
torch::Tensor domain_g_loss(const torch::Tensor& d_fake, GeneratorAdvForm form = GeneratorAdvForm::non_saturating);

/// `d_r_fake` is D_R on the realistic-domain fake I_sc and `d_a_fake` is D_A
/// on the artistic-domain fake I_cs. All maps must lie strictly in (0, 1).
/// The value of the two-domain minimax objective equals -d_loss.
AdversarialTerms adversarial_loss(const torch::Tensor& d_r_real, const torch::Tensor& d_r_fake,
                                  const torch::Tensor& d_a_real, const torch::Tensor& d_a_fake,
                                  GeneratorAdvForm form = GeneratorAdvForm::non_saturating);

// ---------------------------------------------------------------------------
// Cycle consistency

/// Elementwise-mean L1 between a reconstruction and its original.
torch::Tensor reconstruction_l1(const torch::Tensor& original, const torch::Tensor& reconstruction);

/// mean|i_c - rec_c| + mean|i_s - rec_s|.
torch::Tensor cycle_loss(const torch::Tensor& i_c, const torch::Tensor& rec_c, const torch::Tensor& i_s,
                         const torch::Tensor& rec_s);

// ---------------------------------------------------------------------------
// Total

/// adv_w * adv_g + cyc_w * cyc + contra_w * contra_g. Throws NumericError
/// naming the first non-finite component.
torch::Tensor total_loss(const torch::Tensor& adv_g, const torch::Tensor& cyc, const torch::Tensor& contra_g,
                         const LossWeights& w);
double total_loss(double adv_g, double cyc, double contra_g, const LossWeights& w);

// ---------------------------------------------------------------------------
// Gram baseline

/// [B, C, H, W] -> [B, C, C] channel inner products over flattened positions.
torch::Tensor gram_matrix(const torch::Tensor& map);

/// Sum over layers of ||Gram(out_i) - Gram(style_i)||_F^2 / (C_i H_i W_i)^2,
/// averaged over the batch.
torch::Tensor gram_style_loss(const FeaturePyramid& f_out, const FeaturePyramid& f_style);

/// Throws NumericError("non-finite loss term '<name>' ...") when `value` is
/// NaN or infinite.
void require_finite(double value, const std::string& name, int64_t step = -1);

}  // namespace cast
