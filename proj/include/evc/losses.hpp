#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "evc/domain_catalog.hpp"

namespace evc {

/// Weights of the full objective. lambda_f0 / lambda_norm are the initial
/// values of the annealed pair.
struct LossWeights {
  double lambda_adv = 1.0;
  double lambda_advcls = 0.5;
  double lambda_sty = 1.0;
  double lambda_ds = 1.0;
  double lambda_f0 = 5.0;
  double lambda_norm = 5.0;
  double lambda_asr = 1.0;
  double lambda_cyc = 1.0;

  void validate() const;
};

/// Linear decay of the F0/norm weights from initial_weight at start_epoch to
/// final_weight at end_epoch.
struct AnnealState {
  int start_epoch = 50;
  int end_epoch = 150;
  double initial_weight = 5.0;
  double final_weight = 0.0;
  bool enabled = true;
};

/// Constant initial_weight up to start_epoch, linear to final_weight at
/// end_epoch, constant afterwards. With `enabled == false` always initial_weight.
double anneal_weight(const AnnealState& state, double epoch);

// Callables let the losses run against trained networks or against hand-built
// functions in tests.
using GenerateFn = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& spk_style,
                                               const torch::Tensor& emo_style)>;
using PairLogitFn = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& pair_index)>;
using LogitFn = std::function<torch::Tensor(const torch::Tensor& x)>;
using EncodeFn = std::function<torch::Tensor(const torch::Tensor& x, const torch::Tensor& domain)>;
using FeatureFn = std::function<torch::Tensor(const torch::Tensor& x)>;

enum class AdversarialSide { discriminator, generator };
enum class ClassifierSide { classifier, generator };

/// Domain-specific adversarial loss with Fake-Pair Masking.
///
/// Only samples with mask.kept[i] contribute. Discriminator side:
/// mean over kept of -[log D(x, source pair) + log(1 - D(fake, target pair))], with `fake`
/// detached. Generator side: mean over kept of -log D(fake, target pair).
/// Returns an exact zero (no graph) when every sample is masked. Pass an
/// all-true mask to disable masking.
torch::Tensor adversarial_loss(const PairLogitFn& discriminator, const torch::Tensor& real,
                               const torch::Tensor& source_pairs, const torch::Tensor& fake,
                               const torch::Tensor& target_pairs, const PairMask& mask,
                               AdversarialSide side);

/// CE(C_sp(fake), spk_domain) + CE(C_em(fake), emo_domain), batch-averaged. Never masked.
/// Classifier side uses the source codes on a detached `fake`; generator side
/// uses the target codes.
torch::Tensor adv_source_classifier_loss(const LogitFn& classifier_sp, const LogitFn& classifier_em,
                                         const torch::Tensor& fake,
                                         const std::vector<DomainPair>& source,
                                         const std::vector<DomainPair>& target, ClassifierSide side);

/// ||spk_style - S_sp(fake, spk_domain)||_1 + ||emo_style - S_em(fake, emo_domain)||_1, with the L1
/// norm summed over embedding dimensions and averaged over the batch.
torch::Tensor style_reconstruction_loss(const EncodeFn& style_sp, const EncodeFn& style_em,
                                        const torch::Tensor& fake, const torch::Tensor& spk_style,
                                        const torch::Tensor& emo_style, const torch::Tensor& spk_domain,
                                        const torch::Tensor& emo_domain);

/// Sum of three mean-absolute differences between generations that vary the
/// emotion style, the speaker style, and the emotion style under the second
/// speaker style. Nonnegative; the objective subtracts it.
/// `base` may carry a precomputed G(x, spk_style, emo_style).
torch::Tensor style_diversification_loss(const GenerateFn& generator, const torch::Tensor& x,
                                         const torch::Tensor& spk_style, const torch::Tensor& spk_style2,
                                         const torch::Tensor& emo_style, const torch::Tensor& emo_style2,
                                         const std::optional<torch::Tensor>& base = std::nullopt);

/// Mean per-frame |F(x) - F(fake)| for normalized contours [B, T].
torch::Tensor f0_consistency_from_contours(const torch::Tensor& source, const torch::Tensor& converted);
/// F is the frozen contour extractor; the source contour carries no gradient.
torch::Tensor f0_consistency_loss(const FeatureFn& contour, const torch::Tensor& x,
                                  const torch::Tensor& fake);

/// (1/T) sum_t | sum_b |x_bt| - sum_b |fake_bt| |, averaged over the batch.
torch::Tensor norm_consistency_loss(const torch::Tensor& x, const torch::Tensor& fake);

/// Mean absolute difference between frozen content-probe feature maps.
torch::Tensor speech_consistency_loss(const FeatureFn& probe_features, const torch::Tensor& x,
                                      const torch::Tensor& fake);

/// Mean |x - G(fake, h_sp_src, h_em_src)| where the source styles are
/// re-extracted from x with the source domain codes.
torch::Tensor cycle_consistency_loss(const GenerateFn& generator, const EncodeFn& style_sp,
                                     const EncodeFn& style_em, const torch::Tensor& x,
                                     const torch::Tensor& fake, const torch::Tensor& source_sp,
                                     const torch::Tensor& source_em);

/// Per-batch component values. Missing components contribute nothing.
struct LossComponents {
  std::optional<torch::Tensor> adv_d, advcls_c;                       // D/C side
  std::optional<torch::Tensor> adv_g, advcls_g, sty, ds, f0, norm, asr, cyc;  // G side
};

struct Objective {
  torch::Tensor generator;      // G, S, M side
  torch::Tensor discriminator;  // D and C side
  double lambda_f0 = 0.0;       // effective annealed weights used
  double lambda_norm = 0.0;
};

/// Weighted sums. lambda_f0 and lambda_norm are scaled by
/// anneal_weight(state, epoch) / state.initial_weight, so an enabled schedule
/// reproduces the 5 -> 0 ramp when the configured weights are 5.
/// The diversification term enters the generator side with a negative sign.
Objective full_objective(const LossWeights& weights, const AnnealState& anneal, double epoch,
                         const LossComponents& parts);

}  // namespace evc
