#include "evc/losses.hpp"

#include <algorithm>
#include <cmath>

#include "evc/networks.hpp"

namespace evc {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda_adv", lambda_adv}, {"lambda_advcls", lambda_advcls}, {"lambda_sty", lambda_sty},
      {"lambda_ds", lambda_ds},   {"lambda_f0", lambda_f0},         {"lambda_norm", lambda_norm},
      {"lambda_asr", lambda_asr}, {"lambda_cyc", lambda_cyc}};
  for (const auto& [name, value] : all)
    if (!std::isfinite(value) || value < 0.0)
      throw Error(std::string("loss weight ") + name + " must be finite and >= 0");
}

double anneal_weight(const AnnealState& s, double epoch) {
  if (s.end_epoch <= s.start_epoch) throw Error("anneal: start_epoch must be < end_epoch");
  if (!s.enabled || epoch <= s.start_epoch) return s.initial_weight;
  if (epoch >= s.end_epoch) return s.final_weight;
  const double frac = (epoch - s.start_epoch) / static_cast<double>(s.end_epoch - s.start_epoch);
  return s.initial_weight + (s.final_weight - s.initial_weight) * frac;
}

torch::Tensor adversarial_loss(const PairLogitFn& discriminator, const torch::Tensor& real,
                               const torch::Tensor& source_pairs, const torch::Tensor& fake,
                               const torch::Tensor& target_pairs, const PairMask& mask,
                               AdversarialSide side) {
  if (fake.size(0) == 0) throw Error("adversarial loss: empty batch");
  if (static_cast<std::int64_t>(mask.size()) != fake.size(0))
    throw Error("adversarial loss: mask does not align with the batch");
  const auto kept = mask.kept_indices();
  if (kept.empty()) return torch::zeros({}, fake.options().requires_grad(false));
  auto idx = torch::tensor(kept, torch::kLong);
  const bool all_kept = kept.size() == mask.size();
  auto pick = [&](const torch::Tensor& t) { return all_kept ? t : t.index_select(0, idx); };

  if (side == AdversarialSide::generator) {
    auto logits = discriminator(pick(fake), pick(target_pairs));
    return F::softplus(-logits).mean();
  }
  auto real_logits = discriminator(pick(real), pick(source_pairs));
  auto fake_logits = discriminator(pick(fake).detach(), pick(target_pairs));
  return (F::softplus(-real_logits) + F::softplus(fake_logits)).mean();
}

torch::Tensor adv_source_classifier_loss(const LogitFn& classifier_sp, const LogitFn& classifier_em,
                                         const torch::Tensor& fake,
                                         const std::vector<DomainPair>& source,
                                         const std::vector<DomainPair>& target, ClassifierSide side) {
  const bool cls = side == ClassifierSide::classifier;
  const auto& labels = cls ? source : target;
  if (static_cast<std::int64_t>(labels.size()) != fake.size(0))
    throw Error("source classifier loss: labels do not align with the batch");
  auto input = cls ? fake.detach() : fake;
  auto sp_logits = classifier_sp(input);
  auto em_logits = classifier_em(input);
  auto spk_domain = domain_tensor(labels, StyleKind::speaker);
  auto emo_domain = domain_tensor(labels, StyleKind::emotion);
  if (spk_domain.max().item<std::int64_t>() >= sp_logits.size(1) || spk_domain.min().item<std::int64_t>() < 0 ||
      emo_domain.max().item<std::int64_t>() >= em_logits.size(1) || emo_domain.min().item<std::int64_t>() < 0)
    throw Error("source classifier loss: label out of range");
  return F::cross_entropy(sp_logits, spk_domain) + F::cross_entropy(em_logits, emo_domain);
}

torch::Tensor style_reconstruction_loss(const EncodeFn& style_sp, const EncodeFn& style_em,
                                        const torch::Tensor& fake, const torch::Tensor& spk_style,
                                        const torch::Tensor& emo_style, const torch::Tensor& spk_domain,
                                        const torch::Tensor& emo_domain) {
  auto re_sp = style_sp(fake, spk_domain);
  auto re_em = style_em(fake, emo_domain);
  if (re_sp.sizes() != spk_style.sizes() || re_em.sizes() != emo_style.sizes())
    throw Error("style reconstruction: embedding dimension mismatch");
  return (spk_style - re_sp).abs().sum(1).mean() + (emo_style - re_em).abs().sum(1).mean();
}

torch::Tensor style_diversification_loss(const GenerateFn& generator, const torch::Tensor& x,
                                         const torch::Tensor& spk_style, const torch::Tensor& spk_style2,
                                         const torch::Tensor& emo_style, const torch::Tensor& emo_style2,
                                         const std::optional<torch::Tensor>& base) {
  auto g11 = base ? *base : generator(x, spk_style, emo_style);
  auto g12 = generator(x, spk_style, emo_style2);
  auto g21 = generator(x, spk_style2, emo_style);
  auto g22 = generator(x, spk_style2, emo_style2);
  return (g11 - g12).abs().mean() + (g11 - g21).abs().mean() + (g21 - g22).abs().mean();
}

torch::Tensor f0_consistency_from_contours(const torch::Tensor& source, const torch::Tensor& converted) {
  if (source.sizes() != converted.sizes())
    throw Error("f0 consistency: frame-count mismatch");
  return (source.detach() - converted).abs().mean();
}

torch::Tensor f0_consistency_loss(const FeatureFn& contour, const torch::Tensor& x,
                                  const torch::Tensor& fake) {
  if (x.sizes() != fake.sizes()) throw Error("f0 consistency: frame-count mismatch");
  torch::Tensor src;
  {
    torch::NoGradGuard ng;
    src = contour(x);
  }
  return f0_consistency_from_contours(src, contour(fake));
}

torch::Tensor norm_consistency_loss(const torch::Tensor& x, const torch::Tensor& fake) {
  if (x.sizes() != fake.sizes()) throw Error("norm consistency: shape mismatch");
  auto nx = x.abs().sum(1);
  auto nf = fake.abs().sum(1);
  return (nx - nf).abs().mean();
}

torch::Tensor speech_consistency_loss(const FeatureFn& probe_features, const torch::Tensor& x,
                                      const torch::Tensor& fake) {
  torch::Tensor fx;
  {
    torch::NoGradGuard ng;
    fx = probe_features(x);
  }
  return (fx - probe_features(fake)).abs().mean();
}

torch::Tensor cycle_consistency_loss(const GenerateFn& generator, const EncodeFn& style_sp,
                                     const EncodeFn& style_em, const torch::Tensor& x,
                                     const torch::Tensor& fake, const torch::Tensor& source_sp,
                                     const torch::Tensor& source_em) {
  auto spk_style = style_sp(x, source_sp);
  auto emo_style = style_em(x, source_em);
  auto rec = generator(fake, spk_style, emo_style);
  return (rec - x).abs().mean();
}

Objective full_objective(const LossWeights& w, const AnnealState& anneal, double epoch,
                         const LossComponents& p) {
  w.validate();
  const double scale =
      anneal.initial_weight > 0.0 ? anneal_weight(anneal, epoch) / anneal.initial_weight : 0.0;
  Objective out;
  out.lambda_f0 = w.lambda_f0 * scale;
  out.lambda_norm = w.lambda_norm * scale;

  auto options = torch::TensorOptions().dtype(torch::kFloat32);
  for (const auto* t : {&p.adv_d, &p.advcls_c, &p.adv_g, &p.advcls_g, &p.sty, &p.ds, &p.f0,
                        &p.norm, &p.asr, &p.cyc})
    if (*t) {
      options = options.dtype((*t)->scalar_type());
      break;
    }
  out.generator = torch::zeros({}, options);
  out.discriminator = torch::zeros({}, options);
  auto add = [](torch::Tensor& acc, const std::optional<torch::Tensor>& term, double weight) {
    if (term && weight != 0.0) acc = acc + weight * *term;
  };
  add(out.discriminator, p.adv_d, w.lambda_adv);
  add(out.discriminator, p.advcls_c, w.lambda_advcls);
  add(out.generator, p.adv_g, w.lambda_adv);
  add(out.generator, p.advcls_g, w.lambda_advcls);
  add(out.generator, p.sty, w.lambda_sty);
  add(out.generator, p.ds, -w.lambda_ds);
  add(out.generator, p.f0, out.lambda_f0);
  add(out.generator, p.norm, out.lambda_norm);
  add(out.generator, p.asr, w.lambda_asr);
  add(out.generator, p.cyc, w.lambda_cyc);
  return out;
}

}  // namespace evc
