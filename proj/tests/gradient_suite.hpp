#pragma once

// Central-difference checks of every loss against autograd, shared by the unit
// tests and the acceptance binary. Runs in double precision on a tiny model.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evc/losses.hpp"
#include "evc/networks.hpp"

namespace evc::testing {

struct GradCheck {
  std::string loss;
  std::string network;
  int checked = 0;
  int failed = 0;
  int kinks = 0;  // coordinates redrawn because a kink lay within one step
  double worst_rel = 0.0;  // largest |fd - ad| / max(|fd|, |ad|) among coordinates above atol
  double worst_fd = 0.0, worst_ad = 0.0;
};

struct GradSuiteOptions {
  int coordinates = 100;
  double step = 1e-6;
  double rtol = 1e-3;
  /// Pass iff |fd - ad| <= atol + rtol * max(|fd|, |ad|). atol sits well above the
  /// cancellation error of the difference quotient (~1e-16 * |loss| / step).
  double atol = 1e-8;
  std::uint64_t seed = 17;
};

inline GradCheck check_module(const std::string& loss_name, const std::string& net_name,
                              torch::nn::Module& module, const std::function<torch::Tensor()>& loss,
                              const GradSuiteOptions& opt, std::mt19937_64& rng) {
  GradCheck out{loss_name, net_name};
  auto params = module.parameters();
  std::vector<torch::Tensor> ad_grads;
  {
    auto value = loss();
    std::vector<torch::Tensor> inputs(params.begin(), params.end());
    ad_grads = torch::autograd::grad({value}, inputs, {}, false, false, /*allow_unused=*/true);
  }
  std::int64_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::uniform_int_distribution<std::int64_t> pick(0, total - 1);

  torch::NoGradGuard ng;
  const double center = loss().item<double>();
  while (out.checked < opt.coordinates) {
    std::int64_t flat = pick(rng);
    std::size_t which = 0;
    while (flat >= params[which].numel()) flat -= params[which++].numel();
    auto view = params[which].view(-1);
    const double original = view[flat].item<double>();
    view[flat] = original + opt.step;
    const double up = loss().item<double>();
    view[flat] = original - opt.step;
    const double down = loss().item<double>();
    view[flat] = original;
    const double fd = (up - down) / (2.0 * opt.step);
    const double ad = ad_grads[which].defined() ? ad_grads[which].view(-1)[flat].item<double>() : 0.0;
    // One-sided slopes that disagree mean the loss is not smooth on [x - h, x + h]
    // (an L1 term or a leaky unit changing sides); autograd's one-sided choice is
    // then not comparable, so the coordinate is redrawn.
    const double fwd = (up - center) / opt.step, bwd = (center - down) / opt.step;
    if (std::abs(fwd - bwd) > opt.rtol * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) {
      if (++out.kinks > 10 * opt.coordinates) break;
      continue;
    }
    const double scale = std::max(std::abs(fd), std::abs(ad));
    ++out.checked;
    if (std::abs(fd - ad) > opt.atol + opt.rtol * scale) ++out.failed;
    if (scale <= opt.atol) continue;
    const double rel = std::abs(fd - ad) / scale;
    if (rel > out.worst_rel) {
      out.worst_rel = rel;
      out.worst_fd = fd;
      out.worst_ad = ad;
    }
  }
  return out;
}

/// Every loss in the losses module, each checked on every network it reaches.
inline std::vector<GradCheck> run_gradient_suite(const GradSuiteOptions& opt = {}) {
  torch::manual_seed(static_cast<std::uint64_t>(opt.seed));
  std::mt19937_64 rng(opt.seed);
  ArchConfig arch;
  arch.n_bins = 16;
  arch.n_speakers = 3;
  arch.n_emotions = 3;
  arch.style_dim = 4;
  arch.latent_dim = 4;
  arch.pitch_dim = 4;
  arch.hidden = 8;
  arch.mapping_hidden = 8;
  arch.generator_blocks = 2;
  ModelSet m(arch);
  m.to(torch::kFloat64);
  m.freeze_helpers();

  const auto dopt = torch::TensorOptions().dtype(torch::kFloat64);
  const int B = 3, T = 24;
  auto x = torch::randn({B, arch.n_bins, T}, dopt);
  auto ref_sp = torch::randn({B, arch.n_bins, T}, dopt);
  auto ref_em = torch::randn({B, arch.n_bins, T}, dopt);
  auto z1 = torch::randn({B, arch.latent_dim}, dopt), z2 = torch::randn({B, arch.latent_dim}, dopt);
  auto z3 = torch::randn({B, arch.latent_dim}, dopt), z4 = torch::randn({B, arch.latent_dim}, dopt);
  const std::vector<DomainPair> source = {{0, 0}, {1, 2}, {2, 0}};
  const std::vector<DomainPair> target = {{1, 1}, {0, 2}, {2, 2}};
  const auto cat = build_catalog_with_neutral_only({"a", "b", "c"}, {"n", "h", "s"}, {"c"}, "n");
  auto src_idx = flat_pair_tensor(cat, source), trg_idx = flat_pair_tensor(cat, target);
  auto src_sp = domain_tensor(source, StyleKind::speaker), src_em = domain_tensor(source, StyleKind::emotion);
  auto trg_sp = domain_tensor(target, StyleKind::speaker), trg_em = domain_tensor(target, StyleKind::emotion);
  const auto mask = fpm_mask(cat, target);  // the third target is unseen

  GenerateFn gen = [&](const torch::Tensor& in, const torch::Tensor& hs, const torch::Tensor& he) {
    return m.generator->forward(in, m.pitch->forward(in).features, hs, he);
  };
  PairLogitFn disc = [&](const torch::Tensor& in, const torch::Tensor& idx) {
    return m.discriminator->forward(in, idx);
  };
  LogitFn c_sp = [&](const torch::Tensor& in) { return m.classifier_sp->forward(in); };
  LogitFn c_em = [&](const torch::Tensor& in) { return m.classifier_em->forward(in); };
  EncodeFn s_sp = [&](const torch::Tensor& in, const torch::Tensor& d) { return m.style_sp->forward(in, d); };
  EncodeFn s_em = [&](const torch::Tensor& in, const torch::Tensor& d) { return m.style_em->forward(in, d); };
  FeatureFn contour = [&](const torch::Tensor& in) { return m.pitch->forward(in).contour; };
  FeatureFn content = [&](const torch::Tensor& in) { return m.content->features(in); };

  auto ref_styles = [&] {
    return std::pair{s_sp(ref_sp, trg_sp), s_em(ref_em, trg_em)};
  };
  auto fake_ref = [&] {
    auto [hs, he] = ref_styles();
    return gen(x, hs, he);
  };

  struct Case {
    std::string name;
    std::function<torch::Tensor()> loss;
    std::vector<std::pair<std::string, torch::nn::Module*>> networks;
  };
  torch::nn::Module* G = m.generator.ptr().get();
  torch::nn::Module* Ssp = m.style_sp.ptr().get();
  torch::nn::Module* Sem = m.style_em.ptr().get();
  torch::nn::Module* Msp = m.mapping_sp.ptr().get();
  torch::nn::Module* Mem = m.mapping_em.ptr().get();
  torch::nn::Module* D = m.discriminator.ptr().get();
  torch::nn::Module* Csp = m.classifier_sp.ptr().get();
  torch::nn::Module* Cem = m.classifier_em.ptr().get();

  std::vector<Case> cases = {
      {"adversarial/discriminator",
       [&] {
         return adversarial_loss(disc, x, src_idx, fake_ref(), trg_idx, mask, AdversarialSide::discriminator);
       },
       {{"D", D}}},
      {"adversarial/generator",
       [&] { return adversarial_loss(disc, x, src_idx, fake_ref(), trg_idx, mask, AdversarialSide::generator); },
       {{"G", G}, {"S_sp", Ssp}, {"S_em", Sem}, {"D", D}}},
      {"advcls/classifier",
       [&] { return adv_source_classifier_loss(c_sp, c_em, fake_ref(), source, target, ClassifierSide::classifier); },
       {{"C_sp", Csp}, {"C_em", Cem}}},
      {"advcls/generator",
       [&] { return adv_source_classifier_loss(c_sp, c_em, fake_ref(), source, target, ClassifierSide::generator); },
       {{"G", G}, {"S_sp", Ssp}, {"S_em", Sem}, {"C_sp", Csp}, {"C_em", Cem}}},
      {"style_reconstruction",
       [&] {
         auto [hs, he] = ref_styles();
         return style_reconstruction_loss(s_sp, s_em, gen(x, hs, he), hs, he, trg_sp, trg_em);
       },
       {{"G", G}, {"S_sp", Ssp}, {"S_em", Sem}}},
      {"style_diversification",
       [&] {
         auto hs = m.mapping_sp->forward(z1, trg_sp), he = m.mapping_em->forward(z2, trg_em);
         auto hs2 = m.mapping_sp->forward(z3, trg_sp), he2 = m.mapping_em->forward(z4, trg_em);
         return style_diversification_loss(gen, x, hs, hs2, he, he2);
       },
       {{"G", G}, {"M_sp", Msp}, {"M_em", Mem}}},
      {"f0_consistency", [&] { return f0_consistency_loss(contour, x, fake_ref()); }, {{"G", G}, {"S_em", Sem}}},
      {"norm_consistency", [&] { return norm_consistency_loss(x, fake_ref()); }, {{"G", G}, {"S_sp", Ssp}}},
      {"speech_consistency", [&] { return speech_consistency_loss(content, x, fake_ref()); }, {{"G", G}}},
      {"cycle_consistency",
       [&] { return cycle_consistency_loss(gen, s_sp, s_em, x, fake_ref(), src_sp, src_em); },
       {{"G", G}, {"S_sp", Ssp}, {"S_em", Sem}}},
      {"full_objective/generator",
       [&] {
         LossComponents g;
         auto hs = m.mapping_sp->forward(z1, trg_sp), he = m.mapping_em->forward(z2, trg_em);
         auto hs2 = m.mapping_sp->forward(z3, trg_sp), he2 = m.mapping_em->forward(z4, trg_em);
         auto fake = gen(x, hs, he);
         g.adv_g = adversarial_loss(disc, x, src_idx, fake, trg_idx, mask, AdversarialSide::generator);
         g.advcls_g = adv_source_classifier_loss(c_sp, c_em, fake, source, target, ClassifierSide::generator);
         g.sty = style_reconstruction_loss(s_sp, s_em, fake, hs, he, trg_sp, trg_em);
         g.ds = style_diversification_loss(gen, x, hs, hs2, he, he2, fake);
         g.f0 = f0_consistency_loss(contour, x, fake);
         g.norm = norm_consistency_loss(x, fake);
         g.asr = speech_consistency_loss(content, x, fake);
         g.cyc = cycle_consistency_loss(gen, s_sp, s_em, x, fake, src_sp, src_em);
         return full_objective(LossWeights{}, AnnealState{}, 100.0, g).generator;
       },
       {{"G", G}, {"M_sp", Msp}, {"M_em", Mem}, {"S_sp", Ssp}, {"S_em", Sem}}},
      {"full_objective/discriminator",
       [&] {
         LossComponents d;
         auto fake = fake_ref().detach();
         d.adv_d = adversarial_loss(disc, x, src_idx, fake, trg_idx, mask, AdversarialSide::discriminator);
         d.advcls_c = adv_source_classifier_loss(c_sp, c_em, fake, source, target, ClassifierSide::classifier);
         return full_objective(LossWeights{}, AnnealState{}, 100.0, d).discriminator;
       },
       {{"D", D}, {"C_sp", Csp}, {"C_em", Cem}}},
  };

  std::vector<GradCheck> results;
  for (auto& c : cases)
    for (auto& [name, module] : c.networks)
      results.push_back(check_module(c.name, name, *module, c.loss, opt, rng));
  return results;
}

}  // namespace evc::testing
