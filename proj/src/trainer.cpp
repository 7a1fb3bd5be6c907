#include "evc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "evc/metrics.hpp"
#include "evc/util.hpp"

namespace evc {

// --- Adam ---------------------------------------------------------------------

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, double lr, double beta1,
           double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params)
    slots_.push_back({name, p, torch::zeros_like(p), torch::zeros_like(p), 0});
}

void Adam::zero_grad() {
  for (auto& s : slots_)
    if (s.param.grad().defined()) s.param.mutable_grad() = torch::Tensor();
}

void Adam::step() {
  torch::NoGradGuard ng;
  ++steps_;
  for (auto& s : slots_) {
    const auto& g = s.param.grad();
    if (!g.defined()) continue;
    ++s.count;
    s.m.mul_(beta1_).add_(g, 1.0 - beta1_);
    s.v.mul_(beta2_).addcmul_(g, g, 1.0 - beta2_);
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.count));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.count));
    auto denom = (s.v / bc2).sqrt_().add_(eps_);
    s.param.addcdiv_(s.m, denom, -lr_ / bc1);
  }
}

std::vector<std::pair<std::string, torch::Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& s : slots_) {
    out.emplace_back("m." + s.name, s.m);
    out.emplace_back("v." + s.name, s.v);
    out.emplace_back("count." + s.name, torch::tensor({s.count}, torch::kLong));
  }
  return out;
}

void Adam::load_state(const std::map<std::string, torch::Tensor>& tensors, std::int64_t steps,
                      const std::string& prefix) {
  torch::NoGradGuard ng;
  steps_ = steps;
  for (auto& s : slots_) {
    auto find = [&](const std::string& key) {
      auto it = tensors.find(prefix + key + s.name);
      if (it == tensors.end()) throw Error("checkpoint lacks optimizer state " + prefix + key + s.name);
      return it->second;
    };
    s.m.copy_(find("m."));
    s.v.copy_(find("v."));
    s.count = find("count.").item<std::int64_t>();
  }
}

// --- config -------------------------------------------------------------------

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_vdp: return "no-vdp";
    case Ablation::no_fpm: return "no-fpm";
    case Ablation::no_anneal: return "no-anneal";
    case Ablation::no_f0norm: return "no-f0norm";
  }
  return "full";
}

Ablation parse_ablation(const std::string& name) {
  for (auto a : {Ablation::full, Ablation::no_vdp, Ablation::no_fpm, Ablation::no_anneal,
                 Ablation::no_f0norm})
    if (ablation_name(a) == name) return a;
  throw Error("unknown ablation '" + name + "' (valid: full, no-vdp, no-fpm, no-anneal, no-f0norm)");
}

TrainingConfig TrainingConfig::with_ablation(Ablation a) const {
  TrainingConfig c = *this;
  switch (a) {
    case Ablation::full: break;
    case Ablation::no_vdp: c.vdp = false; break;
    case Ablation::no_fpm: c.fpm = false; c.generator_fpm = false; break;
    case Ablation::no_anneal: c.anneal = false; break;
    case Ablation::no_f0norm: c.weights.lambda_f0 = 0.0; c.weights.lambda_norm = 0.0; break;
  }
  return c;
}

AnnealState TrainingConfig::anneal_state() const {
  AnnealState s;
  s.start_epoch = anneal_start_epoch >= 0 ? anneal_start_epoch : classifier_start_epoch;
  s.end_epoch = anneal_end_epoch >= 0 ? anneal_end_epoch : total_epochs;
  s.initial_weight = 5.0;
  s.final_weight = 0.0;
  s.enabled = anneal;
  return s;
}

void TrainingConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  check(total_epochs >= 1, "train.total_epochs must be >= 1");
  check(classifier_start_epoch >= 0 && classifier_start_epoch < total_epochs,
        "train.classifier_start_epoch must be in [0, total_epochs)");
  check(batch_size >= 2, "train.batch_size must be >= 2");
  check(steps_per_epoch >= 0, "train.steps_per_epoch must be >= 0");
  check(crop_frames >= 8, "train.crop_frames must be >= 8");
  check(checkpoint_interval >= 0, "train.checkpoint_interval must be >= 0");
  for (auto [name, lr] : {std::pair{"lr.generator", lr_generator}, {"lr.style", lr_style},
                          {"lr.mapping", lr_mapping}, {"lr.discriminator", lr_discriminator},
                          {"lr.classifier", lr_classifier}})
    check(lr > 0.0 && std::isfinite(lr), std::string("train.") + name + " must be > 0");
  const auto a = anneal_state();
  check(a.start_epoch < a.end_epoch, "anneal start epoch must be < anneal end epoch");
  try {
    weights.validate();
  } catch (const Error& e) {
    problems.push_back(e.what());
  }
  check(arch.style_dim >= 1 && arch.latent_dim >= 1 && arch.pitch_dim >= 1 && arch.hidden >= 4,
        "arch dimensions must be positive");
  check(arch.generator_blocks >= 1, "arch.generator_blocks must be >= 1");
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw Error(msg);
  }
}

double StepMetrics::get(const std::string& name) const {
  for (const auto& [k, v] : values)
    if (k == name) return v;
  throw Error("metric '" + name + "' not recorded");
}

// --- state --------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, torch::Tensor>> named_params(
    std::initializer_list<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> modules) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [prefix, m] : modules)
    for (const auto& item : m->named_parameters()) out.emplace_back(prefix + "." + item.key(), item.value());
  return out;
}

}  // namespace

TrainState::TrainState(const ArchConfig& arch) : models(arch) {}

std::vector<std::pair<std::string, Adam*>> TrainState::optimizers() {
  return {{"G", &opt_generator}, {"S", &opt_style}, {"M", &opt_mapping},
          {"D", &opt_discriminator}, {"C", &opt_classifier}};
}

void reset_optimizers(TrainState& st, const TrainingConfig& c) {
  auto& m = st.models;
  st.opt_generator = Adam(named_params({{"G", m.generator.ptr()}}), c.lr_generator);
  st.opt_style = Adam(named_params({{"S_sp", m.style_sp.ptr()}, {"S_em", m.style_em.ptr()}}), c.lr_style);
  st.opt_mapping =
      Adam(named_params({{"M_sp", m.mapping_sp.ptr()}, {"M_em", m.mapping_em.ptr()}}), c.lr_mapping);
  st.opt_discriminator = Adam(named_params({{"D", m.discriminator.ptr()}}), c.lr_discriminator);
  st.opt_classifier =
      Adam(named_params({{"C_sp", m.classifier_sp.ptr()}, {"C_em", m.classifier_em.ptr()}}),
           c.lr_classifier);
}

namespace {

ArchConfig resolve_arch(const TrainingConfig& c, const Corpus& corpus) {
  ArchConfig a = c.arch;
  a.n_bins = corpus.manifest.generator.n_bins;
  a.n_speakers = corpus.manifest.catalog.num_speakers();
  a.n_emotions = corpus.manifest.catalog.num_emotions();
  a.content_classes = corpus.manifest.generator.n_content_symbols + 1;
  return a;
}

int resolve_steps_per_epoch(const TrainingConfig& c, const Corpus& corpus) {
  if (c.steps_per_epoch > 0) return c.steps_per_epoch;
  const auto n = static_cast<int>(corpus.indices(Split::train).size());
  return std::max(1, (n + c.batch_size - 1) / c.batch_size);
}

}  // namespace

TrainState init_train_state(const TrainingConfig& config, const Corpus& corpus) {
  config.validate();
  torch::manual_seed(config.seed);
  TrainState st(resolve_arch(config, corpus));
  st.steps_per_epoch = resolve_steps_per_epoch(config, corpus);
  pretrain_pitch_extractor(st.models.pitch, corpus, config.pitch_pretrain);
  pretrain_content_probe(st.models.content, corpus, config.content_pretrain);
  st.models.freeze_helpers();
  reset_optimizers(st, config);
  st.rng.seed(derive_seed(config.seed, 0x7A41));
  return st;
}

BatchOptions batch_options(const TrainingConfig& c) {
  BatchOptions o;
  o.batch_size = c.batch_size;
  o.crop_frames = c.crop_frames;
  o.latent_dim = c.arch.latent_dim;
  o.policy = c.vdp ? TargetPolicy::vdp : TargetPolicy::seen_only;
  return o;
}

// --- step ---------------------------------------------------------------------

namespace {

struct Styles {
  torch::Tensor sp, em, sp2, em2;
};

Styles compute_styles(ModelSet& m, const Batch& b, bool latent) {
  auto spk_domain = domain_tensor(b.target_pairs, StyleKind::speaker);
  auto emo_domain = domain_tensor(b.target_pairs, StyleKind::emotion);
  if (latent)
    return {m.mapping_sp->forward(b.z_sp, spk_domain), m.mapping_em->forward(b.z_em, emo_domain),
            m.mapping_sp->forward(b.z_sp2, spk_domain), m.mapping_em->forward(b.z_em2, emo_domain)};
  return {m.style_sp->forward(b.ref_sp, spk_domain), m.style_em->forward(b.ref_em, emo_domain),
          m.style_sp->forward(b.ref_sp2, spk_domain), m.style_em->forward(b.ref_em2, emo_domain)};
}

double value_of(const std::optional<torch::Tensor>& t) {
  return t ? t->detach().item<double>() : 0.0;
}

}  // namespace

StepMetrics train_step(TrainState& st, const Batch& batch, const TrainingConfig& cfg,
                       const DomainCatalog& catalog) {
  auto& m = st.models;
  const int epoch = st.epoch();
  const bool classifiers_on = epoch >= cfg.classifier_start_epoch;
  const bool latent = st.step % 2 == 0;
  const auto anneal = cfg.anneal_state();

  const auto& x = batch.source;
  auto src_idx = flat_pair_tensor(catalog, batch.source_pairs);
  auto trg_idx = flat_pair_tensor(catalog, batch.target_pairs);
  auto src_sp = domain_tensor(batch.source_pairs, StyleKind::speaker);
  auto src_em = domain_tensor(batch.source_pairs, StyleKind::emotion);
  auto trg_sp = domain_tensor(batch.target_pairs, StyleKind::speaker);
  auto trg_em = domain_tensor(batch.target_pairs, StyleKind::emotion);
  const PairMask keep_all{std::vector<bool>(batch.target_pairs.size(), true)};

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

  StepMetrics out;
  out.step = st.step + 1;
  out.epoch = epoch;

  // Discriminator / classifier update.
  for (auto& [name, opt] : st.optimizers()) opt->zero_grad();
  LossComponents dparts;
  {
    torch::Tensor fake;
    {
      torch::NoGradGuard ng;
      auto sty = compute_styles(m, batch, latent);
      fake = gen(x, sty.sp, sty.em);
    }
    dparts.adv_d = adversarial_loss(disc, x, src_idx, fake, trg_idx, cfg.fpm ? batch.mask : keep_all,
                                    AdversarialSide::discriminator);
    if (classifiers_on)
      dparts.advcls_c = adv_source_classifier_loss(c_sp, c_em, fake, batch.source_pairs,
                                                   batch.target_pairs, ClassifierSide::classifier);
    auto obj = full_objective(cfg.weights, anneal, epoch, dparts);
    if (obj.discriminator.requires_grad()) {
      obj.discriminator.backward();
      st.opt_discriminator.step();
      if (classifiers_on) st.opt_classifier.step();
    }
    out.values.emplace_back("d/adv", value_of(dparts.adv_d));
    out.values.emplace_back("d/advcls", value_of(dparts.advcls_c));
    out.values.emplace_back("d/total", obj.discriminator.item<double>());
  }

  // Generator-side update.
  for (auto& [name, opt] : st.optimizers()) opt->zero_grad();
  {
    LossComponents g;
    auto sty = compute_styles(m, batch, latent);
    auto fake = gen(x, sty.sp, sty.em);
    g.adv_g = adversarial_loss(disc, x, src_idx, fake, trg_idx,
                               cfg.fpm && cfg.generator_fpm ? batch.mask : keep_all,
                               AdversarialSide::generator);
    if (classifiers_on)
      g.advcls_g = adv_source_classifier_loss(c_sp, c_em, fake, batch.source_pairs,
                                              batch.target_pairs, ClassifierSide::generator);
    g.sty = style_reconstruction_loss(s_sp, s_em, fake, sty.sp, sty.em, trg_sp, trg_em);
    g.ds = style_diversification_loss(gen, x, sty.sp, sty.sp2, sty.em, sty.em2, fake);
    g.f0 = f0_consistency_loss(contour, x, fake);
    g.norm = norm_consistency_loss(x, fake);
    g.asr = speech_consistency_loss(content, x, fake);
    g.cyc = cycle_consistency_loss(gen, s_sp, s_em, x, fake, src_sp, src_em);
    auto obj = full_objective(cfg.weights, anneal, epoch, g);
    obj.generator.backward();
    st.opt_generator.step();
    st.opt_style.step();
    st.opt_mapping.step();
    for (auto& [name, opt] : st.optimizers()) opt->zero_grad();

    out.values.emplace_back("g/adv", value_of(g.adv_g));
    out.values.emplace_back("g/advcls", value_of(g.advcls_g));
    out.values.emplace_back("g/sty", value_of(g.sty));
    out.values.emplace_back("g/ds", value_of(g.ds));
    out.values.emplace_back("g/f0", value_of(g.f0));
    out.values.emplace_back("g/norm", value_of(g.norm));
    out.values.emplace_back("g/asr", value_of(g.asr));
    out.values.emplace_back("g/cyc", value_of(g.cyc));
    out.values.emplace_back("g/total", obj.generator.item<double>());
    out.values.emplace_back("lambda_f0", obj.lambda_f0);
    out.values.emplace_back("lambda_norm", obj.lambda_norm);
  }

  for (const auto& [name, v] : out.values)
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << out.step << ":";
      for (const auto& [k, val] : out.values) msg << " " << k << "=" << val;
      throw Error(msg.str());
    }
  st.step += 1;
  return out;
}

// --- orchestration ------------------------------------------------------------

namespace {

std::filesystem::path checkpoint_dir(const std::filesystem::path& run) { return run / "checkpoints"; }

void write_checkpoint_pair(const std::filesystem::path& run, const TrainState& st,
                           const TrainingConfig& c, const DomainCatalog& cat) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%07lld.evck", static_cast<long long>(st.step));
  save_checkpoint(checkpoint_dir(run) / name, st, c, cat);
  save_checkpoint(checkpoint_dir(run) / "latest.evck", st, c, cat);
}

}  // namespace

TrainResult run_training(const TrainingConfig& config, const Corpus& corpus, const RunOptions& opt) {
  config.validate();
  const auto& catalog = corpus.manifest.catalog;
  const bool on_disk = !opt.run_dir.empty();

  std::optional<TrainState> maybe;
  if (opt.resume) {
    if (!on_disk) throw Error("resume requires a run directory");
    auto loaded = load_checkpoint(checkpoint_dir(opt.run_dir) / "latest.evck");
    if (loaded.catalog.hash() != catalog.hash())
      throw Error("checkpoint catalog does not match the corpus catalog");
    maybe.emplace(std::move(loaded.state));
  } else {
    maybe.emplace(init_train_state(config, corpus));
  }
  TrainState& st = *maybe;

  std::optional<MetricsLog> log;
  if (on_disk) {
    std::filesystem::create_directories(checkpoint_dir(opt.run_dir));
    log.emplace(opt.run_dir / "metrics.tsv", opt.resume ? st.step : 0);
  }

  const std::int64_t total = static_cast<std::int64_t>(config.total_epochs) * st.steps_per_epoch;
  const auto bopt = batch_options(config);
  while (st.step < total && (opt.stop_after < 0 || st.step < opt.stop_after)) {
    Batch batch = make_batch(corpus, bopt, st.rng);
    StepMetrics metrics;
    try {
      metrics = train_step(st, batch, config, catalog);
    } catch (const Error&) {
      if (on_disk) save_checkpoint(opt.run_dir / "diagnostic.evck", st, config, catalog);
      throw;
    }
    if (log) log->append(metrics);
    if (opt.on_step) opt.on_step(metrics);
    st.history.push_back(std::move(metrics));
    if (on_disk && config.checkpoint_interval > 0 && st.step % config.checkpoint_interval == 0)
      write_checkpoint_pair(opt.run_dir, st, config, catalog);
  }

  TrainResult result{std::move(st), {}};
  if (on_disk) {
    write_checkpoint_pair(opt.run_dir, result.state, config, catalog);
    result.final_checkpoint = checkpoint_dir(opt.run_dir) / "latest.evck";
  }
  return result;
}

// --- inference ----------------------------------------------------------------

torch::Tensor convert_mapped_batch(ModelSet& m, const DomainCatalog& catalog, const torch::Tensor& sources,
                                   const std::vector<DomainPair>& targets, const torch::Tensor& z_sp,
                                   const torch::Tensor& z_em) {
  torch::NoGradGuard ng;
  for (const auto& t : targets) (void)catalog.flat_index(t);
  auto spk_style = m.mapping_sp->forward(z_sp, domain_tensor(targets, StyleKind::speaker));
  auto emo_style = m.mapping_em->forward(z_em, domain_tensor(targets, StyleKind::emotion));
  return generate(m.generator, sources, extract_pitch(m.pitch, sources), spk_style, emo_style);
}

MelSpectrogram convert(ModelSet& m, const DomainCatalog& catalog, const MelSpectrogram& source,
                       DomainPair target, ConvertMode mode, const ConvertInputs& in) {
  torch::NoGradGuard ng;
  (void)catalog.flat_index(target);
  if (source.n_bins != m.arch.n_bins)
    throw Error("source has " + std::to_string(source.n_bins) + " bins, model expects " +
                std::to_string(m.arch.n_bins));
  const auto dtype = m.generator->output->weight.scalar_type();
  auto x = source.to_tensor().unsqueeze(0).to(dtype);
  auto spk_domain = domain_tensor({target}, StyleKind::speaker);
  auto emo_domain = domain_tensor({target}, StyleKind::emotion);
  torch::Tensor spk_style, emo_style;
  if (mode == ConvertMode::mapped) {
    Rng rng(in.seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto draw = [&] {
      std::vector<float> z(static_cast<std::size_t>(m.arch.latent_dim));
      for (auto& v : z) v = normal(rng);
      return torch::tensor(z);
    };
    auto z_sp = in.z_sp ? *in.z_sp : draw();
    auto z_em = in.z_em ? *in.z_em : draw();
    spk_style = m.mapping_sp->forward(z_sp.reshape({1, -1}).to(dtype), spk_domain);
    emo_style = m.mapping_em->forward(z_em.reshape({1, -1}).to(dtype), emo_domain);
  } else {
    if (!in.ref_sp || !in.ref_em) throw Error("referenced conversion needs speaker and emotion references");
    spk_style = m.style_sp->forward(in.ref_sp->to_tensor().unsqueeze(0).to(dtype), spk_domain);
    emo_style = m.style_em->forward(in.ref_em->to_tensor().unsqueeze(0).to(dtype), emo_domain);
  }
  auto out = generate(m.generator, x, extract_pitch(m.pitch, x), spk_style, emo_style);
  return MelSpectrogram::from_tensor(out.squeeze(0));
}

}  // namespace evc
