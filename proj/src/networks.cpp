#include "evc/networks.hpp"

#include <cstring>

#include "evc/util.hpp"

namespace evc {

namespace F = torch::nn::functional;

namespace {

constexpr double kSlope = 0.2;

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kSlope));
}

torch::nn::Conv1d conv(int in, int out, int kernel, int dilation = 1, int stride = 1) {
  const int pad = stride == 1 ? dilation * (kernel - 1) / 2 : (kernel - stride) / 2;
  return torch::nn::Conv1d(torch::nn::Conv1dOptions(in, out, kernel)
                               .padding(pad)
                               .dilation(dilation)
                               .stride(stride));
}

torch::Tensor instance_normalize(const torch::Tensor& x) {
  auto mean = x.mean(2, true);
  auto var = (x - mean).pow(2).mean(2, true);
  return (x - mean) / torch::sqrt(var + 1e-5);
}

torch::nn::LeakyReLU leaky() {
  return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kSlope));
}

void check_domains(const torch::Tensor& domain, int count, const char* what) {
  if (domain.dim() != 1) throw Error(std::string(what) + ": domain codes must be 1-D");
  if (domain.numel() == 0) return;
  const auto lo = domain.min().item<std::int64_t>();
  const auto hi = domain.max().item<std::int64_t>();
  if (lo < 0 || hi >= count)
    throw Error(std::string(what) + ": domain code out of range [0, " + std::to_string(count) + ")");
}

/// Picks row `index[b]` of a [B, heads, dim] tensor.
torch::Tensor select_head(const torch::Tensor& all, const torch::Tensor& index) {
  auto idx = index.to(torch::kLong).view({-1, 1, 1}).expand({all.size(0), 1, all.size(2)});
  return all.gather(1, idx).squeeze(1);
}

struct ResBlockImpl : torch::nn::Module {
  ResBlockImpl(int channels, int dilation)
      : norm(register_module("norm", torch::nn::InstanceNorm1d(
                                         torch::nn::InstanceNorm1dOptions(channels).affine(true)))),
        body(register_module("conv", conv(channels, channels, 3, dilation))) {}
  torch::Tensor forward(const torch::Tensor& x) { return x + body(lrelu(norm(x))); }
  torch::nn::InstanceNorm1d norm;
  torch::nn::Conv1d body;
};
TORCH_MODULE(ResBlock);

}  // namespace

AdaptiveNormImpl::AdaptiveNormImpl(int channels, int style_dim)
    : affine(register_module("affine", torch::nn::Linear(style_dim, 2 * channels))) {}

torch::Tensor AdaptiveNormImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  auto gb = affine(style).unsqueeze(2);
  auto parts = gb.chunk(2, 1);
  return (1 + parts[0]) * instance_normalize(x) + parts[1];
}

GeneratorImpl::GeneratorImpl(const ArchConfig& a) : arch(a) {
  input = register_module("input", conv(a.n_bins + a.pitch_dim, a.hidden, 5));
  encode = register_module("encode", torch::nn::ModuleList());
  encode->push_back(ResBlock(a.hidden, 1));
  encode->push_back(ResBlock(a.hidden, 2));
  decode = register_module("decode", torch::nn::ModuleList());
  for (int i = 0; i < a.generator_blocks; ++i) {
    decode->push_back(conv(a.hidden, a.hidden, 3, 1 << (i % 3)));
    decode_norms.push_back(
        register_module("decode_norm" + std::to_string(i), AdaptiveNorm(a.hidden, 2 * a.style_dim)));
  }
  output = register_module("output", conv(a.hidden, a.n_bins, 1));
  torch::NoGradGuard ng;
  output->bias.zero_();
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& pitch,
                                     const torch::Tensor& spk_style, const torch::Tensor& emo_style) {
  if (x.dim() != 3 || x.size(1) != arch.n_bins)
    throw Error("generator: input must be [B, " + std::to_string(arch.n_bins) + ", T]");
  if (pitch.size(0) != x.size(0) || pitch.size(2) != x.size(2) || pitch.size(1) != arch.pitch_dim)
    throw Error("generator: pitch features do not match input shape");
  if (spk_style.size(-1) != arch.style_dim || emo_style.size(-1) != arch.style_dim)
    throw Error("generator: style embedding dimension mismatch");
  auto style = torch::cat({spk_style, emo_style}, 1);
  auto h = input(torch::cat({x, pitch}, 1));
  for (auto& block : *encode) h = block->as<ResBlock>()->forward(h);
  for (std::size_t i = 0; i < decode->size(); ++i) {
    auto c = (*decode)[i]->as<torch::nn::Conv1d>();
    h = h + c->forward(lrelu(decode_norms[i]->forward(h, style)));
  }
  return x + output(lrelu(h));
}

ConvTrunkImpl::ConvTrunkImpl(int in_channels, int hidden) {
  body = register_module(
      "body", torch::nn::Sequential(conv(in_channels, hidden, 3), leaky(),
                                    conv(hidden, hidden, 4, 1, 2), leaky(),
                                    conv(hidden, hidden, 4, 1, 2), leaky(),
                                    conv(hidden, hidden, 4, 1, 2), leaky()));
}

torch::Tensor ConvTrunkImpl::forward(const torch::Tensor& x) { return body->forward(x).mean(2); }

StyleEncoderImpl::StyleEncoderImpl(const ArchConfig& a, StyleKind k)
    : kind(k), style_dim(a.style_dim), domains(a.num_domains(k)) {
  trunk = register_module("trunk", ConvTrunk(a.n_bins, a.hidden));
  shared = register_module("shared", torch::nn::Linear(a.hidden, a.hidden));
  heads = register_module("heads", torch::nn::Linear(a.hidden, domains * style_dim));
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& reference, const torch::Tensor& domain) {
  check_domains(domain, domains, "style encoder");
  auto h = lrelu(shared(trunk(reference)));
  return select_head(heads(h).view({-1, domains, style_dim}), domain);
}

MappingNetworkImpl::MappingNetworkImpl(const ArchConfig& a, StyleKind k)
    : kind(k), style_dim(a.style_dim), domains(a.num_domains(k)) {
  shared = register_module(
      "shared", torch::nn::Sequential(torch::nn::Linear(a.latent_dim, a.mapping_hidden), leaky(),
                                      torch::nn::Linear(a.mapping_hidden, a.mapping_hidden), leaky()));
  heads = register_module("heads", torch::nn::Linear(a.mapping_hidden, domains * style_dim));
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z, const torch::Tensor& domain) {
  check_domains(domain, domains, "mapping network");
  return select_head(heads(shared->forward(z)).view({-1, domains, style_dim}), domain);
}

DiscriminatorImpl::DiscriminatorImpl(const ArchConfig& a) : n_pairs(a.n_speakers * a.n_emotions) {
  trunk = register_module("trunk", ConvTrunk(a.n_bins, a.hidden));
  heads = register_module("heads", torch::nn::Linear(a.hidden, n_pairs));
}

torch::Tensor DiscriminatorImpl::trunk_features(const torch::Tensor& x) { return lrelu(trunk(x)); }

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& pair_index) {
  check_domains(pair_index, n_pairs, "discriminator");
  auto logits = heads(trunk_features(x));
  return logits.gather(1, pair_index.to(torch::kLong).view({-1, 1})).squeeze(1);
}

SourceClassifierImpl::SourceClassifierImpl(const ArchConfig& a, StyleKind k) : kind(k) {
  trunk = register_module("trunk", ConvTrunk(a.n_bins, a.hidden));
  head = register_module("head", torch::nn::Linear(a.hidden, a.num_domains(k)));
}

torch::Tensor SourceClassifierImpl::forward(const torch::Tensor& x) { return head(lrelu(trunk(x))); }

PitchExtractorImpl::PitchExtractorImpl(const ArchConfig& a) {
  body = register_module(
      "body", torch::nn::Sequential(conv(a.n_bins, 32, 5), leaky(), conv(32, 32, 5, 2), leaky(),
                                    conv(32, 32, 5, 4), leaky(), conv(32, a.pitch_dim, 3), leaky()));
  readout = register_module("readout", conv(a.pitch_dim, 1, 1));
}

PitchOutput PitchExtractorImpl::forward(const torch::Tensor& x) {
  PitchOutput out;
  out.features = body->forward(x);
  auto raw = readout(out.features).squeeze(1);
  auto mean = raw.mean(1, true);
  auto sd = torch::sqrt((raw - mean).pow(2).mean(1, true) + 1e-8);
  out.contour = (raw - mean) / (sd + 1e-5);
  return out;
}

ContentProbeImpl::ContentProbeImpl(const ArchConfig& a) {
  body = register_module("body", torch::nn::Sequential(conv(a.n_bins, a.hidden, 5), leaky(),
                                                       conv(a.hidden, a.hidden, 3), leaky()));
  readout = register_module("readout", conv(a.hidden, a.content_classes, 1));
}

torch::Tensor ContentProbeImpl::features(const torch::Tensor& x) { return body->forward(x); }
torch::Tensor ContentProbeImpl::forward(const torch::Tensor& x) { return readout(features(x)); }

ModelSet::ModelSet(const ArchConfig& a)
    : arch(a),
      generator(a),
      style_sp(a, StyleKind::speaker),
      style_em(a, StyleKind::emotion),
      mapping_sp(a, StyleKind::speaker),
      mapping_em(a, StyleKind::emotion),
      discriminator(a),
      classifier_sp(a, StyleKind::speaker),
      classifier_em(a, StyleKind::emotion),
      pitch(a),
      content(a) {}

std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> ModelSet::named_modules() const {
  return {{"G", generator.ptr()},         {"S_sp", style_sp.ptr()},
          {"S_em", style_em.ptr()},       {"M_sp", mapping_sp.ptr()},
          {"M_em", mapping_em.ptr()},     {"D", discriminator.ptr()},
          {"C_sp", classifier_sp.ptr()},  {"C_em", classifier_em.ptr()},
          {"F0", pitch.ptr()},            {"ASR", content.ptr()}};
}

void ModelSet::to(torch::Dtype dtype) {
  for (auto& [name, m] : named_modules()) m->to(dtype);
}

void ModelSet::freeze_helpers() {
  set_requires_grad(*pitch, false);
  set_requires_grad(*content, false);
  pitch->eval();
  content->eval();
}

torch::Tensor domain_tensor(const std::vector<DomainPair>& pairs, StyleKind kind) {
  std::vector<std::int64_t> v;
  v.reserve(pairs.size());
  for (const auto& p : pairs) v.push_back(kind == StyleKind::speaker ? p.speaker : p.emotion);
  return torch::tensor(v, torch::kLong);
}

torch::Tensor flat_pair_tensor(const DomainCatalog& catalog, const std::vector<DomainPair>& pairs) {
  std::vector<std::int64_t> v;
  v.reserve(pairs.size());
  for (const auto& p : pairs) v.push_back(catalog.flat_index(p));
  return torch::tensor(v, torch::kLong);
}

torch::Tensor encode_style(StyleEncoder& encoder, const torch::Tensor& reference,
                           const torch::Tensor& domain) {
  return encoder->forward(reference, domain);
}

torch::Tensor map_style(MappingNetwork& mapper, const torch::Tensor& z, const torch::Tensor& domain) {
  return mapper->forward(z, domain);
}

PitchOutput extract_pitch(PitchExtractor& extractor, const torch::Tensor& x) {
  return extractor->forward(x);
}

torch::Tensor generate(Generator& generator, const torch::Tensor& x, const PitchOutput& pitch,
                       const torch::Tensor& spk_style, const torch::Tensor& emo_style) {
  return generator->forward(x, pitch.features, spk_style, emo_style);
}

torch::Tensor discriminate(Discriminator& d, const torch::Tensor& x, const torch::Tensor& pair_index) {
  return d->forward(x, pair_index);
}

torch::Tensor classify_source(SourceClassifier& c, const torch::Tensor& x) { return c->forward(x); }

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = fnv1a64("");
  for (const auto& item : module.named_parameters()) {
    auto t = item.value().detach().contiguous();
    h = fnv1a64(item.key(), h);
    h = fnv1a64(std::string_view(static_cast<const char*>(t.data_ptr()), t.nbytes()), h);
  }
  return h;
}

// --- helper pretraining ---------------------------------------------------------

namespace {

struct Crop {
  torch::Tensor features;  // [bins, L]
  int offset;
};

Crop aligned_crop(const MelSpectrogram& mel, int frames, Rng& rng) {
  const int n = mel.n_frames;
  const int offset = n > frames ? std::uniform_int_distribution<int>(0, n - frames)(rng) : 0;
  auto full = mel.to_tensor();
  torch::Tensor idx = (torch::arange(frames, torch::kLong) + offset).remainder(n);
  return {full.index_select(1, idx), offset};
}

std::vector<float> window(const std::vector<float>& v, int offset, int frames) {
  std::vector<float> out(static_cast<std::size_t>(frames));
  const int n = static_cast<int>(v.size());
  for (int t = 0; t < frames; ++t) out[static_cast<std::size_t>(t)] = v[static_cast<std::size_t>((offset + t) % n)];
  return out;
}

std::vector<float> zscore(std::vector<float> v) {
  double mean = 0.0, sq = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  for (float x : v) sq += (x - mean) * (x - mean);
  const double sd = std::sqrt(sq / static_cast<double>(v.size())) + 1e-5;
  for (auto& x : v) x = static_cast<float>((x - mean) / sd);
  return v;
}

template <typename Fn>
void fit(torch::nn::Module& module, const PretrainOptions& opt, Fn&& loss_fn) {
  set_requires_grad(module, true);
  module.train();
  torch::optim::Adam adam(module.parameters(), torch::optim::AdamOptions(opt.learning_rate));
  Rng rng(opt.seed);
  for (int step = 0; step < opt.steps; ++step) {
    adam.zero_grad();
    auto loss = loss_fn(rng);
    loss.backward();
    adam.step();
  }
  set_requires_grad(module, false);
  module.eval();
}

}  // namespace

void pretrain_pitch_extractor(PitchExtractor& extractor, const Corpus& corpus,
                              const PretrainOptions& opt) {
  const auto train = corpus.indices(Split::train);
  if (train.empty()) throw Error("pitch pretraining needs a nonempty train split");
  fit(*extractor, opt, [&](Rng& rng) {
    std::vector<torch::Tensor> xs, ys;
    for (int i = 0; i < opt.batch_size; ++i) {
      const auto& u = corpus.utterances[train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)]];
      auto crop = aligned_crop(u.features, opt.crop_frames, rng);
      auto target = zscore(window(u.f0_contour, crop.offset, opt.crop_frames));
      xs.push_back(crop.features);
      ys.push_back(torch::tensor(target));
    }
    auto x = torch::stack(xs).to(extractor->readout->weight.dtype());
    auto y = torch::stack(ys).to(x.dtype());
    return (extractor->forward(x).contour - y).abs().mean();
  });
}

void pretrain_content_probe(ContentProbe& probe, const Corpus& corpus, const PretrainOptions& opt) {
  const auto train = corpus.indices(Split::train);
  if (train.empty()) throw Error("content pretraining needs a nonempty train split");
  const int silence_class = static_cast<int>(probe->readout->options.out_channels()) - 1;
  fit(*probe, opt, [&](Rng& rng) {
    std::vector<torch::Tensor> xs, ys;
    for (int i = 0; i < opt.batch_size; ++i) {
      const auto& u = corpus.utterances[train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)]];
      auto crop = aligned_crop(u.features, opt.crop_frames, rng);
      std::vector<std::int64_t> labels(static_cast<std::size_t>(opt.crop_frames));
      for (int t = 0; t < opt.crop_frames; ++t) {
        const int l = u.frame_labels[static_cast<std::size_t>((crop.offset + t) % u.features.n_frames)];
        labels[static_cast<std::size_t>(t)] = l == kSilenceLabel ? silence_class : l;
      }
      xs.push_back(crop.features);
      ys.push_back(torch::tensor(labels, torch::kLong));
    }
    auto x = torch::stack(xs).to(probe->readout->weight.dtype());
    return F::cross_entropy(probe->forward(x), torch::stack(ys));
  });
}

double pitch_contour_mae(PitchExtractor& extractor, const std::vector<Utterance>& utterances) {
  torch::NoGradGuard ng;
  double total = 0.0;
  std::size_t frames = 0;
  for (const auto& u : utterances) {
    auto x = u.features.to_tensor().unsqueeze(0).to(extractor->readout->weight.dtype());
    auto pred = extractor->forward(x).contour.squeeze(0).to(torch::kDouble);
    auto truth = torch::tensor(u.normalized_f0()).to(torch::kDouble);
    total += (pred - truth).abs().sum().item<double>();
    frames += u.f0_contour.size();
  }
  return frames ? total / static_cast<double>(frames) : 0.0;
}

double content_probe_accuracy(ContentProbe& probe, const std::vector<Utterance>& utterances) {
  torch::NoGradGuard ng;
  const int silence_class = static_cast<int>(probe->readout->options.out_channels()) - 1;
  std::size_t correct = 0, frames = 0;
  for (const auto& u : utterances) {
    auto x = u.features.to_tensor().unsqueeze(0).to(probe->readout->weight.dtype());
    auto pred = probe->forward(x).argmax(1).squeeze(0);
    auto acc = pred.accessor<std::int64_t, 1>();
    for (int t = 0; t < u.features.n_frames; ++t) {
      const int l = u.frame_labels[static_cast<std::size_t>(t)];
      correct += acc[t] == (l == kSilenceLabel ? silence_class : l);
    }
    frames += static_cast<std::size_t>(u.features.n_frames);
  }
  return frames ? static_cast<double>(correct) / static_cast<double>(frames) : 0.0;
}

}  // namespace evc
