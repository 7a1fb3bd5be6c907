#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "evc/corpus.hpp"
#include "evc/domain_catalog.hpp"

namespace evc {

enum class StyleKind { speaker, emotion };

/// Architecture hyperparameters. Everything is 1-D convolution over frames with
/// the feature bins as channels.
struct ArchConfig {
  int n_bins = 48;
  int n_speakers = 1;
  int n_emotions = 1;
  int style_dim = 16;
  int latent_dim = 8;
  int pitch_dim = 8;
  int hidden = 32;
  int generator_blocks = 3;
  int mapping_hidden = 64;
  int content_classes = 13;  // symbols + silence

  int num_domains(StyleKind kind) const {
    return kind == StyleKind::speaker ? n_speakers : n_emotions;
  }
};

/// Instance norm over frames followed by a style-predicted affine.
struct AdaptiveNormImpl : torch::nn::Module {
  AdaptiveNormImpl(int channels, int style_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);
  torch::nn::Linear affine{nullptr};
};
TORCH_MODULE(AdaptiveNorm);

/// G(X, pitch features, spk_style, emo_style). Residual around the input so an untrained
/// generator starts close to identity.
struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(const ArchConfig& arch);
  /// x: [B, bins, T]; pitch: [B, pitch_dim, T]; spk_style, emo_style: [B, style_dim].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pitch,
                        const torch::Tensor& spk_style, const torch::Tensor& emo_style);

  ArchConfig arch;
  torch::nn::Conv1d input{nullptr};
  torch::nn::ModuleList encode, decode;
  std::vector<AdaptiveNorm> decode_norms;
  torch::nn::InstanceNorm1d out_norm{nullptr};
  torch::nn::Conv1d output{nullptr};
};
TORCH_MODULE(Generator);

/// Shared strided-conv trunk pooled over time; used by D, the source
/// classifiers, the style encoders and the evaluation probes.
struct ConvTrunkImpl : torch::nn::Module {
  ConvTrunkImpl(int in_channels, int hidden);
  torch::Tensor forward(const torch::Tensor& x);  // [B, hidden]
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ConvTrunk);

/// S_sp / S_em: shared trunk, one linear projection head per domain code.
struct StyleEncoderImpl : torch::nn::Module {
  StyleEncoderImpl(const ArchConfig& arch, StyleKind kind);
  torch::Tensor forward(const torch::Tensor& reference, const torch::Tensor& domain);

  StyleKind kind;
  int style_dim;
  int domains;
  ConvTrunk trunk{nullptr};
  torch::nn::Linear shared{nullptr};
  torch::nn::Linear heads{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// M_sp / M_em: latent code to style embedding, per-domain heads.
struct MappingNetworkImpl : torch::nn::Module {
  MappingNetworkImpl(const ArchConfig& arch, StyleKind kind);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& domain);

  StyleKind kind;
  int style_dim;
  int domains;
  torch::nn::Sequential shared{nullptr};
  torch::nn::Linear heads{nullptr};
};
TORCH_MODULE(MappingNetwork);

/// D(X, y): one real/fake logit per sample, routed to the head of the
/// flattened (speaker, emotion) pair.
struct DiscriminatorImpl : torch::nn::Module {
  explicit DiscriminatorImpl(const ArchConfig& arch);
  torch::Tensor trunk_features(const torch::Tensor& x);
  /// pair_index: int64 [B] of flattened pair indices. Returns logits [B].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& pair_index);

  int n_pairs;
  ConvTrunk trunk{nullptr};
  torch::nn::Linear heads{nullptr};
};
TORCH_MODULE(Discriminator);

/// C_sp / C_em; same trunk architecture as the discriminator.
struct SourceClassifierImpl : torch::nn::Module {
  SourceClassifierImpl(const ArchConfig& arch, StyleKind kind);
  torch::Tensor forward(const torch::Tensor& x);  // logits [B, classes]

  StyleKind kind;
  ConvTrunk trunk{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(SourceClassifier);

struct PitchOutput {
  torch::Tensor features;  // pitch features: [B, pitch_dim, T]
  torch::Tensor contour;   // F-hat(X): [B, T], zero mean / unit std per utterance
};

/// Frozen pitch regressor standing in for a pretrained F0 network.
struct PitchExtractorImpl : torch::nn::Module {
  explicit PitchExtractorImpl(const ArchConfig& arch);
  PitchOutput forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
  torch::nn::Conv1d readout{nullptr};
};
TORCH_MODULE(PitchExtractor);

/// Frozen frame-level content recognizer; its feature map backs the
/// speech-consistency loss.
struct ContentProbeImpl : torch::nn::Module {
  explicit ContentProbeImpl(const ArchConfig& arch);
  torch::Tensor features(const torch::Tensor& x);  // [B, hidden, T]
  torch::Tensor forward(const torch::Tensor& x);   // per-frame logits [B, classes, T]

  torch::nn::Sequential body{nullptr};
  torch::nn::Conv1d readout{nullptr};
};
TORCH_MODULE(ContentProbe);

/// Every network the method uses, plus the two frozen helpers.
struct ModelSet {
  explicit ModelSet(const ArchConfig& arch);

  ArchConfig arch;
  Generator generator;
  StyleEncoder style_sp, style_em;
  MappingNetwork mapping_sp, mapping_em;
  Discriminator discriminator;
  SourceClassifier classifier_sp, classifier_em;
  PitchExtractor pitch;
  ContentProbe content;

  /// (name, module) for serialization and parameter-partition checks.
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> named_modules() const;
  void to(torch::Dtype dtype);
  void freeze_helpers();
};

torch::Tensor domain_tensor(const std::vector<DomainPair>& pairs, StyleKind kind);
torch::Tensor flat_pair_tensor(const DomainCatalog& catalog, const std::vector<DomainPair>& pairs);

/// spk_style = S_sp(R_sp, spk_domain), emo_style = S_em(R_em, emo_domain). Throws on invalid codes.
torch::Tensor encode_style(StyleEncoder& encoder, const torch::Tensor& reference,
                           const torch::Tensor& domain);
torch::Tensor map_style(MappingNetwork& mapper, const torch::Tensor& z, const torch::Tensor& domain);
PitchOutput extract_pitch(PitchExtractor& extractor, const torch::Tensor& x);
torch::Tensor generate(Generator& generator, const torch::Tensor& x, const PitchOutput& pitch,
                       const torch::Tensor& spk_style, const torch::Tensor& emo_style);
torch::Tensor discriminate(Discriminator& d, const torch::Tensor& x, const torch::Tensor& pair_index);
torch::Tensor classify_source(SourceClassifier& c, const torch::Tensor& x);

struct PretrainOptions {
  int steps = 400;
  int batch_size = 16;
  int crop_frames = 96;
  double learning_rate = 3e-3;
  std::uint64_t seed = 1;
};

/// Fits the pitch extractor to per-utterance normalized ground truth; leaves it frozen.
void pretrain_pitch_extractor(PitchExtractor& extractor, const Corpus& corpus,
                              const PretrainOptions& options);
/// Fits the content probe to per-frame symbol labels; leaves it frozen.
void pretrain_content_probe(ContentProbe& probe, const Corpus& corpus,
                            const PretrainOptions& options);

/// Mean absolute error between F-hat and ground truth over full utterances.
double pitch_contour_mae(PitchExtractor& extractor, const std::vector<Utterance>& utterances);
double content_probe_accuracy(ContentProbe& probe, const std::vector<Utterance>& utterances);

/// Concatenated parameter bytes, hashed; used to prove freezing and schedules.
std::uint64_t parameter_hash(const torch::nn::Module& module);

void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace evc
