#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evc/corpus.hpp"
#include "evc/trainer.hpp"

namespace evc {

/// Raised when a probe misses its held-out accuracy gate.
struct GateError : Error {
  using Error::Error;
};

/// Trunk -> embedding -> class logits. The embedding (before the nonlinearity)
/// is the speaker representation used for similarity.
struct ProbeNetImpl : torch::nn::Module {
  ProbeNetImpl(int n_bins, int hidden, int embedding_dim, int classes);
  torch::Tensor embedding(const torch::Tensor& x);  // [B, embedding_dim]
  torch::Tensor forward(const torch::Tensor& x);    // [B, classes]

  ConvTrunk trunk{nullptr};
  torch::nn::Linear embed{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ProbeNet);

struct ProbeOptions {
  int steps = 500;
  int batch_size = 32;
  int crop_frames = 96;
  int hidden = 32;
  int embedding_dim = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 21;
  /// Fresh utterances per seen cell for the held-out gate.
  int heldout_per_cell = 12;
  double gate = 0.95;
  /// Emotion probe only: train on speakers that cover every emotion, so a
  /// speaker's identity cannot stand in for its emotion.
  bool complete_speakers_only = true;
};

/// Frozen classifier over real features.
class Probe {
 public:
  Probe(ProbeNet net, int classes, double heldout_accuracy);

  int classes() const { return classes_; }
  double heldout_accuracy() const { return heldout_accuracy_; }
  int predict(const MelSpectrogram& mel) const;
  /// Unit-normalized embedding.
  std::vector<double> embed(const MelSpectrogram& mel) const;
  torch::Tensor logits(const MelSpectrogram& mel) const;
  std::uint64_t hash() const;

 private:
  mutable ProbeNet net_;
  int classes_;
  double heldout_accuracy_;
};

/// Trains an emotion classifier on real seen-pair data; throws GateError when
/// held-out accuracy is below options.gate.
Probe train_emotion_probe(const Corpus& corpus, const ProbeOptions& options = {});
/// Speaker classifier whose embedding backs speaker similarity; same gate.
Probe train_speaker_embedder(const Corpus& corpus, const ProbeOptions& options = {});

/// Accuracy of a probe against true labels of real utterances.
double probe_accuracy(const Probe& probe, const std::vector<Utterance>& utterances, StyleKind kind);

struct ConvertedSample {
  std::string id;
  MelSpectrogram features;
  DomainPair source;
  DomainPair target;
};

struct CellResult {
  DomainPair target;
  bool unseen = false;
  std::size_t count = 0;
  double emotion_accuracy = 0.0;
  double speaker_similarity = 0.0;
};

struct EvalReport {
  std::string label;
  std::uint64_t corpus_hash = 0;
  std::vector<CellResult> cells;
  std::size_t count = 0;
  double emotion_accuracy = 0.0;
  std::size_t unseen_count = 0;
  double unseen_emotion_accuracy = 0.0;
  double speaker_similarity = 0.0;
};

/// Fraction of samples the probe assigns to their target emotion, per target
/// cell (keyed by pair). Throws on an empty set.
std::map<DomainPair, double> emotion_accuracy(const Probe& probe,
                                              const std::vector<ConvertedSample>& samples);

/// Reference embeddings per speaker index.
using SpeakerReferences = std::map<int, std::vector<MelSpectrogram>>;

/// Mean inner product between each sample's embedding and the embeddings of
/// its target speaker's references. Throws when a target speaker has none.
double speaker_similarity(const Probe& embedder, const std::vector<ConvertedSample>& samples,
                          const SpeakerReferences& references);

/// [target speaker][reference speaker] mean similarity; rows without samples are NaN.
std::vector<std::vector<double>> speaker_similarity_matrix(const Probe& embedder,
                                                           const std::vector<ConvertedSample>& samples,
                                                           const SpeakerReferences& references,
                                                           int n_speakers);

struct EvalOptions {
  /// Held-out source utterances per cell.
  int sources_per_cell = 12;
  int references_per_speaker = 8;
  std::uint64_t seed = 31;
  ConvertMode mode = ConvertMode::mapped;
  /// Also convert seen-speaker sources to every other speaker's seen pairs.
  bool cross_speaker = true;
};

/// Fresh real sources: neutral utterances of neutral-only speakers converted to
/// each of their unseen emotions, plus (optionally) cross-speaker conversions
/// to seen pairs.
std::vector<ConvertedSample> build_eval_set(ModelSet& models, const Corpus& corpus,
                                            const EvalOptions& options);
SpeakerReferences reference_utterances(const Corpus& corpus, int per_speaker, std::uint64_t seed);

EvalReport evaluate_samples(const std::string& label, const Corpus& corpus, const Probe& emotion_probe,
                            const Probe& speaker_embedder, const std::vector<ConvertedSample>& samples,
                            const SpeakerReferences& references);
EvalReport evaluate_model(const std::string& label, ModelSet& models, const Corpus& corpus,
                          const Probe& emotion_probe, const Probe& speaker_embedder,
                          const EvalOptions& options = {});

std::uint64_t corpus_hash(const Corpus& corpus);

struct AblationRow {
  std::string name;
  EvalReport report;
};

/// Trains every ablation with the same corpus, seed and budget, then evaluates.
/// Rows with a non-empty run_root get their run directory at run_root/<name>.
std::vector<AblationRow> ablation_study(const Corpus& corpus, const TrainingConfig& base,
                                       const std::vector<Ablation>& ablations,
                                       const Probe& emotion_probe, const Probe& speaker_embedder,
                                       const EvalOptions& options,
                                       const std::filesystem::path& run_root = {});

/// Side-by-side text table; deltas are relative to the row named "full" when present.
/// Throws if the rows were evaluated on different corpora.
std::string format_ablation_table(const std::vector<AblationRow>& rows);
std::string format_report(const EvalReport& report, const DomainCatalog& catalog);
/// Tab-separated: one row per (label, cell) plus an "all" row per label.
void write_report_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                      const DomainCatalog& catalog);

}  // namespace evc
