#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evc/domain_catalog.hpp"

namespace evc {

/// Mel-like feature matrix, row-major (bins x frames).
struct MelSpectrogram {
  int n_bins = 0;
  int n_frames = 0;
  std::vector<float> values;

  MelSpectrogram() = default;
  MelSpectrogram(int bins, int frames, float fill = 0.0f)
      : n_bins(bins), n_frames(frames),
        values(static_cast<std::size_t>(bins) * static_cast<std::size_t>(frames), fill) {}

  float& at(int bin, int frame) {
    return values[static_cast<std::size_t>(bin) * static_cast<std::size_t>(n_frames) +
                  static_cast<std::size_t>(frame)];
  }
  float at(int bin, int frame) const {
    return values[static_cast<std::size_t>(bin) * static_cast<std::size_t>(n_frames) +
                  static_cast<std::size_t>(frame)];
  }

  /// Copy into a float32 [n_bins, n_frames] tensor.
  torch::Tensor to_tensor() const;
  static MelSpectrogram from_tensor(const torch::Tensor& t);
};

inline constexpr int kSilenceLabel = -1;

struct Utterance {
  std::string id;
  MelSpectrogram features;
  int speaker = 0;
  int emotion = 0;
  /// Symbol sequence, independent of emotion rendering.
  std::vector<int> content_ids;
  /// Per-frame symbol or kSilenceLabel.
  std::vector<int> frame_labels;
  /// Per-frame pitch, normalized with corpus-wide statistics.
  std::vector<float> f0_contour;

  DomainPair pair() const { return {speaker, emotion}; }
  /// Per-utterance z-scored contour; the target of the pitch extractor.
  std::vector<float> normalized_f0() const;
};

struct GeneratorParams {
  int n_bins = 48;
  int n_content_symbols = 12;
  int min_symbols = 12;
  int max_symbols = 14;
  int min_segment_frames = 8;
  int max_segment_frames = 11;
  double noise_std = 0.15;
  double voiced_level = 2.5;
  double harmonic_width = 0.8;
  double content_amplitude = 1.2;
  /// Innovation std of the AR(1) pitch wobble, in bins.
  double pitch_jitter = 0.02;
};

struct SpeakerParams {
  double pitch_base = 10.0;  // bin position of the fundamental
  double tilt = 0.0;
  double formant1_center = 20.0, formant1_width = 3.0, formant1_amp = 1.0;
  double formant2_center = 36.0, formant2_width = 3.0, formant2_amp = 1.0;
};

struct EmotionParams {
  double pitch_shift = 0.0;     // added to the speaker's pitch base, in bins
  double pitch_depth = 1.0;     // excursion of the pitch contour
  double pitch_rate = 1.0;      // contour cycles per 100 frames
  double energy_gain = 0.0;     // log-energy offset on voiced frames
  double energy_mod_depth = 0.0;
  double energy_mod_rate = 0.0;  // cycles per 100 frames
  double silence_ratio = 0.15;  // expected fraction of gap frames
};

enum class Split { train, test };

inline std::ostream& operator<<(std::ostream& os, Split s) { return os << (s == Split::train ? "train" : "test"); }

struct CorpusManifest {
  DomainCatalog catalog;
  GeneratorParams generator;
  std::vector<SpeakerParams> speakers;
  std::vector<EmotionParams> emotions;
  std::uint64_t seed = 0;
  int per_cell = 0;
  double feature_mean = 0.0;
  double feature_std = 1.0;
  double pitch_mean = 0.0;
  double pitch_std = 1.0;
  std::vector<Split> split;  // aligned with Corpus::utterances
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<Utterance> utterances;

  std::vector<std::size_t> indices(Split which) const;
  /// Train-split utterances of one (speaker, emotion) cell.
  std::vector<std::size_t> train_cell(DomainPair pair) const;
};

/// Default speaker/emotion parameters, deterministic in the seed.
std::vector<SpeakerParams> default_speaker_params(int n_speakers, std::uint64_t seed);
std::vector<EmotionParams> default_emotion_params(int n_emotions);

/// Render one utterance in raw (unnormalized) log-energy units. Content symbols
/// and segment lengths come only from `content_seed`; gaps, pitch phase and
/// noise come from `render_seed`. Raw pitch (bins) is returned in f0_contour.
Utterance synthesize_utterance(const GeneratorParams& gen, const SpeakerParams& speaker,
                               const EmotionParams& emotion, std::uint64_t content_seed,
                               std::uint64_t render_seed);

/// Synthesizes per_cell utterances for every seen pair, normalizes, and
/// assigns a stratified 9:1 train/test split.
Corpus generate_corpus(const DomainCatalog& catalog, int per_cell, const GeneratorParams& gen,
                       std::uint64_t seed, double train_ratio = 0.9);

/// Extra utterances from the same generative parameters and normalization,
/// disjoint seeds; used for held-out gates.
std::vector<Utterance> generate_heldout(const CorpusManifest& manifest, int per_cell,
                                        std::uint64_t seed);

/// Per-cell stratified assignment: round(ratio * n) train, remainder test, at
/// least one test utterance per cell.
std::vector<Split> split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed);

enum class TargetPolicy { vdp, seen_only };

struct Batch {
  torch::Tensor source;      // [B, bins, L]
  torch::Tensor ref_sp;      // target-speaker references
  torch::Tensor ref_em;      // target-emotion references
  torch::Tensor ref_sp2;     // second draw, for diversification
  torch::Tensor ref_em2;
  torch::Tensor z_sp, z_em, z_sp2, z_em2;  // [B, latent_dim]
  std::vector<DomainPair> source_pairs;
  std::vector<DomainPair> target_pairs;
  PairMask mask;
  std::vector<std::size_t> source_utterances;
  std::vector<std::size_t> ref_sp_utterances;
  std::vector<std::size_t> ref_em_utterances;
};

struct BatchOptions {
  int batch_size = 10;
  int crop_frames = 96;
  int latent_dim = 8;
  TargetPolicy policy = TargetPolicy::vdp;
  VdpMarginals marginals;
};

/// Emotion reference for a target pair: the pair's own cell when seen,
/// otherwise a supporting speaker that has the target emotion.
std::size_t pick_emotion_reference(const Corpus& corpus, DomainPair target, Rng& rng);
/// Speaker reference: the target cell when seen, otherwise any real data of the
/// target speaker (neutral data for neutral-only speakers).
std::size_t pick_speaker_reference(const Corpus& corpus, DomainPair target, Rng& rng);

Batch make_batch(const Corpus& corpus, const BatchOptions& options, Rng& rng);

/// Random crop (or wrap-pad) to exactly `frames` columns.
torch::Tensor crop_features(const MelSpectrogram& mel, int frames, Rng& rng);

// --- file formats -----------------------------------------------------------

/// "EVCF" | u32 version | u32 n_bins | u32 n_frames | f32 LE row-major values.
void write_feature_file(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_feature_file(const std::filesystem::path& path);

/// Writes manifest.json, catalog.json and feats/<id>.evcf under `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
std::string manifest_to_json(const Corpus& corpus);

}  // namespace evc
