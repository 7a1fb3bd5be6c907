#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "evc/corpus.hpp"
#include "evc/losses.hpp"
#include "evc/networks.hpp"

namespace evc {

/// Adam over a named parameter list with serializable moment state.
/// Parameters whose gradient is undefined are skipped entirely.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, double lr, double beta1 = 0.0,
       double beta2 = 0.99, double eps = 1e-8);

  void zero_grad();
  void step();

  std::int64_t steps() const { return steps_; }
  /// Moments keyed "m.<name>" / "v.<name>".
  std::vector<std::pair<std::string, torch::Tensor>> state() const;
  void load_state(const std::map<std::string, torch::Tensor>& tensors, std::int64_t steps,
                  const std::string& prefix);

 private:
  struct Slot {
    std::string name;
    torch::Tensor param, m, v;
    std::int64_t count = 0;
  };
  std::vector<Slot> slots_;
  double lr_ = 1e-3, beta1_ = 0.0, beta2_ = 0.99, eps_ = 1e-8;
  std::int64_t steps_ = 0;
};

enum class Ablation { full, no_vdp, no_fpm, no_anneal, no_f0norm };
std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainingConfig {
  int total_epochs = 150;
  int classifier_start_epoch = 50;
  /// 0 derives ceil(|train| / batch_size).
  int steps_per_epoch = 0;
  int batch_size = 10;
  int crop_frames = 96;
  std::uint64_t seed = 1;
  /// In steps; 0 writes only the final checkpoint.
  int checkpoint_interval = 0;

  bool vdp = true;
  bool fpm = true;
  bool generator_fpm = true;
  bool anneal = true;
  /// Negative means "same as classifier_start_epoch" / "same as total_epochs".
  int anneal_start_epoch = -1;
  int anneal_end_epoch = -1;

  double lr_generator = 5e-4;
  double lr_style = 5e-4;
  double lr_mapping = 1e-4;
  double lr_discriminator = 5e-4;
  double lr_classifier = 5e-4;

  LossWeights weights;
  ArchConfig arch;  // n_speakers / n_emotions / n_bins filled from the corpus
  PretrainOptions pitch_pretrain{600, 16, 96, 3e-3, 11};
  PretrainOptions content_pretrain{300, 16, 96, 3e-3, 12};

  /// The config with one component of the method switched off.
  TrainingConfig with_ablation(Ablation a) const;
  AnnealState anneal_state() const;
  /// Throws evc::Error listing every violated constraint.
  void validate() const;
};

struct StepMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  std::vector<std::pair<std::string, double>> values;

  double get(const std::string& name) const;
  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
  friend std::ostream& operator<<(std::ostream& os, const StepMetrics& m) { return os << "step " << m.step; }
};

struct TrainState {
  explicit TrainState(const ArchConfig& arch);

  ModelSet models;
  Adam opt_generator, opt_style, opt_mapping, opt_discriminator, opt_classifier;
  Rng rng;
  std::int64_t step = 0;
  int steps_per_epoch = 1;
  std::vector<StepMetrics> history;

  int epoch() const { return static_cast<int>(step / steps_per_epoch); }
  std::vector<std::pair<std::string, Adam*>> optimizers();
};

/// Fresh optimizers over the trainable groups (G, S, M, D, C) with configured rates.
void reset_optimizers(TrainState& state, const TrainingConfig& config);

/// Fresh state: seeded parameter init, pretrained and frozen helpers, optimizers.
TrainState init_train_state(const TrainingConfig& config, const Corpus& corpus);

/// One D/C update followed by one G/S/M update.
StepMetrics train_step(TrainState& state, const Batch& batch, const TrainingConfig& config,
                       const DomainCatalog& catalog);

BatchOptions batch_options(const TrainingConfig& config);

struct RunOptions {
  /// Empty: keep everything in memory.
  std::filesystem::path run_dir;
  /// Continue from run_dir/checkpoints/latest.evck.
  bool resume = false;
  /// Stop after this many total steps (simulated interruption); -1 runs to the end.
  std::int64_t stop_after = -1;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::filesystem::path final_checkpoint;
};

TrainResult run_training(const TrainingConfig& config, const Corpus& corpus,
                         const RunOptions& options = {});

// --- checkpoints ----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     const TrainingConfig& config, const DomainCatalog& catalog);

struct LoadedCheckpoint {
  TrainingConfig config;
  DomainCatalog catalog;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// --- inference ------------------------------------------------------------------

enum class ConvertMode { mapped, referenced };

struct ConvertInputs {
  std::optional<torch::Tensor> z_sp, z_em;                // [latent_dim]; drawn from seed if absent
  std::optional<MelSpectrogram> ref_sp, ref_em;           // required in referenced mode
  std::uint64_t seed = 0;
};

/// G(X, F0(X), styles) for one utterance [bins, T] -> [bins, T].
MelSpectrogram convert(ModelSet& models, const DomainCatalog& catalog, const MelSpectrogram& source,
                       DomainPair target, ConvertMode mode, const ConvertInputs& inputs);

/// Batched variant over [B, bins, T] with per-sample targets, styles from mapping networks.
torch::Tensor convert_mapped_batch(ModelSet& models, const DomainCatalog& catalog,
                                   const torch::Tensor& sources, const std::vector<DomainPair>& targets,
                                   const torch::Tensor& z_sp, const torch::Tensor& z_em);

}  // namespace evc
