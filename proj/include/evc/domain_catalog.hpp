#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evc {

using Rng = std::mt19937_64;

/// Raised for any contract violation in the library (bad arguments, malformed
/// files, failed gates). Messages are meant to be shown to a CLI user.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A (speaker, emotion) domain code.
struct DomainPair {
  int speaker = 0;
  int emotion = 0;

  friend bool operator==(const DomainPair&, const DomainPair&) = default;
  friend auto operator<=>(const DomainPair&, const DomainPair&) = default;
  friend std::ostream& operator<<(std::ostream& os, const DomainPair& p) {
    return os << '(' << p.speaker << ',' << p.emotion << ')';
  }
};

/// Per-sample keep flags for real/fake discriminator training.
/// kept[i] is true iff the i-th target pair is a seen pair.
struct PairMask {
  std::vector<bool> kept;

  std::size_t size() const { return kept.size(); }
  std::size_t count_kept() const;
  std::vector<std::int64_t> kept_indices() const;
};

/// Speakers, emotions and which of their combinations exist in real data.
///
/// Immutable once built; construct through build_catalog() which enforces:
/// every seen pair is in range, every speaker has at least one seen pair,
/// and identifiers are unique.
class DomainCatalog {
 public:
  DomainCatalog() = default;

  const std::vector<std::string>& speakers() const { return speakers_; }
  const std::vector<std::string>& emotions() const { return emotions_; }
  /// Sorted, duplicate-free.
  const std::vector<DomainPair>& seen_pairs() const { return seen_; }
  /// Full product minus seen_pairs, sorted.
  const std::vector<DomainPair>& unseen_pairs() const { return unseen_; }

  int num_speakers() const { return static_cast<int>(speakers_.size()); }
  int num_emotions() const { return static_cast<int>(emotions_.size()); }
  int num_pairs() const { return num_speakers() * num_emotions(); }

  bool contains(DomainPair p) const;
  /// Membership in seen_pairs; throws for out-of-range indices.
  bool is_seen(DomainPair p) const;
  /// Flattened discriminator head index: speaker * |emotions| + emotion.
  int flat_index(DomainPair p) const;
  DomainPair from_flat_index(int index) const;

  int speaker_index(const std::string& id) const;
  int emotion_index(const std::string& id) const;

  /// Speakers that have real data for this emotion.
  std::vector<int> speakers_with_emotion(int emotion) const;
  /// Emotions the speaker has real data for.
  std::vector<int> emotions_of_speaker(int speaker) const;

  /// FNV-1a over the canonical text form; stored in checkpoints.
  std::uint64_t hash() const;

 private:
  friend DomainCatalog build_catalog(std::vector<std::string>, std::vector<std::string>,
                                     std::vector<DomainPair>);
  std::vector<std::string> speakers_;
  std::vector<std::string> emotions_;
  std::vector<DomainPair> seen_;
  std::vector<DomainPair> unseen_;
  std::vector<char> seen_lookup_;
};

DomainCatalog build_catalog(std::vector<std::string> speakers, std::vector<std::string> emotions,
                            std::vector<DomainPair> seen_pairs);

/// Convenience for the usual layout: `neutral_only` speakers carry only
/// `neutral_emotion`, every other speaker carries all emotions.
DomainCatalog build_catalog_with_neutral_only(std::vector<std::string> speakers,
                                              std::vector<std::string> emotions,
                                              const std::vector<std::string>& neutral_only,
                                              const std::string& neutral_emotion);

/// Throws evc::Error for out-of-range indices.
bool is_seen(const DomainCatalog& catalog, DomainPair pair);

/// Marginals for the target-pair sampler. Empty weight vectors mean uniform.
struct VdpMarginals {
  std::vector<double> speaker_weights;
  std::vector<double> emotion_weights;
};

/// Virtual Domain Pairing: speaker and emotion drawn independently, so the
/// result may be an unseen pair.
DomainPair sample_vdp_target(const DomainCatalog& catalog, Rng& rng,
                             const VdpMarginals& marginals = {});

/// Target sampler used when VDP is disabled: uniform over seen pairs.
DomainPair sample_seen_target(const DomainCatalog& catalog, Rng& rng);

PairMask fpm_mask(const DomainCatalog& catalog, std::span<const DomainPair> target_pairs);

std::string catalog_to_json(const DomainCatalog& catalog);
DomainCatalog catalog_from_json(const std::string& text);
void save_catalog(const DomainCatalog& catalog, const std::filesystem::path& path);
DomainCatalog load_catalog(const std::filesystem::path& path);

}  // namespace evc
