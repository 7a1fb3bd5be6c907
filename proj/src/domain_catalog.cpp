#include "evc/domain_catalog.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "evc/util.hpp"

namespace evc {

using nlohmann::json;

std::size_t PairMask::count_kept() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

std::vector<std::int64_t> PairMask::kept_indices() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (kept[i]) out.push_back(static_cast<std::int64_t>(i));
  return out;
}

bool DomainCatalog::contains(DomainPair p) const {
  return p.speaker >= 0 && p.speaker < num_speakers() && p.emotion >= 0 &&
         p.emotion < num_emotions();
}

bool DomainCatalog::is_seen(DomainPair p) const {
  return seen_lookup_[static_cast<std::size_t>(flat_index(p))] != 0;
}

int DomainCatalog::flat_index(DomainPair p) const {
  if (!contains(p))
    throw Error("domain pair (" + std::to_string(p.speaker) + "," + std::to_string(p.emotion) +
                ") out of range");
  return p.speaker * num_emotions() + p.emotion;
}

DomainPair DomainCatalog::from_flat_index(int index) const {
  if (index < 0 || index >= num_pairs()) throw Error("flat pair index out of range");
  return {index / num_emotions(), index % num_emotions()};
}

namespace {
int index_of(const std::vector<std::string>& ids, const std::string& id, const char* what) {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) {
    std::string valid;
    for (const auto& s : ids) valid += (valid.empty() ? "" : ", ") + s;
    throw Error(std::string("unknown ") + what + " '" + id + "' (valid: " + valid + ")");
  }
  return static_cast<int>(it - ids.begin());
}
}  // namespace

int DomainCatalog::speaker_index(const std::string& id) const {
  return index_of(speakers_, id, "speaker");
}

int DomainCatalog::emotion_index(const std::string& id) const {
  return index_of(emotions_, id, "emotion");
}

std::vector<int> DomainCatalog::speakers_with_emotion(int emotion) const {
  std::vector<int> out;
  for (const auto& p : seen_)
    if (p.emotion == emotion) out.push_back(p.speaker);
  return out;
}

std::vector<int> DomainCatalog::emotions_of_speaker(int speaker) const {
  std::vector<int> out;
  for (const auto& p : seen_)
    if (p.speaker == speaker) out.push_back(p.emotion);
  return out;
}

std::uint64_t DomainCatalog::hash() const { return fnv1a64(catalog_to_json(*this)); }

DomainCatalog build_catalog(std::vector<std::string> speakers, std::vector<std::string> emotions,
                            std::vector<DomainPair> seen_pairs) {
  if (speakers.empty()) throw Error("catalog needs at least one speaker");
  if (emotions.empty()) throw Error("catalog needs at least one emotion");
  for (const auto* ids : {&speakers, &emotions}) {
    std::set<std::string> uniq(ids->begin(), ids->end());
    if (uniq.size() != ids->size()) throw Error("duplicate identifier in catalog");
    for (const auto& s : *ids)
      if (s.empty()) throw Error("empty identifier in catalog");
  }
  DomainCatalog c;
  c.speakers_ = std::move(speakers);
  c.emotions_ = std::move(emotions);
  for (const auto& p : seen_pairs)
    if (!c.contains(p))
      throw Error("seen pair (" + std::to_string(p.speaker) + "," + std::to_string(p.emotion) +
                  ") out of range");
  std::sort(seen_pairs.begin(), seen_pairs.end());
  seen_pairs.erase(std::unique(seen_pairs.begin(), seen_pairs.end()), seen_pairs.end());
  if (seen_pairs.empty()) throw Error("catalog needs at least one seen pair");
  c.seen_ = std::move(seen_pairs);
  c.seen_lookup_.assign(static_cast<std::size_t>(c.num_pairs()), 0);
  for (const auto& p : c.seen_) c.seen_lookup_[static_cast<std::size_t>(c.flat_index(p))] = 1;
  for (int s = 0; s < c.num_speakers(); ++s) {
    if (c.emotions_of_speaker(s).empty())
      throw Error("speaker '" + c.speakers_[static_cast<std::size_t>(s)] + "' has no seen pair");
    for (int e = 0; e < c.num_emotions(); ++e)
      if (!c.seen_lookup_[static_cast<std::size_t>(c.flat_index({s, e}))])
        c.unseen_.push_back({s, e});
  }
  return c;
}

DomainCatalog build_catalog_with_neutral_only(std::vector<std::string> speakers,
                                              std::vector<std::string> emotions,
                                              const std::vector<std::string>& neutral_only,
                                              const std::string& neutral_emotion) {
  auto neutral_it = std::find(emotions.begin(), emotions.end(), neutral_emotion);
  if (neutral_it == emotions.end())
    throw Error("neutral emotion '" + neutral_emotion + "' not among emotions");
  const int neutral = static_cast<int>(neutral_it - emotions.begin());
  for (const auto& id : neutral_only)
    if (std::find(speakers.begin(), speakers.end(), id) == speakers.end())
      throw Error("neutral-only speaker '" + id + "' not among speakers");
  std::vector<DomainPair> seen;
  for (int s = 0; s < static_cast<int>(speakers.size()); ++s) {
    const bool only_neutral = std::find(neutral_only.begin(), neutral_only.end(),
                                        speakers[static_cast<std::size_t>(s)]) != neutral_only.end();
    for (int e = 0; e < static_cast<int>(emotions.size()); ++e)
      if (!only_neutral || e == neutral) seen.push_back({s, e});
  }
  return build_catalog(std::move(speakers), std::move(emotions), std::move(seen));
}

bool is_seen(const DomainCatalog& catalog, DomainPair pair) { return catalog.is_seen(pair); }

namespace {
int draw_index(int n, const std::vector<double>& weights, Rng& rng) {
  if (weights.empty()) return std::uniform_int_distribution<int>(0, n - 1)(rng);
  if (static_cast<int>(weights.size()) != n) throw Error("VDP marginal has wrong arity");
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng);
}
}  // namespace

DomainPair sample_vdp_target(const DomainCatalog& catalog, Rng& rng, const VdpMarginals& m) {
  if (catalog.num_pairs() == 0) throw Error("empty catalog");
  const int s = draw_index(catalog.num_speakers(), m.speaker_weights, rng);
  const int e = draw_index(catalog.num_emotions(), m.emotion_weights, rng);
  return {s, e};
}

DomainPair sample_seen_target(const DomainCatalog& catalog, Rng& rng) {
  const auto& seen = catalog.seen_pairs();
  if (seen.empty()) throw Error("empty catalog");
  std::uniform_int_distribution<std::size_t> dist(0, seen.size() - 1);
  return seen[dist(rng)];
}

PairMask fpm_mask(const DomainCatalog& catalog, std::span<const DomainPair> target_pairs) {
  PairMask mask;
  mask.kept.reserve(target_pairs.size());
  for (const auto& p : target_pairs) mask.kept.push_back(is_seen(catalog, p));
  return mask;
}

std::string catalog_to_json(const DomainCatalog& catalog) {
  json seen = json::array();
  for (const auto& p : catalog.seen_pairs())
    seen.push_back({catalog.speakers()[static_cast<std::size_t>(p.speaker)],
                    catalog.emotions()[static_cast<std::size_t>(p.emotion)]});
  json j{{"speakers", catalog.speakers()}, {"emotions", catalog.emotions()}, {"seen_pairs", seen}};
  return j.dump(2) + "\n";
}

DomainCatalog catalog_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
    auto speakers = j.at("speakers").get<std::vector<std::string>>();
    auto emotions = j.at("emotions").get<std::vector<std::string>>();
    std::vector<DomainPair> seen;
    for (const auto& entry : j.at("seen_pairs")) {
      const auto spk = entry.at(0).get<std::string>();
      const auto emo = entry.at(1).get<std::string>();
      auto si = std::find(speakers.begin(), speakers.end(), spk);
      auto ei = std::find(emotions.begin(), emotions.end(), emo);
      if (si == speakers.end() || ei == emotions.end())
        throw Error("seen pair [" + spk + ", " + emo + "] names an unknown identifier");
      seen.push_back({static_cast<int>(si - speakers.begin()), static_cast<int>(ei - emotions.begin())});
    }
    return build_catalog(std::move(speakers), std::move(emotions), std::move(seen));
  } catch (const json::exception& e) {
    throw Error(std::string("malformed catalog: ") + e.what());
  }
}

void save_catalog(const DomainCatalog& catalog, const std::filesystem::path& path) {
  write_text_file(path, catalog_to_json(catalog));
}

DomainCatalog load_catalog(const std::filesystem::path& path) {
  return catalog_from_json(read_text_file(path));
}

}  // namespace evc
