#include "evc/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "evc/util.hpp"

namespace evc {

using nlohmann::json;

torch::Tensor MelSpectrogram::to_tensor() const {
  return torch::from_blob(const_cast<float*>(values.data()), {n_bins, n_frames}, torch::kFloat32)
      .clone();
}

MelSpectrogram MelSpectrogram::from_tensor(const torch::Tensor& t) {
  if (t.dim() != 2) throw Error("feature tensor must be 2-D [bins, frames]");
  auto c = t.detach().to(torch::kFloat32).contiguous();
  MelSpectrogram m(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)));
  std::memcpy(m.values.data(), c.data_ptr<float>(), m.values.size() * sizeof(float));
  return m;
}

std::vector<float> Utterance::normalized_f0() const {
  double mean = 0.0, sq = 0.0;
  for (float v : f0_contour) mean += v;
  mean /= static_cast<double>(f0_contour.size());
  for (float v : f0_contour) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(f0_contour.size())) + 1e-5;
  std::vector<float> out(f0_contour.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((f0_contour[i] - mean) / sd);
  return out;
}

std::vector<std::size_t> Corpus::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (manifest.split.at(i) == which) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::train_cell(DomainPair pair) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (manifest.split.at(i) == Split::train && utterances[i].pair() == pair) out.push_back(i);
  return out;
}

// --- synthesis ----------------------------------------------------------------

std::vector<SpeakerParams> default_speaker_params(int n_speakers, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5EA4));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> perm(static_cast<std::size_t>(n_speakers));
  for (int i = 0; i < n_speakers; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<SpeakerParams> out;
  const double n = std::max(1, n_speakers);
  for (int k = 0; k < n_speakers; ++k) {
    SpeakerParams p;
    p.pitch_base = 7.0 + 5.0 * (k + 0.5) / n + 0.3 * (u(rng) - 0.5);
    p.tilt = 2.0 * u(rng) - 1.0;
    p.formant1_center = 15.0 + 12.0 * (k + 0.5) / n;
    p.formant1_width = 2.0 + 1.5 * u(rng);
    p.formant1_amp = 1.0 + 0.6 * u(rng);
    p.formant2_center = 30.0 + 14.0 * (perm[static_cast<std::size_t>(k)] + 0.5) / n;
    p.formant2_width = 2.0 + 1.5 * u(rng);
    p.formant2_amp = 1.0 + 0.6 * u(rng);
    out.push_back(p);
  }
  return out;
}

std::vector<EmotionParams> default_emotion_params(int n_emotions) {
  // neutral, happy, sad, angry, fear, surprise
  static const EmotionParams presets[] = {
      {0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.15},   {4.0, 2.5, 2.5, 0.5, 0.3, 6.0, 0.08},
      {-3.0, 0.5, 0.7, -0.6, 0.0, 0.0, 0.35}, {2.0, 1.8, 3.5, 0.9, 0.5, 10.0, 0.05},
      {5.0, 1.2, 5.0, -0.2, 0.6, 14.0, 0.25}, {6.0, 3.0, 1.5, 0.3, 0.2, 4.0, 0.12},
  };
  constexpr int n_presets = static_cast<int>(std::size(presets));
  std::vector<EmotionParams> out;
  for (int k = 0; k < n_emotions; ++k) {
    EmotionParams p = presets[k % n_presets];
    const int cycle = k / n_presets;
    p.pitch_shift += 1.5 * cycle;
    p.energy_gain -= 0.25 * cycle;
    out.push_back(p);
  }
  return out;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double gauss(double x, double center, double width) {
  const double d = (x - center) / width;
  return std::exp(-0.5 * d * d);
}

// Two spectral bumps per content symbol; the first fades out across the
// segment while the second fades in.
std::pair<double, double> symbol_bins(int symbol, int n_bins) {
  const double span = n_bins - 8.0;
  const double a = 4.0 + span * ((symbol * 7 + 1) % 12) / 12.0;
  const double b = 4.0 + span * ((symbol * 5 + 8) % 12) / 12.0;
  return {a, b};
}

void validate(const GeneratorParams& g) {
  if (g.n_bins < 16) throw Error("generator: n_bins must be >= 16");
  if (g.n_content_symbols < 1) throw Error("generator: need at least one content symbol");
  if (g.min_symbols < 1 || g.max_symbols < g.min_symbols)
    throw Error("generator: invalid symbol count range");
  if (g.min_segment_frames < 1 || g.max_segment_frames < g.min_segment_frames)
    throw Error("generator: invalid segment length range");
  if (!(g.noise_std > 0.0)) throw Error("generator: noise_std must be > 0 (degenerate corpus)");
  if (!(g.harmonic_width > 0.0)) throw Error("generator: harmonic_width must be > 0");
  if (!(g.voiced_level > 0.0)) throw Error("generator: voiced_level must be > 0");
  if (!(g.pitch_jitter >= 0.0)) throw Error("generator: pitch_jitter must be >= 0");
}

}  // namespace

Utterance synthesize_utterance(const GeneratorParams& gen, const SpeakerParams& speaker,
                               const EmotionParams& emotion, std::uint64_t content_seed,
                               std::uint64_t render_seed) {
  validate(gen);
  Rng content_rng(content_seed);
  Rng render_rng(render_seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  Utterance utt;
  std::vector<int> seg_len;
  const int n_sym = std::uniform_int_distribution<int>(gen.min_symbols, gen.max_symbols)(content_rng);
  for (int i = 0; i < n_sym; ++i) {
    utt.content_ids.push_back(
        std::uniform_int_distribution<int>(0, gen.n_content_symbols - 1)(content_rng));
    seg_len.push_back(std::uniform_int_distribution<int>(gen.min_segment_frames,
                                                         gen.max_segment_frames)(content_rng));
  }

  const double r = std::clamp(emotion.silence_ratio, 0.0, 0.9);
  const double mean_seg = 0.5 * (gen.min_segment_frames + gen.max_segment_frames);
  const double mean_gap = mean_seg * r / (1.0 - r);
  std::vector<int>& labels = utt.frame_labels;
  labels.assign(2, kSilenceLabel);
  for (int i = 0; i < n_sym; ++i) {
    if (i > 0) {
      const int gap = static_cast<int>(std::lround(mean_gap * (0.5 + u01(render_rng))));
      labels.insert(labels.end(), static_cast<std::size_t>(gap), kSilenceLabel);
    }
    labels.insert(labels.end(), static_cast<std::size_t>(seg_len[static_cast<std::size_t>(i)]),
                  utt.content_ids[static_cast<std::size_t>(i)]);
  }
  labels.insert(labels.end(), 2, kSilenceLabel);
  const int T = static_cast<int>(labels.size());

  const double pitch_phase = kTwoPi * u01(render_rng);
  const double energy_phase = kTwoPi * u01(render_rng);
  utt.f0_contour.resize(static_cast<std::size_t>(T));
  double jitter = 0.0;
  for (int t = 0; t < T; ++t) {
    jitter = 0.8 * jitter + gen.pitch_jitter * normal(render_rng);
    utt.f0_contour[static_cast<std::size_t>(t)] = static_cast<float>(
        speaker.pitch_base + emotion.pitch_shift +
        emotion.pitch_depth * std::sin(kTwoPi * emotion.pitch_rate * t / 100.0 + pitch_phase) +
        jitter);
  }

  static constexpr double harm_offset[] = {0.0, 6.0, 9.5, 12.0, 14.0};
  static constexpr double harm_amp[] = {2.0, 1.5, 1.1, 0.8, 0.6};
  const int B = gen.n_bins;
  std::vector<double> envelope(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b)
    envelope[static_cast<std::size_t>(b)] =
        speaker.tilt * (static_cast<double>(b) / B - 0.5) +
        speaker.formant1_amp * gauss(b, speaker.formant1_center, speaker.formant1_width) +
        speaker.formant2_amp * gauss(b, speaker.formant2_center, speaker.formant2_width);

  utt.features = MelSpectrogram(B, T);
  int seg_start = 0;
  for (int t = 0; t < T; ++t) {
    const int label = labels[static_cast<std::size_t>(t)];
    if (label != kSilenceLabel && (t == 0 || labels[static_cast<std::size_t>(t - 1)] != label))
      seg_start = t;
    int seg_end = t;
    if (label != kSilenceLabel)
      while (seg_end + 1 < T && labels[static_cast<std::size_t>(seg_end + 1)] == label) ++seg_end;
    const double pos =
        label == kSilenceLabel ? 0.0 : (t - seg_start + 0.5) / (seg_end - seg_start + 1.0);
    const double pitch = utt.f0_contour[static_cast<std::size_t>(t)];
    const double energy =
        emotion.energy_gain +
        emotion.energy_mod_depth * std::sin(kTwoPi * emotion.energy_mod_rate * t / 100.0 + energy_phase);
    const auto [bin_a, bin_b] = label == kSilenceLabel ? std::pair{0.0, 0.0} : symbol_bins(label, B);
    for (int b = 0; b < B; ++b) {
      double v = gen.noise_std * normal(render_rng);
      if (label != kSilenceLabel) {
        double harm = 0.0;
        for (std::size_t h = 0; h < std::size(harm_offset); ++h)
          harm += harm_amp[h] * gauss(b, pitch + harm_offset[h], gen.harmonic_width);
        const double content = gen.content_amplitude *
                               ((1.0 - pos) * gauss(b, bin_a, 1.5) + pos * gauss(b, bin_b, 1.5));
        v += gen.voiced_level + envelope[static_cast<std::size_t>(b)] + content + harm + energy;
      }
      utt.features.at(b, t) = static_cast<float>(v);
    }
  }
  return utt;
}

namespace {

std::string utterance_id(const DomainCatalog& c, DomainPair p, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return c.speakers()[static_cast<std::size_t>(p.speaker)] + "_" +
         c.emotions()[static_cast<std::size_t>(p.emotion)] + "_" + buf;
}

std::vector<Utterance> synthesize_cells(const CorpusManifest& m, int per_cell, std::uint64_t seed,
                                        std::uint64_t stream) {
  std::vector<Utterance> out;
  for (const auto& pair : m.catalog.seen_pairs()) {
    const auto cell = static_cast<std::uint64_t>(m.catalog.flat_index(pair));
    for (int i = 0; i < per_cell; ++i) {
      const auto ui = static_cast<std::uint64_t>(i);
      Utterance u = synthesize_utterance(
          m.generator, m.speakers[static_cast<std::size_t>(pair.speaker)],
          m.emotions[static_cast<std::size_t>(pair.emotion)],
          derive_seed(seed, stream, cell, ui), derive_seed(seed, stream + 1, cell, ui));
      u.speaker = pair.speaker;
      u.emotion = pair.emotion;
      u.id = utterance_id(m.catalog, pair, i);
      out.push_back(std::move(u));
    }
  }
  return out;
}

void apply_normalization(const CorpusManifest& m, std::vector<Utterance>& utts) {
  for (auto& u : utts) {
    for (auto& v : u.features.values)
      v = static_cast<float>((v - m.feature_mean) / m.feature_std);
    for (auto& p : u.f0_contour) p = static_cast<float>((p - m.pitch_mean) / m.pitch_std);
  }
}

}  // namespace

Corpus generate_corpus(const DomainCatalog& catalog, int per_cell, const GeneratorParams& gen,
                       std::uint64_t seed, double train_ratio) {
  if (per_cell < 2) throw Error("per_cell must be >= 2 so every cell can hold out a test utterance");
  validate(gen);
  Corpus corpus;
  auto& m = corpus.manifest;
  m.catalog = catalog;
  m.generator = gen;
  m.seed = seed;
  m.per_cell = per_cell;
  m.speakers = default_speaker_params(catalog.num_speakers(), seed);
  m.emotions = default_emotion_params(catalog.num_emotions());
  corpus.utterances = synthesize_cells(m, per_cell, seed, 0x100);

  double sum = 0.0, sq = 0.0, psum = 0.0, psq = 0.0;
  std::size_t n = 0, pn = 0;
  for (const auto& u : corpus.utterances) {
    for (float v : u.features.values) sum += v, sq += static_cast<double>(v) * v;
    for (float p : u.f0_contour) psum += p, psq += static_cast<double>(p) * p;
    n += u.features.values.size();
    pn += u.f0_contour.size();
  }
  m.feature_mean = sum / static_cast<double>(n);
  m.feature_std = std::sqrt(std::max(sq / static_cast<double>(n) - m.feature_mean * m.feature_mean, 0.0));
  m.pitch_mean = psum / static_cast<double>(pn);
  m.pitch_std = std::sqrt(std::max(psq / static_cast<double>(pn) - m.pitch_mean * m.pitch_mean, 0.0));
  if (!(m.feature_std > 0.0) || !(m.pitch_std > 0.0))
    throw Error("degenerate corpus: zero feature or pitch variance");
  apply_normalization(m, corpus.utterances);
  m.split = split_corpus(corpus, train_ratio, derive_seed(seed, 0x5917));
  return corpus;
}

std::vector<Utterance> generate_heldout(const CorpusManifest& manifest, int per_cell,
                                        std::uint64_t seed) {
  auto utts = synthesize_cells(manifest, per_cell, derive_seed(seed, 0x4E1D), 0x200);
  apply_normalization(manifest, utts);
  for (auto& u : utts) u.id = "heldout_" + u.id;
  return utts;
}

std::vector<Split> split_corpus(const Corpus& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must be in (0, 1)");
  Rng rng(seed);
  std::vector<Split> split(corpus.utterances.size(), Split::train);
  for (const auto& pair : corpus.manifest.catalog.seen_pairs()) {
    std::vector<std::size_t> cell;
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
      if (corpus.utterances[i].pair() == pair) cell.push_back(i);
    if (cell.empty()) continue;
    if (cell.size() < 2)
      throw Error("cell " + corpus.utterances[cell[0]].id + " too small to hold out a test utterance");
    std::shuffle(cell.begin(), cell.end(), rng);
    const auto n = static_cast<long>(cell.size());
    const long n_train = std::clamp(std::lround(ratio * static_cast<double>(n)), 1L, n - 1);
    for (long k = n_train; k < n; ++k) split[cell[static_cast<std::size_t>(k)]] = Split::test;
  }
  return split;
}

// --- batching -----------------------------------------------------------------

namespace {
std::size_t pick(const std::vector<std::size_t>& from, Rng& rng) {
  return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
}

std::string pair_name(const DomainCatalog& c, DomainPair p) {
  return "(" + c.speakers()[static_cast<std::size_t>(p.speaker)] + ", " +
         c.emotions()[static_cast<std::size_t>(p.emotion)] + ")";
}
}  // namespace

std::size_t pick_emotion_reference(const Corpus& corpus, DomainPair target, Rng& rng) {
  const auto& cat = corpus.manifest.catalog;
  std::vector<std::size_t> pool;
  if (cat.is_seen(target)) {
    pool = corpus.train_cell(target);
  } else {
    for (int s : cat.speakers_with_emotion(target.emotion)) {
      auto cell = corpus.train_cell({s, target.emotion});
      pool.insert(pool.end(), cell.begin(), cell.end());
    }
  }
  if (pool.empty()) throw Error("no emotion reference exists for " + pair_name(cat, target));
  return pick(pool, rng);
}

std::size_t pick_speaker_reference(const Corpus& corpus, DomainPair target, Rng& rng) {
  const auto& cat = corpus.manifest.catalog;
  std::vector<std::size_t> pool;
  if (cat.is_seen(target)) {
    pool = corpus.train_cell(target);
  } else {
    for (int e : cat.emotions_of_speaker(target.speaker)) {
      auto cell = corpus.train_cell({target.speaker, e});
      pool.insert(pool.end(), cell.begin(), cell.end());
    }
  }
  if (pool.empty()) throw Error("no speaker reference exists for " + pair_name(cat, target));
  return pick(pool, rng);
}

torch::Tensor crop_features(const MelSpectrogram& mel, int frames, Rng& rng) {
  const int n = mel.n_frames;
  const int offset = n > frames ? std::uniform_int_distribution<int>(0, n - frames)(rng) : 0;
  std::vector<float> buf(static_cast<std::size_t>(mel.n_bins) * static_cast<std::size_t>(frames));
  for (int b = 0; b < mel.n_bins; ++b)
    for (int t = 0; t < frames; ++t)
      buf[static_cast<std::size_t>(b * frames + t)] = mel.at(b, (offset + t) % n);
  return torch::from_blob(buf.data(), {mel.n_bins, frames}, torch::kFloat32).clone();
}

Batch make_batch(const Corpus& corpus, const BatchOptions& opt, Rng& rng) {
  if (opt.batch_size < 1) throw Error("batch_size must be positive");
  const auto train = corpus.indices(Split::train);
  if (train.empty()) throw Error("train split is empty");
  const auto& cat = corpus.manifest.catalog;

  Batch batch;
  std::vector<torch::Tensor> src, rsp, rem, rsp2, rem2;
  for (int i = 0; i < opt.batch_size; ++i) {
    const std::size_t s = pick(train, rng);
    const DomainPair target = opt.policy == TargetPolicy::vdp
                                  ? sample_vdp_target(cat, rng, opt.marginals)
                                  : sample_seen_target(cat, rng);
    const std::size_t a = pick_speaker_reference(corpus, target, rng);
    const std::size_t e = pick_emotion_reference(corpus, target, rng);
    const std::size_t a2 = pick_speaker_reference(corpus, target, rng);
    const std::size_t e2 = pick_emotion_reference(corpus, target, rng);
    batch.source_utterances.push_back(s);
    batch.ref_sp_utterances.push_back(a);
    batch.ref_em_utterances.push_back(e);
    batch.source_pairs.push_back(corpus.utterances[s].pair());
    batch.target_pairs.push_back(target);
    src.push_back(crop_features(corpus.utterances[s].features, opt.crop_frames, rng));
    rsp.push_back(crop_features(corpus.utterances[a].features, opt.crop_frames, rng));
    rem.push_back(crop_features(corpus.utterances[e].features, opt.crop_frames, rng));
    rsp2.push_back(crop_features(corpus.utterances[a2].features, opt.crop_frames, rng));
    rem2.push_back(crop_features(corpus.utterances[e2].features, opt.crop_frames, rng));
  }
  batch.source = torch::stack(src);
  batch.ref_sp = torch::stack(rsp);
  batch.ref_em = torch::stack(rem);
  batch.ref_sp2 = torch::stack(rsp2);
  batch.ref_em2 = torch::stack(rem2);

  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto latent = [&] {
    std::vector<float> z(static_cast<std::size_t>(opt.batch_size * opt.latent_dim));
    for (auto& v : z) v = normal(rng);
    return torch::from_blob(z.data(), {opt.batch_size, opt.latent_dim}, torch::kFloat32).clone();
  };
  batch.z_sp = latent();
  batch.z_em = latent();
  batch.z_sp2 = latent();
  batch.z_em2 = latent();
  batch.mask = fpm_mask(cat, batch.target_pairs);
  return batch;
}

// --- files --------------------------------------------------------------------

namespace {
constexpr char kFeatureMagic[4] = {'E', 'V', 'C', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("truncated feature file");
  return to_little(v);
}
}  // namespace

void write_feature_file(const std::filesystem::path& path, const MelSpectrogram& mel) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kFeatureMagic, 4);
  put<std::uint32_t>(out, kFeatureVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(mel.n_bins));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(mel.n_frames));
  for (float v : mel.values) put<float>(out, v);
  if (!out) throw Error("short write to " + path.string());
}

MelSpectrogram read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw Error(path.string() + ": not a feature file");
  if (get<std::uint32_t>(in) != kFeatureVersion)
    throw Error(path.string() + ": unsupported feature file version");
  const auto bins = get<std::uint32_t>(in);
  const auto frames = get<std::uint32_t>(in);
  if (bins == 0 || frames == 0 || bins > 4096 || frames > (1u << 24))
    throw Error(path.string() + ": implausible feature shape");
  MelSpectrogram mel(static_cast<int>(bins), static_cast<int>(frames));
  for (auto& v : mel.values) v = get<float>(in);
  return mel;
}

namespace {

json to_json(const GeneratorParams& g) {
  return {{"n_bins", g.n_bins},
          {"n_content_symbols", g.n_content_symbols},
          {"min_symbols", g.min_symbols},
          {"max_symbols", g.max_symbols},
          {"min_segment_frames", g.min_segment_frames},
          {"max_segment_frames", g.max_segment_frames},
          {"noise_std", g.noise_std},
          {"voiced_level", g.voiced_level},
          {"harmonic_width", g.harmonic_width},
          {"content_amplitude", g.content_amplitude},
          {"pitch_jitter", g.pitch_jitter}};
}

GeneratorParams generator_from_json(const json& j) {
  GeneratorParams g;
  g.n_bins = j.at("n_bins");
  g.n_content_symbols = j.at("n_content_symbols");
  g.min_symbols = j.at("min_symbols");
  g.max_symbols = j.at("max_symbols");
  g.min_segment_frames = j.at("min_segment_frames");
  g.max_segment_frames = j.at("max_segment_frames");
  g.noise_std = j.at("noise_std");
  g.voiced_level = j.at("voiced_level");
  g.harmonic_width = j.at("harmonic_width");
  g.content_amplitude = j.at("content_amplitude");
  g.pitch_jitter = j.at("pitch_jitter");
  return g;
}

json to_json(const SpeakerParams& p) {
  return {{"pitch_base", p.pitch_base},       {"tilt", p.tilt},
          {"formant1_center", p.formant1_center}, {"formant1_width", p.formant1_width},
          {"formant1_amp", p.formant1_amp},   {"formant2_center", p.formant2_center},
          {"formant2_width", p.formant2_width}, {"formant2_amp", p.formant2_amp}};
}

SpeakerParams speaker_from_json(const json& j) {
  SpeakerParams p;
  p.pitch_base = j.at("pitch_base");
  p.tilt = j.at("tilt");
  p.formant1_center = j.at("formant1_center");
  p.formant1_width = j.at("formant1_width");
  p.formant1_amp = j.at("formant1_amp");
  p.formant2_center = j.at("formant2_center");
  p.formant2_width = j.at("formant2_width");
  p.formant2_amp = j.at("formant2_amp");
  return p;
}

json to_json(const EmotionParams& p) {
  return {{"pitch_shift", p.pitch_shift},       {"pitch_depth", p.pitch_depth},
          {"pitch_rate", p.pitch_rate},         {"energy_gain", p.energy_gain},
          {"energy_mod_depth", p.energy_mod_depth}, {"energy_mod_rate", p.energy_mod_rate},
          {"silence_ratio", p.silence_ratio}};
}

EmotionParams emotion_from_json(const json& j) {
  EmotionParams p;
  p.pitch_shift = j.at("pitch_shift");
  p.pitch_depth = j.at("pitch_depth");
  p.pitch_rate = j.at("pitch_rate");
  p.energy_gain = j.at("energy_gain");
  p.energy_mod_depth = j.at("energy_mod_depth");
  p.energy_mod_rate = j.at("energy_mod_rate");
  p.silence_ratio = j.at("silence_ratio");
  return p;
}

}  // namespace

std::string manifest_to_json(const Corpus& corpus) {
  const auto& m = corpus.manifest;
  json speakers = json::array(), emotions = json::array(), utts = json::array();
  for (const auto& s : m.speakers) speakers.push_back(to_json(s));
  for (const auto& e : m.emotions) emotions.push_back(to_json(e));
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    utts.push_back({{"id", u.id},
                    {"file", "feats/" + u.id + ".evcf"},
                    {"speaker", m.catalog.speakers()[static_cast<std::size_t>(u.speaker)]},
                    {"emotion", m.catalog.emotions()[static_cast<std::size_t>(u.emotion)]},
                    {"n_frames", u.features.n_frames},
                    {"split", m.split.at(i) == Split::train ? "train" : "test"},
                    {"content_ids", u.content_ids},
                    {"frame_labels", u.frame_labels},
                    {"f0", u.f0_contour}});
  }
  json j{{"format", "evc-corpus"},
         {"version", 1},
         {"seed", m.seed},
         {"per_cell", m.per_cell},
         {"catalog", json::parse(catalog_to_json(m.catalog))},
         {"generator", to_json(m.generator)},
         {"speaker_params", speakers},
         {"emotion_params", emotions},
         {"normalization", {{"feature_mean", m.feature_mean}, {"feature_std", m.feature_std},
                            {"pitch_mean", m.pitch_mean}, {"pitch_std", m.pitch_std}}},
         {"utterances", utts}};
  return j.dump(1) + "\n";
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "feats");
  for (const auto& u : corpus.utterances)
    write_feature_file(dir / "feats" / (u.id + ".evcf"), u.features);
  save_catalog(corpus.manifest.catalog, dir / "catalog.json");
  write_text_file(dir / "manifest.json", manifest_to_json(corpus));
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  Corpus corpus;
  auto& m = corpus.manifest;
  try {
    const json j = json::parse(read_text_file(path));
    if (j.at("format") != "evc-corpus" || j.at("version") != 1)
      throw Error(path.string() + ": unsupported manifest");
    m.catalog = catalog_from_json(j.at("catalog").dump());
    m.seed = j.at("seed");
    m.per_cell = j.at("per_cell");
    m.generator = generator_from_json(j.at("generator"));
    for (const auto& s : j.at("speaker_params")) m.speakers.push_back(speaker_from_json(s));
    for (const auto& e : j.at("emotion_params")) m.emotions.push_back(emotion_from_json(e));
    const auto& norm = j.at("normalization");
    m.feature_mean = norm.at("feature_mean");
    m.feature_std = norm.at("feature_std");
    m.pitch_mean = norm.at("pitch_mean");
    m.pitch_std = norm.at("pitch_std");
    for (const auto& ju : j.at("utterances")) {
      Utterance u;
      u.id = ju.at("id");
      u.speaker = m.catalog.speaker_index(ju.at("speaker"));
      u.emotion = m.catalog.emotion_index(ju.at("emotion"));
      if (!m.catalog.is_seen(u.pair()))
        throw Error("utterance " + u.id + " carries an unseen (speaker, emotion) pair");
      u.content_ids = ju.at("content_ids").get<std::vector<int>>();
      u.frame_labels = ju.at("frame_labels").get<std::vector<int>>();
      u.f0_contour = ju.at("f0").get<std::vector<float>>();
      u.features = read_feature_file(dir / ju.at("file").get<std::string>());
      if (static_cast<int>(u.f0_contour.size()) != u.features.n_frames)
        throw Error("utterance " + u.id + ": f0 length does not match frame count");
      m.split.push_back(ju.at("split") == "train" ? Split::train : Split::test);
      corpus.utterances.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw Error(path.string() + ": malformed manifest: " + e.what());
  }
  return corpus;
}

}  // namespace evc
