#include "evc/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "evc/util.hpp"

namespace evc {

namespace F = torch::nn::functional;

ProbeNetImpl::ProbeNetImpl(int n_bins, int hidden, int embedding_dim, int classes) {
  trunk = register_module("trunk", ConvTrunk(n_bins, hidden));
  embed = register_module("embed", torch::nn::Linear(hidden, embedding_dim));
  head = register_module("head", torch::nn::Linear(embedding_dim, classes));
}

torch::Tensor ProbeNetImpl::embedding(const torch::Tensor& x) { return embed(trunk(x)); }

torch::Tensor ProbeNetImpl::forward(const torch::Tensor& x) {
  return head(F::leaky_relu(embedding(x), F::LeakyReLUFuncOptions().negative_slope(0.2)));
}

Probe::Probe(ProbeNet net, int classes, double heldout_accuracy)
    : net_(std::move(net)), classes_(classes), heldout_accuracy_(heldout_accuracy) {
  net_->eval();
  set_requires_grad(*net_, false);
}

torch::Tensor Probe::logits(const MelSpectrogram& mel) const {
  torch::NoGradGuard ng;
  return net_->forward(mel.to_tensor().unsqueeze(0)).squeeze(0);
}

int Probe::predict(const MelSpectrogram& mel) const {
  return static_cast<int>(logits(mel).argmax().item<std::int64_t>());
}

std::vector<double> Probe::embed(const MelSpectrogram& mel) const {
  torch::NoGradGuard ng;
  auto e = net_->embedding(mel.to_tensor().unsqueeze(0)).squeeze(0).to(torch::kFloat64);
  const double norm = e.norm().item<double>();
  if (!(norm > 0.0)) throw Error("speaker embedding has zero norm");
  e = e / norm;
  return {e.data_ptr<double>(), e.data_ptr<double>() + e.numel()};
}

std::uint64_t Probe::hash() const { return parameter_hash(*net_); }

namespace {

int label_of(const Utterance& u, StyleKind kind) {
  return kind == StyleKind::speaker ? u.speaker : u.emotion;
}

Probe train_probe(const Corpus& corpus, const ProbeOptions& o, StyleKind kind) {
  const auto& cat = corpus.manifest.catalog;
  const int classes = kind == StyleKind::speaker ? cat.num_speakers() : cat.num_emotions();
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    if (kind == StyleKind::emotion && o.complete_speakers_only &&
        static_cast<int>(cat.emotions_of_speaker(u.speaker).size()) != cat.num_emotions())
      continue;
    pool.push_back(i);
  }
  // No speaker covers every emotion: fall back to all real data.
  if (pool.empty())
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i) pool.push_back(i);

  torch::manual_seed(o.seed);
  ProbeNet net(corpus.manifest.generator.n_bins, o.hidden, o.embedding_dim, classes);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(o.learning_rate));
  Rng rng(o.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  for (int step = 0; step < o.steps; ++step) {
    std::vector<torch::Tensor> xs;
    std::vector<std::int64_t> ys;
    for (int b = 0; b < o.batch_size; ++b) {
      const auto& u = corpus.utterances[pool[pick(rng)]];
      xs.push_back(crop_features(u.features, o.crop_frames, rng));
      ys.push_back(label_of(u, kind));
    }
    auto loss = F::cross_entropy(net->forward(torch::stack(xs)), torch::tensor(ys, torch::kLong));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }

  Probe probe(net, classes, 0.0);
  const auto heldout = generate_heldout(corpus.manifest, o.heldout_per_cell, derive_seed(o.seed, 0x6A7E));
  const double acc = probe_accuracy(probe, heldout, kind);
  if (acc < o.gate) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s probe held-out accuracy %.4f is below the %.2f gate",
                  kind == StyleKind::speaker ? "speaker" : "emotion", acc, o.gate);
    throw GateError(buf);
  }
  return Probe(net, classes, acc);
}

}  // namespace

Probe train_emotion_probe(const Corpus& corpus, const ProbeOptions& options) {
  return train_probe(corpus, options, StyleKind::emotion);
}

Probe train_speaker_embedder(const Corpus& corpus, const ProbeOptions& options) {
  return train_probe(corpus, options, StyleKind::speaker);
}

double probe_accuracy(const Probe& probe, const std::vector<Utterance>& utterances, StyleKind kind) {
  if (utterances.empty()) throw Error("probe accuracy over an empty set");
  std::size_t hits = 0;
  for (const auto& u : utterances) hits += probe.predict(u.features) == label_of(u, kind);
  return static_cast<double>(hits) / static_cast<double>(utterances.size());
}

std::map<DomainPair, double> emotion_accuracy(const Probe& probe,
                                              const std::vector<ConvertedSample>& samples) {
  if (samples.empty()) throw Error("emotion accuracy over an empty set");
  std::map<DomainPair, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& s : samples) {
    auto& [hits, n] = tally[s.target];
    hits += probe.predict(s.features) == s.target.emotion;
    ++n;
  }
  std::map<DomainPair, double> out;
  for (const auto& [pair, t] : tally)
    out[pair] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return out;
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::map<int, std::vector<std::vector<double>>> embed_references(const Probe& embedder,
                                                                 const SpeakerReferences& refs) {
  std::map<int, std::vector<std::vector<double>>> out;
  for (const auto& [spk, mels] : refs)
    for (const auto& m : mels) out[spk].push_back(embedder.embed(m));
  return out;
}

double mean_similarity(const std::vector<double>& e, const std::vector<std::vector<double>>& refs) {
  double s = 0.0;
  for (const auto& r : refs) s += dot(e, r);
  return s / static_cast<double>(refs.size());
}

}  // namespace

double speaker_similarity(const Probe& embedder, const std::vector<ConvertedSample>& samples,
                          const SpeakerReferences& references) {
  if (samples.empty()) throw Error("speaker similarity over an empty set");
  const auto refs = embed_references(embedder, references);
  double total = 0.0;
  for (const auto& s : samples) {
    auto it = refs.find(s.target.speaker);
    if (it == refs.end() || it->second.empty())
      throw Error("no reference utterances for target speaker " + std::to_string(s.target.speaker));
    total += mean_similarity(embedder.embed(s.features), it->second);
  }
  return total / static_cast<double>(samples.size());
}

std::vector<std::vector<double>> speaker_similarity_matrix(const Probe& embedder,
                                                           const std::vector<ConvertedSample>& samples,
                                                           const SpeakerReferences& references,
                                                           int n_speakers) {
  const auto refs = embed_references(embedder, references);
  const auto n = static_cast<std::size_t>(n_speakers);
  std::vector<std::vector<double>> sum(n, std::vector<double>(n, 0.0));
  std::vector<std::size_t> count(n, 0);
  for (const auto& s : samples) {
    const auto e = embedder.embed(s.features);
    const auto row = static_cast<std::size_t>(s.target.speaker);
    ++count[row];
    for (std::size_t r = 0; r < n; ++r) {
      auto it = refs.find(static_cast<int>(r));
      if (it == refs.end() || it->second.empty())
        throw Error("no reference utterances for speaker " + std::to_string(r));
      sum[row][r] += mean_similarity(e, it->second);
    }
  }
  for (std::size_t t = 0; t < n; ++t)
    for (auto& v : sum[t])
      v = count[t] ? v / static_cast<double>(count[t]) : std::numeric_limits<double>::quiet_NaN();
  return sum;
}

std::vector<ConvertedSample> build_eval_set(ModelSet& models, const Corpus& corpus, const EvalOptions& o) {
  const auto& cat = corpus.manifest.catalog;
  const auto sources = generate_heldout(corpus.manifest, o.sources_per_cell, derive_seed(o.seed, 0x5EC));
  Rng rng(derive_seed(o.seed, 0xC0));
  std::vector<ConvertedSample> out;
  auto add = [&](const Utterance& u, DomainPair target, const char* tag) {
    ConvertInputs in;
    in.seed = rng();
    if (o.mode == ConvertMode::referenced) {
      in.ref_sp = corpus.utterances[pick_speaker_reference(corpus, target, rng)].features;
      in.ref_em = corpus.utterances[pick_emotion_reference(corpus, target, rng)].features;
    }
    out.push_back({u.id + "->" + tag + "_" + cat.speakers()[static_cast<std::size_t>(target.speaker)] +
                       "_" + cat.emotions()[static_cast<std::size_t>(target.emotion)],
                   convert(models, cat, u.features, target, o.mode, in), u.pair(), target});
  };
  for (const auto& u : sources) {
    const auto own = cat.emotions_of_speaker(u.speaker);
    if (own.size() == 1)
      for (int e = 0; e < cat.num_emotions(); ++e)
        if (!cat.is_seen({u.speaker, e})) add(u, {u.speaker, e}, "emo");
    if (o.cross_speaker)
      for (int t = 0; t < cat.num_speakers(); ++t)
        if (t != u.speaker && cat.is_seen({t, u.emotion})) add(u, {t, u.emotion}, "spk");
  }
  return out;
}

SpeakerReferences reference_utterances(const Corpus& corpus, int per_speaker, std::uint64_t seed) {
  const auto& cat = corpus.manifest.catalog;
  SpeakerReferences refs;
  // Enough per cell that every speaker reaches per_speaker across its cells.
  int per_cell = 1;
  for (int s = 0; s < cat.num_speakers(); ++s) {
    const int cells = static_cast<int>(cat.emotions_of_speaker(s).size());
    per_cell = std::max(per_cell, (per_speaker + cells - 1) / cells);
  }
  auto utts = generate_heldout(corpus.manifest, per_cell, derive_seed(seed, 0x2EF));
  Rng rng(seed);
  std::shuffle(utts.begin(), utts.end(), rng);
  for (auto& u : utts) {
    auto& v = refs[u.speaker];
    if (static_cast<int>(v.size()) < per_speaker) v.push_back(std::move(u.features));
  }
  return refs;
}

std::uint64_t corpus_hash(const Corpus& corpus) { return fnv1a64(manifest_to_json(corpus)); }

EvalReport evaluate_samples(const std::string& label, const Corpus& corpus, const Probe& emotion_probe,
                            const Probe& speaker_embedder, const std::vector<ConvertedSample>& samples,
                            const SpeakerReferences& references) {
  if (samples.empty()) throw Error("evaluation over an empty converted set");
  const auto& cat = corpus.manifest.catalog;
  EvalReport r;
  r.label = label;
  r.corpus_hash = corpus_hash(corpus);
  std::map<DomainPair, std::vector<ConvertedSample>> by_cell;
  for (const auto& s : samples) by_cell[s.target].push_back(s);

  std::size_t hits = 0, unseen_hits = 0;
  double sim_total = 0.0;
  for (const auto& [pair, cell] : by_cell) {
    CellResult c;
    c.target = pair;
    c.unseen = !cat.is_seen(pair);
    c.count = cell.size();
    c.emotion_accuracy = emotion_accuracy(emotion_probe, cell).at(pair);
    c.speaker_similarity = speaker_similarity(speaker_embedder, cell, references);
    const auto cell_hits = static_cast<std::size_t>(std::lround(c.emotion_accuracy * static_cast<double>(c.count)));
    hits += cell_hits;
    sim_total += c.speaker_similarity * static_cast<double>(c.count);
    if (c.unseen) {
      unseen_hits += cell_hits;
      r.unseen_count += c.count;
    }
    r.cells.push_back(c);
  }
  r.count = samples.size();
  r.emotion_accuracy = static_cast<double>(hits) / static_cast<double>(r.count);
  r.unseen_emotion_accuracy =
      r.unseen_count ? static_cast<double>(unseen_hits) / static_cast<double>(r.unseen_count) : 0.0;
  r.speaker_similarity = sim_total / static_cast<double>(r.count);
  return r;
}

EvalReport evaluate_model(const std::string& label, ModelSet& models, const Corpus& corpus,
                          const Probe& emotion_probe, const Probe& speaker_embedder,
                          const EvalOptions& options) {
  const auto samples = build_eval_set(models, corpus, options);
  const auto refs = reference_utterances(corpus, options.references_per_speaker, options.seed);
  return evaluate_samples(label, corpus, emotion_probe, speaker_embedder, samples, refs);
}

std::vector<AblationRow> ablation_study(const Corpus& corpus, const TrainingConfig& base,
                                       const std::vector<Ablation>& ablations,
                                       const Probe& emotion_probe, const Probe& speaker_embedder,
                                       const EvalOptions& options,
                                       const std::filesystem::path& run_root) {
  std::vector<AblationRow> rows;
  for (auto a : ablations) {
    const auto name = ablation_name(a);
    RunOptions ro;
    if (!run_root.empty()) ro.run_dir = run_root / name;
    auto result = run_training(base.with_ablation(a), corpus, ro);
    rows.push_back({name, evaluate_model(name, result.state.models, corpus, emotion_probe,
                                         speaker_embedder, options)});
  }
  return rows;
}

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void check_same_corpus(const std::vector<AblationRow>& rows) {
  for (const auto& r : rows)
    if (r.report.corpus_hash != rows.front().report.corpus_hash)
      throw Error("report rows '" + rows.front().name + "' and '" + r.name +
                  "' were evaluated on different corpora");
}

}  // namespace

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  check_same_corpus(rows);
  const EvalReport* full = nullptr;
  for (const auto& r : rows)
    if (r.name == "full") full = &r.report;
  std::ostringstream out;
  out << "config       unseen_emo_acc  d_full    emo_acc  spk_sim  d_full    n\n";
  for (const auto& r : rows) {
    std::string name = r.name;
    name.resize(12, ' ');
    out << name << " " << fmt("%14.4f", r.report.unseen_emotion_accuracy) << "  "
        << (full ? fmt("%+7.4f", r.report.unseen_emotion_accuracy - full->unseen_emotion_accuracy)
                 : std::string("      -"))
        << "  " << fmt("%7.4f", r.report.emotion_accuracy) << "  "
        << fmt("%7.4f", r.report.speaker_similarity) << "  "
        << (full ? fmt("%+7.4f", r.report.speaker_similarity - full->speaker_similarity)
                 : std::string("      -"))
        << "  " << r.report.count << "\n";
  }
  return out.str();
}

std::string format_report(const EvalReport& report, const DomainCatalog& catalog) {
  std::ostringstream out;
  out << "report " << report.label << "\n";
  out << "speaker      emotion      unseen  n     emo_acc  spk_sim\n";
  for (const auto& c : report.cells) {
    auto spk = catalog.speakers()[static_cast<std::size_t>(c.target.speaker)];
    auto emo = catalog.emotions()[static_cast<std::size_t>(c.target.emotion)];
    spk.resize(std::max<std::size_t>(spk.size(), 12), ' ');
    emo.resize(std::max<std::size_t>(emo.size(), 12), ' ');
    std::string n = std::to_string(c.count);
    n.resize(std::max<std::size_t>(n.size(), 5), ' ');
    out << spk << " " << emo << " " << (c.unseen ? "yes   " : "no    ") << "  " << n << " "
        << fmt("%7.4f", c.emotion_accuracy) << "  " << fmt("%7.4f", c.speaker_similarity) << "\n";
  }
  out << "overall: n=" << report.count << " emo_acc=" << fmt("%.4f", report.emotion_accuracy)
      << " unseen_n=" << report.unseen_count
      << " unseen_emo_acc=" << fmt("%.4f", report.unseen_emotion_accuracy)
      << " spk_sim=" << fmt("%.4f", report.speaker_similarity) << "\n";
  return out.str();
}

void write_report_tsv(const std::filesystem::path& path, const std::vector<AblationRow>& rows,
                      const DomainCatalog& catalog) {
  check_same_corpus(rows);
  std::ostringstream out;
  out << "label\tspeaker\temotion\tunseen\tcount\temotion_accuracy\tspeaker_similarity\n";
  for (const auto& r : rows) {
    for (const auto& c : r.report.cells)
      out << r.name << "\t" << catalog.speakers()[static_cast<std::size_t>(c.target.speaker)] << "\t"
          << catalog.emotions()[static_cast<std::size_t>(c.target.emotion)] << "\t" << (c.unseen ? 1 : 0)
          << "\t" << c.count << "\t" << fmt("%.6f", c.emotion_accuracy) << "\t"
          << fmt("%.6f", c.speaker_similarity) << "\n";
    out << r.name << "\tall\tall\t-\t" << r.report.count << "\t" << fmt("%.6f", r.report.emotion_accuracy)
        << "\t" << fmt("%.6f", r.report.speaker_similarity) << "\n";
    if (r.report.unseen_count)
      out << r.name << "\tall\tunseen\t1\t" << r.report.unseen_count << "\t"
          << fmt("%.6f", r.report.unseen_emotion_accuracy) << "\t-\n";
  }
  write_text_file(path, out.str());
}

}  // namespace evc
