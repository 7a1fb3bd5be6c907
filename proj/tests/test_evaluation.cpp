#include "doctest_torch.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "evc/evaluation.hpp"

using namespace evc;

namespace {

const Corpus& smoke_corpus() {
  static const Corpus corpus = generate_corpus(
      build_catalog_with_neutral_only({"spkA", "spkB", "spkC"}, {"neutral", "happy", "sad"}, {"spkC"},
                                      "neutral"),
      20, {}, 7);
  return corpus;
}

const Probe& emotion_probe() {
  static const Probe p = train_emotion_probe(smoke_corpus());
  return p;
}

const Probe& speaker_probe() {
  static const Probe p = train_speaker_embedder(smoke_corpus());
  return p;
}

ArchConfig corpus_arch(const Corpus& c) {
  ArchConfig a;
  a.n_speakers = c.manifest.catalog.num_speakers();
  a.n_emotions = c.manifest.catalog.num_emotions();
  a.content_classes = c.manifest.generator.n_content_symbols + 1;
  return a;
}

// A probe whose embedding of a positive input concentrated in bin 0 (resp. 1)
// is exactly e0 (resp. e1): non-negative weights keep every activation on the
// linear side of the leaky units, and off-diagonal weights are zero.
Probe axis_probe() {
  ProbeNet net(48, 4, 2, 2);
  torch::NoGradGuard ng;
  for (auto& p : net->parameters()) p.zero_();
  auto first = net->trunk->body[0]->as<torch::nn::Conv1d>();
  first->weight[0][0][1] = 1.0;
  first->weight[1][1][1] = 1.0;
  for (int i : {2, 4, 6}) {
    auto c = net->trunk->body[static_cast<std::size_t>(i)]->as<torch::nn::Conv1d>();
    c->weight[0][0].fill_(0.25);
    c->weight[1][1].fill_(0.25);
  }
  net->embed->weight[0][0] = 1.0;
  net->embed->weight[1][1] = 1.0;
  return Probe(net, 2, 1.0);
}

MelSpectrogram spike(int bin) {
  MelSpectrogram m(48, 32);
  for (int t = 0; t < 32; ++t) m.at(bin, t) = 1.0f;
  return m;
}

}  // namespace

TEST_CASE("probes pass their held-out gates") {
  CHECK(emotion_probe().heldout_accuracy() >= 0.95);
  CHECK(speaker_probe().heldout_accuracy() >= 0.95);
  CHECK(emotion_probe().classes() == 3);
  CHECK(emotion_probe().logits(smoke_corpus().utterances[0].features).numel() == 3);

  ProbeOptions impossible;
  impossible.steps = 1;
  impossible.gate = 1.01;
  CHECK_THROWS_AS(train_emotion_probe(smoke_corpus(), impossible), GateError);
}

TEST_CASE("relabeled real data scores exactly the probe's real-data accuracy") {
  const auto held = generate_heldout(smoke_corpus().manifest, 6, 55);
  std::vector<ConvertedSample> samples;
  for (const auto& u : held) samples.push_back({u.id, u.features, u.pair(), u.pair()});
  const auto per_cell = emotion_accuracy(emotion_probe(), samples);
  double hits = 0;
  for (const auto& [pair, acc] : per_cell) hits += acc * 6;
  CHECK(hits / static_cast<double>(held.size()) ==
        doctest::Approx(probe_accuracy(emotion_probe(), held, StyleKind::emotion)).epsilon(1e-12));
  CHECK_THROWS_AS(emotion_accuracy(emotion_probe(), {}), Error);
}

TEST_CASE("an identity conversion of neutral speech scores ~0 on non-neutral targets") {
  const auto& cat = smoke_corpus().manifest.catalog;
  const int neutral = cat.emotion_index("neutral");
  const auto held = generate_heldout(smoke_corpus().manifest, 8, 56);
  std::vector<ConvertedSample> samples;
  for (const auto& u : held)
    if (u.emotion == neutral)
      for (int e = 0; e < cat.num_emotions(); ++e)
        if (e != neutral) samples.push_back({u.id, u.features, u.pair(), {u.speaker, e}});
  for (const auto& [pair, acc] : emotion_accuracy(emotion_probe(), samples)) CHECK(acc <= 0.05);
}

TEST_CASE("speaker similarity: self-product and orthogonal embeddings") {
  const auto probe = axis_probe();
  const auto e0 = probe.embed(spike(0)), e1 = probe.embed(spike(1));
  CHECK(e0[0] == doctest::Approx(1.0));
  CHECK(e0[1] == 0.0);
  CHECK(e1[0] == 0.0);

  SpeakerReferences refs{{0, {spike(0)}}, {1, {spike(1)}}};
  std::vector<ConvertedSample> same = {{"a", spike(0), {1, 0}, {0, 0}}};
  std::vector<ConvertedSample> cross = {{"b", spike(1), {1, 0}, {0, 0}}};
  CHECK(speaker_similarity(probe, same, refs) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(speaker_similarity(probe, cross, refs) == 0.0);

  const auto matrix = speaker_similarity_matrix(probe, same, refs, 2);
  CHECK(matrix[0][0] == doctest::Approx(1.0));
  CHECK(matrix[0][1] == 0.0);
  CHECK(std::isnan(matrix[1][0]));

  std::vector<ConvertedSample> orphan = {{"c", spike(0), {0, 0}, {2, 0}}};
  CHECK_THROWS_AS(speaker_similarity(probe, orphan, refs), Error);

  // Real embedder: a real utterance against itself.
  const auto& u = smoke_corpus().utterances[5];
  SpeakerReferences own{{u.speaker, {u.features}}};
  CHECK(speaker_similarity(speaker_probe(), {{"d", u.features, u.pair(), u.pair()}}, own) ==
        doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("unseen cells come only from neutral-only speakers' neutral speech") {
  torch::manual_seed(3);
  ModelSet models(corpus_arch(smoke_corpus()));
  const auto& cat = smoke_corpus().manifest.catalog;
  EvalOptions opt;
  opt.sources_per_cell = 2;
  const auto samples = build_eval_set(models, smoke_corpus(), opt);
  std::size_t unseen = 0;
  for (const auto& s : samples) {
    if (cat.is_seen(s.target)) continue;
    ++unseen;
    CHECK(cat.emotions_of_speaker(s.source.speaker).size() == 1);
    CHECK(s.source.emotion == cat.emotion_index("neutral"));
    CHECK(s.target.speaker == s.source.speaker);
  }
  // spkC: 2 sources x 2 unseen emotions.
  CHECK(unseen == 4);
}

TEST_CASE("evaluation is read-only and repeatable") {
  torch::manual_seed(4);
  ModelSet models(corpus_arch(smoke_corpus()));
  EvalOptions opt;
  opt.sources_per_cell = 2;
  opt.references_per_speaker = 3;
  const auto probe_hash = emotion_probe().hash();
  const auto embedder_hash = speaker_probe().hash();
  const auto a = evaluate_model("x", models, smoke_corpus(), emotion_probe(), speaker_probe(), opt);
  const auto b = evaluate_model("x", models, smoke_corpus(), emotion_probe(), speaker_probe(), opt);
  CHECK(emotion_probe().hash() == probe_hash);
  CHECK(speaker_probe().hash() == embedder_hash);
  CHECK(a.count == b.count);
  CHECK(a.emotion_accuracy == b.emotion_accuracy);
  CHECK(a.speaker_similarity == b.speaker_similarity);
  REQUIRE(a.cells.size() == b.cells.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].emotion_accuracy == b.cells[i].emotion_accuracy);
    CHECK(a.cells[i].emotion_accuracy >= 0.0);
    CHECK(a.cells[i].emotion_accuracy <= 1.0);
    CHECK(std::abs(a.cells[i].speaker_similarity) <= 1.0 + 1e-9);
    CHECK(a.cells[i].count > 0);
    total += a.cells[i].count;
  }
  CHECK(total == a.count);

  const auto refs = reference_utterances(smoke_corpus(), 3, 1);
  CHECK(refs.size() == 3);
  for (const auto& [spk, list] : refs) CHECK(list.size() == 3);
}

TEST_CASE("ablation table and report files") {
  torch::manual_seed(5);
  ModelSet models(corpus_arch(smoke_corpus()));
  EvalOptions opt;
  opt.sources_per_cell = 1;
  opt.references_per_speaker = 2;
  const auto full = evaluate_model("full", models, smoke_corpus(), emotion_probe(), speaker_probe(), opt);
  auto other = full;
  other.label = "no-vdp";
  other.unseen_emotion_accuracy = full.unseen_emotion_accuracy - 0.25;
  const std::vector<AblationRow> rows = {{"full", full}, {"no-vdp", other}};
  const auto table = format_ablation_table(rows);
  CHECK(table.find("full") != std::string::npos);
  CHECK(table.find("no-vdp") != std::string::npos);
  CHECK(table.find("-0.25") != std::string::npos);

  auto foreign = rows;
  foreign[1].report.corpus_hash ^= 1;
  CHECK_THROWS_AS(format_ablation_table(foreign), Error);

  const auto path = std::filesystem::temp_directory_path() / "evc_report_test.tsv";
  write_report_tsv(path, rows, smoke_corpus().manifest.catalog);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  // Header + per label: one row per cell, an "all" row and an unseen summary row.
  CHECK(full.unseen_count > 0);
  CHECK(lines == 1 + 2 * (static_cast<int>(full.cells.size()) + 2));
  std::filesystem::remove(path);

  const auto text = format_report(full, smoke_corpus().manifest.catalog);
  CHECK(text.find("spkC") != std::string::npos);
}
