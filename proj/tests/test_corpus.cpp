#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "evc/corpus.hpp"

using namespace evc;

namespace {

DomainCatalog smoke_catalog() {
  return build_catalog_with_neutral_only({"spkA", "spkB", "spkC"}, {"neutral", "happy", "sad"},
                                         {"spkC"}, "neutral");
}

const Corpus& smoke_corpus() {
  static const Corpus corpus = generate_corpus(smoke_catalog(), 20, {}, 7);
  return corpus;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("evc_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

double mean(const std::vector<float>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("smoke corpus: 7 seen cells x 20 = 140 utterances, 126/14 split") {
  const auto& c = smoke_corpus();
  CHECK(c.utterances.size() == 140);
  CHECK(c.indices(Split::train).size() == 126);
  CHECK(c.indices(Split::test).size() == 14);
  std::map<DomainPair, std::pair<int, int>> per_cell;
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    auto& [tr, te] = per_cell[c.utterances[i].pair()];
    (c.manifest.split[i] == Split::train ? tr : te) += 1;
  }
  CHECK(per_cell.size() == 7);
  for (const auto& [pair, counts] : per_cell) {
    CHECK(c.manifest.catalog.is_seen(pair));
    CHECK(std::abs(counts.first - 18) <= 1);
  }
}

TEST_CASE("stored utterances satisfy the data invariants") {
  for (const auto& u : smoke_corpus().utterances) {
    CHECK(smoke_corpus().manifest.catalog.is_seen(u.pair()));
    CHECK(u.features.n_bins == 48);
    CHECK(u.features.n_frames >= 8);
    CHECK(u.f0_contour.size() == static_cast<std::size_t>(u.features.n_frames));
    CHECK(u.frame_labels.size() == static_cast<std::size_t>(u.features.n_frames));
    for (float v : u.features.values) REQUIRE(std::isfinite(v));
  }
}

TEST_CASE("normalization statistics") {
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& u : smoke_corpus().utterances)
    for (float v : u.features.values) sum += v, sq += static_cast<double>(v) * v, ++n;
  const double m = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - m * m);
  CHECK(std::abs(m) <= 0.01);
  CHECK(std::abs(sd - 1.0) <= 0.02);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate_corpus(smoke_catalog(), 4, {}, 99);
  const auto b = generate_corpus(smoke_catalog(), 4, {}, 99);
  const auto c = generate_corpus(smoke_catalog(), 4, {}, 100);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i)
    CHECK(a.utterances[i].features.values == b.utterances[i].features.values);
  CHECK(a.manifest.split == b.manifest.split);
  CHECK(manifest_to_json(a) == manifest_to_json(b));
  CHECK(a.utterances[0].features.values != c.utterances[0].features.values);
}

TEST_CASE("emotion changes pitch but not content") {
  const GeneratorParams gen;
  const auto speakers = default_speaker_params(2, 3);
  const auto emotions = default_emotion_params(3);
  const auto neutral = synthesize_utterance(gen, speakers[0], emotions[0], 11, 12);
  const auto happy = synthesize_utterance(gen, speakers[0], emotions[1], 11, 12);
  CHECK(neutral.content_ids == happy.content_ids);
  CHECK(std::abs(mean(neutral.f0_contour) - mean(happy.f0_contour)) > 0.5);
  // Speaker changes the envelope, not the content either.
  const auto other = synthesize_utterance(gen, speakers[1], emotions[0], 11, 12);
  CHECK(other.content_ids == neutral.content_ids);
  CHECK(other.features.values != neutral.features.values);
}

TEST_CASE("generation rejects bad inputs") {
  CHECK_THROWS_AS(generate_corpus(smoke_catalog(), 1, {}, 1), Error);
  GeneratorParams flat;
  flat.noise_std = 0.0;
  CHECK_THROWS_AS(generate_corpus(smoke_catalog(), 4, flat, 1), Error);
  GeneratorParams narrow;
  narrow.harmonic_width = 0.0;
  CHECK_THROWS_AS(generate_corpus(smoke_catalog(), 4, narrow, 1), Error);
}

TEST_CASE("split_corpus") {
  const auto& c = smoke_corpus();
  CHECK(split_corpus(c, 0.9, 5) == split_corpus(c, 0.9, 5));
  CHECK_THROWS_AS(split_corpus(c, 1.0, 5), Error);
  CHECK_THROWS_AS(split_corpus(c, 0.0, 5), Error);

  const auto two = generate_corpus(build_catalog({"a"}, {"x"}, {{0, 0}}), 2, {}, 3, 0.5);
  CHECK(two.indices(Split::train).size() == 1);
  CHECK(two.indices(Split::test).size() == 1);
}

TEST_CASE("batches: shapes, targets and references") {
  const auto& c = smoke_corpus();
  const auto& cat = c.manifest.catalog;
  Rng rng(4);
  BatchOptions opt;
  int unseen_targets = 0;
  for (int k = 0; k < 20; ++k) {
    const auto b = make_batch(c, opt, rng);
    CHECK(b.source.sizes() == std::vector<std::int64_t>{10, 48, 96});
    CHECK(b.ref_sp.sizes() == b.source.sizes());
    CHECK(b.ref_em2.sizes() == b.source.sizes());
    CHECK(b.z_sp.sizes() == std::vector<std::int64_t>{10, 8});
    REQUIRE(b.target_pairs.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto t = b.target_pairs[i];
      const auto& em_ref = c.utterances[b.ref_em_utterances[i]];
      const auto& sp_ref = c.utterances[b.ref_sp_utterances[i]];
      CHECK(c.manifest.split[b.source_utterances[i]] == Split::train);
      CHECK(b.mask.kept[i] == cat.is_seen(t));
      CHECK(em_ref.emotion == t.emotion);
      CHECK(sp_ref.speaker == t.speaker);
      if (!cat.is_seen(t)) {
        ++unseen_targets;
        CHECK(em_ref.speaker != t.speaker);
      }
    }
  }
  CHECK(unseen_targets > 0);

  opt.policy = TargetPolicy::seen_only;
  const auto seen = make_batch(c, opt, rng);
  CHECK(seen.mask.count_kept() == 10);
}

TEST_CASE("single seen pair: every target is that pair") {
  const auto c = generate_corpus(build_catalog({"a"}, {"x"}, {{0, 0}}), 4, {}, 3);
  Rng rng(1);
  const auto b = make_batch(c, {}, rng);
  for (const auto& t : b.target_pairs) CHECK(t == DomainPair{0, 0});
}

TEST_CASE("crop pads short utterances by wrapping") {
  MelSpectrogram m(2, 3);
  for (int t = 0; t < 3; ++t) m.at(0, t) = static_cast<float>(t), m.at(1, t) = 10.0f + static_cast<float>(t);
  Rng rng(0);
  const auto x = crop_features(m, 7, rng);
  CHECK(x.sizes() == std::vector<std::int64_t>{2, 7});
  CHECK(x[0][4].item<float>() == 1.0f);
  CHECK(x[1][6].item<float>() == 10.0f);
}

TEST_CASE("feature file round trip and rejection") {
  const auto dir = scratch_dir("feats");
  std::filesystem::create_directories(dir);
  const auto& mel = smoke_corpus().utterances[3].features;
  write_feature_file(dir / "a.evcf", mel);
  const auto back = read_feature_file(dir / "a.evcf");
  CHECK(back.n_bins == mel.n_bins);
  CHECK(back.n_frames == mel.n_frames);
  CHECK(back.values == mel.values);
  CHECK(std::filesystem::file_size(dir / "a.evcf") == 16 + 4 * mel.values.size());

  std::ofstream(dir / "bad.evcf") << "nope";
  CHECK_THROWS_AS(read_feature_file(dir / "bad.evcf"), Error);
  CHECK_THROWS_AS(read_feature_file(dir / "missing.evcf"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus directory round trip") {
  const auto dir = scratch_dir("corpus");
  const auto c = generate_corpus(smoke_catalog(), 3, {}, 8);
  save_corpus(c, dir);
  const auto back = load_corpus(dir);
  CHECK(manifest_to_json(back) == manifest_to_json(c));
  REQUIRE(back.utterances.size() == c.utterances.size());
  for (std::size_t i = 0; i < c.utterances.size(); ++i) {
    CHECK(back.utterances[i].features.values == c.utterances[i].features.values);
    CHECK(back.utterances[i].f0_contour == c.utterances[i].f0_contour);
    CHECK(back.utterances[i].content_ids == c.utterances[i].content_ids);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("held-out utterances share normalization but not samples") {
  const auto& c = smoke_corpus();
  const auto held = generate_heldout(c.manifest, 2, 1);
  CHECK(held.size() == 14);
  for (const auto& u : held)
    for (const auto& v : c.utterances) REQUIRE(u.features.values != v.features.values);
}
