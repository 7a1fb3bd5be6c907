#include "doctest_torch.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include <boost/math/distributions/chi_squared.hpp>

#include "evc/domain_catalog.hpp"

using namespace evc;

namespace {

const std::vector<std::string> kEmotions = {"neutral", "happy", "sad", "angry", "fear", "surprise"};

DomainCatalog nine_by_six() {
  std::vector<std::string> speakers;
  for (int i = 0; i < 9; ++i) speakers.push_back("spk" + std::to_string(i));
  return build_catalog_with_neutral_only(speakers, kEmotions, {"spk7", "spk8"}, "neutral");
}

double chi_square_critical(int dof, double alpha) {
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(dof), alpha));
}

}  // namespace

TEST_CASE("nine-by-six catalog has 44 seen and 10 unseen pairs") {
  const auto c = nine_by_six();
  CHECK(c.seen_pairs().size() == 44);
  CHECK(c.unseen_pairs().size() == 10);
  // Independent count: 7 full speakers x 6 emotions + 2 neutral cells.
  int seen = 0;
  for (int s = 0; s < 9; ++s)
    for (int e = 0; e < 6; ++e) seen += c.is_seen({s, e});
  CHECK(seen == 7 * 6 + 2);
}

TEST_CASE("degenerate and small catalogs") {
  const auto one = build_catalog({"a"}, {"x"}, {{0, 0}});
  CHECK(one.unseen_pairs().empty());
  const auto two = build_catalog({"a", "b"}, {"x", "y"}, {{0, 0}, {0, 1}, {1, 0}});
  REQUIRE(two.unseen_pairs().size() == 1);
  CHECK(two.unseen_pairs()[0] == DomainPair{1, 1});
}

TEST_CASE("catalog construction rejects invalid input") {
  CHECK_THROWS_AS(build_catalog({}, {"x"}, {}), Error);
  CHECK_THROWS_AS(build_catalog({"a"}, {}, {}), Error);
  CHECK_THROWS_AS(build_catalog({"a", "a"}, {"x"}, {{0, 0}, {1, 0}}), Error);
  CHECK_THROWS_AS(build_catalog({"a"}, {"x", "x"}, {{0, 0}}), Error);
  CHECK_THROWS_AS(build_catalog({"a", "b"}, {"x"}, {{0, 0}}), Error);  // b has no data
  CHECK_THROWS_AS(build_catalog({"a"}, {"x"}, {{0, 1}}), Error);
  CHECK_THROWS_AS(build_catalog({"a"}, {"x"}, {{-1, 0}}), Error);
}

TEST_CASE("is_seen") {
  const auto c = build_catalog({"a"}, {"x", "y"}, {{0, 0}});
  CHECK(is_seen(c, {0, 0}));
  CHECK_FALSE(is_seen(c, {0, 1}));
  CHECK_THROWS_AS(is_seen(c, {1, 0}), Error);
  CHECK_THROWS_AS(is_seen(c, {0, 2}), Error);

  const auto big = nine_by_six();
  CHECK_FALSE(is_seen(big, {7, big.emotion_index("happy")}));
  CHECK(is_seen(big, {7, big.emotion_index("neutral")}));
}

TEST_CASE("flat index is speaker-major and invertible") {
  const auto c = nine_by_six();
  for (int s = 0; s < 9; ++s)
    for (int e = 0; e < 6; ++e) {
      CHECK(c.flat_index({s, e}) == s * 6 + e);
      CHECK(c.from_flat_index(s * 6 + e) == DomainPair{s, e});
    }
  CHECK_THROWS_AS(c.from_flat_index(54), Error);
}

TEST_CASE("unknown identifiers name the valid ones") {
  const auto c = nine_by_six();
  try {
    c.emotion_index("bored");
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bored") != std::string::npos);
    CHECK(msg.find("surprise") != std::string::npos);
  }
}

TEST_CASE("single-outcome sampler") {
  const auto c = build_catalog({"a"}, {"x"}, {{0, 0}});
  Rng rng(3);
  for (int i = 0; i < 100; ++i) CHECK(sample_vdp_target(c, rng) == DomainPair{0, 0});
}

TEST_CASE("VDP frequencies over 54,000 draws") {
  const auto c = nine_by_six();
  Rng rng(20240601);
  std::map<DomainPair, int> counts;
  std::vector<int> spk(9, 0), emo(6, 0);
  int unseen = 0;
  const int n = 54000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_vdp_target(c, rng);
    ++counts[p];
    ++spk[static_cast<std::size_t>(p.speaker)];
    ++emo[static_cast<std::size_t>(p.emotion)];
    unseen += !c.is_seen(p);
  }
  CHECK(counts.size() == 54);
  for (const auto& [pair, k] : counts) CHECK(std::abs(static_cast<double>(k) / n - 1.0 / 54) <= 0.01);
  CHECK(std::abs(static_cast<double>(unseen) / n - 10.0 / 54) <= 0.01);
  for (const auto& [pair, k] : counts) {
    const double joint = static_cast<double>(k) / n;
    const double product = static_cast<double>(spk[static_cast<std::size_t>(pair.speaker)]) / n *
                           static_cast<double>(emo[static_cast<std::size_t>(pair.emotion)]) / n;
    CHECK(std::abs(joint - product) <= 0.01);
  }
}

TEST_CASE("VDP marginals: chi-square rejections at 0.01 occur at the nominal rate") {
  // 200 independent samples of the statistic; under uniform marginals the rejection
  // count is Binomial(200, 0.01), and P(count > 8) < 3e-4.
  const auto c = nine_by_six();
  const int seeds = 200, n = 2000;
  int spk_rejects = 0, emo_rejects = 0;
  double spk_mean = 0, emo_mean = 0;
  auto stat = [n](const std::vector<double>& obs) {
    const double expected = static_cast<double>(n) / static_cast<double>(obs.size());
    double s = 0;
    for (double o : obs) s += (o - expected) * (o - expected) / expected;
    return s;
  };
  for (int seed = 1; seed <= seeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed));
    std::vector<double> spk(9, 0), emo(6, 0);
    for (int i = 0; i < n; ++i) {
      const auto p = sample_vdp_target(c, rng);
      spk[static_cast<std::size_t>(p.speaker)] += 1;
      emo[static_cast<std::size_t>(p.emotion)] += 1;
    }
    const double a = stat(spk), b = stat(emo);
    spk_rejects += a >= chi_square_critical(8, 0.01);
    emo_rejects += b >= chi_square_critical(5, 0.01);
    spk_mean += a / seeds;
    emo_mean += b / seeds;
  }
  CHECK(spk_rejects <= 8);
  CHECK(emo_rejects <= 8);
  // The statistic's mean is its degrees of freedom; sd of the mean is sqrt(2 dof / 200).
  CHECK(std::abs(spk_mean - 8.0) < 4 * std::sqrt(16.0 / seeds));
  CHECK(std::abs(emo_mean - 5.0) < 4 * std::sqrt(10.0 / seeds));
}

TEST_CASE("sampler determinism") {
  const auto c = nine_by_six();
  Rng a(77), b(77);
  for (int i = 0; i < 500; ++i) CHECK(sample_vdp_target(c, a) == sample_vdp_target(c, b));
}

TEST_CASE("weighted marginals are honoured") {
  const auto c = build_catalog({"a", "b"}, {"x", "y"}, {{0, 0}, {0, 1}, {1, 0}});
  VdpMarginals m{{1.0, 0.0}, {0.0, 1.0}};
  Rng rng(5);
  for (int i = 0; i < 50; ++i) CHECK(sample_vdp_target(c, rng, m) == DomainPair{0, 1});
}

TEST_CASE("seen-only sampler never returns an unseen pair") {
  const auto c = nine_by_six();
  Rng rng(9);
  for (int i = 0; i < 5000; ++i) CHECK(c.is_seen(sample_seen_target(c, rng)));
}

TEST_CASE("FPM mask equals membership, exhaustively on a small catalog") {
  const auto c = build_catalog({"a", "b"}, {"x", "y"}, {{0, 0}, {0, 1}, {1, 0}});
  std::vector<DomainPair> all = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  // Every batch of length 3 over the 4 pairs.
  for (int code = 0; code < 64; ++code) {
    std::vector<DomainPair> batch = {all[static_cast<std::size_t>(code % 4)],
                                     all[static_cast<std::size_t>((code / 4) % 4)],
                                     all[static_cast<std::size_t>(code / 16)]};
    const auto mask = fpm_mask(c, batch);
    REQUIRE(mask.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(mask.kept[i] == c.is_seen(batch[i]));
  }
}

TEST_CASE("FPM mask examples") {
  const auto c = nine_by_six();
  const int sad = c.emotion_index("sad"), happy = c.emotion_index("happy");
  const std::vector<DomainPair> seen = {{0, 0}, {1, sad}};
  const std::vector<DomainPair> unseen = {{7, happy}, {8, sad}};
  const std::vector<DomainPair> mixed = {{0, sad}, {7, happy}};
  CHECK(fpm_mask(c, seen).kept == std::vector<bool>{true, true});
  CHECK(fpm_mask(c, unseen).kept == std::vector<bool>{false, false});
  CHECK(fpm_mask(c, mixed).kept == std::vector<bool>{true, false});
  CHECK(fpm_mask(c, mixed).kept_indices() == std::vector<std::int64_t>{0});
}

TEST_CASE("catalog file round trip") {
  const auto c = nine_by_six();
  const auto path = std::filesystem::temp_directory_path() / "evc_catalog_test.json";
  save_catalog(c, path);
  const auto back = load_catalog(path);
  CHECK(back.speakers() == c.speakers());
  CHECK(back.emotions() == c.emotions());
  CHECK(back.seen_pairs() == c.seen_pairs());
  CHECK(back.hash() == c.hash());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(catalog_from_json("{\"speakers\": [\"a\"]}"), Error);
}
