#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>

#include "evc/config.hpp"

using namespace evc;
using nlohmann::json;

TEST_CASE("flat config round trip") {
  TrainingConfig c;
  c.total_epochs = 30;
  c.classifier_start_epoch = 10;
  c.seed = 123456789012345ULL;
  c.vdp = false;
  c.weights.lambda_cyc = 2.5;
  c.arch.hidden = 12;
  const auto flat = config_to_flat(c);
  CHECK(flat.at("train.total_epochs") == 30);
  CHECK(flat.at("loss.lambda_f0") == 5.0);
  const auto back = config_from_flat(flat);
  CHECK(config_to_flat(back) == flat);
  CHECK(back.seed == c.seed);
  CHECK_FALSE(back.vdp);
}

TEST_CASE("unknown keys, type errors and validation failures are reported together") {
  json flat = {{"train.total_epochs", 10},
               {"train.classifier_start_epoch", 10},
               {"train.batch_size", "ten"},
               {"train.warp_drive", true}};
  try {
    config_from_flat(flat);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train.warp_drive") != std::string::npos);
    CHECK(msg.find("train.batch_size") != std::string::npos);
    CHECK(msg.find("classifier_start_epoch") != std::string::npos);
  }
}

TEST_CASE("key=value overrides parse JSON values") {
  json flat = config_to_flat(TrainingConfig{});
  apply_overrides(flat, {"train.lr.generator=0.001", "train.vdp=false", "train.total_epochs=9",
                         "train.classifier_start_epoch=3"});
  const auto c = config_from_flat(flat);
  CHECK(c.lr_generator == 0.001);
  CHECK_FALSE(c.vdp);
  CHECK(c.total_epochs == 9);
  CHECK_THROWS_AS(apply_overrides(flat, {"novalue"}), Error);
  CHECK_THROWS_AS(apply_overrides(flat, {"=3"}), Error);
}

TEST_CASE("config files") {
  const auto path = std::filesystem::temp_directory_path() / "evc_config_test.json";
  std::ofstream(path) << R"({"train.total_epochs": 12, "train.classifier_start_epoch": 4})";
  const auto c = load_config_file(path);
  CHECK(c.total_epochs == 12);
  CHECK(c.classifier_start_epoch == 4);
  std::ofstream(path) << "{not json";
  CHECK_THROWS_AS(load_config_file(path), Error);
  std::filesystem::remove(path);
}
