#include "evc/config.hpp"

#include <functional>

#include "evc/util.hpp"

namespace evc {

using nlohmann::json;

namespace {

struct Field {
  const char* key;
  std::function<json(const TrainingConfig&)> get;
  std::function<void(TrainingConfig&, const json&)> set;
};

template <typename T, typename Ptr>
Field field(const char* key, Ptr ptr) {
  return {key, [ptr](const TrainingConfig& c) { return json(ptr(const_cast<TrainingConfig&>(c))); },
          [ptr](TrainingConfig& c, const json& v) { ptr(c) = v.get<T>(); }};
}

#define EVC_FIELD(type, key, expr) field<type>(key, [](TrainingConfig& c) -> type& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      EVC_FIELD(int, "train.total_epochs", c.total_epochs),
      EVC_FIELD(int, "train.classifier_start_epoch", c.classifier_start_epoch),
      EVC_FIELD(int, "train.steps_per_epoch", c.steps_per_epoch),
      EVC_FIELD(int, "train.batch_size", c.batch_size),
      EVC_FIELD(int, "train.crop_frames", c.crop_frames),
      EVC_FIELD(std::uint64_t, "train.seed", c.seed),
      EVC_FIELD(int, "train.checkpoint_interval", c.checkpoint_interval),
      EVC_FIELD(bool, "train.vdp", c.vdp),
      EVC_FIELD(bool, "train.fpm", c.fpm),
      EVC_FIELD(bool, "train.generator_fpm", c.generator_fpm),
      EVC_FIELD(bool, "train.anneal", c.anneal),
      EVC_FIELD(int, "train.anneal_start_epoch", c.anneal_start_epoch),
      EVC_FIELD(int, "train.anneal_end_epoch", c.anneal_end_epoch),
      EVC_FIELD(double, "train.lr.generator", c.lr_generator),
      EVC_FIELD(double, "train.lr.style", c.lr_style),
      EVC_FIELD(double, "train.lr.mapping", c.lr_mapping),
      EVC_FIELD(double, "train.lr.discriminator", c.lr_discriminator),
      EVC_FIELD(double, "train.lr.classifier", c.lr_classifier),
      EVC_FIELD(double, "loss.lambda_adv", c.weights.lambda_adv),
      EVC_FIELD(double, "loss.lambda_advcls", c.weights.lambda_advcls),
      EVC_FIELD(double, "loss.lambda_sty", c.weights.lambda_sty),
      EVC_FIELD(double, "loss.lambda_ds", c.weights.lambda_ds),
      EVC_FIELD(double, "loss.lambda_f0", c.weights.lambda_f0),
      EVC_FIELD(double, "loss.lambda_norm", c.weights.lambda_norm),
      EVC_FIELD(double, "loss.lambda_asr", c.weights.lambda_asr),
      EVC_FIELD(double, "loss.lambda_cyc", c.weights.lambda_cyc),
      EVC_FIELD(int, "arch.style_dim", c.arch.style_dim),
      EVC_FIELD(int, "arch.latent_dim", c.arch.latent_dim),
      EVC_FIELD(int, "arch.pitch_dim", c.arch.pitch_dim),
      EVC_FIELD(int, "arch.hidden", c.arch.hidden),
      EVC_FIELD(int, "arch.generator_blocks", c.arch.generator_blocks),
      EVC_FIELD(int, "arch.mapping_hidden", c.arch.mapping_hidden),
      EVC_FIELD(int, "pretrain.pitch.steps", c.pitch_pretrain.steps),
      EVC_FIELD(double, "pretrain.pitch.learning_rate", c.pitch_pretrain.learning_rate),
      EVC_FIELD(int, "pretrain.content.steps", c.content_pretrain.steps),
      EVC_FIELD(double, "pretrain.content.learning_rate", c.content_pretrain.learning_rate),
  };
  return table;
}

#undef EVC_FIELD

}  // namespace

json config_to_flat(const TrainingConfig& config) {
  json out = json::object();
  for (const auto& f : fields()) out[f.key] = f.get(config);
  return out;
}

TrainingConfig config_from_flat(const json& flat, TrainingConfig base) {
  if (!flat.is_object()) throw Error("config must be a JSON object with flat dotted keys");
  std::vector<std::string> problems;
  for (const auto& [key, value] : flat.items()) {
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (key == f.key) match = &f;
    if (!match) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    try {
      match->set(base, value);
    } catch (const json::exception&) {
      problems.push_back("key '" + key + "' has the wrong type (" + value.dump() + ")");
    }
  }
  try {
    base.validate();
  } catch (const Error& e) {
    std::string msg = e.what();
    for (std::size_t pos = msg.find("\n  - "); pos != std::string::npos; pos = msg.find("\n  - ", pos + 1)) {
      const auto end = msg.find('\n', pos + 1);
      problems.push_back(msg.substr(pos + 5, end == std::string::npos ? std::string::npos : end - pos - 5));
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw Error(msg);
  }
  return base;
}

void apply_overrides(json& flat, const std::vector<std::string>& overrides) {
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("override '" + item + "' is not key=value");
    const auto key = item.substr(0, eq);
    const auto raw = item.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    flat[key] = value;
  }
}

TrainingConfig load_config_file(const std::filesystem::path& path, TrainingConfig base) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
  return config_from_flat(j, std::move(base));
}

}  // namespace evc
