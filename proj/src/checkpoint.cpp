// Checkpoint container:
//   "EVCK" | u32 version | u64 header length | header JSON |
//   u32 tensor count | per tensor: u32 name length, name, u8 dtype,
//   u32 ndim, i64 dims[ndim], raw little-endian data.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evc/config.hpp"
#include "evc/trainer.hpp"
#include "evc/util.hpp"

namespace evc {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw Error("truncated checkpoint");
  return v;
}

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    default: throw Error("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from(std::uint8_t code) {
  switch (code) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    default: throw Error("checkpoint: unknown dtype code");
  }
}

json arch_to_json(const ArchConfig& a) {
  return {{"n_bins", a.n_bins},         {"n_speakers", a.n_speakers},
          {"n_emotions", a.n_emotions}, {"style_dim", a.style_dim},
          {"latent_dim", a.latent_dim}, {"pitch_dim", a.pitch_dim},
          {"hidden", a.hidden},         {"generator_blocks", a.generator_blocks},
          {"mapping_hidden", a.mapping_hidden}, {"content_classes", a.content_classes}};
}

ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.n_bins = j.at("n_bins");
  a.n_speakers = j.at("n_speakers");
  a.n_emotions = j.at("n_emotions");
  a.style_dim = j.at("style_dim");
  a.latent_dim = j.at("latent_dim");
  a.pitch_dim = j.at("pitch_dim");
  a.hidden = j.at("hidden");
  a.generator_blocks = j.at("generator_blocks");
  a.mapping_hidden = j.at("mapping_hidden");
  a.content_classes = j.at("content_classes");
  return a;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state_in,
                     const TrainingConfig& config, const DomainCatalog& catalog) {
  auto& state = const_cast<TrainState&>(state_in);
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (const auto& [prefix, module] : state.models.named_modules())
    for (const auto& item : module->named_parameters()) tensors.emplace_back(prefix + "." + item.key(), item.value());
  json steps = json::object();
  for (auto& [name, opt] : state.optimizers()) {
    steps[name] = opt->steps();
    for (auto& [k, t] : opt->state()) tensors.emplace_back("opt." + name + "." + k, t);
  }
  std::ostringstream rng;
  rng << state.rng;

  json header{{"format", "evc-checkpoint"},
              {"arch", arch_to_json(state.models.arch)},
              {"config", config_to_flat(config)},
              {"catalog", json::parse(catalog_to_json(catalog))},
              {"catalog_hash", hex64(catalog.hash())},
              {"step", state.step},
              {"epoch", state.epoch()},
              {"steps_per_epoch", state.steps_per_epoch},
              {"optimizer_steps", steps},
              {"rng", rng.str()}};
  const std::string head = header.dump();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, head.size());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      auto c = t.detach().contiguous();
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(out, dtype_code(c.scalar_type()));
      put<std::uint32_t>(out, static_cast<std::uint32_t>(c.dim()));
      for (auto d : c.sizes()) put<std::int64_t>(out, d);
      out.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.nbytes()));
    }
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw Error(path.string() + ": not a checkpoint");
  if (get<std::uint32_t>(in) != kVersion) throw Error(path.string() + ": unsupported checkpoint version");
  std::string head(get<std::uint64_t>(in), '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  if (!in) throw Error("truncated checkpoint");

  std::map<std::string, torch::Tensor> tensors;
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto dtype = dtype_from(get<std::uint8_t>(in));
    std::vector<std::int64_t> dims(get<std::uint32_t>(in));
    for (auto& d : dims) d = get<std::int64_t>(in);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in) throw Error("truncated checkpoint tensor " + name);
    tensors.emplace(std::move(name), std::move(t));
  }

  try {
    const json header = json::parse(head);
    if (header.at("format") != "evc-checkpoint") throw Error(path.string() + ": not a checkpoint");
    TrainingConfig config = config_from_flat(header.at("config"));
    config.arch = arch_from_json(header.at("arch"));
    DomainCatalog catalog = catalog_from_json(header.at("catalog").dump());
    if (hex64(catalog.hash()) != header.at("catalog_hash").get<std::string>())
      throw Error(path.string() + ": catalog hash mismatch");

    TrainState state(config.arch);
    state.models.freeze_helpers();
    {
      torch::NoGradGuard ng;
      for (const auto& [prefix, module] : state.models.named_modules())
        for (auto& item : module->named_parameters()) {
          auto it = tensors.find(prefix + "." + item.key());
          if (it == tensors.end()) throw Error("checkpoint lacks parameter " + prefix + "." + item.key());
          if (it->second.sizes() != item.value().sizes())
            throw Error("checkpoint parameter " + it->first + " has the wrong shape");
          item.value().copy_(it->second);
        }
    }
    reset_optimizers(state, config);
    const auto& steps = header.at("optimizer_steps");
    for (auto& [name, opt] : state.optimizers())
      opt->load_state(tensors, steps.at(name).get<std::int64_t>(), "opt." + name + ".");
    state.step = header.at("step");
    state.steps_per_epoch = header.at("steps_per_epoch");
    std::istringstream rng(header.at("rng").get<std::string>());
    rng >> state.rng;
    if (!rng) throw Error(path.string() + ": corrupt random state");
    return {std::move(config), std::move(catalog), std::move(state)};
  } catch (const json::exception& e) {
    throw Error(path.string() + ": malformed checkpoint header: " + e.what());
  }
}

}  // namespace evc
