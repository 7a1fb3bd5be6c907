#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "evc/config.hpp"
#include "evc/evaluation.hpp"
#include "evc/trainer.hpp"

namespace py = pybind11;
using namespace evc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IndexArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

FloatArray to_numpy(const MelSpectrogram& m) {
  FloatArray out({m.n_bins, m.n_frames});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

MelSpectrogram from_numpy(const FloatArray& a) {
  if (a.ndim() != 2) throw Error("features must be a 2-d array [bins, frames]");
  MelSpectrogram m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

std::vector<DomainPair> pairs_from_numpy(const IndexArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 2) throw Error("pairs must be an [n, 2] integer array");
  std::vector<DomainPair> out;
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < r.shape(0); ++i)
    out.push_back({static_cast<int>(r(i, 0)), static_cast<int>(r(i, 1))});
  return out;
}

py::list pair_list(const std::vector<DomainPair>& pairs) {
  py::list out;
  for (const auto& p : pairs) out.append(py::make_tuple(p.speaker, p.emotion));
  return out;
}

py::dict metrics_dict(const StepMetrics& m) {
  py::dict d;
  d["step"] = m.step;
  d["epoch"] = m.epoch;
  for (const auto& [k, v] : m.values) d[py::str(k)] = v;
  return d;
}

py::dict report_dict(const EvalReport& r, const DomainCatalog& cat) {
  py::dict d;
  d["label"] = r.label;
  d["count"] = r.count;
  d["emotion_accuracy"] = r.emotion_accuracy;
  d["unseen_count"] = r.unseen_count;
  d["unseen_emotion_accuracy"] = r.unseen_emotion_accuracy;
  d["speaker_similarity"] = r.speaker_similarity;
  py::list cells;
  for (const auto& c : r.cells) {
    py::dict cell;
    cell["speaker"] = cat.speakers()[static_cast<std::size_t>(c.target.speaker)];
    cell["emotion"] = cat.emotions()[static_cast<std::size_t>(c.target.emotion)];
    cell["unseen"] = c.unseen;
    cell["count"] = c.count;
    cell["emotion_accuracy"] = c.emotion_accuracy;
    cell["speaker_similarity"] = c.speaker_similarity;
    cells.append(cell);
  }
  d["cells"] = cells;
  return d;
}

TrainingConfig config_from_json_text(const std::string& text) {
  return config_from_flat(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of evc_unseen";
  torch::set_num_threads(1);
  // Translators are tried newest first, so the derived type goes last.
  auto base = py::register_exception<Error>(m, "EvcError", PyExc_ValueError);
  py::register_exception<GateError>(m, "GateError", base.ptr());

  py::class_<DomainCatalog>(m, "Catalog")
      .def_property_readonly("speakers", &DomainCatalog::speakers)
      .def_property_readonly("emotions", &DomainCatalog::emotions)
      .def_property_readonly("seen_pairs", [](const DomainCatalog& c) { return pair_list(c.seen_pairs()); })
      .def_property_readonly("unseen_pairs", [](const DomainCatalog& c) { return pair_list(c.unseen_pairs()); })
      .def("is_seen", [](const DomainCatalog& c, int s, int e) { return c.is_seen({s, e}); })
      .def("flat_index", [](const DomainCatalog& c, int s, int e) { return c.flat_index({s, e}); })
      .def("speaker_index", &DomainCatalog::speaker_index)
      .def("emotion_index", &DomainCatalog::emotion_index)
      .def_property_readonly("hash", &DomainCatalog::hash)
      .def("to_json", [](const DomainCatalog& c) { return catalog_to_json(c); });

  m.def("build_catalog", &build_catalog_with_neutral_only, py::arg("speakers"), py::arg("emotions"),
        py::arg("neutral_only") = std::vector<std::string>{}, py::arg("neutral_emotion") = "neutral");

  m.def(
      "sample_vdp_targets",
      [](const DomainCatalog& c, int n, std::uint64_t seed) {
        Rng rng(seed);
        IndexArray out({n, 2});
        auto w = out.mutable_unchecked<2>();
        for (int i = 0; i < n; ++i) {
          const auto p = sample_vdp_target(c, rng);
          w(i, 0) = p.speaker;
          w(i, 1) = p.emotion;
        }
        return out;
      },
      py::arg("catalog"), py::arg("n"), py::arg("seed"), "Independent uniform (speaker, emotion) draws, [n, 2].");

  m.def(
      "fpm_mask",
      [](const DomainCatalog& c, const IndexArray& targets) {
        const auto mask = fpm_mask(c, pairs_from_numpy(targets));
        py::array_t<bool> out(static_cast<py::ssize_t>(mask.size()));
        for (std::size_t i = 0; i < mask.size(); ++i) out.mutable_data()[i] = mask.kept[i];
        return out;
      },
      py::arg("catalog"), py::arg("targets"), "True where the target pair is seen.");

  m.def(
      "anneal_weight",
      [](double epoch, int start, int end, double initial, double final_weight, bool enabled) {
        return anneal_weight(AnnealState{start, end, initial, final_weight, enabled}, epoch);
      },
      py::arg("epoch"), py::arg("start_epoch") = 50, py::arg("end_epoch") = 150, py::arg("initial_weight") = 5.0,
      py::arg("final_weight") = 0.0, py::arg("enabled") = true);

  py::class_<Corpus>(m, "Corpus")
      .def("__len__", [](const Corpus& c) { return c.utterances.size(); })
      .def_property_readonly("catalog", [](const Corpus& c) { return c.manifest.catalog; })
      .def_property_readonly("hash", [](const Corpus& c) { return corpus_hash(c); })
      .def("features", [](const Corpus& c, std::size_t i) { return to_numpy(c.utterances.at(i).features); })
      .def("label", [](const Corpus& c, std::size_t i) { return py::make_tuple(c.utterances.at(i).speaker, c.utterances.at(i).emotion); })
      .def("utterance_id", [](const Corpus& c, std::size_t i) { return c.utterances.at(i).id; })
      .def("split_indices", [](const Corpus& c, const std::string& which) {
        if (which != "train" && which != "test") throw Error("split must be 'train' or 'test'");
        return c.indices(which == "train" ? Split::train : Split::test);
      })
      .def("save", [](const Corpus& c, const std::filesystem::path& dir) { save_corpus(c, dir); });

  m.def(
      "generate_corpus",
      [](const DomainCatalog& cat, int per_cell, std::uint64_t seed, double train_ratio) {
        return generate_corpus(cat, per_cell, GeneratorParams{}, seed, train_ratio);
      },
      py::arg("catalog"), py::arg("per_cell"), py::arg("seed"), py::arg("train_ratio") = 0.9);
  m.def("load_corpus", &load_corpus, py::arg("directory"));

  m.def("default_config_json", [] { return config_to_flat(TrainingConfig{}).dump(); });
  m.def("resolve_config_json", [](const std::string& text, const std::string& ablation) {
    return config_to_flat(config_from_json_text(text).with_ablation(parse_ablation(ablation))).dump();
  });

  m.def(
      "train",
      [](const Corpus& corpus, const std::string& config_json, const std::filesystem::path& run_dir,
         std::int64_t stop_after, bool resume) {
        const auto config = config_from_json_text(config_json);
        RunOptions ro;
        ro.run_dir = run_dir;
        ro.stop_after = stop_after;
        ro.resume = resume;
        TrainResult result = [&] {
          py::gil_scoped_release release;
          return run_training(config, corpus, ro);
        }();
        py::list history;
        for (const auto& s : result.state.history) history.append(metrics_dict(s));
        py::dict out;
        out["step"] = result.state.step;
        out["history"] = history;
        out["checkpoint"] = result.final_checkpoint.string();
        out["generator_hash"] = parameter_hash(*result.state.models.generator);
        return out;
      },
      py::arg("corpus"), py::arg("config_json"), py::arg("run_dir") = std::filesystem::path{},
      py::arg("stop_after") = -1, py::arg("resume") = false);

  m.def(
      "convert",
      [](const std::filesystem::path& checkpoint, const FloatArray& features, const std::string& speaker,
         const std::string& emotion, std::uint64_t seed) {
        auto ck = load_checkpoint(checkpoint);
        const DomainPair target{ck.catalog.speaker_index(speaker), ck.catalog.emotion_index(emotion)};
        ConvertInputs in;
        in.seed = seed;
        return to_numpy(convert(ck.state.models, ck.catalog, from_numpy(features), target, ConvertMode::mapped, in));
      },
      py::arg("checkpoint"), py::arg("features"), py::arg("speaker"), py::arg("emotion"), py::arg("seed") = 0);

  m.def(
      "evaluate",
      [](const Corpus& corpus, const std::filesystem::path& checkpoint, int sources_per_cell, std::uint64_t seed) {
        auto ck = load_checkpoint(checkpoint);
        if (ck.catalog.hash() != corpus.manifest.catalog.hash())
          throw Error("checkpoint was trained on a different catalog");
        EvalOptions opt;
        opt.sources_per_cell = sources_per_cell;
        opt.seed = seed;
        EvalReport report = [&] {
          py::gil_scoped_release release;
          const auto emo = train_emotion_probe(corpus);
          const auto spk = train_speaker_embedder(corpus);
          return evaluate_model(checkpoint.stem().string(), ck.state.models, corpus, emo, spk, opt);
        }();
        return report_dict(report, corpus.manifest.catalog);
      },
      py::arg("corpus"), py::arg("checkpoint"), py::arg("sources_per_cell") = 12, py::arg("seed") = 31);
}
