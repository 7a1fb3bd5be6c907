// evc: corpus generation, training, conversion, evaluation and reporting.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evc/config.hpp"
#include "evc/corpus.hpp"
#include "evc/evaluation.hpp"
#include "evc/metrics.hpp"
#include "evc/trainer.hpp"
#include "evc/util.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitGate = 3;

/// Exclusive advisory lock on <dir>/.lock for the life of the process.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw evc::Error("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw evc::Error("run directory " + dir.string() + " is in use by another process");
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

fs::path default_run_root() {
  const char* env = std::getenv("EVC_RUN_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

int index_of(const std::vector<std::string>& ids, const std::string& id, const char* what) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<int>(i);
  std::string valid;
  for (const auto& s : ids) valid += (valid.empty() ? "" : ", ") + s;
  throw evc::Error(std::string("unknown ") + what + " '" + id + "' (valid: " + valid + ")");
}

// --- gen-corpus ---------------------------------------------------------------

struct GenArgs {
  std::vector<std::string> speakers, emotions, neutral_only;
  std::string neutral = "neutral";
  int per_cell = 20;
  std::uint64_t seed = 1;
  double train_ratio = 0.9;
  fs::path out_dir;
  bool force = false;
};

int cmd_gen_corpus(const GenArgs& a) {
  if (fs::exists(a.out_dir) && !fs::is_empty(a.out_dir) && !a.force)
    throw evc::Error(a.out_dir.string() + " exists and is not empty (use --force to overwrite)");
  const auto catalog = evc::build_catalog_with_neutral_only(a.speakers, a.emotions, a.neutral_only, a.neutral);
  const auto corpus = evc::generate_corpus(catalog, a.per_cell, evc::GeneratorParams{}, a.seed, a.train_ratio);
  if (a.force && fs::exists(a.out_dir / "feats")) fs::remove_all(a.out_dir / "feats");
  evc::save_corpus(corpus, a.out_dir);
  std::cout << "wrote " << corpus.utterances.size() << " utterances (" << catalog.seen_pairs().size()
            << " seen pairs, " << corpus.indices(evc::Split::train).size() << " train / "
            << corpus.indices(evc::Split::test).size() << " test) to " << a.out_dir.string() << "\n"
            << "manifest hash " << evc::hex64(evc::corpus_hash(corpus)) << "\n";
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  fs::path corpus, config, run_dir;
  std::vector<std::string> overrides;
  std::string ablation = "full";
  bool resume = false;
  std::int64_t stop_after = -1;
  int log_every = 100;
};

int cmd_train(const TrainArgs& a) {
  json flat = evc::config_to_flat({});
  if (!a.config.empty()) {
    const json file = json::parse(evc::read_text_file(a.config));
    if (!file.is_object()) throw evc::Error(a.config.string() + ": config must be a JSON object");
    for (const auto& [k, v] : file.items()) flat[k] = v;
  }
  evc::apply_overrides(flat, a.overrides);
  auto config = evc::config_from_flat(flat).with_ablation(evc::parse_ablation(a.ablation));

  const auto corpus = evc::load_corpus(a.corpus);
  const fs::path run_dir =
      a.run_dir.empty() ? default_run_root() / (a.ablation + "-seed" + std::to_string(config.seed)) : a.run_dir;
  RunLock lock(run_dir);
  const auto resolved = run_dir / "resolved_config.json";
  const std::string text = evc::config_to_flat(config).dump(2) + "\n";
  if (a.resume && fs::exists(resolved) && evc::read_text_file(resolved) != text)
    throw evc::Error("resolved configuration differs from the one recorded in " + resolved.string());
  evc::write_text_file(resolved, text);

  evc::RunOptions ro;
  ro.run_dir = run_dir;
  ro.resume = a.resume;
  ro.stop_after = a.stop_after;
  ro.on_step = [&](const evc::StepMetrics& m) {
    if (a.log_every > 0 && m.step % a.log_every == 0)
      std::cerr << "step " << m.step << " epoch " << m.epoch << " d/total " << m.get("d/total") << " g/total "
                << m.get("g/total") << "\n";
  };
  const auto result = evc::run_training(config, corpus, ro);
  std::cout << "trained to step " << result.state.step << "; checkpoint " << result.final_checkpoint.string()
            << "\n";
  return 0;
}

// --- convert ------------------------------------------------------------------

struct ConvertArgs {
  fs::path checkpoint, input, output, ref_speaker, ref_emotion;
  std::string speaker, emotion, mode = "mapped";
  std::uint64_t seed = 0;
};

int cmd_convert(const ConvertArgs& a) {
  auto ck = evc::load_checkpoint(a.checkpoint);
  const auto& cat = ck.catalog;
  const evc::DomainPair target{index_of(cat.speakers(), a.speaker, "speaker"),
                               index_of(cat.emotions(), a.emotion, "emotion")};
  if (a.mode != "mapped" && a.mode != "referenced")
    throw evc::Error("unknown mode '" + a.mode + "' (valid: mapped, referenced)");
  const auto mode = a.mode == "mapped" ? evc::ConvertMode::mapped : evc::ConvertMode::referenced;
  evc::ConvertInputs in;
  if (mode == evc::ConvertMode::referenced) {
    if (a.ref_speaker.empty() || a.ref_emotion.empty())
      throw evc::Error("--mode referenced needs --ref-speaker and --ref-emotion feature files");
    in.ref_sp = evc::read_feature_file(a.ref_speaker);
    in.ref_em = evc::read_feature_file(a.ref_emotion);
  }

  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(a.input)) {
    fs::create_directories(a.output);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.input))
      if (e.path().extension() == ".evcf") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      jobs.emplace_back(f, a.output / (f.stem().string() + "__" + a.speaker + "_" + a.emotion + ".evcf"));
  } else {
    jobs.emplace_back(a.input, a.output);
  }
  if (jobs.empty()) throw evc::Error("no .evcf feature files in " + a.input.string());

  std::string index;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    in.seed = evc::derive_seed(a.seed, i);
    const auto out = evc::convert(ck.state.models, cat, evc::read_feature_file(jobs[i].first), target, mode, in);
    evc::write_feature_file(jobs[i].second, out);
    index += jobs[i].second.filename().string() + "\t" + a.speaker + "\t" + a.emotion + "\n";
  }
  if (fs::is_directory(a.input)) {
    // Appending lets several targets share one converted directory.
    std::ofstream idx(a.output / "index.tsv", std::ios::app);
    idx << index;
  }
  std::cout << "converted " << jobs.size() << " file(s) to (" << a.speaker << ", " << a.emotion << ")\n";
  return 0;
}

// --- evaluate -----------------------------------------------------------------

struct EvalArgs {
  fs::path corpus, converted_dir, out;
  std::vector<fs::path> checkpoints;
  std::uint64_t seed = 31;
  int sources_per_cell = 12;
  std::string mode = "mapped";
};

std::string run_label(const fs::path& checkpoint) {
  const auto parent = checkpoint.parent_path();
  if (parent.filename() == "checkpoints" && !parent.parent_path().filename().empty())
    return parent.parent_path().filename().string();
  return checkpoint.stem().string();
}

std::vector<evc::ConvertedSample> read_converted_dir(const fs::path& dir, const evc::DomainCatalog& cat) {
  std::istringstream in(evc::read_text_file(dir / "index.tsv"));
  std::vector<evc::ConvertedSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream f(line);
    std::string file, spk, emo;
    if (!(f >> file >> spk >> emo)) throw evc::Error(dir.string() + "/index.tsv: malformed line '" + line + "'");
    const evc::DomainPair target{index_of(cat.speakers(), spk, "speaker"), index_of(cat.emotions(), emo, "emotion")};
    out.push_back({file, evc::read_feature_file(dir / file), target, target});
  }
  return out;
}

int cmd_evaluate(const EvalArgs& a) {
  if (a.checkpoints.empty() == a.converted_dir.empty())
    throw evc::Error("give either --checkpoint (one or more) or --converted-dir");
  const auto corpus = evc::load_corpus(a.corpus);
  const auto& cat = corpus.manifest.catalog;
  const auto emotion_probe = evc::train_emotion_probe(corpus);
  const auto speaker_embedder = evc::train_speaker_embedder(corpus);
  std::cerr << "probe held-out accuracy: emotion " << emotion_probe.heldout_accuracy() << ", speaker "
            << speaker_embedder.heldout_accuracy() << "\n";

  evc::EvalOptions eo;
  eo.seed = a.seed;
  eo.sources_per_cell = a.sources_per_cell;
  if (a.mode != "mapped" && a.mode != "referenced")
    throw evc::Error("unknown mode '" + a.mode + "' (valid: mapped, referenced)");
  eo.mode = a.mode == "mapped" ? evc::ConvertMode::mapped : evc::ConvertMode::referenced;

  std::vector<evc::AblationRow> rows;
  if (!a.converted_dir.empty()) {
    const auto samples = read_converted_dir(a.converted_dir, cat);
    const auto refs = evc::reference_utterances(corpus, eo.references_per_speaker, eo.seed);
    const auto label = a.converted_dir.filename().string();
    rows.push_back({label, evc::evaluate_samples(label, corpus, emotion_probe, speaker_embedder, samples, refs)});
  }
  for (const auto& path : a.checkpoints) {
    auto ck = evc::load_checkpoint(path);
    if (ck.catalog.hash() != cat.hash())
      throw evc::Error(path.string() + " was trained on a different catalog than " + a.corpus.string());
    const auto label = run_label(path);
    rows.push_back({label, evc::evaluate_model(label, ck.state.models, corpus, emotion_probe, speaker_embedder, eo)});
  }

  std::string text;
  for (const auto& r : rows) text += evc::format_report(r.report, cat) + "\n";
  if (rows.size() > 1) text += evc::format_ablation_table(rows);
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    evc::write_text_file(a.out / "report.txt", text);
    evc::write_report_tsv(a.out / "report.tsv", rows, cat);
  }
  return 0;
}

// --- report -------------------------------------------------------------------

int cmd_report(const fs::path& run_dir, fs::path out) {
  if (out.empty()) out = run_dir / "plots";
  const auto series = evc::metric_series(evc::read_metrics(run_dir / "metrics.tsv"));
  if (series.empty()) throw evc::Error(run_dir.string() + "/metrics.tsv has no records");
  fs::create_directories(out);
  for (const auto& [name, points] : series) {
    std::string file = name;
    std::replace(file.begin(), file.end(), '/', '_');
    evc::write_text_file(out / (file + ".svg"), evc::render_svg_plot(name, points));
  }
  std::cout << "wrote " << series.size() << " plots to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  CLI::App app{"Emotional voice conversion with unseen speaker-emotion pairs"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Synthesize a labelled corpus");
  g->add_option("--speakers", gen.speakers, "Speaker ids")->required()->delimiter(',');
  g->add_option("--emotions", gen.emotions, "Emotion ids")->required()->delimiter(',');
  g->add_option("--neutral-only", gen.neutral_only, "Speakers that only have neutral data")->delimiter(',');
  g->add_option("--neutral-emotion", gen.neutral, "Emotion id treated as neutral")->capture_default_str();
  g->add_option("--per-cell", gen.per_cell, "Utterances per seen pair")->capture_default_str();
  g->add_option("--seed", gen.seed)->capture_default_str();
  g->add_option("--train-ratio", gen.train_ratio)->capture_default_str();
  g->add_option("--out-dir", gen.out_dir)->required();
  g->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a corpus");
  t->add_option("--corpus", tr.corpus)->required()->check(CLI::ExistingDirectory);
  t->add_option("--config", tr.config, "JSON file with flat dotted keys")->check(CLI::ExistingFile);
  t->add_option("--set", tr.overrides, "key=value override (repeatable)");
  t->add_option("--ablation", tr.ablation, "full, no-vdp, no-fpm, no-anneal or no-f0norm")->capture_default_str();
  t->add_option("--run-dir", tr.run_dir, "Default: $EVC_RUN_ROOT/<ablation>-seed<seed>");
  t->add_flag("--resume", tr.resume, "Continue from the run directory's latest checkpoint");
  t->add_option("--stop-after", tr.stop_after, "Stop after this many total steps");
  t->add_option("--log-every", tr.log_every)->capture_default_str();

  ConvertArgs cv;
  auto* c = app.add_subcommand("convert", "Convert feature files to a target (speaker, emotion)");
  c->add_option("--checkpoint", cv.checkpoint)->required()->check(CLI::ExistingFile);
  c->add_option("--input", cv.input, "Feature file or directory of .evcf files")->required()->check(CLI::ExistingPath);
  c->add_option("--output", cv.output, "Output file, or directory when --input is one")->required();
  c->add_option("--speaker", cv.speaker)->required();
  c->add_option("--emotion", cv.emotion)->required();
  c->add_option("--mode", cv.mode, "mapped or referenced")->capture_default_str();
  c->add_option("--seed", cv.seed)->capture_default_str();
  c->add_option("--ref-speaker", cv.ref_speaker)->check(CLI::ExistingFile);
  c->add_option("--ref-emotion", cv.ref_emotion)->check(CLI::ExistingFile);

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score checkpoints or converted features");
  e->add_option("--corpus", ev.corpus)->required()->check(CLI::ExistingDirectory);
  e->add_option("--checkpoint", ev.checkpoints, "Checkpoint (repeatable; several give a comparison table)");
  e->add_option("--converted-dir", ev.converted_dir, "Directory written by convert")->check(CLI::ExistingDirectory);
  e->add_option("--out", ev.out, "Directory for report.txt and report.tsv");
  e->add_option("--seed", ev.seed)->capture_default_str();
  e->add_option("--sources-per-cell", ev.sources_per_cell)->capture_default_str();
  e->add_option("--mode", ev.mode, "mapped or referenced")->capture_default_str();

  fs::path report_run, report_out;
  auto* r = app.add_subcommand("report", "Plot every logged metric against step");
  r->add_option("--run-dir", report_run)->required()->check(CLI::ExistingDirectory);
  r->add_option("--out", report_out, "Default: <run-dir>/plots");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return cmd_gen_corpus(gen);
    if (*t) return cmd_train(tr);
    if (*c) return cmd_convert(cv);
    if (*e) return cmd_evaluate(ev);
    if (*r) return cmd_report(report_run, report_out);
  } catch (const evc::GateError& err) {
    std::cerr << "gate failed: " << err.what() << "\n";
    return kExitGate;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
