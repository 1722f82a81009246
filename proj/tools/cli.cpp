#include "cli.hpp"

#include "jam/checkpoint.hpp"
#include "jam/embed_io.hpp"
#include "jam/error.hpp"
#include "jam/evalkit.hpp"
#include "jam/metrics.hpp"
#include "jam/serialize.hpp"
#include "jam/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace jam::cli {

namespace fs = std::filesystem;
using serialize::Json;

namespace {

std::string kebab(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::UsageError: return kExitConfig;
    case ErrorKind::NonFiniteGradient:
    case ErrorKind::NonFiniteLoss: return kExitNumerical;
    default: return kExitData;
  }
}

/// Flat config keys exposed as --kebab-case flags, kept as raw strings until
/// they are merged over the config file.
class KeyFlags {
 public:
  KeyFlags(CLI::App* app, const std::vector<serialize::KeySpec>& keys) : keys_(keys) {
    for (const auto& k : keys_) options_.push_back(app->add_option("--" + kebab(k.name), values_[k.name]));
  }

  Json resolve(const std::string& config_path) const {
    Json j = Json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) fail(ErrorKind::ConfigError, "cannot open config file " + config_path);
      try {
        j = Json::parse(in);
      } catch (const Json::exception& e) {
        fail(ErrorKind::ConfigError, "config file " + config_path + " is not valid JSON: " + e.what());
      }
      if (!j.is_object()) fail(ErrorKind::ConfigError, "config file must hold a JSON object");
    }
    for (std::size_t i = 0; i < keys_.size(); ++i)
      if (options_[i]->count() > 0) j[keys_[i].name] = serialize::parse_key_value(keys_[i], values_.at(keys_[i].name));
    return j;
  }

 private:
  std::vector<serialize::KeySpec> keys_;
  std::map<std::string, std::string> values_;
  std::vector<CLI::Option*> options_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create directory " + dir.string() + ": " + ec.message());
}

Json header(const std::string& command) { return {{"format_version", serialize::kFormatVersion}, {"command", command}}; }

std::size_t thread_count() {
  const char* env = std::getenv("JAM_THREADS");
  if (!env || !*env) return 0;
  const Json v = serialize::parse_key_value({"JAM_THREADS", serialize::KeyKind::Unsigned}, env);
  return v.get<std::size_t>();
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(17);
  s << x;
  return s.str();
}

// ---- commands --------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string config;
  std::string dtype = "f64";
};

int cmd_synth(const SynthArgs& a, const KeyFlags& flags, std::ostream& out) {
  const Json cfg_json = flags.resolve(a.config);
  const io::SynthConfig cfg = serialize::synth_config_from_json(cfg_json);
  if (a.dtype != "f32" && a.dtype != "f64") fail(ErrorKind::ConfigError, "--dtype must be f32 or f64");
  const io::DType dtype = a.dtype == "f32" ? io::DType::F32 : io::DType::F64;

  const auto data = io::synth_generate(cfg);
  const fs::path dir = a.out;
  ensure_dir(dir);
  io::Manifest m;
  m.images = dir / "images.jemb";
  m.positives = dir / "positives.jemb";
  m.negatives = dir / "negatives.jemb";
  m.easy = dir / "easy.jemb";
  m.latents = dir / "latents.jemb";
  m.n = cfg.n;
  io::write_embeddings(m.images, data.dataset.images, dtype);
  io::write_embeddings(m.positives, data.dataset.positives, dtype);
  io::write_embeddings(m.negatives, data.dataset.negatives, dtype);
  io::write_embeddings(*m.easy, data.easy_negatives, dtype);
  io::write_embeddings(*m.latents, data.latents, dtype);

  Json meta = header("synth");
  meta["seed"] = cfg.seed;
  meta["dtype"] = a.dtype;
  meta["config"] = serialize::to_json(cfg);
  m.meta = meta.dump();
  io::write_manifest(dir / "manifest.json", m);
  out << "wrote " << cfg.n << " synthetic pairs to " << dir.string() << "\n";
  return kExitOk;
}

struct MetricsArgs {
  std::string manifest;
  std::string out;
  std::string config;
};

int cmd_metrics(const MetricsArgs& a, const KeyFlags& flags, std::ostream& out, std::ostream& err) {
  const metrics::ReportConfig cfg = serialize::report_config_from_json(flags.resolve(a.config));
  const io::Manifest m = io::read_manifest(a.manifest);
  const io::PairedDataset ds = io::load_paired_dataset(a.manifest);

  std::optional<Matrix> easy;
  if (!m.easy) {
    err << "warning: manifest lists no easy negatives; easy_nonmatch omitted\n";
  } else if (!fs::exists(*m.easy)) {
    err << "warning: easy negatives file " << m.easy->string() << " not found; easy_nonmatch omitted\n";
  } else {
    easy = io::read_embeddings(*m.easy);
    if (easy->rows() != ds.images.rows() || easy->cols() != ds.positives.cols())
      fail(ErrorKind::ManifestError, "easy negatives shape does not match the dataset");
  }

  const auto report = metrics::alignment_report(ds.images, ds.positives, easy ? &*easy : nullptr, ds.negatives, cfg);
  const fs::path dir = a.out;
  ensure_dir(dir);
  Json j = header("metrics");
  j["seed"] = nullptr;
  j["manifest"] = a.manifest;
  j["n"] = ds.size();
  const Json body = serialize::to_json(report);
  for (const auto& item : body.items()) j[item.key()] = item.value();
  write_json(dir / "report.json", j);
  write_text(dir / "report.csv", serialize::to_csv(report));
  for (const auto& c : report.cells)
    if (!c.value) err << "warning: " << metrics::to_string(c.setting) << "/" << metrics::to_string(c.metric) << ": " << c.error << "\n";
  out << "wrote report for " << ds.size() << " rows to " << dir.string() << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::string config;
};

int cmd_train(const TrainArgs& a, const KeyFlags& flags, std::ostream& out, std::ostream& err) {
  const Json cfg_json = flags.resolve(a.config);
  const train::TrainConfig cfg = serialize::train_config_from_json(cfg_json);
  const Json resolved = serialize::to_json(cfg);
  const io::PairedDataset ds = io::load_paired_dataset(a.manifest);
  const fs::path dir = a.out;
  ensure_dir(dir);

  Json runs = Json::array();
  std::vector<eval::RetrievalResult> results;
  std::string csv = "task,objective,seed,recall_binary,recall_5way,stop_reason\n";
  const std::string task = fs::path(a.manifest).parent_path().filename().string();
  bool aborted = false;
  for (std::uint64_t seed : cfg.seeds) {
    const auto splits = io::split_dataset(ds, {}, seed);
    auto run = train::train(splits.train, splits.val, cfg, seed);
    const auto test = train::validate(run.model, splits.test, seed);
    results.push_back(test);
    aborted = aborted || run.history.reason == train::StopReason::AbortedNonFinite;

    const fs::path run_dir = dir / ("seed_" + std::to_string(seed));
    ensure_dir(run_dir);
    Json meta = header("train");
    meta["seed"] = seed;
    meta["config"] = resolved;
    meta["manifest"] = a.manifest;
    meta["split"] = {{"train", 0.70}, {"val", 0.15}, {"test", 0.15}};
    nn::write_checkpoint(run_dir / "checkpoint.jckp", train::make_checkpoint(run.model, &run.optimizer, meta.dump()));

    Json hist = header("train");
    hist["seed"] = seed;
    hist["config"] = resolved;
    hist["history"] = serialize::to_json(run.history);
    write_json(run_dir / "history.json", hist);

    runs.push_back({{"seed", seed},
                    {"stop_reason", train::to_string(run.history.reason)},
                    {"stop_epoch", run.history.stop_epoch},
                    {"best_val_recall", run.history.best_score},
                    {"test", serialize::to_json(test)}});
    csv += task + "," + loss::to_string(cfg.loss.objective) + "," + std::to_string(seed) + "," +
           fmt(test.recall_binary) + "," + fmt(test.recall_5way) + "," + train::to_string(run.history.reason) + "\n";
    out << "seed " << seed << ": " << train::to_string(run.history.reason) << " after " << run.history.stop_epoch
        << " epochs, test binary R@1 " << fmt(test.recall_binary) << ", 5-way R@1 " << fmt(test.recall_5way) << "\n";
    if (run.history.reason == train::StopReason::AbortedNonFinite) err << "seed " << seed << ": " << run.history.message << "\n";
  }
  const auto agg = eval::aggregate_seeds(results);
  csv += task + "," + loss::to_string(cfg.loss.objective) + ",mean," + fmt(agg.recall_binary.mean) + "," +
         fmt(agg.recall_5way.mean) + ",\n";
  csv += task + "," + loss::to_string(cfg.loss.objective) + ",std," + fmt(agg.recall_binary.std) + "," +
         fmt(agg.recall_5way.std) + ",\n";

  Json summary = header("train");
  summary["seeds"] = cfg.seeds;
  summary["config"] = resolved;
  summary["manifest"] = a.manifest;
  summary["partial"] = aborted;
  summary["runs"] = std::move(runs);
  summary["aggregate"] = serialize::to_json(agg);
  write_json(dir / "train.json", summary);
  write_text(dir / "results.csv", csv);
  return aborted ? kExitNumerical : kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = nn::read_checkpoint(a.checkpoint);
  const Json meta = Json::parse(ckpt.meta);
  if (!meta.contains("seed") || !meta["seed"].is_number_unsigned())
    fail(ErrorKind::FormatError, "checkpoint metadata has no seed");
  const std::uint64_t seed = meta["seed"].get<std::uint64_t>();
  const auto model = train::load_model(ckpt);
  const io::PairedDataset ds = io::load_paired_dataset(a.manifest);

  io::PairedDataset part;
  if (a.split == "all") {
    part = ds;
  } else {
    const auto splits = io::split_dataset(ds, {}, seed);
    if (a.split == "test") part = splits.test;
    else if (a.split == "val") part = splits.val;
    else if (a.split == "train") part = splits.train;
    else fail(ErrorKind::ConfigError, "--split must be train, val, test or all");
  }
  const auto result = train::validate(model, part, seed);

  Json j = header("eval");
  j["seed"] = seed;
  j["config"] = meta.contains("config") ? meta["config"] : Json(nullptr);
  j["checkpoint"] = a.checkpoint;
  j["manifest"] = a.manifest;
  j["split"] = a.split;
  j["result"] = serialize::to_json(result);
  if (a.out.empty()) out << j.dump(2) << "\n";
  else write_json(a.out, j);
  return kExitOk;
}

struct SweepArgs {
  std::string manifest;
  std::string out;
  std::string config;
  std::string alphas;
  std::string seed;
};

int cmd_sweep(const SweepArgs& a, const KeyFlags& flags, std::ostream& out) {
  const train::TrainConfig cfg = serialize::train_config_from_json(flags.resolve(a.config));
  const Json alphas_json = serialize::parse_key_value({"alphas", serialize::KeyKind::RealList}, a.alphas);
  const auto alphas = alphas_json.get<std::vector<double>>();
  if (alphas.empty()) fail(ErrorKind::ConfigError, "--alphas must list at least one value");
  std::uint64_t seed = cfg.seeds.front();
  if (!a.seed.empty()) seed = serialize::parse_key_value({"seed", serialize::KeyKind::Unsigned}, a.seed).get<std::uint64_t>();
  const std::size_t threads = thread_count();

  const io::PairedDataset ds = io::load_paired_dataset(a.manifest);
  const auto splits = io::split_dataset(ds, {}, seed);
  const auto report = train::sweep_alpha(splits.train, splits.val, cfg, alphas, seed, threads);

  const fs::path dir = a.out;
  ensure_dir(dir);
  Json j = header("sweep-alpha");
  j["seed"] = seed;
  j["config"] = serialize::to_json(cfg);
  j["alphas"] = alphas;
  j["manifest"] = a.manifest;
  const Json body = serialize::to_json(report);
  for (const auto& item : body.items()) j[item.key()] = item.value();
  write_json(dir / "sweep.json", j);

  std::string csv = "alpha,best_val_recall,stop_reason\n";
  bool aborted = false;
  for (const auto& e : report.entries) {
    csv += fmt(e.alpha) + "," + fmt(e.best_val_recall) + "," + train::to_string(e.history.reason) + "\n";
    aborted = aborted || e.history.reason == train::StopReason::AbortedNonFinite;
  }
  write_text(dir / "sweep.csv", csv);
  out << "best alpha " << fmt(report.best_alpha) << " (val binary R@1 " << fmt(report.best_val_recall) << ")\n";
  return aborted ? kExitNumerical : kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Representation alignment metrics and joint autoencoder training"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted synthetic paired dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--config", synth.config, "JSON config file");
  s->add_option("--dtype", synth.dtype, "Stored dtype: f32 or f64");
  KeyFlags synth_flags(s, serialize::synth_config_keys());

  MetricsArgs met;
  auto* m = app.add_subcommand("metrics", "Alignment report over match / easy / hard settings");
  m->add_option("--manifest", met.manifest, "Dataset manifest")->required();
  m->add_option("--out", met.out, "Output directory")->required();
  m->add_option("--config", met.config, "JSON config file");
  KeyFlags metric_flags(m, serialize::report_config_keys());

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the joint autoencoders for each seed");
  t->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--config", tr.config, "JSON config file");
  KeyFlags train_flags(t, serialize::train_config_keys());

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Retrieval Recall@1 of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  e->add_option("--manifest", ev.manifest, "Dataset manifest")->required();
  e->add_option("--split", ev.split, "train, val, test or all");
  e->add_option("--out", ev.out, "Output JSON file (stdout when omitted)");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep-alpha", "One spread-objective run per alpha");
  w->add_option("--manifest", sw.manifest, "Dataset manifest")->required();
  w->add_option("--out", sw.out, "Output directory")->required();
  w->add_option("--config", sw.config, "JSON config file");
  w->add_option("--alphas", sw.alphas, "Comma-separated alpha values")->required();
  w->add_option("--seed", sw.seed, "Seed for split and training (default: first of seeds)");
  KeyFlags sweep_flags(w, serialize::train_config_keys());

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, synth_flags, out);
    if (m->parsed()) return cmd_metrics(met, metric_flags, out, err);
    if (t->parsed()) return cmd_train(tr, train_flags, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
    if (w->parsed()) return cmd_sweep(sw, sweep_flags, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code(ex.kind());
  } catch (const Json::exception& ex) {
    err << "error: FormatError: " << ex.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}

}  // namespace jam::cli
