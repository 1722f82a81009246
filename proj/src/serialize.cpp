#include "jam/serialize.hpp"

#include "jam/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace jam::serialize {

namespace {

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorKind::ConfigError, msg); }

const Json& require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) config_error(where + ": expected a JSON object");
  return j;
}

std::size_t get_unsigned(const Json& v, const std::string& key) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::size_t>(v.get<long long>());
  config_error("'" + key + "' must be a non-negative integer");
}

double get_real(const Json& v, const std::string& key) {
  if (!v.is_number()) config_error("'" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) config_error("'" + key + "' must be finite");
  return x;
}

bool get_bool(const Json& v, const std::string& key) {
  if (!v.is_boolean()) config_error("'" + key + "' must be true or false");
  return v.get<bool>();
}

std::string get_text(const Json& v, const std::string& key) {
  if (!v.is_string()) config_error("'" + key + "' must be a string");
  return v.get<std::string>();
}

template <class T, class F>
std::vector<T> get_list(const Json& v, const std::string& key, F item) {
  if (!v.is_array()) config_error("'" + key + "' must be an array");
  std::vector<T> out;
  for (const auto& x : v) out.push_back(static_cast<T>(item(x, key)));
  return out;
}

std::string similarity_name(metrics::NeighborSimilarity s) {
  return s == metrics::NeighborSimilarity::Cosine ? "cosine" : "inner_product";
}

metrics::NeighborSimilarity similarity_from_name(const std::string& s) {
  if (s == "cosine") return metrics::NeighborSimilarity::Cosine;
  if (s == "inner_product") return metrics::NeighborSimilarity::InnerProduct;
  config_error("unknown knn_similarity '" + s + "' (expected inner_product or cosine)");
}

std::string mode_name(loss::LogitScaleMode m) { return m == loss::LogitScaleMode::Fixed ? "fixed" : "learnable"; }

loss::LogitScaleMode mode_from_name(const std::string& s) {
  if (s == "fixed") return loss::LogitScaleMode::Fixed;
  if (s == "learnable") return loss::LogitScaleMode::Learnable;
  config_error("unknown logit_scale_mode '" + s + "' (expected fixed or learnable)");
}

// Wraps a configuration error with the offending section name.
template <class F>
auto parse_section(const std::string& where, F body) {
  try {
    return body();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::ConfigError && e.kind() != ErrorKind::InvalidInput) throw;
    config_error(where + ": " + e.what());
  }
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    const bool known =
        std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return item.key() == a; });
    if (!known) config_error(where + ": unknown key '" + item.key() + "'");
  }
}

// ---- autoencoder / similarity --------------------------------------------------

Json to_json(const nn::AutoencoderConfig& cfg) {
  return {{"input_dim", cfg.input_dim},
          {"hidden_dims", cfg.hidden_dims},
          {"latent_dim", cfg.latent_dim},
          {"dropout", cfg.dropout},
          {"layernorm_eps", cfg.layernorm_eps}};
}

nn::AutoencoderConfig autoencoder_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"input_dim", "hidden_dims", "latent_dim", "dropout", "layernorm_eps"}, "autoencoder");
  nn::AutoencoderConfig c;
  if (j.contains("input_dim")) c.input_dim = get_unsigned(j["input_dim"], "input_dim");
  if (j.contains("hidden_dims")) c.hidden_dims = get_list<std::size_t>(j["hidden_dims"], "hidden_dims", get_unsigned);
  if (j.contains("latent_dim")) c.latent_dim = get_unsigned(j["latent_dim"], "latent_dim");
  if (j.contains("dropout")) c.dropout = get_real(j["dropout"], "dropout");
  if (j.contains("layernorm_eps")) c.layernorm_eps = get_real(j["layernorm_eps"], "layernorm_eps");
  return c;
}

Json to_json(const loss::SimilarityConfig& cfg) {
  return {{"tau", cfg.tau},
          {"logit_scale_mode", mode_name(cfg.mode)},
          {"logit_scale_init", cfg.logit_scale_init},
          {"logit_scale_max", cfg.logit_scale_max}};
}

loss::SimilarityConfig similarity_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"tau", "logit_scale_mode", "logit_scale_init", "logit_scale_max"}, "similarity");
  loss::SimilarityConfig c;
  if (j.contains("tau")) c.tau = get_real(j["tau"], "tau");
  if (j.contains("logit_scale_mode")) c.mode = mode_from_name(get_text(j["logit_scale_mode"], "logit_scale_mode"));
  if (j.contains("logit_scale_init")) c.logit_scale_init = get_real(j["logit_scale_init"], "logit_scale_init");
  if (j.contains("logit_scale_max")) c.logit_scale_max = get_real(j["logit_scale_max"], "logit_scale_max");
  return c;
}

// ---- synth ---------------------------------------------------------------------

const std::vector<KeySpec>& synth_config_keys() {
  static const std::vector<KeySpec> keys{
      {"n", KeyKind::Unsigned},          {"latent_dim", KeyKind::Unsigned}, {"context_dims", KeyKind::Unsigned},
      {"fine_dims", KeyKind::Unsigned},  {"d_v", KeyKind::Unsigned},        {"d_l", KeyKind::Unsigned},
      {"noise_std", KeyKind::Real},      {"hard_delta", KeyKind::Real},     {"seed", KeyKind::Unsigned},
  };
  return keys;
}

Json to_json(const io::SynthConfig& cfg) {
  return {{"n", cfg.n},
          {"latent_dim", cfg.latent_dim},
          {"context_dims", cfg.context_dims},
          {"fine_dims", cfg.fine_dims},
          {"d_v", cfg.d_v},
          {"d_l", cfg.d_l},
          {"noise_std", cfg.noise_std},
          {"hard_delta", cfg.hard_delta},
          {"seed", cfg.seed}};
}

io::SynthConfig synth_config_from_json(const Json& j) {
  return parse_section("synth config", [&] {
    reject_unknown_keys(j, {"n", "latent_dim", "context_dims", "fine_dims", "d_v", "d_l", "noise_std", "hard_delta",
                            "seed"},
                        "synth config");
    io::SynthConfig c;
    if (j.contains("n")) c.n = get_unsigned(j["n"], "n");
    if (j.contains("latent_dim")) c.latent_dim = get_unsigned(j["latent_dim"], "latent_dim");
    if (j.contains("context_dims")) c.context_dims = get_unsigned(j["context_dims"], "context_dims");
    if (j.contains("fine_dims")) c.fine_dims = get_unsigned(j["fine_dims"], "fine_dims");
    if (j.contains("d_v")) c.d_v = get_unsigned(j["d_v"], "d_v");
    if (j.contains("d_l")) c.d_l = get_unsigned(j["d_l"], "d_l");
    if (j.contains("noise_std")) c.noise_std = get_real(j["noise_std"], "noise_std");
    if (j.contains("hard_delta")) c.hard_delta = get_real(j["hard_delta"], "hard_delta");
    if (j.contains("seed")) c.seed = get_unsigned(j["seed"], "seed");
    c.validate();
    return c;
  });
}

// ---- metrics report ----------------------------------------------------------------

const std::vector<KeySpec>& report_config_keys() {
  static const std::vector<KeySpec> keys{
      {"pca_dim", KeyKind::Unsigned}, {"svcca_k", KeyKind::Unsigned}, {"svcca_eta", KeyKind::Real},
      {"knn_k", KeyKind::Unsigned},   {"rbf_gamma", KeyKind::Real},   {"knn_similarity", KeyKind::Text},
  };
  return keys;
}

Json to_json(const metrics::ReportConfig& cfg) {
  return {{"pca_dim", cfg.pca_dim},     {"svcca_k", cfg.svcca_k},     {"svcca_eta", cfg.svcca_eta},
          {"knn_k", cfg.knn_k},         {"rbf_gamma", cfg.rbf_gamma}, {"knn_similarity", similarity_name(cfg.knn_similarity)}};
}

metrics::ReportConfig report_config_from_json(const Json& j) {
  reject_unknown_keys(j, {"pca_dim", "svcca_k", "svcca_eta", "knn_k", "rbf_gamma", "knn_similarity"}, "metrics config");
  metrics::ReportConfig c;
  if (j.contains("pca_dim")) c.pca_dim = get_unsigned(j["pca_dim"], "pca_dim");
  if (j.contains("svcca_k")) c.svcca_k = get_unsigned(j["svcca_k"], "svcca_k");
  if (j.contains("svcca_eta")) c.svcca_eta = get_real(j["svcca_eta"], "svcca_eta");
  if (j.contains("knn_k")) c.knn_k = get_unsigned(j["knn_k"], "knn_k");
  if (j.contains("rbf_gamma")) c.rbf_gamma = get_real(j["rbf_gamma"], "rbf_gamma");
  if (j.contains("knn_similarity")) c.knn_similarity = similarity_from_name(get_text(j["knn_similarity"], "knn_similarity"));
  if (c.pca_dim == 0 || c.svcca_k == 0 || c.knn_k == 0) config_error("metrics config: pca_dim, svcca_k and knn_k must be >= 1");
  if (!(c.svcca_eta > 0 && c.svcca_eta <= 1)) config_error("metrics config: svcca_eta must lie in (0, 1]");
  return c;
}

Json to_json(const metrics::AlignmentReport& report) {
  Json scores = Json::object();
  for (auto s : metrics::kSettings) {
    if (!report.has_setting(s)) continue;
    Json row = Json::object();
    for (auto m : metrics::kMetrics)
      if (const auto* cell = report.find(s, m)) row[metrics::to_string(m)] = optional_number(cell->value);
    scores[metrics::to_string(s)] = std::move(row);
  }
  Json errors = Json::array();
  for (const auto& c : report.cells)
    if (!c.value)
      errors.push_back({{"setting", metrics::to_string(c.setting)}, {"metric", metrics::to_string(c.metric)},
                        {"error", c.error}});
  return {{"config", to_json(report.config)}, {"scores", std::move(scores)}, {"errors", std::move(errors)}};
}

std::string to_csv(const metrics::AlignmentReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "setting,metric,value,error\n";
  for (const auto& c : report.cells) {
    out << metrics::to_string(c.setting) << ',' << metrics::to_string(c.metric) << ',';
    if (c.value) out << *c.value;
    std::string err = c.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    out << ',' << (err.empty() ? "" : "\"" + err + "\"") << '\n';
  }
  return out.str();
}

// ---- training ------------------------------------------------------------------

const std::vector<KeySpec>& train_config_keys() {
  static const std::vector<KeySpec> keys{
      {"epochs", KeyKind::Unsigned},
      {"batch_size", KeyKind::Unsigned},
      {"seeds", KeyKind::UnsignedList},
      {"lr0", KeyKind::Real},
      {"lr_min", KeyKind::Real},
      {"weight_decay", KeyKind::Real},
      {"clip_norm", KeyKind::Real},
      {"validate_every", KeyKind::Unsigned},
      {"patience", KeyKind::Unsigned},
      {"min_improvement", KeyKind::Real},
      {"objective", KeyKind::Text},
      {"alpha_schedule", KeyKind::Text},
      {"alpha", KeyKind::Real},
      {"alpha_start", KeyKind::Real},
      {"alpha_end", KeyKind::Real},
      {"lambda_start", KeyKind::Real},
      {"lambda_end", KeyKind::Real},
      {"include_positive_in_denominator", KeyKind::Bool},
      {"tau", KeyKind::Real},
      {"logit_scale_mode", KeyKind::Text},
      {"logit_scale_init", KeyKind::Real},
      {"logit_scale_max", KeyKind::Real},
      {"hidden_dims", KeyKind::UnsignedList},
      {"latent_dim", KeyKind::Unsigned},
      {"dropout", KeyKind::Real},
      {"layernorm_eps", KeyKind::Real},
  };
  return keys;
}

Json to_json(const train::TrainConfig& cfg) {
  const auto& a = cfg.loss.alpha;
  const bool linear = a.kind == loss::AlphaSchedule::Kind::Linear;
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"seeds", cfg.seeds},
          {"lr0", cfg.lr0},
          {"lr_min", cfg.lr_min},
          {"weight_decay", cfg.weight_decay},
          {"clip_norm", cfg.clip_norm},
          {"validate_every", cfg.validate_every},
          {"patience", cfg.patience},
          {"min_improvement", cfg.min_improvement},
          {"objective", loss::to_string(cfg.loss.objective)},
          {"alpha_schedule", linear ? "linear" : "fixed"},
          {"alpha", a.value},
          {"alpha_start", a.start},
          {"alpha_end", a.end},
          {"lambda_start", cfg.loss.lambda_start},
          {"lambda_end", cfg.loss.lambda_end},
          {"include_positive_in_denominator", cfg.loss.include_positive_in_denominator},
          {"tau", cfg.sim.tau},
          {"logit_scale_mode", mode_name(cfg.sim.mode)},
          {"logit_scale_init", cfg.sim.logit_scale_init},
          {"logit_scale_max", cfg.sim.logit_scale_max},
          {"hidden_dims", cfg.ae_vision.hidden_dims},
          {"latent_dim", cfg.ae_vision.latent_dim},
          {"dropout", cfg.ae_vision.dropout},
          {"layernorm_eps", cfg.ae_vision.layernorm_eps}};
}

train::TrainConfig train_config_from_json(const Json& j) {
  return parse_section("train config", [&] {
    require_object(j, "train config");
    for (const auto& item : j.items()) {
      const auto& keys = train_config_keys();
      if (std::none_of(keys.begin(), keys.end(), [&](const KeySpec& k) { return item.key() == k.name; }))
        config_error("unknown key '" + item.key() + "'");
    }
    train::TrainConfig c;
    auto has = [&](const char* k) { return j.contains(k); };
    if (has("epochs")) c.epochs = get_unsigned(j["epochs"], "epochs");
    if (has("batch_size")) c.batch_size = get_unsigned(j["batch_size"], "batch_size");
    if (has("seeds")) c.seeds = get_list<std::uint64_t>(j["seeds"], "seeds", get_unsigned);
    if (has("lr0")) c.lr0 = get_real(j["lr0"], "lr0");
    if (has("lr_min")) c.lr_min = get_real(j["lr_min"], "lr_min");
    if (has("weight_decay")) c.weight_decay = get_real(j["weight_decay"], "weight_decay");
    if (has("clip_norm")) c.clip_norm = get_real(j["clip_norm"], "clip_norm");
    if (has("validate_every")) c.validate_every = get_unsigned(j["validate_every"], "validate_every");
    if (has("patience")) c.patience = get_unsigned(j["patience"], "patience");
    if (has("min_improvement")) c.min_improvement = get_real(j["min_improvement"], "min_improvement");
    if (has("objective")) c.loss.objective = loss::objective_from_string(get_text(j["objective"], "objective"));

    std::string schedule = "fixed";
    if (has("alpha_schedule")) schedule = get_text(j["alpha_schedule"], "alpha_schedule");
    if (schedule == "fixed") {
      if (has("alpha_start") || has("alpha_end")) config_error("alpha_start/alpha_end need alpha_schedule=linear");
      c.loss.alpha = loss::AlphaSchedule::fixed(has("alpha") ? get_real(j["alpha"], "alpha") : 0.5);
    } else if (schedule == "linear") {
      if (has("alpha")) config_error("alpha needs alpha_schedule=fixed; use alpha_start/alpha_end");
      const double s = has("alpha_start") ? get_real(j["alpha_start"], "alpha_start") : 0.5;
      const double e = has("alpha_end") ? get_real(j["alpha_end"], "alpha_end") : 0.5;
      c.loss.alpha = loss::AlphaSchedule::linear(s, e);
    } else {
      config_error("unknown alpha_schedule '" + schedule + "' (expected fixed or linear)");
    }

    if (has("lambda_start")) c.loss.lambda_start = get_real(j["lambda_start"], "lambda_start");
    if (has("lambda_end")) c.loss.lambda_end = get_real(j["lambda_end"], "lambda_end");
    if (has("include_positive_in_denominator"))
      c.loss.include_positive_in_denominator =
          get_bool(j["include_positive_in_denominator"], "include_positive_in_denominator");

    Json sim = Json::object();
    for (const char* k : {"tau", "logit_scale_mode", "logit_scale_init", "logit_scale_max"})
      if (has(k)) sim[k] = j[k];
    c.sim = similarity_config_from_json(sim);
    // A changed tau with no explicit init keeps init = log(1/tau).
    if (has("tau") && !has("logit_scale_init")) c.sim.logit_scale_init = std::log(1.0 / c.sim.tau);

    Json ae = Json::object();
    for (const char* k : {"hidden_dims", "latent_dim", "dropout", "layernorm_eps"})
      if (has(k)) ae[k] = j[k];
    c.ae_vision = autoencoder_config_from_json(ae);
    c.ae_language = c.ae_vision;
    if (c.seeds.empty()) config_error("seeds must not be empty");
    c.validate();
    return c;
  });
}

Json to_json(const train::TrainHistory& h) {
  Json epochs = Json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"lambda", e.lambda},
                      {"alpha", e.alpha},
                      {"logit_scale", e.logit_scale},
                      {"recon_v", e.recon_v},
                      {"recon_l", e.recon_l},
                      {"align", e.align},
                      {"total", e.total},
                      {"batches", e.batches}});
  Json vals = Json::array();
  for (const auto& v : h.validations)
    vals.push_back({{"epoch", v.epoch}, {"recall_binary", v.recall_binary}, {"recall_5way", v.recall_5way}});
  return {{"epochs", std::move(epochs)},
          {"validations", std::move(vals)},
          {"best_validation", h.best_validation ? Json(*h.best_validation) : Json(nullptr)},
          {"best_score", h.best_score},
          {"stop_epoch", h.stop_epoch},
          {"stop_reason", train::to_string(h.reason)},
          {"message", h.message}};
}

Json to_json(const eval::RetrievalResult& r) {
  return {{"recall_binary", r.recall_binary}, {"recall_5way", r.recall_5way}, {"n_queries", r.n_queries},
          {"seed", r.seed}};
}

Json to_json(const eval::Aggregate& a) {
  return {{"runs", a.runs},
          {"recall_binary", {{"mean", a.recall_binary.mean}, {"std", a.recall_binary.std}}},
          {"recall_5way", {{"mean", a.recall_5way.mean}, {"std", a.recall_5way.std}}}};
}

Json to_json(const train::SweepReport& s) {
  Json entries = Json::array();
  for (const auto& e : s.entries)
    entries.push_back({{"alpha", e.alpha}, {"best_val_recall", e.best_val_recall}, {"history", to_json(e.history)}});
  return {{"best_alpha", s.best_alpha}, {"best_val_recall", s.best_val_recall}, {"entries", std::move(entries)}};
}

// ---- flag values -------------------------------------------------------------------

Json parse_key_value(const KeySpec& key, const std::string& text) {
  const std::string name = key.name;
  auto parse_unsigned = [&](const std::string& s) -> std::uint64_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      if (s.empty() || s[0] == '-' || s[0] == '+') throw std::invalid_argument("sign");
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != s.size()) config_error("--" + name + ": '" + s + "' is not a non-negative integer");
    return v;
  };
  auto parse_real = [&](const std::string& s) -> double {
    std::size_t pos = 0;
    double v = 0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = std::string::npos;
    }
    if (pos != s.size() || !std::isfinite(v)) config_error("--" + name + ": '" + s + "' is not a finite number");
    return v;
  };
  auto split = [](const std::string& s) {
    std::vector<std::string> parts;
    if (s.empty()) return parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(item);
    if (s.back() == ',') parts.emplace_back();
    return parts;
  };
  switch (key.kind) {
    case KeyKind::Unsigned: return parse_unsigned(text);
    case KeyKind::Real: return parse_real(text);
    case KeyKind::Bool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      config_error("--" + name + ": expected true or false, got '" + text + "'");
    case KeyKind::Text: return text;
    case KeyKind::UnsignedList: {
      Json arr = Json::array();
      for (const auto& p : split(text)) arr.push_back(parse_unsigned(p));
      return arr;
    }
    case KeyKind::RealList: {
      Json arr = Json::array();
      for (const auto& p : split(text)) arr.push_back(parse_real(p));
      return arr;
    }
  }
  config_error("--" + name + ": unsupported key kind");
}

}  // namespace jam::serialize
