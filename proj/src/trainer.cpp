#include "jam/trainer.hpp"

#include "jam/error.hpp"
#include "jam/serialize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace jam::train {

using nn::Mode;
using nn::ParamRef;
using nn::Tensor;

void TrainConfig::validate() const {
  require(batch_size >= 2, ErrorKind::ConfigError, "batch_size must be >= 2");
  require(validate_every >= 1, ErrorKind::ConfigError, "validate_every must be >= 1");
  require(epochs == 0 || epochs >= validate_every, ErrorKind::ConfigError, "epochs must be >= validate_every");
  require(patience >= 1, ErrorKind::ConfigError, "patience must be >= 1");
  require(lr0 > 0 && lr_min >= 0 && lr_min <= lr0, ErrorKind::ConfigError, "need lr0 > 0 and 0 <= lr_min <= lr0");
  require(clip_norm > 0, ErrorKind::ConfigError, "clip_norm must be > 0");
  require(weight_decay >= 0, ErrorKind::ConfigError, "weight_decay must be >= 0");
  require(ae_vision.latent_dim == ae_language.latent_dim, ErrorKind::ConfigError,
          "both autoencoders need the same latent_dim");
  for (auto ae : {ae_vision, ae_language}) {
    if (ae.input_dim == 0) ae.input_dim = 1;  // filled from data later
    ae.validate();
  }
  loss.validate();
  sim.validate();
}

bool EarlyStopping::update(double score) {
  ++count_;
  if (!have_best_ || score > best_ + min_improvement_) {
    best_ = score;
    have_best_ = true;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::Completed: return "completed";
    case StopReason::EarlyStopped: return "early_stopped";
    case StopReason::AbortedNonFinite: return "aborted_nonfinite";
  }
  return "?";
}

Latents TrainedJam::encode(const io::PairedDataset& ds) const {
  return {vision.encode(ds.images), language.encode(ds.positives), language.encode(ds.negatives)};
}

TrainedJam init_model(const TrainConfig& cfg, std::size_t d_vision, std::size_t d_language, std::uint64_t seed) {
  auto with_input = [](nn::AutoencoderConfig c, std::size_t d) {
    require(c.input_dim == 0 || c.input_dim == d, ErrorKind::InvalidInput,
            "autoencoder input_dim " + std::to_string(c.input_dim) + " does not match data dim " + std::to_string(d));
    c.input_dim = d;
    return c;
  };
  const auto root = rng_new(seed);
  auto rv = root.fork(1);
  auto rl = root.fork(2);
  TrainedJam m;
  m.vision = nn::build_autoencoder(with_input(cfg.ae_vision, d_vision), rv);
  m.language = nn::build_autoencoder(with_input(cfg.ae_language, d_language), rl);
  m.sim = cfg.sim;
  m.log_scale = cfg.sim.clamp_log_scale(cfg.sim.logit_scale_init);
  return m;
}

eval::RetrievalResult validate(const TrainedJam& model, const io::PairedDataset& ds, std::uint64_t seed) {
  const Latents z = model.encode(ds);
  return eval::evaluate(z.zv, z.zlp, z.zln, seed);
}

namespace {

std::vector<ParamRef> all_parameters(TrainedJam& m, Tensor* scale) {
  auto params = m.vision.parameters("vision.");
  auto lang = m.language.parameters("language.");
  params.insert(params.end(), lang.begin(), lang.end());
  if (scale) params.push_back({"logit_scale", scale});
  return params;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

TrainResult train(const io::PairedDataset& train_ds, const io::PairedDataset& val_ds, const TrainConfig& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  train_ds.validate();
  val_ds.validate();
  require(train_ds.size() >= 2, ErrorKind::InvalidInput, "training set needs at least 2 rows");
  require(val_ds.images.cols() == train_ds.images.cols() && val_ds.positives.cols() == train_ds.positives.cols(),
          ErrorKind::InvalidInput, "train and validation dims differ");

  TrainResult res;
  res.seed = seed;
  res.model = init_model(cfg, static_cast<std::size_t>(train_ds.images.cols()),
                         static_cast<std::size_t>(train_ds.positives.cols()), seed);
  res.optimizer.config.weight_decay = cfg.weight_decay;
  TrainHistory& hist = res.history;
  if (cfg.epochs == 0) return res;

  TrainedJam& model = res.model;
  const bool learnable = cfg.sim.mode == loss::LogitScaleMode::Learnable;
  Tensor scale(Matrix::Constant(1, 1, model.log_scale));
  auto params = all_parameters(model, learnable ? &scale : nullptr);

  const auto root = rng_new(seed);
  const auto shuffle_root = root.fork(3);
  auto dropout_rng = root.fork(4);

  EarlyStopping stopper(cfg.patience, cfg.min_improvement);
  std::optional<TrainedJam> best;
  const std::size_t n = train_ds.size();
  const double epochs = static_cast<double>(cfg.epochs);
  const double last_epoch = epochs - 1.0;
  hist.stop_epoch = cfg.epochs;

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double t = static_cast<double>(e);
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = nn::cosine_lr(t, epochs, cfg.lr0, cfg.lr_min);
    rec.lambda = loss::lambda_schedule(t, last_epoch, cfg.loss);
    rec.alpha = loss::alpha_schedule(cfg.loss.alpha, t, last_epoch);

    auto order_rng = shuffle_root.fork(e);
    const auto order = permutation(order_rng, n);
    bool aborted = false;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      if (b < 2) break;
      const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(start + b));
      const Matrix images = gather_rows(train_ds.images, rows);
      const Matrix texts = stack(gather_rows(train_ds.positives, rows), gather_rows(train_ds.negatives, rows));

      auto fv = model.vision.forward(images, Mode::Train, &dropout_rng);
      auto fl = model.language.forward(texts, Mode::Train, &dropout_rng);
      if (!fv.latent.allFinite() || !fl.latent.allFinite()) {
        hist.reason = StopReason::AbortedNonFinite;
        hist.message = "non-finite latents at epoch " + std::to_string(e);
        aborted = true;
        break;
      }
      const auto bi = static_cast<Eigen::Index>(b);
      const Matrix zlp = fl.latent.topRows(bi);
      const Matrix zln = fl.latent.bottomRows(bi);

      const loss::ObjectiveInputs in{fv.latent, zlp, zln, images, fv.reconstruction, texts, fl.reconstruction};
      loss::ObjectiveBreakdown obj;
      try {
        obj = loss::total_objective(in, rec.lambda, rec.alpha, scale.value(0, 0), cfg.loss, cfg.sim);
      } catch (const Error& err) {
        // Latents whose norms overflow normalise to zero rows.
        if (err.kind() != ErrorKind::DegenerateInput) throw;
        obj.total = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(obj.total)) {
        hist.reason = StopReason::AbortedNonFinite;
        hist.message = "non-finite loss at epoch " + std::to_string(e);
        aborted = true;
        break;
      }

      for (auto& p : params) p.tensor->zero_grad();
      model.vision.backward(fv.tape, obj.align_grad.d_zv, obj.d_images_recon);
      model.language.backward(fl.tape, stack(obj.align_grad.d_zlp, obj.align_grad.d_zln), obj.d_texts_recon);
      scale.grad(0, 0) = obj.align_grad.d_log_scale;
      nn::clip_grad_norm(params, cfg.clip_norm);
      try {
        nn::adamw_step(params, res.optimizer, rec.lr);
      } catch (const Error& err) {
        if (err.kind() != ErrorKind::NonFiniteGradient) throw;
        hist.reason = StopReason::AbortedNonFinite;
        hist.message = err.what();
        aborted = true;
        break;
      }
      if (learnable) scale.value(0, 0) = cfg.sim.clamp_log_scale(scale.value(0, 0));
      model.log_scale = scale.value(0, 0);

      rec.recon_v += obj.recon_v;
      rec.recon_l += obj.recon_l;
      rec.align += obj.align;
      rec.total += obj.total;
      rec.logit_scale = obj.logit_scale;
      ++rec.batches;
    }
    if (rec.batches > 0) {
      const double k = static_cast<double>(rec.batches);
      rec.recon_v /= k;
      rec.recon_l /= k;
      rec.align /= k;
      rec.total /= k;
    }
    if (aborted) {
      hist.stop_epoch = e;
      break;
    }
    hist.epochs.push_back(rec);

    if ((e + 1) % cfg.validate_every == 0) {
      const auto r = validate(model, val_ds, seed);
      hist.validations.push_back({e + 1, r.recall_binary, r.recall_5way});
      if (stopper.update(r.recall_binary)) {
        best = model;
        hist.best_validation = hist.validations.size() - 1;
        hist.best_score = r.recall_binary;
      }
      if (stopper.should_stop()) {
        hist.reason = StopReason::EarlyStopped;
        hist.stop_epoch = e + 1;
        break;
      }
    }
  }
  if (best) res.model = std::move(*best);
  return res;
}

SweepReport sweep_alpha(const io::PairedDataset& train_ds, const io::PairedDataset& val_ds, const TrainConfig& cfg,
                        const std::vector<double>& alphas, std::uint64_t seed, std::size_t threads) {
  require(!alphas.empty(), ErrorKind::InvalidInput, "sweep_alpha: empty alpha list");
  for (double a : alphas)
    require(a >= 0 && a <= 1, ErrorKind::InvalidInput, "sweep_alpha: alphas must lie in [0, 1]");

  SweepReport report;
  report.entries.resize(alphas.size());
  auto run_one = [&](std::size_t k) {
    TrainConfig c = cfg;
    c.loss.objective = loss::Objective::Spread;
    c.loss.alpha = loss::AlphaSchedule::fixed(alphas[k]);
    auto r = train(train_ds, val_ds, c, seed);
    report.entries[k] = {alphas[k], r.history.best_score, std::move(r.history)};
  };

  const std::size_t workers = std::min<std::size_t>(std::max<std::size_t>(threads, 1), alphas.size());
  if (workers <= 1) {
    for (std::size_t k = 0; k < alphas.size(); ++k) run_one(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = next++; k < alphas.size(); k = next++) run_one(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  report.best_alpha = report.entries.front().alpha;
  report.best_val_recall = report.entries.front().best_val_recall;
  for (const auto& e : report.entries)
    if (e.best_val_recall > report.best_val_recall) {
      report.best_val_recall = e.best_val_recall;
      report.best_alpha = e.alpha;
    }
  return report;
}

nn::Checkpoint make_checkpoint(const TrainedJam& model, const nn::AdamWState* optimizer, const std::string& meta_json) {
  TrainedJam copy = model;
  Tensor scale(Matrix::Constant(1, 1, model.log_scale));
  const bool learnable = model.sim.mode == loss::LogitScaleMode::Learnable;
  auto params = all_parameters(copy, learnable ? &scale : nullptr);

  serialize::Json meta = meta_json.empty() ? serialize::Json::object() : serialize::Json::parse(meta_json);
  meta["model"] = {{"vision", serialize::to_json(model.vision.config())},
                   {"language", serialize::to_json(model.language.config())},
                   {"similarity", serialize::to_json(model.sim)},
                   {"log_scale", model.log_scale}};

  nn::Checkpoint ckpt;
  for (const auto& p : params) ckpt.tensors.emplace_back(p.name, p.tensor->value);
  if (!learnable) ckpt.tensors.emplace_back("logit_scale", Matrix::Constant(1, 1, model.log_scale));
  if (optimizer && !optimizer->m.empty()) {
    require(optimizer->m.size() == params.size(), ErrorKind::InvalidInput, "optimizer state does not match model");
    meta["optimizer"] = {{"step", optimizer->step},
                         {"beta1", optimizer->config.beta1},
                         {"beta2", optimizer->config.beta2},
                         {"eps", optimizer->config.eps},
                         {"weight_decay", optimizer->config.weight_decay}};
    for (std::size_t k = 0; k < params.size(); ++k) {
      ckpt.tensors.emplace_back("adamw.m." + params[k].name, optimizer->m[k]);
      ckpt.tensors.emplace_back("adamw.v." + params[k].name, optimizer->v[k]);
    }
  }
  ckpt.meta = meta.dump(2);
  return ckpt;
}

TrainedJam load_model(const nn::Checkpoint& ckpt) {
  serialize::Json meta;
  try {
    meta = serialize::Json::parse(ckpt.meta);
  } catch (const std::exception& e) {
    fail(ErrorKind::FormatError, std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (!meta.contains("model")) fail(ErrorKind::FormatError, "checkpoint metadata lacks 'model'");
  const auto& m = meta["model"];
  auto rng = rng_new(0);
  TrainedJam out;
  out.vision = nn::build_autoencoder(serialize::autoencoder_config_from_json(m.at("vision")), rng);
  out.language = nn::build_autoencoder(serialize::autoencoder_config_from_json(m.at("language")), rng);
  out.sim = serialize::similarity_config_from_json(m.at("similarity"));
  out.log_scale = ckpt.tensor("logit_scale")(0, 0);
  for (auto& p : all_parameters(out, nullptr)) {
    const Matrix& v = ckpt.tensor(p.name);
    require(v.rows() == p.tensor->value.rows() && v.cols() == p.tensor->value.cols(), ErrorKind::FormatError,
            "checkpoint tensor " + p.name + " has the wrong shape");
    p.tensor->value = v;
  }
  return out;
}

}  // namespace jam::train
