#include "jam/trainer.hpp"

#include "test_util.hpp"

#include <cmath>

using namespace jam;
using namespace jam::train;
using jam::testing::random_matrix;

namespace {

io::Splits synth_splits(std::size_t n, double hard_delta, std::uint64_t seed) {
  io::SynthConfig sc;
  sc.n = n;
  sc.hard_delta = hard_delta;
  sc.seed = seed;
  return io::split_dataset(io::synth_generate(sc).dataset, {}, seed);
}

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr0 = 7e-3;
  c.ae_vision.hidden_dims = {};
  c.ae_vision.latent_dim = 8;
  c.ae_language = c.ae_vision;
  return c;
}

bool same_params(const TrainedJam& a, const TrainedJam& b) {
  auto& ma = const_cast<TrainedJam&>(a);
  auto& mb = const_cast<TrainedJam&>(b);
  auto pa = ma.vision.parameters("v.");
  auto pb = mb.vision.parameters("v.");
  auto la = ma.language.parameters("l.");
  auto lb = mb.language.parameters("l.");
  pa.insert(pa.end(), la.begin(), la.end());
  pb.insert(pb.end(), lb.begin(), lb.end());
  if (pa.size() != pb.size() || a.log_scale != b.log_scale) return false;
  for (std::size_t k = 0; k < pa.size(); ++k)
    if (pa[k].tensor->value != pb[k].tensor->value) return false;
  return true;
}

void expect_same_history(const TrainHistory& a, const TrainHistory& b) {
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    EXPECT_EQ(a.epochs[e].total, b.epochs[e].total);
    EXPECT_EQ(a.epochs[e].align, b.epochs[e].align);
    EXPECT_EQ(a.epochs[e].logit_scale, b.epochs[e].logit_scale);
  }
  ASSERT_EQ(a.validations.size(), b.validations.size());
  for (std::size_t v = 0; v < a.validations.size(); ++v) {
    EXPECT_EQ(a.validations[v].recall_binary, b.validations[v].recall_binary);
    EXPECT_EQ(a.validations[v].recall_5way, b.validations[v].recall_5way);
  }
  EXPECT_EQ(a.best_score, b.best_score);
  EXPECT_EQ(a.stop_epoch, b.stop_epoch);
}

TrainResult fit(const io::PairedDataset& tr, const io::PairedDataset& val, const TrainConfig& cfg, std::uint64_t seed) {
  return jam::train::train(tr, val, cfg, seed);
}

}  // namespace

TEST(EarlyStopping, PlateauStopsAfterSeventhValidation) {
  EarlyStopping s(5, 1e-6);
  const std::vector<double> scores{0.6, 0.7, 0.7, 0.7, 0.7, 0.7, 0.7};
  for (std::size_t k = 0; k < scores.size(); ++k) {
    EXPECT_FALSE(s.should_stop()) << "stopped before validation " << k + 1;
    s.update(scores[k]);
  }
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best(), 0.7);
}

TEST(EarlyStopping, GainsBelowThresholdAreNotImprovements) {
  EarlyStopping s(2, 1e-6);
  EXPECT_TRUE(s.update(0.5));
  EXPECT_FALSE(s.update(0.5 + 5e-7));
  EXPECT_TRUE(s.update(0.5 + 2e-6));
  EXPECT_EQ(s.stale(), 0u);
  EXPECT_FALSE(s.update(0.1));
  EXPECT_FALSE(s.should_stop());
  EXPECT_FALSE(s.update(0.1));
  EXPECT_TRUE(s.should_stop());
}

TEST(EarlyStopping, NeverBeforePatiencePlusOne) {
  for (std::size_t p = 1; p <= 6; ++p) {
    EarlyStopping s(p, 1e-6);
    std::size_t k = 0;
    while (!s.should_stop()) {
      s.update(0.3);
      ++k;
    }
    EXPECT_EQ(k, p + 1);
  }
}

TEST(TrainConfig, Validation) {
  auto c = small_config(10);
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_JAM_ERROR(c.validate(), ErrorKind::ConfigError);
  c = small_config(3);
  EXPECT_JAM_ERROR(c.validate(), ErrorKind::ConfigError);
  c = small_config(10);
  c.ae_language.latent_dim = 4;
  EXPECT_JAM_ERROR(c.validate(), ErrorKind::ConfigError);
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const auto sp = synth_splits(200, 1.0, 5);
  const auto cfg = small_config(0);
  const auto r = fit(sp.train, sp.val, cfg, 42);
  EXPECT_TRUE(r.history.epochs.empty());
  EXPECT_TRUE(r.history.validations.empty());
  EXPECT_FALSE(r.history.best_validation.has_value());
  EXPECT_TRUE(same_params(r.model, init_model(cfg, 64, 96, 42)));
}

TEST(Train, DimensionMismatchIsInvalidInput) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(5);
  cfg.ae_vision.input_dim = 10;
  EXPECT_JAM_ERROR(fit(sp.train, sp.val, cfg, 1), ErrorKind::InvalidInput);
  auto val = sp.val;
  val.images = random_matrix(1, val.size(), 7);
  EXPECT_JAM_ERROR(fit(sp.train, val, small_config(5), 1), ErrorKind::InvalidInput);
}

TEST(Train, FixedSeedIsBitIdentical) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(10);
  cfg.ae_vision.hidden_dims = {16};
  cfg.ae_language.hidden_dims = {16};
  const auto a = fit(sp.train, sp.val, cfg, 7);
  const auto b = fit(sp.train, sp.val, cfg, 7);
  expect_same_history(a.history, b.history);
  EXPECT_TRUE(same_params(a.model, b.model));
  const auto c = fit(sp.train, sp.val, cfg, 8);
  EXPECT_FALSE(same_params(a.model, c.model));
}

TEST(Train, HistoryShapeAndSchedules) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(20);
  cfg.patience = 100;
  const auto r = fit(sp.train, sp.val, cfg, 5);
  const auto& h = r.history;
  ASSERT_EQ(h.epochs.size(), 20u);
  EXPECT_EQ(h.reason, StopReason::Completed);
  EXPECT_EQ(h.stop_epoch, 20u);
  EXPECT_EQ(h.epochs.front().lambda, 1.0);
  EXPECT_EQ(h.epochs.back().lambda, 0.1);
  EXPECT_EQ(h.epochs.front().lr, cfg.lr0);
  // 140 training rows in batches of 32: four full batches and one of 12
  EXPECT_EQ(h.epochs.front().batches, 5u);
  ASSERT_EQ(h.validations.size(), 4u);
  double best = -1;
  for (std::size_t v = 0; v < h.validations.size(); ++v) {
    EXPECT_EQ(h.validations[v].epoch, 5 * (v + 1));
    best = std::max(best, h.validations[v].recall_binary);
  }
  EXPECT_EQ(h.best_score, best);
  ASSERT_TRUE(h.best_validation.has_value());
  EXPECT_EQ(h.validations[*h.best_validation].recall_binary, best);
}

TEST(Train, ReturnsBestValidatedModel) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(30);
  cfg.patience = 100;
  const auto r = fit(sp.train, sp.val, cfg, 5);
  const auto again = validate(r.model, sp.val, 5);
  EXPECT_EQ(again.recall_binary, r.history.best_score);
  EXPECT_EQ(again.recall_5way, r.history.validations[*r.history.best_validation].recall_5way);
}

TEST(Train, EarlyStopRespectsPatience) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(200);
  cfg.validate_every = 1;
  cfg.patience = 3;
  const auto r = fit(sp.train, sp.val, cfg, 5);
  ASSERT_EQ(r.history.reason, StopReason::EarlyStopped);
  EXPECT_GE(r.history.validations.size(), cfg.patience + 1);
  EXPECT_EQ(r.history.validations.size() - 1 - *r.history.best_validation, cfg.patience);
  EXPECT_EQ(r.history.stop_epoch, r.history.validations.size());
}

TEST(Train, DropoutTrainingIsDeterministic) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(5);
  cfg.ae_vision = nn::AutoencoderConfig{0, {16}, 8, 0.3};
  cfg.ae_language = cfg.ae_vision;
  const auto a = fit(sp.train, sp.val, cfg, 3);
  const auto b = fit(sp.train, sp.val, cfg, 3);
  expect_same_history(a.history, b.history);
  EXPECT_TRUE(same_params(a.model, b.model));
}

TEST(Train, HugeLearningRateAbortsOnNonFiniteLoss) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(10);
  cfg.lr0 = 1e300;
  cfg.lr_min = 1e300;
  cfg.weight_decay = 0;
  const auto r = fit(sp.train, sp.val, cfg, 5);
  EXPECT_EQ(r.history.reason, StopReason::AbortedNonFinite);
  EXPECT_FALSE(r.history.message.empty());
  EXPECT_LT(r.history.stop_epoch, cfg.epochs);
}

TEST(Validate, IdentityModelRetrievesOwnInputs) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(0);
  auto m = init_model(cfg, 64, 64, 1);
  m.language = m.vision;
  io::PairedDataset ds;
  ds.images = sp.val.images;
  ds.positives = sp.val.images;
  ds.negatives = random_matrix(2, sp.val.size(), 64);
  ds.ids = sp.val.ids;
  EXPECT_EQ(validate(m, ds, 1).recall_binary, 1.0);
}

TEST(Validate, UntrainedModelIsNearChance) {
  io::SynthConfig sc;
  sc.n = 2000;
  const auto ds = io::synth_generate(sc).dataset;
  double sum = 0;
  for (std::uint64_t s : {5, 42, 55}) sum += validate(init_model(small_config(0), 64, 96, s), ds, s).recall_binary;
  EXPECT_NEAR(sum / 3, 0.5, 0.05);
}

TEST(Validate, RepeatedCallsAgree) {
  const auto sp = synth_splits(200, 1.0, 5);
  const auto m = init_model(small_config(0), 64, 96, 9);
  const auto a = validate(m, sp.val, 3);
  const auto b = validate(m, sp.val, 3);
  EXPECT_EQ(a.recall_binary, b.recall_binary);
  EXPECT_EQ(a.recall_5way, b.recall_5way);
}

TEST(Train, SpreadTrainingBeatsUntrainedModel) {
  const auto sp = synth_splits(600, 1.0, 42);
  auto cfg = small_config(40);
  cfg.loss.objective = loss::Objective::Spread;
  cfg.loss.alpha = loss::AlphaSchedule::fixed(0.5);
  const auto before = validate(init_model(cfg, 64, 96, 42), sp.val, 42).recall_binary;
  const auto r = fit(sp.train, sp.val, cfg, 42);
  const auto after = validate(r.model, sp.val, 42).recall_binary;
  EXPECT_GT(after, before + 0.1) << "before " << before << " after " << after;
}

TEST(Sweep, SingleAlphaMatchesPlainRun) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(10);
  const auto rep = sweep_alpha(sp.train, sp.val, cfg, {0.3}, 11);
  cfg.loss.objective = loss::Objective::Spread;
  cfg.loss.alpha = loss::AlphaSchedule::fixed(0.3);
  const auto run = fit(sp.train, sp.val, cfg, 11);
  ASSERT_EQ(rep.entries.size(), 1u);
  expect_same_history(rep.entries[0].history, run.history);
  EXPECT_EQ(rep.best_alpha, 0.3);
  EXPECT_EQ(rep.best_val_recall, run.history.best_score);
}

TEST(Sweep, ThreeAlphasReportArgmaxIndependentOfThreads) {
  const auto sp = synth_splits(200, 1.0, 5);
  const auto cfg = small_config(10);
  const auto seq = sweep_alpha(sp.train, sp.val, cfg, {0.0, 0.5, 1.0}, 4, 0);
  const auto par = sweep_alpha(sp.train, sp.val, cfg, {0.0, 0.5, 1.0}, 4, 3);
  ASSERT_EQ(seq.entries.size(), 3u);
  double best = -1;
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(seq.entries[k].alpha, 0.5 * static_cast<double>(k));
    expect_same_history(seq.entries[k].history, par.entries[k].history);
    best = std::max(best, seq.entries[k].best_val_recall);
  }
  EXPECT_EQ(seq.best_val_recall, best);
  EXPECT_EQ(par.best_alpha, seq.best_alpha);
}

TEST(Sweep, EasyFineDistinctionNeedsSomeContextNce) {
  const auto sp = synth_splits(600, 2.0, 42);
  const auto rep = sweep_alpha(sp.train, sp.val, small_config(10), {0.0, 0.5, 1.0}, 42);
  EXPECT_NE(rep.best_alpha, 0.0);
  EXPECT_LT(rep.entries[0].best_val_recall, rep.best_val_recall);
}

TEST(Sweep, RejectsBadAlphas) {
  const auto sp = synth_splits(200, 1.0, 5);
  EXPECT_JAM_ERROR(sweep_alpha(sp.train, sp.val, small_config(5), {}, 1), ErrorKind::InvalidInput);
  EXPECT_JAM_ERROR(sweep_alpha(sp.train, sp.val, small_config(5), {1.5}, 1), ErrorKind::InvalidInput);
}

TEST(Checkpoint, RoundTripPreservesLatents) {
  const auto sp = synth_splits(200, 1.0, 5);
  auto cfg = small_config(5);
  cfg.ae_vision = nn::AutoencoderConfig{0, {16, 12}, 8, 0.1};
  cfg.ae_language = cfg.ae_vision;
  const auto r = fit(sp.train, sp.val, cfg, 5);
  const auto dir = jam::testing::temp_dir("trainer_ckpt");
  nn::write_checkpoint(dir / "m.ckpt", make_checkpoint(r.model, &r.optimizer, R"({"seed": 5})"));
  const auto ck = nn::read_checkpoint(dir / "m.ckpt");
  const auto loaded = load_model(ck);
  EXPECT_TRUE(same_params(r.model, loaded));
  const auto za = r.model.encode(sp.test);
  const auto zb = loaded.encode(sp.test);
  EXPECT_EQ(za.zv, zb.zv);
  EXPECT_EQ(za.zlp, zb.zlp);
  EXPECT_EQ(za.zln, zb.zln);
  EXPECT_EQ(loaded.sim.mode, r.model.sim.mode);
  std::size_t moments = 0;
  for (const auto& [name, t] : ck.tensors) moments += name.rfind("adamw.", 0) == 0;
  EXPECT_EQ(moments, 2 * (ck.tensors.size() - moments - 1) + 2);
}

TEST(Checkpoint, MissingModelMetaIsFormatError) {
  nn::Checkpoint ck;
  ck.meta = "{}";
  EXPECT_JAM_ERROR(load_model(ck), ErrorKind::FormatError);
  ck.meta = "not json";
  EXPECT_JAM_ERROR(load_model(ck), ErrorKind::FormatError);
}
