#pragma once

// Joint training of the vision and language autoencoders: reconstruction plus
// a cross-modal alignment objective, AdamW with a cosine schedule, periodic
// validation Recall@1, early stopping and best-model restore.

#include "jam/checkpoint.hpp"
#include "jam/embed_io.hpp"
#include "jam/evalkit.hpp"
#include "jam/losses.hpp"
#include "jam/nnet.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace jam::train {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::vector<std::uint64_t> seeds{5, 42, 55};
  double lr0 = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::size_t validate_every = 5;
  std::size_t patience = 5;
  /// Minimum gain over the best validation score that counts as improvement.
  double min_improvement = 1e-6;
  loss::LossConfig loss;
  loss::SimilarityConfig sim;
  /// input_dim of each is taken from the data when left at 0.
  nn::AutoencoderConfig ae_vision;
  nn::AutoencoderConfig ae_language;

  void validate() const;
};

/// Tracks validation scores and decides when training should stop.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_improvement) : patience_(patience), min_improvement_(min_improvement) {}

  /// Records a validation score; returns true when it improved on the best.
  bool update(double score);
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t stale() const { return stale_; }
  std::size_t count() const { return count_; }

 private:
  std::size_t patience_;
  double min_improvement_;
  double best_ = -1.0;
  bool have_best_ = false;
  std::size_t stale_ = 0;
  std::size_t count_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based
  double lr = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  double logit_scale = 0.0;
  double recon_v = 0.0;
  double recon_l = 0.0;
  double align = 0.0;
  double total = 0.0;
  std::size_t batches = 0;
};

struct ValidationRecord {
  std::size_t epoch = 0;  // completed epochs
  double recall_binary = 0.0;
  double recall_5way = 0.0;
};

enum class StopReason { Completed, EarlyStopped, AbortedNonFinite };

std::string to_string(StopReason r);

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<ValidationRecord> validations;
  std::optional<std::size_t> best_validation;  // index into validations
  double best_score = 0.0;
  std::size_t stop_epoch = 0;  // completed epochs when the loop ended
  StopReason reason = StopReason::Completed;
  std::string message;
};

struct Latents {
  Matrix zv;
  Matrix zlp;
  Matrix zln;
};

struct TrainedJam {
  nn::Autoencoder vision;
  nn::Autoencoder language;
  double log_scale = 0.0;
  loss::SimilarityConfig sim;

  /// Eval-mode latents for every row of ds.
  Latents encode(const io::PairedDataset& ds) const;
};

struct TrainResult {
  TrainedJam model;
  TrainHistory history;
  nn::AdamWState optimizer;
  std::uint64_t seed = 0;
};

TrainedJam init_model(const TrainConfig& cfg, std::size_t d_vision, std::size_t d_language, std::uint64_t seed);

/// Trains on train_ds for cfg.epochs epochs under one seed. The returned model
/// is the best validated one (or the initial one when epochs is 0).
TrainResult train(const io::PairedDataset& train_ds, const io::PairedDataset& val_ds, const TrainConfig& cfg,
                  std::uint64_t seed);

/// Binary and 5-way Recall@1 of the model on ds, using eval-mode latents.
eval::RetrievalResult validate(const TrainedJam& model, const io::PairedDataset& ds, std::uint64_t seed);

struct SweepEntry {
  double alpha = 0.0;
  double best_val_recall = 0.0;
  TrainHistory history;
};

struct SweepReport {
  std::vector<SweepEntry> entries;
  double best_alpha = 0.0;
  double best_val_recall = 0.0;
};

/// One spread-objective run per alpha under the same seed. Runs execute on up
/// to `threads` workers (0 or 1 = sequential); results do not depend on it.
SweepReport sweep_alpha(const io::PairedDataset& train_ds, const io::PairedDataset& val_ds, const TrainConfig& cfg,
                        const std::vector<double>& alphas, std::uint64_t seed, std::size_t threads = 0);

// ---- checkpoints ---------------------------------------------------------------

/// Model parameters, optimizer moments, and `meta_json` (expected to be a JSON
/// object; the model's own configs are merged under "model").
nn::Checkpoint make_checkpoint(const TrainedJam& model, const nn::AdamWState* optimizer, const std::string& meta_json);
TrainedJam load_model(const nn::Checkpoint& ckpt);

}  // namespace jam::train
