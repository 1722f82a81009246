#pragma once

// Building blocks for the modality autoencoders with hand-written reverse-mode
// gradients. Layers are stateless apart from their parameters: forward writes
// whatever backward needs into a cache owned by the caller (usually a Tape).

#include "jam/numkit.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace jam::nn {

/// A parameter and its accumulated gradient, always the same shape.
struct Tensor {
  Matrix value;
  Matrix grad;

  Tensor() = default;
  explicit Tensor(Matrix v) : value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

enum class Mode { Train, Eval };

/// y = x W + b, W is in x out.
struct Dense {
  Tensor weight;
  Tensor bias;

  struct Cache {
    Matrix input;
  };

  Dense() = default;
  Dense(std::size_t in, std::size_t out, RngStream& rng);

  Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Per-row normalization followed by an elementwise affine map.
struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  LayerNorm() = default;
  LayerNorm(std::size_t width, double eps);

  Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

/// SiLU(x Wg + bg) * (x Wv + bv).
struct SwiGlu {
  Dense gate;
  Dense value;

  struct Cache {
    Dense::Cache gate_in;
    Dense::Cache value_in;
    Matrix gate_pre;
    Matrix value_pre;
  };

  SwiGlu() = default;
  SwiGlu(std::size_t in, std::size_t out, RngStream& rng);

  Matrix forward(const Matrix& x, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

/// Inverted dropout: kept units are scaled by 1/(1-p) at train time.
struct Dropout {
  double rate = 0.0;

  struct Cache {
    Matrix mask;  // empty when inactive
  };

  Matrix forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache) const;
};

/// y = x + Drop(SiLU(x W1) W2) with square, bias-free W1 and W2.
struct ResidualMlp {
  Tensor w1;
  Tensor w2;
  Dropout dropout;

  struct Cache {
    Matrix input;
    Matrix hidden_pre;
    Matrix hidden_act;
    Dropout::Cache drop;
  };

  ResidualMlp() = default;
  ResidualMlp(std::size_t width, double dropout_rate, RngStream& rng);

  Matrix forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

/// dense -> layernorm -> swiglu -> dropout -> residual mlp.
struct Stage {
  Dense dense;
  LayerNorm norm;
  SwiGlu act;
  Dropout dropout;
  ResidualMlp residual;

  struct Cache {
    Dense::Cache dense;
    LayerNorm::Cache norm;
    SwiGlu::Cache act;
    Dropout::Cache drop;
    ResidualMlp::Cache residual;
  };

  Stage() = default;
  Stage(std::size_t in, std::size_t width, double dropout_rate, double ln_eps, RngStream& rng);

  Matrix forward(const Matrix& x, Mode mode, RngStream* rng, Cache& cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

double silu(double x);
double silu_grad(double x);

// ---- autoencoder -------------------------------------------------------------

struct AutoencoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{512, 512, 512};
  std::size_t latent_dim = 256;
  double dropout = 0.1;
  double layernorm_eps = 1e-5;

  /// An empty hidden list is allowed and yields purely linear encoder/decoder.
  void validate() const;
};

/// Intermediates of one forward pass. backward() consumes it exactly once.
class Tape {
 public:
  bool consumed() const { return consumed_; }

 private:
  friend class Autoencoder;
  std::vector<Stage::Cache> encoder;
  Dense::Cache bottleneck;
  std::vector<Stage::Cache> decoder;
  Dense::Cache output;
  Eigen::Index batch = 0;
  bool consumed_ = false;
};

struct ForwardResult {
  Matrix latent;
  Matrix reconstruction;
  Tape tape;
};

/// Funnel encoder to latent_dim and a decoder that walks the hidden widths in
/// reverse back to input_dim.
class Autoencoder {
 public:
  Autoencoder() = default;
  Autoencoder(const AutoencoderConfig& cfg, RngStream& rng);

  const AutoencoderConfig& config() const { return cfg_; }

  /// Train mode needs rng for dropout masks unless dropout is 0.
  ForwardResult forward(const Matrix& x, Mode mode, RngStream* rng = nullptr) const;
  /// Accumulates parameter gradients and returns d loss / d input.
  Matrix backward(Tape& tape, const Matrix& d_latent, const Matrix& d_reconstruction);

  Matrix encode(const Matrix& x) const { return forward(x, Mode::Eval).latent; }

  std::vector<ParamRef> parameters(const std::string& prefix = "");
  std::size_t parameter_count() const;
  void zero_grad();

  const std::vector<Stage>& encoder_stages() const { return encoder_; }
  const std::vector<Stage>& decoder_stages() const { return decoder_; }
  const Dense& bottleneck() const { return bottleneck_; }
  const Dense& output_layer() const { return output_; }

 private:
  AutoencoderConfig cfg_;
  std::vector<Stage> encoder_;
  Dense bottleneck_;
  std::vector<Stage> decoder_;
  Dense output_;
};

Autoencoder build_autoencoder(const AutoencoderConfig& cfg, RngStream& rng);

// ---- optimisation ------------------------------------------------------------

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

/// One decoupled-weight-decay Adam update of every parameter in `params` with
/// its current gradient. The parameter list must keep the same order between
/// calls. Throws NonFiniteGradient before touching anything if a gradient is
/// not finite.
void adamw_step(std::vector<ParamRef>& params, AdamWState& state, double lr);

double cosine_lr(double epoch, double total_epochs, double lr0, double lr_min);

/// Global L2 norm over all gradients.
double grad_norm(const std::vector<ParamRef>& params);

/// Scales gradients to max_norm when their global norm exceeds it. Returns the
/// norm before clipping.
double clip_grad_norm(std::vector<ParamRef>& params, double max_norm = 1.0);

// ---- gradient checking ---------------------------------------------------------

/// Central finite differences over a random sample of parameter entries.
/// `loss` evaluates the scalar objective from current parameter values;
/// `compute_grads` must leave the analytic gradient in each Tensor::grad.
/// Returns max |analytic - fd| / max(1e-8, |analytic| + |fd|).
double grad_check(std::vector<ParamRef>& params, const std::function<double()>& loss,
                  const std::function<void()>& compute_grads, double h, RngStream& rng,
                  std::size_t samples = 200);

}  // namespace jam::nn
