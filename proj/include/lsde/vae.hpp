#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsde/datasets.hpp"
#include "lsde/nn.hpp"
#include "lsde/rng.hpp"

namespace lsde {

struct VaeConfig {
  int n = 0;
  int d = 0;
  std::vector<int> encoder_hidden{64, 64};
  std::vector<int> decoder_hidden{64, 64};
  Activation activation = Activation::kLeakyRelu;
  int drift_width = 16;
  /// Number of affine layers in the drift network.
  int drift_depth = 4;
  Activation drift_activation = Activation::kSoftplus;
  double tau = 0.01;
  double nu = 0.0;
  bool diffusion_diag = false;
  double lambda1 = 0.0;
  /// Full lower-triangular encoder covariance; false keeps only the diagonal.
  bool full_covariance = true;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const VaeConfig& c);
VaeConfig vae_config_from_json(const nlohmann::json& j);

struct LossBreakdown {
  double entropy = 0.0;
  double prior = 0.0;
  double transition = 0.0;
  double reconstruction = 0.0;
  double l1 = 0.0;
  double total = 0.0;

  void finalize() { total = entropy + prior + transition + reconstruction + l1; }
};

/// Encoder outputs for a batch: means (d x B) and raw Cholesky head
/// outputs (diagonal pre-activations first, then strict lower entries
/// row by row).
struct Encoding {
  Mat mean;
  Mat chol_raw;
};

class VaeModel {
 public:
  VaeModel() = default;
  explicit VaeModel(const VaeConfig& cfg);

  const VaeConfig& config() const { return cfg_; }
  int n() const { return cfg_.n; }
  int d() const { return cfg_.d; }
  int chol_size() const;

  Mlp encoder_body;
  Mlp mean_head;
  Mlp chol_head;
  Mlp decoder;
  Mlp drift;
  /// Raw diffusion diagonal; the model uses |D|. Empty when disabled.
  Vec diffusion;

  void set_tau(double tau) { cfg_.tau = tau; }
  void set_nu(double nu) { cfg_.nu = nu; }
  void set_lambda1(double l) { cfg_.lambda1 = l; }

  std::pair<Vec, Mat> encode(const Vec& x) const;
  Encoding encode_batch(const Mat& x) const;
  /// Lower-triangular factor from one column of chol_raw.
  Mat chol(const Vec& raw) const;
  Mat decode(const Mat& z) const { return decoder.forward(z); }
  Mat drift_at(const Mat& z) const { return drift.forward(z); }

  std::size_t num_params() const;
  Vec params() const;
  void set_params(const Vec& p);

  /// Model with latents moved by z' = Qz + b: decoder f(Q^T(z'-b)) and
  /// drift Q mu(Q^T(z'-b)). Q must be orthogonal.
  VaeModel isometry(const Mat& q, const Vec& b) const;

 private:
  VaeConfig cfg_;
};

/// Pairs plus the reparameterisation draws used for one loss evaluation.
struct PairBatch {
  Mat x0;
  Mat x1;
  Vec dt;
  Mat eta0;
  Mat eta1;

  Eigen::Index size() const { return x0.cols(); }
};

/// Per-pair mean of the four terms plus lambda1 * sum|D| once.
struct LossEval {
  LossBreakdown terms;
  /// Gradient w.r.t. params(); empty when not requested.
  Vec grad;
};

LossEval loss(const VaeModel& model, const PairBatch& batch, bool want_grad = true);

/// Throws TrainingDiverged naming the first non-finite term.
void check_finite(const LossBreakdown& terms, int epoch);

/// Standard normal draws (d x B) for pairs [first, first + B) at `epoch`.
Mat reparam_noise(std::uint64_t seed, Stream stream, int epoch, int time_point,
                  std::size_t first, Eigen::Index count, int d);

struct TrainConfig {
  int epochs = 2000;
  AdamConfig adam;
  /// Trailing pairs held out for model selection.
  int val = 100;
  /// Pairs per step; 0 means the full training set.
  int batch_size = 0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
  int epoch = 0;
  LossBreakdown train;
  double val_total = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on the training split; restores the parameters with the best
/// validation total (the initial parameters count as epoch -1).
TrainResult train(VaeModel& model, const PairedDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

void write_loss_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv);

struct GeneratedPairs {
  Mat z0;
  Mat z1;
  Mat x0;
  Mat x1;
};

/// Samples z1 ~ N(z0 + mu(z0) dt, dt D^2) and decodes both ends with
/// N(0, tau I) noise.
GeneratedPairs generate_pairs(const VaeModel& model, const Mat& z0, double dt,
                              std::uint64_t seed);

/// Exact log density of (x0, x1) when decoder and drift are affine and
/// z0 ~ N(prior_mean, prior_cov).
double linear_pair_log_density(const VaeModel& model, const Vec& prior_mean,
                               const Mat& prior_cov, const Vec& x0, const Vec& x1, double dt);

void save_model(const VaeModel& model, const std::filesystem::path& dir);
VaeModel load_model(const std::filesystem::path& dir);

}  // namespace lsde
