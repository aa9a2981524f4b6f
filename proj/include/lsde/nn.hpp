#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsde/sde.hpp"

namespace lsde {

enum class Activation { kSoftplus, kLeakyRelu, kTanh, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

enum class Init { kKaiming, kXavier };

constexpr double kLeakySlope = 0.01;

/// Numerically safe softplus and its derivative (the logistic function).
double softplus(double x);
double sigmoid(double x);

/// Per-layer activations of one forward pass. Owned by the caller, so
/// forward/backward stay pure.
struct MlpTape {
  Mat input;
  std::vector<Mat> pre;
  std::vector<Mat> post;
};

struct MlpGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  void set_zero();
};

/// Dense network; columns of every input matrix are samples. The activation
/// follows every affine layer except the last, unless activate_output.
/// widths.size() == 1 gives the identity map.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, Activation activation, bool activate_output = false);

  void init(std::uint64_t seed, Init scheme, double gain = 1.0);

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  std::size_t num_params() const;
  const std::vector<int>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  bool activate_output() const { return activate_output_; }
  std::uint64_t seed() const { return seed_; }

  Mat& weight(int layer) { return weights_[layer]; }
  const Mat& weight(int layer) const { return weights_[layer]; }
  Vec& bias(int layer) { return biases_[layer]; }
  const Vec& bias(int layer) const { return biases_[layer]; }

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, MlpTape& tape) const;
  /// Accumulates parameter gradients of <upstream, forward(x)> into grads
  /// and returns the input gradient.
  Mat backward(const MlpTape& tape, const Mat& upstream, MlpGrads& grads) const;
  /// Jacobian of the output w.r.t. a single input column.
  Mat jacobian(const Vec& x) const;

  MlpGrads zero_grads() const;

  void pack(Vec& out, std::size_t& offset) const;
  void unpack(const Vec& in, std::size_t& offset);
  static void pack(const MlpGrads& g, Vec& out, std::size_t& offset);

  nlohmann::json header() const;
  static Mlp from_header(const nlohmann::json& j);

 private:
  Mat activate(const Mat& z, bool last) const;
  Mat activate_grad(const Mat& z, bool last) const;

  std::vector<int> widths_{1};
  Activation activation_ = Activation::kIdentity;
  bool activate_output_ = false;
  std::uint64_t seed_ = 0;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Learning rate multiplier per epoch.
  double decay = 0.999;
};

double learning_rate(const AdamConfig& cfg, int epoch);

struct AdamState {
  AdamConfig config;
  Vec m;
  Vec v;
  long step = 0;

  AdamState() = default;
  AdamState(std::size_t n, const AdamConfig& cfg);
};

/// Bias-corrected Adam at lr = base * decay^epoch. Throws TrainingDiverged
/// on a non-finite gradient before touching anything.
void adam_step(AdamState& state, Vec& params, const Vec& grads, int epoch);

/// JSON header plus one LSDE blob holding the packed parameters.
void save_mlp(const Mlp& mlp, const std::filesystem::path& base);
Mlp load_mlp(const std::filesystem::path& base);

}  // namespace lsde
