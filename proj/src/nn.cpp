#include "lsde/nn.hpp"

#include <cmath>
#include <fstream>

#include "lsde/error.hpp"
#include "lsde/lsde_io.hpp"
#include "lsde/rng.hpp"

namespace lsde {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kSoftplus: return "softplus";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw InvalidInput("unknown activation '" + s + "'");
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void MlpGrads::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Mlp::Mlp(std::vector<int> widths, Activation activation, bool activate_output)
    : widths_(std::move(widths)), activation_(activation), activate_output_(activate_output) {
  if (widths_.empty()) throw InvalidInput("Mlp needs at least one width");
  for (int w : widths_) {
    if (w <= 0) throw InvalidInput("Mlp widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    weights_.push_back(Mat::Zero(widths_[l + 1], widths_[l]));
    biases_.push_back(Vec::Zero(widths_[l + 1]));
  }
}

void Mlp::init(std::uint64_t seed, Init scheme, double gain) {
  seed_ = seed;
  const CounterRng rng(seed, Stream::kInit);
  std::uint64_t index = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const double fan_in = widths_[l];
    const double fan_out = widths_[l + 1];
    double sd = 0.0;
    if (scheme == Init::kKaiming) {
      const double slope = activation_ == Activation::kLeakyRelu ? kLeakySlope : 1.0;
      sd = gain * std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
    } else {
      sd = gain * std::sqrt(2.0 / (fan_in + fan_out));
    }
    Mat& w = weights_[l];
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = sd * rng.normal(index++);
    }
    biases_[l].setZero();
  }
}

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Mat Mlp::activate(const Mat& z, bool last) const {
  if (last && !activate_output_) return z;
  switch (activation_) {
    case Activation::kSoftplus: return z.unaryExpr([](double v) { return softplus(v); });
    case Activation::kLeakyRelu:
      return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kIdentity: return z;
  }
  return z;
}

Mat Mlp::activate_grad(const Mat& z, bool last) const {
  if (last && !activate_output_) return Mat::Ones(z.rows(), z.cols());
  switch (activation_) {
    case Activation::kSoftplus: return z.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::kLeakyRelu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
    case Activation::kTanh: return (1.0 - z.array().tanh().square()).matrix();
    case Activation::kIdentity: return Mat::Ones(z.rows(), z.cols());
  }
  return z;
}

Mat Mlp::forward(const Mat& x) const {
  if (x.rows() != in_dim()) {
    throw InvalidInput("Mlp input width " + std::to_string(x.rows()) + " != " +
                       std::to_string(in_dim()));
  }
  Mat h = x;
  const int layers = num_layers();
  for (int l = 0; l < layers; ++l) {
    Mat z = weights_[l] * h;
    z.colwise() += biases_[l];
    h = activate(z, l + 1 == layers);
  }
  return h;
}

Mat Mlp::forward(const Mat& x, MlpTape& tape) const {
  if (x.rows() != in_dim()) {
    throw InvalidInput("Mlp input width " + std::to_string(x.rows()) + " != " +
                       std::to_string(in_dim()));
  }
  const int layers = num_layers();
  tape.input = x;
  tape.pre.resize(layers);
  tape.post.resize(layers);
  const Mat* h = &tape.input;
  for (int l = 0; l < layers; ++l) {
    tape.pre[l] = weights_[l] * *h;
    tape.pre[l].colwise() += biases_[l];
    tape.post[l] = activate(tape.pre[l], l + 1 == layers);
    h = &tape.post[l];
  }
  return *h;
}

Mat Mlp::backward(const MlpTape& tape, const Mat& upstream, MlpGrads& grads) const {
  if (upstream.rows() != out_dim() || upstream.cols() != tape.input.cols()) {
    throw InvalidInput("Mlp backward: upstream shape mismatch");
  }
  Mat g = upstream;
  for (int l = num_layers() - 1; l >= 0; --l) {
    g.array() *= activate_grad(tape.pre[l], l + 1 == num_layers()).array();
    const Mat& h = l == 0 ? tape.input : tape.post[l - 1];
    grads.weights[l].noalias() += g * h.transpose();
    grads.biases[l] += g.rowwise().sum();
    g = weights_[l].transpose() * g;
  }
  return g;
}

Mat Mlp::jacobian(const Vec& x) const {
  MlpTape tape;
  forward(x, tape);
  Mat jac = Mat::Identity(in_dim(), in_dim());
  for (int l = 0; l < num_layers(); ++l) {
    const Vec da = activate_grad(tape.pre[l], l + 1 == num_layers()).col(0);
    jac = da.asDiagonal() * (weights_[l] * jac);
  }
  return jac;
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads g;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    g.weights.push_back(Mat::Zero(weights_[l].rows(), weights_[l].cols()));
    g.biases.push_back(Vec::Zero(biases_[l].size()));
  }
  return g;
}

namespace {

template <typename M>
void pack_one(const M& m, Vec& out, std::size_t& offset) {
  const auto n = static_cast<Eigen::Index>(m.size());
  out.segment(static_cast<Eigen::Index>(offset), n) = Eigen::Map<const Vec>(m.data(), n);
  offset += static_cast<std::size_t>(n);
}

template <typename M>
void unpack_one(M& m, const Vec& in, std::size_t& offset) {
  const auto n = static_cast<Eigen::Index>(m.size());
  Eigen::Map<Vec>(m.data(), n) = in.segment(static_cast<Eigen::Index>(offset), n);
  offset += static_cast<std::size_t>(n);
}

}  // namespace

void Mlp::pack(Vec& out, std::size_t& offset) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    pack_one(weights_[l], out, offset);
    pack_one(biases_[l], out, offset);
  }
}

void Mlp::unpack(const Vec& in, std::size_t& offset) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    unpack_one(weights_[l], in, offset);
    unpack_one(biases_[l], in, offset);
  }
}

void Mlp::pack(const MlpGrads& g, Vec& out, std::size_t& offset) {
  for (std::size_t l = 0; l < g.weights.size(); ++l) {
    pack_one(g.weights[l], out, offset);
    pack_one(g.biases[l], out, offset);
  }
}

nlohmann::json Mlp::header() const {
  return {{"widths", widths_},
          {"activation", to_string(activation_)},
          {"activate_output", activate_output_},
          {"seed", seed_}};
}

Mlp Mlp::from_header(const nlohmann::json& j) {
  Mlp m(j.at("widths").get<std::vector<int>>(),
        activation_from_string(j.at("activation").get<std::string>()),
        j.value("activate_output", false));
  m.seed_ = j.value("seed", std::uint64_t{0});
  return m;
}

double learning_rate(const AdamConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.decay, epoch);
}

AdamState::AdamState(std::size_t n, const AdamConfig& cfg)
    : config(cfg),
      m(Vec::Zero(static_cast<Eigen::Index>(n))),
      v(Vec::Zero(static_cast<Eigen::Index>(n))) {}

void adam_step(AdamState& state, Vec& params, const Vec& grads, int epoch) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw InvalidInput("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) {
    Eigen::Index bad = 0;
    for (; bad < grads.size() && std::isfinite(grads[bad]); ++bad) {
    }
    throw TrainingDiverged("non-finite gradient at parameter " + std::to_string(bad), "gradient",
                           epoch);
  }
  const AdamConfig& c = state.config;
  ++state.step;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double lr = learning_rate(c, epoch);
  params.array() -= lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.eps);
}

void save_mlp(const Mlp& mlp, const std::filesystem::path& base) {
  std::ofstream out(base.string() + ".json");
  out << mlp.header().dump(2) << '\n';
  Vec flat(static_cast<Eigen::Index>(mlp.num_params()));
  std::size_t off = 0;
  mlp.pack(flat, off);
  write_lsde(base.string() + ".bin", flat.transpose());
}

Mlp load_mlp(const std::filesystem::path& base) {
  std::ifstream in(base.string() + ".json");
  if (!in) throw NotFound("no checkpoint header at " + base.string() + ".json");
  Mlp mlp = Mlp::from_header(nlohmann::json::parse(in));
  const Mat blob = read_lsde(base.string() + ".bin");
  if (static_cast<std::size_t>(blob.size()) != mlp.num_params()) {
    throw InvalidInput("checkpoint parameter count does not match header");
  }
  const Vec flat = blob.transpose();
  std::size_t off = 0;
  mlp.unpack(flat, off);
  return mlp;
}

}  // namespace lsde
