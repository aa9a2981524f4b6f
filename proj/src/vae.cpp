#include "lsde/vae.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "lsde/error.hpp"
#include "lsde/kernels.hpp"
#include "lsde/lsde_io.hpp"
#include "lsde/rng.hpp"

namespace lsde {

nlohmann::json to_json(const VaeConfig& c) {
  return {{"n", c.n},
          {"d", c.d},
          {"encoder_hidden", c.encoder_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"activation", to_string(c.activation)},
          {"drift_width", c.drift_width},
          {"drift_depth", c.drift_depth},
          {"drift_activation", to_string(c.drift_activation)},
          {"tau", c.tau},
          {"nu", c.nu},
          {"diffusion_diag", c.diffusion_diag},
          {"lambda1", c.lambda1},
          {"full_covariance", c.full_covariance},
          {"seed", c.seed}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.n = j.value("n", c.n);
  c.d = j.value("d", c.d);
  c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
  c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
  c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
  c.drift_width = j.value("drift_width", c.drift_width);
  c.drift_depth = j.value("drift_depth", c.drift_depth);
  c.drift_activation =
      activation_from_string(j.value("drift_activation", to_string(c.drift_activation)));
  c.tau = j.value("tau", c.tau);
  c.nu = j.value("nu", c.nu);
  c.diffusion_diag = j.value("diffusion_diag", c.diffusion_diag);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.full_covariance = j.value("full_covariance", c.full_covariance);
  c.seed = j.value("seed", c.seed);
  return c;
}

VaeModel::VaeModel(const VaeConfig& cfg) : cfg_(cfg) {
  if (cfg.d < 1 || cfg.n < 1) throw InvalidInput("model needs d >= 1 and n >= 1");
  if (!(cfg.tau > 0.0)) throw InvalidInput("tau must be positive");
  if (cfg.nu < 0.0 || cfg.lambda1 < 0.0) throw InvalidInput("nu and lambda1 must be >= 0");
  if (cfg.drift_depth < 1 || cfg.drift_width < 1) throw InvalidInput("bad drift network shape");

  std::vector<int> body{cfg.n};
  body.insert(body.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
  encoder_body = Mlp(body, cfg.activation, true);
  const int h = body.back();
  mean_head = Mlp({h, cfg.d}, Activation::kIdentity);
  chol_head = Mlp({h, chol_size()}, Activation::kIdentity);

  std::vector<int> dec{cfg.d};
  dec.insert(dec.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
  dec.push_back(cfg.n);
  decoder = Mlp(dec, cfg.activation);

  std::vector<int> dr{cfg.d};
  for (int i = 1; i < cfg.drift_depth; ++i) dr.push_back(cfg.drift_width);
  dr.push_back(cfg.d);
  drift = Mlp(dr, cfg.drift_activation);

  const std::uint64_t s = cfg.seed;
  encoder_body.init(splitmix64(s ^ 1), Init::kKaiming);
  mean_head.init(splitmix64(s ^ 2), Init::kKaiming);
  chol_head.init(splitmix64(s ^ 3), Init::kKaiming);
  decoder.init(splitmix64(s ^ 4), Init::kKaiming);
  drift.init(splitmix64(s ^ 5), Init::kXavier, 0.5);
  if (cfg.diffusion_diag) diffusion = Vec::Ones(cfg.d);
}

int VaeModel::chol_size() const {
  return cfg_.full_covariance ? cfg_.d * (cfg_.d + 1) / 2 : cfg_.d;
}

Mat VaeModel::chol(const Vec& raw) const {
  const int d = cfg_.d;
  Mat l = Mat::Zero(d, d);
  for (int k = 0; k < d; ++k) l(k, k) = softplus(raw[k]);
  if (cfg_.full_covariance) {
    int idx = d;
    for (int i = 1; i < d; ++i) {
      for (int k = 0; k < i; ++k) l(i, k) = raw[idx++];
    }
  }
  return l;
}

Encoding VaeModel::encode_batch(const Mat& x) const {
  if (x.rows() != cfg_.n) throw InvalidInput("encode: input width does not match model n");
  const Mat h = encoder_body.forward(x);
  return {mean_head.forward(h), chol_head.forward(h)};
}

std::pair<Vec, Mat> VaeModel::encode(const Vec& x) const {
  const Encoding e = encode_batch(x);
  return {e.mean.col(0), chol(e.chol_raw.col(0))};
}

std::size_t VaeModel::num_params() const {
  return encoder_body.num_params() + mean_head.num_params() + chol_head.num_params() +
         decoder.num_params() + drift.num_params() + static_cast<std::size_t>(diffusion.size());
}

Vec VaeModel::params() const {
  Vec p(static_cast<Eigen::Index>(num_params()));
  std::size_t off = 0;
  encoder_body.pack(p, off);
  mean_head.pack(p, off);
  chol_head.pack(p, off);
  decoder.pack(p, off);
  drift.pack(p, off);
  p.segment(static_cast<Eigen::Index>(off), diffusion.size()) = diffusion;
  return p;
}

void VaeModel::set_params(const Vec& p) {
  if (static_cast<std::size_t>(p.size()) != num_params()) {
    throw InvalidInput("set_params: wrong parameter count");
  }
  std::size_t off = 0;
  encoder_body.unpack(p, off);
  mean_head.unpack(p, off);
  chol_head.unpack(p, off);
  decoder.unpack(p, off);
  drift.unpack(p, off);
  diffusion = p.segment(static_cast<Eigen::Index>(off), diffusion.size());
}

VaeModel VaeModel::isometry(const Mat& q, const Vec& b) const {
  if (q.rows() != d() || q.cols() != d() || b.size() != d()) {
    throw InvalidInput("isometry: Q must be d x d and b length d");
  }
  VaeModel out = *this;
  // Pre-composition with z -> Q^T (z - b) folds into the first layer.
  auto precompose = [&](Mlp& net) {
    if (net.num_layers() == 0) throw InvalidInput("isometry: network has no layers");
    net.bias(0) -= net.weight(0) * q.transpose() * b;
    net.weight(0) = net.weight(0) * q.transpose();
  };
  precompose(out.decoder);
  precompose(out.drift);
  const int last = out.drift.num_layers() - 1;
  out.drift.weight(last) = q * out.drift.weight(last);
  out.drift.bias(last) = q * out.drift.bias(last);
  if (out.drift.activate_output() && out.drift.activation() != Activation::kIdentity) {
    throw InvalidInput("isometry: drift output must be affine");
  }
  return out;
}

LossEval loss(const VaeModel& model, const PairBatch& batch, bool want_grad) {
  LossEval out = loss_terms_parallel(model, batch, want_grad);
  if (model.config().diffusion_diag) {
    const double lam = model.config().lambda1;
    out.terms.l1 = lam * model.diffusion.cwiseAbs().sum();
    if (want_grad) {
      const auto off = static_cast<Eigen::Index>(model.num_params()) - model.diffusion.size();
      for (Eigen::Index i = 0; i < model.diffusion.size(); ++i) {
        const double di = model.diffusion[i];
        out.grad[off + i] += lam * (di > 0.0 ? 1.0 : (di < 0.0 ? -1.0 : 0.0));
      }
    }
  }
  out.terms.finalize();
  return out;
}

void check_finite(const LossBreakdown& t, int epoch) {
  const std::pair<const char*, double> terms[] = {{"entropy", t.entropy},
                                                  {"prior", t.prior},
                                                  {"transition", t.transition},
                                                  {"reconstruction", t.reconstruction},
                                                  {"l1", t.l1}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw TrainingDiverged(std::string("non-finite ") + name + " term at epoch " +
                                 std::to_string(epoch),
                             name, epoch);
    }
  }
}

Mat reparam_noise(std::uint64_t seed, Stream stream, int epoch, int time_point,
                  std::size_t first, Eigen::Index count, int d) {
  const CounterRng rng(splitmix64(seed + static_cast<std::uint64_t>(epoch)), stream);
  Mat eta(d, count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const std::uint64_t base =
        ((first + static_cast<std::uint64_t>(c)) * 2 + static_cast<std::uint64_t>(time_point)) *
        static_cast<std::uint64_t>(d);
    for (int k = 0; k < d; ++k) eta(k, c) = rng.normal(base + k);
  }
  return eta;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"lr", c.adam.lr},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"decay", c.adam.decay},
          {"val", c.val},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.adam.lr = j.value("lr", c.adam.lr);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.adam.decay = j.value("decay", c.adam.decay);
  c.val = j.value("val", c.val);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

PairBatch make_batch(const PairedDataset& data, std::size_t begin, std::size_t end,
                     std::uint64_t seed, Stream stream, int epoch, int d) {
  PairBatch b;
  const auto b0 = static_cast<Eigen::Index>(begin);
  const auto len = static_cast<Eigen::Index>(end - begin);
  b.x0 = data.x0.middleCols(b0, len);
  b.x1 = data.x1.middleCols(b0, len);
  b.dt = data.dt.segment(b0, len);
  b.eta0 = reparam_noise(seed, stream, epoch, 0, begin, len, d);
  b.eta1 = reparam_noise(seed, stream, epoch, 1, begin, len, d);
  return b;
}

}  // namespace

TrainResult train(VaeModel& model, const PairedDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (data.ambient_dim() != model.n()) {
    throw InvalidInput("dataset ambient width " + std::to_string(data.ambient_dim()) +
                       " != model n " + std::to_string(model.n()));
  }
  if (cfg.epochs < 0 || cfg.val < 0 || cfg.batch_size < 0) {
    throw ConfigError("epochs, val and batch_size must be non-negative");
  }
  const std::size_t total = data.size();
  const auto val = static_cast<std::size_t>(cfg.val);
  if (val >= total) throw ConfigError("validation size must be smaller than the dataset");
  const std::size_t n_train = total - val;
  const int d = model.d();

  PairBatch val_batch;
  if (val > 0) val_batch = make_batch(data, n_train, total, cfg.seed, Stream::kValidationReparam, 0, d);

  TrainResult result;
  Vec params = model.params();
  Vec best = params;
  if (val > 0) {
    const LossEval v = loss(model, val_batch, false);
    check_finite(v.terms, -1);
    result.best_val = v.terms.total;
  }
  AdamState adam(params.size(), cfg.adam);
  const std::size_t step = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : n_train;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    double seen = 0.0;
    for (std::size_t begin = 0; begin < n_train; begin += step) {
      const std::size_t end = std::min(n_train, begin + step);
      const PairBatch batch = make_batch(data, begin, end, cfg.seed, Stream::kReparam, epoch, d);
      const LossEval l = loss(model, batch, true);
      check_finite(l.terms, epoch);
      adam_step(adam, params, l.grad, epoch);
      model.set_params(params);
      const double wgt = static_cast<double>(end - begin);
      entry.train.entropy += wgt * l.terms.entropy;
      entry.train.prior += wgt * l.terms.prior;
      entry.train.transition += wgt * l.terms.transition;
      entry.train.reconstruction += wgt * l.terms.reconstruction;
      entry.train.l1 += wgt * l.terms.l1;
      seen += wgt;
    }
    entry.train.entropy /= seen;
    entry.train.prior /= seen;
    entry.train.transition /= seen;
    entry.train.reconstruction /= seen;
    entry.train.l1 /= seen;
    entry.train.finalize();

    if (val > 0) {
      const LossEval v = loss(model, val_batch, false);
      check_finite(v.terms, epoch);
      entry.val_total = v.terms.total;
      if (v.terms.total < result.best_val) {
        result.best_val = v.terms.total;
        result.best_epoch = epoch;
        best = params;
      }
    } else {
      entry.val_total = entry.train.total;
      result.best_epoch = epoch;
      best = params;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  model.set_params(best);
  return result;
}

void write_loss_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) throw InvalidInput("cannot write " + csv.string());
  out.precision(17);
  out << "epoch,entropy,prior,transition,reconstruction,l1,total,val_total\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train.entropy << ',' << e.train.prior << ',' << e.train.transition
        << ',' << e.train.reconstruction << ',' << e.train.l1 << ',' << e.train.total << ','
        << e.val_total << '\n';
  }
}

GeneratedPairs generate_pairs(const VaeModel& model, const Mat& z0, double dt,
                              std::uint64_t seed) {
  if (z0.rows() != model.d()) throw InvalidInput("generate_pairs: z0 rows must equal d");
  if (!(dt > 0.0)) throw InvalidInput("generate_pairs: dt must be positive");
  const int d = model.d();
  const CounterRng wiener(seed, Stream::kWiener);
  const CounterRng obs(seed, Stream::kObservationNoise);
  Vec scale = Vec::Ones(d);
  if (model.config().diffusion_diag) scale = model.diffusion.cwiseAbs();

  GeneratedPairs out;
  out.z0 = z0;
  out.z1 = z0 + model.drift_at(z0) * dt;
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (int k = 0; k < d; ++k) {
      out.z1(k, c) += std::sqrt(dt) * scale[k] * wiener.normal(static_cast<std::uint64_t>(c) * d + k);
    }
  }
  out.x0 = model.decode(out.z0);
  out.x1 = model.decode(out.z1);
  const double sd = std::sqrt(model.config().tau);
  const auto n = static_cast<std::uint64_t>(model.n());
  for (Eigen::Index c = 0; c < z0.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.x0.rows(); ++r) {
      const std::uint64_t idx = (static_cast<std::uint64_t>(c) * n + r) * 2;
      out.x0(r, c) += sd * obs.normal(idx);
      out.x1(r, c) += sd * obs.normal(idx + 1);
    }
  }
  return out;
}

namespace {

bool is_affine(const Mlp& net) {
  return net.num_layers() <= 1 ? !(net.activate_output() && net.activation() != Activation::kIdentity)
                               : net.activation() == Activation::kIdentity;
}

}  // namespace

double linear_pair_log_density(const VaeModel& model, const Vec& prior_mean,
                               const Mat& prior_cov, const Vec& x0, const Vec& x1, double dt) {
  if (!is_affine(model.decoder) || !is_affine(model.drift)) {
    throw InvalidInput("closed-form pair density needs an affine decoder and drift");
  }
  const int d = model.d();
  const int n = model.n();
  const Vec zero = Vec::Zero(d);
  const Mat a = model.decoder.jacobian(zero);
  const Vec a0 = model.decoder.forward(zero);
  const Mat mj = model.drift.jacobian(zero);
  const Vec c = model.drift.forward(zero);
  Vec dscale = Vec::Ones(d);
  if (model.config().diffusion_diag) dscale = model.diffusion.cwiseAbs();

  // z1 = B z0 + c dt + sqrt(dt) D xi
  const Mat bmat = Mat::Identity(d, d) + dt * mj;
  Mat zcov(2 * d, 2 * d);
  zcov.topLeftCorner(d, d) = prior_cov;
  zcov.topRightCorner(d, d) = prior_cov * bmat.transpose();
  zcov.bottomLeftCorner(d, d) = bmat * prior_cov;
  zcov.bottomRightCorner(d, d) =
      bmat * prior_cov * bmat.transpose() + Mat(dt * dscale.cwiseAbs2().asDiagonal());
  Vec zmean(2 * d);
  zmean.head(d) = prior_mean;
  zmean.tail(d) = bmat * prior_mean + c * dt;

  Mat big = Mat::Zero(2 * n, 2 * d);
  big.topLeftCorner(n, d) = a;
  big.bottomRightCorner(n, d) = a;
  const Mat cov = big * zcov * big.transpose() + model.config().tau * Mat::Identity(2 * n, 2 * n);
  Vec mean = big * zmean;
  mean.head(n) += a0;
  mean.tail(n) += a0;
  Vec x(2 * n);
  x << x0, x1;

  const Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw DegenerateData("pair covariance is not positive definite");
  const Vec white = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (white.squaredNorm() + logdet + 2.0 * n * std::log(2.0 * std::numbers::pi));
}

void save_model(const VaeModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["config"] = to_json(model.config());
  j["networks"] = {{"encoder_body", model.encoder_body.header()},
                   {"mean_head", model.mean_head.header()},
                   {"chol_head", model.chol_head.header()},
                   {"decoder", model.decoder.header()},
                   {"drift", model.drift.header()}};
  j["num_params"] = model.num_params();
  std::ofstream out(dir / "model.json");
  out << j.dump(2) << '\n';
  write_lsde(dir / "params.bin", model.params().transpose());
}

VaeModel load_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "model.json");
  if (!in) throw NotFound("no model.json in " + dir.string());
  const auto j = nlohmann::json::parse(in);
  VaeModel model(vae_config_from_json(j.at("config")));
  const Mat blob = read_lsde(dir / "params.bin");
  if (static_cast<std::size_t>(blob.size()) != model.num_params()) {
    throw InvalidInput("params.bin size does not match model.json");
  }
  model.set_params(blob.transpose());
  return model;
}

}  // namespace lsde
