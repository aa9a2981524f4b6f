#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "lsde/datasets.hpp"
#include "lsde/error.hpp"
#include "lsde/vae.hpp"
#include "oracles.hpp"

using namespace lsde;

namespace {

VaeConfig small_config(int n, int d, std::uint64_t seed = 1) {
  VaeConfig c;
  c.n = n;
  c.d = d;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  c.seed = seed;
  return c;
}

/// Affine decoder and drift, so the pair density is Gaussian.
VaeModel linear_model(int n, int d, double tau, std::uint64_t seed) {
  VaeConfig c = small_config(n, d, seed);
  c.decoder_hidden = {};
  c.drift_depth = 1;
  c.tau = tau;
  VaeModel m(c);
  m.decoder.bias(0) = oracle::normal_matrix(n, 1, seed + 9);
  m.drift.weight(0) = -0.5 * Mat::Identity(d, d) + 0.2 * oracle::normal_matrix(d, d, seed + 10);
  m.drift.bias(0) = oracle::normal_matrix(d, 1, seed + 11);
  return m;
}

}  // namespace

TEST(VaeEncode, ZeroedHeadsGiveLn2Identity) {
  VaeModel m(small_config(5, 3));
  m.mean_head.weight(0).setZero();
  m.chol_head.weight(0).setZero();
  const auto [mu, l] = m.encode(oracle::normal_matrix(5, 1, 2));
  EXPECT_TRUE(mu.isZero(0.0));
  EXPECT_TRUE(l.isApprox(std::log(2.0) * Mat::Identity(3, 3), 1e-15));
}

TEST(VaeEncode, CholeskyDiagonalPositiveAndLowerTriangular) {
  VaeModel m(small_config(4, 3));
  m.chol_head.bias(0).head(3).setConstant(-40.0);
  const Mat x = oracle::normal_matrix(4, 20, 3);
  for (int c = 0; c < 20; ++c) {
    const Mat l = m.encode(x.col(c)).second;
    EXPECT_TRUE((l.diagonal().array() > 0.0).all());
    EXPECT_TRUE(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0));
  }
}

TEST(VaeEncode, DiagonalOnlyModeHasNoOffDiagonal) {
  VaeConfig c = small_config(4, 3);
  c.full_covariance = false;
  VaeModel m(c);
  EXPECT_EQ(m.chol_size(), 3);
  const Mat l = m.encode(oracle::normal_matrix(4, 1, 4)).second;
  EXPECT_TRUE(Mat(l - Mat(l.diagonal().asDiagonal())).isZero(0.0));
}

TEST(VaeEncode, Deterministic) {
  const VaeModel a(small_config(6, 2, 9)), b(small_config(6, 2, 9));
  const Mat x = oracle::normal_matrix(6, 3, 5);
  const Encoding ea = a.encode_batch(x), eb = b.encode_batch(x);
  EXPECT_TRUE((ea.mean.array() == eb.mean.array()).all());
  EXPECT_TRUE((ea.chol_raw.array() == eb.chol_raw.array()).all());
}

TEST(VaeLoss, TransitionHandExample) {
  // d=1, L = 1, equal means, zero drift, dt = 1.
  VaeConfig c = small_config(1, 1);
  c.encoder_hidden = {};
  c.drift_depth = 1;
  VaeModel m(c);
  m.mean_head.weight(0).setZero();
  m.chol_head.weight(0).setZero();
  m.chol_head.bias(0)[0] = std::log(std::exp(1.0) - 1.0);  // softplus^-1(1)
  m.drift.weight(0).setZero();
  PairBatch b{Mat::Constant(1, 1, 0.3), Mat::Constant(1, 1, -0.2), Vec::Ones(1), Mat::Zero(1, 1),
              Mat::Zero(1, 1)};
  const LossBreakdown t = loss(m, b, false).terms;
  EXPECT_NEAR(t.transition, 1.0, 1e-14);
}

TEST(VaeLoss, EntropyWithIdentityFactorIsMinusD) {
  VaeConfig c = small_config(3, 2);
  VaeModel m(c);
  m.chol_head.weight(0).setZero();
  m.chol_head.bias(0) << std::log(std::exp(1.0) - 1.0), std::log(std::exp(1.0) - 1.0), 0.0;
  const PairBatch b = oracle::random_batch(3, 2, 4, 7);
  EXPECT_NEAR(loss(m, b, false).terms.entropy, -2.0, 1e-14);
}

TEST(VaeLoss, TotalIsSumOfTerms) {
  const VaeModel m = oracle::tiny_model(3, true);
  const LossBreakdown t = loss(m, oracle::random_batch(2, 1, 10, 8), false).terms;
  EXPECT_EQ(t.total, t.entropy + t.prior + t.transition + t.reconstruction + t.l1);
  EXPECT_NEAR(t.l1, 0.2 * 0.8, 1e-15);
}

TEST(VaeLoss, PriorWeightChangesTotalByPriorTerm) {
  VaeModel m = oracle::tiny_model(4, false);
  const PairBatch b = oracle::random_batch(2, 1, 10, 9);
  const LossBreakdown with = loss(m, b, false).terms;
  m.set_nu(0.0);
  const LossBreakdown without = loss(m, b, false).terms;
  EXPECT_EQ(without.prior, 0.0);
  EXPECT_NEAR(with.total - without.total, with.prior, 1e-12);
  EXPECT_EQ(with.transition, without.transition);
}

TEST(VaeLoss, PriorMatchesTraceAndMeanNorm) {
  VaeModel m(small_config(3, 2));
  m.set_nu(0.7);
  const PairBatch b = oracle::random_batch(3, 2, 1, 10);
  const auto [mu, l] = m.encode(b.x0.col(0));
  const double expected = 0.35 * ((l * l.transpose()).trace() + mu.squaredNorm());
  EXPECT_NEAR(loss(m, b, false).terms.prior, expected, 1e-13);
}

TEST(VaeLoss, NonFiniteInputIsNamedDivergence) {
  const VaeModel m = oracle::tiny_model(5, false);
  PairBatch b = oracle::random_batch(2, 1, 3, 11);
  b.x1(0, 1) = std::nan("");
  const LossBreakdown t = loss(m, b, false).terms;
  try {
    check_finite(t, 12);
    FAIL();
  } catch (const TrainingDiverged& e) {
    // NaN input poisons the encoder, so the first term reported is entropy.
    EXPECT_EQ(e.term(), "entropy");
    EXPECT_EQ(e.epoch(), 12);
  }
  LossBreakdown only;
  only.transition = INFINITY;
  try {
    check_finite(only, 0);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.term(), "transition");
  }
}

TEST(VaeLoss, RejectsBadShapesAndDt) {
  const VaeModel m = oracle::tiny_model(5, false);
  PairBatch b = oracle::random_batch(3, 1, 3, 12);
  EXPECT_THROW(loss(m, b, false), InvalidInput);
  b = oracle::random_batch(2, 1, 3, 12);
  b.dt[1] = 0.0;
  EXPECT_THROW(loss(m, b, false), InvalidInput);
}

TEST(VaeLoss, GradientMatchesFiniteDifferences) {
  for (bool diag : {false, true}) {
    const VaeModel m = oracle::tiny_model(21, diag);
    const auto probes = oracle::loss_gradient_probes(m, oracle::random_batch(2, 1, 7, 13), 25, 77);
    for (const auto& p : probes) EXPECT_LE(p.rel_error, 1e-4) << p.analytic << " vs " << p.numeric;
  }
}

TEST(VaeLoss, GradientMatchesFiniteDifferencesFullCovariance) {
  VaeConfig c = small_config(4, 3, 31);
  c.activation = Activation::kTanh;
  c.tau = 0.3;
  c.nu = 0.2;
  c.diffusion_diag = true;
  c.lambda1 = 0.1;
  VaeModel m(c);
  m.diffusion << 0.7, -1.2, 0.9;
  const auto probes = oracle::loss_gradient_probes(m, oracle::random_batch(4, 3, 9, 14), 15, 78);
  for (const auto& p : probes) EXPECT_LE(p.rel_error, 1e-4) << p.analytic << " vs " << p.numeric;
}

TEST(VaeLoss, TermsMatchMonteCarlo) {
  for (int i = 0; i < 4; ++i) {
    const oracle::McConfig cfg = oracle::mc_config(i);
    const auto r = oracle::loss_term_checks(cfg.model, cfg.x0, cfg.x1, cfg.dt, 40000, 500 + i);
    EXPECT_TRUE(r.entropy.within(3)) << i << ": " << r.entropy.closed << " vs " << r.entropy.mc_mean;
    EXPECT_TRUE(r.prior.within(3)) << i << ": " << r.prior.closed << " vs " << r.prior.mc_mean;
    EXPECT_TRUE(r.transition.within(3)) << i << ": " << r.transition.closed << " vs " << r.transition.mc_mean;
    EXPECT_TRUE(r.reconstruction.within(3))
        << i << ": " << r.reconstruction.closed << " vs " << r.reconstruction.mc_mean;
  }
}

TEST(VaeLoss, SlopedDriftTransitionBiasIsTraceCorrection) {
  // With mu(z) = M z + c the closed form drops tr(M S0) + (dt/2) tr(M S0 M^T).
  oracle::McConfig cfg = oracle::mc_config(5);
  VaeModel& m = cfg.model;
  const int d = m.d();
  VaeConfig c = m.config();
  c.drift_depth = 1;
  c.diffusion_diag = false;
  VaeModel lin(c);
  lin.encoder_body = m.encoder_body;
  lin.mean_head = m.mean_head;
  lin.chol_head = m.chol_head;
  lin.decoder = m.decoder;
  const Mat slope = oracle::normal_matrix(d, d, 901);
  lin.drift.weight(0) = slope;
  lin.drift.bias(0) = oracle::normal_matrix(d, 1, 902);
  const auto r = oracle::loss_term_checks(lin, cfg.x0, cfg.x1, cfg.dt, 100000, 903);
  const Mat l0 = lin.encode(cfg.x0).second;
  const Mat s0 = l0 * l0.transpose();
  const double bias = (slope * s0).trace() + 0.5 * cfg.dt * (slope * s0 * slope.transpose()).trace();
  EXPECT_LE(std::abs(r.transition.closed + bias - r.transition.mc_mean), 3 * r.transition.mc_se);
}

TEST(VaeTrain, ZeroEpochsLeavesModelUnchanged) {
  const PairedDataset data = [] {
    GenerateOptions o;
    o.spec_name = "ou2d";
    o.n_steps = 150;
    o.seed = 3;
    return generate(o, make_ambient_map(MapKind::kLinear, 2, 4, 5));
  }();
  VaeModel m(small_config(4, 2));
  const Vec before = m.params();
  TrainConfig t;
  t.epochs = 0;
  const TrainResult r = train(m, data, t);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.best_epoch, -1);
  EXPECT_TRUE((m.params().array() == before.array()).all());
}

TEST(VaeTrain, LinearModelValidationDecreases) {
  GenerateOptions o;
  o.spec_name = "ou1d";
  o.n_steps = 400;
  o.seed = 4;
  const PairedDataset data = generate(o, make_ambient_map(MapKind::kLinear, 1, 2, 6));
  VaeConfig c = small_config(2, 1, 8);
  c.encoder_hidden = {};
  c.decoder_hidden = {};
  c.activation = Activation::kIdentity;
  VaeModel m(c);
  TrainConfig t;
  t.epochs = 10;
  t.adam.lr = 1e-2;
  const TrainResult r = train(m, data, t);
  ASSERT_EQ(r.log.size(), 10u);
  for (std::size_t e = 1; e < r.log.size(); ++e) {
    EXPECT_LT(r.log[e].val_total, r.log[e - 1].val_total) << "epoch " << e;
  }
  EXPECT_EQ(r.best_epoch, 9);
}

TEST(VaeTrain, DeterministicAndRestoresBest) {
  GenerateOptions o;
  o.spec_name = "ou2d";
  o.n_steps = 200;
  o.seed = 5;
  const PairedDataset data = generate(o, make_ambient_map(MapKind::kRandomSmooth, 2, 6, 7));
  TrainConfig t;
  t.epochs = 15;
  t.val = 50;
  t.batch_size = 64;
  VaeModel a(small_config(6, 2, 3)), b(small_config(6, 2, 3));
  const TrainResult ra = train(a, data, t);
  const TrainResult rb = train(b, data, t);
  EXPECT_TRUE((a.params().array() == b.params().array()).all());
  EXPECT_EQ(ra.best_val, rb.best_val);
  double best = 1e300;
  for (const auto& e : ra.log) best = std::min(best, e.val_total);
  EXPECT_LE(ra.best_val, best);
}

TEST(VaeTrain, RejectsOversizedValidationAndWidthMismatch) {
  GenerateOptions o;
  o.spec_name = "ou1d";
  o.n_steps = 50;
  const PairedDataset data = generate(o, make_ambient_map(MapKind::kLinear, 1, 2, 6));
  VaeModel m(small_config(2, 1));
  TrainConfig t;
  t.val = 50;
  EXPECT_THROW(train(m, data, t), ConfigError);
  VaeModel wide(small_config(3, 1));
  t.val = 10;
  EXPECT_THROW(train(wide, data, t), InvalidInput);
}

TEST(VaeTrain, LossLogHasHeader) {
  const auto path = std::filesystem::temp_directory_path() / "lsde_loss_log.csv";
  EpochLog e;
  e.epoch = 3;
  write_loss_log({e}, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,entropy,prior,transition,reconstruction,l1,total,val_total");
}

TEST(VaeGenerate, TinyStepKeepsObservations) {
  VaeModel m(small_config(5, 2));
  m.set_tau(0.0);
  const int last = m.drift.num_layers() - 1;
  m.drift.weight(last).setZero();
  m.drift.bias(last).setZero();
  const GeneratedPairs g = generate_pairs(m, oracle::normal_matrix(2, 50, 1), 1e-12, 2);
  EXPECT_LE((g.x1 - g.x0).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(VaeGenerate, LinearDecoderPairsStayInColumnSpace) {
  VaeModel m = linear_model(6, 2, 0.01, 3);
  m.set_tau(0.0);
  m.decoder.bias(0).setZero();
  const GeneratedPairs g = generate_pairs(m, oracle::normal_matrix(2, 200, 2), 0.1, 4);
  Mat both(6, 400);
  both << g.x0, g.x1;
  const Eigen::JacobiSVD<Mat> svd(both);
  const Vec s = svd.singularValues();
  EXPECT_LE(s[2], 1e-12 * s[0]);
  EXPECT_GT(s[1], 1e-3 * s[0]);
}

TEST(VaeGenerate, IncrementCovarianceIsDtIdentity) {
  VaeModel m(small_config(3, 2));
  const int last = m.drift.num_layers() - 1;
  m.drift.weight(last).setZero();
  const double dt = 0.04;
  const GeneratedPairs g = generate_pairs(m, oracle::normal_matrix(2, 100000, 5), dt, 6);
  const Mat inc = g.z1 - g.z0;
  const Mat centered = inc.colwise() - inc.rowwise().mean();
  const Mat cov = centered * centered.transpose() / (inc.cols() - 1.0);
  EXPECT_NEAR(cov(0, 0), dt, 0.05 * dt);
  EXPECT_NEAR(cov(1, 1), dt, 0.05 * dt);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.05 * dt);
}

TEST(VaeGenerate, DiagonalDiffusionScalesIncrements) {
  VaeConfig c = small_config(3, 2);
  c.diffusion_diag = true;
  VaeModel m(c);
  m.diffusion << 2.0, -0.5;
  const int last = m.drift.num_layers() - 1;
  m.drift.weight(last).setZero();
  m.drift.bias(last).setZero();
  const GeneratedPairs g = generate_pairs(m, Mat::Zero(2, 100000), 1.0, 7);
  const Vec var = g.z1.array().square().rowwise().mean();
  EXPECT_NEAR(var[0], 4.0, 0.2);
  EXPECT_NEAR(var[1], 0.25, 0.0125);
}

TEST(VaeIsometry, PairDensityInvariant) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const VaeModel m = linear_model(5, 3, 0.05, 40 + s);
    const Mat q = oracle::rotation(3, 50 + s);
    const Vec b = oracle::normal_matrix(3, 1, 60 + s);
    const VaeModel moved = m.isometry(q, b);
    const Vec pm = oracle::normal_matrix(3, 1, 70 + s);
    const Mat pc = 0.5 * Mat::Identity(3, 3);
    const GeneratedPairs g = generate_pairs(m, oracle::normal_matrix(3, 20, 80 + s), 0.1, 90 + s);
    for (int c = 0; c < 20; ++c) {
      const double a = linear_pair_log_density(m, pm, pc, g.x0.col(c), g.x1.col(c), 0.1);
      const double bb = linear_pair_log_density(moved, q * pm + b, q * pc * q.transpose(),
                                                g.x0.col(c), g.x1.col(c), 0.1);
      EXPECT_NEAR(a, bb, 1e-8);
    }
  }
}

TEST(VaeIsometry, DensityMatchesDirectGaussian) {
  // d = 1, n = 1 by hand: z0 ~ N(0, 1), z1 = (1 + m dt) z0 + c dt + sqrt(dt) xi.
  VaeModel m = linear_model(1, 1, 0.2, 3);
  m.decoder.weight(0)(0, 0) = 2.0;
  m.decoder.bias(0)[0] = 0.5;
  m.drift.weight(0)(0, 0) = -1.0;
  m.drift.bias(0)[0] = 0.3;
  const double dt = 0.5, bcoef = 0.5;
  Mat cov(2, 2);
  cov << 4 + 0.2, 4 * bcoef, 4 * bcoef, 4 * (bcoef * bcoef + dt) + 0.2;
  Vec mean(2);
  mean << 0.5, 0.5 + 2 * 0.3 * dt;
  Vec x(2);
  x << 0.9, -0.4;
  const Vec r = x - mean;
  const double expected =
      -0.5 * (r.dot(cov.inverse() * r) + std::log(cov.determinant()) + 2 * std::log(2 * M_PI));
  EXPECT_NEAR(linear_pair_log_density(m, Vec::Zero(1), Mat::Identity(1, 1), x.head(1), x.tail(1), dt),
              expected, 1e-12);
}

TEST(VaeIsometry, NonlinearDecoderRejected) {
  const VaeModel m(small_config(3, 2));
  EXPECT_THROW(linear_pair_log_density(m, Vec::Zero(2), Mat::Identity(2, 2), Vec::Zero(3),
                                       Vec::Zero(3), 0.1),
               InvalidInput);
}

TEST(VaeIsometry, NonlinearModelMovesConsistently) {
  // f'(Qz + b) = f(z) and mu'(Qz + b) = Q mu(z).
  const VaeModel m(small_config(4, 3, 5));
  const Mat q = oracle::rotation(3, 6);
  const Vec b = oracle::normal_matrix(3, 1, 7);
  const VaeModel moved = m.isometry(q, b);
  const Mat z = oracle::normal_matrix(3, 10, 8);
  const Mat zq = (q * z).colwise() + b;
  EXPECT_LE((moved.decode(zq) - m.decode(z)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((moved.drift_at(zq) - q * m.drift_at(z)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VaeModelIo, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "lsde_model_rt";
  VaeConfig c = small_config(5, 2, 11);
  c.diffusion_diag = true;
  c.lambda1 = 0.5;
  VaeModel m(c);
  m.diffusion << 0.3, 2.0;
  save_model(m, dir);
  const VaeModel back = load_model(dir);
  EXPECT_EQ(to_json(back.config()), to_json(m.config()));
  EXPECT_TRUE((back.params().array() == m.params().array()).all());
}

TEST(VaeConfigJson, RoundTrip) {
  VaeConfig c = small_config(7, 3, 12);
  c.activation = Activation::kTanh;
  c.full_covariance = false;
  EXPECT_EQ(to_json(vae_config_from_json(to_json(c))), to_json(c));
  TrainConfig t;
  t.epochs = 9;
  t.adam.decay = 0.5;
  t.batch_size = 3;
  EXPECT_EQ(to_json(train_config_from_json(to_json(t))), to_json(t));
}

TEST(VaeConfigJson, InvalidModelIsRejected) {
  VaeConfig c = small_config(3, 0);
  EXPECT_THROW(VaeModel{c}, InvalidInput);
  c.d = 1;
  c.tau = 0.0;
  EXPECT_THROW(VaeModel{c}, InvalidInput);
}
