#include <cmath>

#include <gtest/gtest.h>

#include "lsde/error.hpp"
#include "lsde/lamperti.hpp"
#include "lsde/rng.hpp"

using namespace lsde;

namespace {

SdeSpec diag_spec(std::function<Mat(const Vec&)> sigma, int dim) {
  SdeSpec s;
  s.name = "custom";
  s.dim = dim;
  s.drift = [dim](const Vec&, double) -> Vec { return Vec::Zero(dim); };
  s.diffusion = [sigma](const Vec& y, double) { return sigma(y); };
  return s;
}

// Third coordinate of the anisotropic catalog example on its own.
SdeSpec cir_like() {
  SdeSpec s;
  s.name = "cir_like";
  s.dim = 1;
  s.drift = [](const Vec& y, double) -> Vec { return Vec::Constant(1, 0.6 - 0.3 * y[0]); };
  s.diffusion = [](const Vec& y, double) -> Mat { return Mat::Constant(1, 1, std::sqrt(y[0])); };
  return s;
}

}  // namespace

TEST(CheckReducible, IdentityIsReducibleWithZeroResidual) {
  const SdeSpec s = catalog("ou3d");
  const auto grid = default_probe_grid(Vec::Zero(3));
  const auto rep = check_reducible(s, grid);
  EXPECT_TRUE(rep.reducible);
  EXPECT_EQ(rep.max_curl_residual, 0.0);
  EXPECT_EQ(rep.points.size(), grid.size());
}

TEST(CheckReducible, SeparableDiagonalIsReducible) {
  const SdeSpec s = diag_spec(
      [](const Vec& y) {
        Mat m = Mat::Zero(2, 2);
        m(0, 0) = 1 + y[0] * y[0];
        m(1, 1) = 1 + y[1] * y[1];
        return m;
      },
      2);
  const auto rep = check_reducible(s, default_probe_grid(Vec{{0.3, -0.5}}));
  EXPECT_TRUE(rep.reducible) << rep.failure;
  EXPECT_LE(rep.max_curl_residual, 1e-8);
}

TEST(CheckReducible, CrossDependentDiagonalIsNotReducible) {
  // sigma = I + 0.5 y_1 e_2 e_2^T. Symbolically the (j=1,k=2) curl term is
  // d sigma/dy_1 sigma^{-1} e_2 = 0.5 / (1 + 0.5 y_1) e_2, and the other side is 0.
  const SdeSpec s = diag_spec(
      [](const Vec& y) {
        Mat m = Mat::Identity(2, 2);
        m(1, 1) += 0.5 * y[0];
        return m;
      },
      2);
  const auto grid = default_probe_grid(Vec::Zero(2));
  const auto rep = check_reducible(s, grid);
  EXPECT_FALSE(rep.reducible);
  for (const auto& p : rep.points) {
    EXPECT_NEAR(p.curl_residual, 0.5 / (1.0 + 0.5 * p.y[0]), 1e-7);
  }
}

TEST(CheckReducible, SingularSigmaIsAViolationNotAnException) {
  const auto grid = default_probe_grid(Vec::Zero(1));
  ReducibilityReport rep;
  ASSERT_NO_THROW(rep = check_reducible(catalog("gbm1d"), grid));
  EXPECT_FALSE(rep.reducible);
  bool flagged = false;
  for (const auto& p : rep.points) flagged |= p.singular && p.y[0] == 0.0;
  EXPECT_TRUE(flagged);
  EXPECT_FALSE(rep.failure.empty());
}

TEST(CheckReducible, AnisotropicBlockFailsSpd) {
  const auto rep = check_reducible(catalog("anisotropic3d"), default_probe_grid(Vec{{0, 0, 1}}));
  EXPECT_FALSE(rep.reducible);
}

TEST(GaussLegendre, IntegratesPolynomialsExactly) {
  const Quadrature q = gauss_legendre_unit(8);
  // Exact for degree <= 15: int_0^1 x^k = 1/(k+1).
  for (int k = 0; k <= 15; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) s += q.weights[i] * std::pow(q.nodes[i], k);
    EXPECT_NEAR(s, 1.0 / (k + 1), 1e-15) << k;
  }
}

TEST(LampertiMapTest, IsotropicIsShiftAndDriftUnchanged) {
  const LampertiMap m = LampertiMap::build(catalog("ou2d"));
  const Vec y{{0.4, -1.3}};
  EXPECT_LE((m.h(y, 0) - y).norm(), 1e-15);
  EXPECT_LE((m.g(y, 0) - y).norm(), 1e-15);
  const Vec mt = m.transformed_drift(y, 0);
  EXPECT_LE((mt - (-4.0 * y)).norm(), 1e-12);
}

TEST(LampertiMapTest, GbmIsLogAndZeroDrift) {
  LampertiOptions o;
  o.base_point = Vec::Constant(1, 1.0);
  const LampertiMap m = LampertiMap::build(catalog("gbm1d"), o);
  for (double y : {0.2, 0.5, 1.0, 2.0, 5.0}) {
    EXPECT_NEAR(m.h(Vec::Constant(1, y), 0)[0], std::log(y), 1e-13);
    EXPECT_NEAR(m.g(Vec::Constant(1, std::log(y)), 0)[0], y, 1e-10 * y);
    const double z = std::log(y);
    EXPECT_LE(std::abs(m.transformed_drift(Vec::Constant(1, z), 0)[0]), 1e-6);
  }
}

TEST(LampertiMapTest, GbmNeedsPositiveBasePoint) {
  EXPECT_THROW(LampertiMap::build(catalog("gbm1d")), InvalidInput);
}

TEST(LampertiMapTest, CirCoordinateMatchesClosedForm) {
  LampertiOptions o;
  o.base_point = Vec::Constant(1, 1.0);
  const LampertiMap m = LampertiMap::build(cir_like(), o);
  for (double y : {0.3, 0.8, 1.0, 2.0, 4.0}) {
    // h(y) = 2 (sqrt y - 1) from base 1.
    const Vec z = m.h(Vec::Constant(1, y), 0);
    EXPECT_NEAR(z[0], 2.0 * (std::sqrt(y) - 1.0), 1e-12);
    EXPECT_NEAR(m.transformed_drift(z, 0)[0], (1.4 - 1.2 * y) / (4.0 * std::sqrt(y)), 1e-5);
  }
}

TEST(LampertiMapTest, DirectSecondDifferenceRouteAgrees) {
  LampertiOptions o;
  o.base_point = Vec::Constant(1, 1.0);
  const LampertiMap m = LampertiMap::build(cir_like(), o);
  for (double y : {0.5, 1.5, 3.0}) {
    const Vec z = m.h(Vec::Constant(1, y), 0);
    EXPECT_NEAR(m.transformed_drift_direct(z, 0)[0], m.transformed_drift(z, 0)[0], 1e-4);
  }
}

TEST(LampertiMapTest, RoundTripAndJacobianOnSeparableDiagonal) {
  SdeSpec s = diag_spec(
      [](const Vec& y) {
        Mat m = Mat::Zero(2, 2);
        m(0, 0) = 1 + y[0] * y[0];
        m(1, 1) = 2 + std::sin(y[1]);
        return m;
      },
      2);
  s.drift = [](const Vec& y, double) -> Vec { return Vec{{-y[0], 0.5 - y[1]}}; };
  LampertiOptions o;
  o.base_point = Vec{{0.1, -0.2}};
  const LampertiMap m = LampertiMap::build(s, o);
  const CounterRng rng(5, Stream::kTest);
  for (int i = 0; i < 20; ++i) {
    const Vec y{{2.0 * rng.normal(2 * i), 2.0 * rng.normal(2 * i + 1)}};
    EXPECT_LE((m.g(m.h(y, 0), 0) - y).norm(), 1e-10);
    // d h / d y = sigma^{-1} by central differences.
    const double e = 1e-6;
    Mat jac(2, 2);
    for (int k = 0; k < 2; ++k) {
      Vec yp = y, ym = y;
      yp[k] += e;
      ym[k] -= e;
      jac.col(k) = (m.h(yp, 0) - m.h(ym, 0)) / (2 * e);
    }
    const Mat inv = s.diffusion(y, 0).inverse();
    EXPECT_LE((jac - inv).norm(), 1e-7 * (1 + inv.norm()));
    // 1-D closed form per coordinate: mu/sigma - sigma'/2.
    const Vec z = m.h(y, 0);
    const Vec mt = m.transformed_drift(z, 0);
    EXPECT_NEAR(mt[0], -y[0] / (1 + y[0] * y[0]) - y[0], 1e-6);
    EXPECT_NEAR(mt[1], (0.5 - y[1]) / (2 + std::sin(y[1])) - 0.5 * std::cos(y[1]), 1e-6);
  }
}

TEST(LampertiMapTest, TransformedSpecHasUnitDiffusion) {
  LampertiOptions o;
  o.base_point = Vec::Constant(1, 1.0);
  const LampertiMap m = LampertiMap::build(catalog("gbm1d"), o);
  const SdeSpec t = m.transformed_spec();
  EXPECT_TRUE(t.isotropic);
  EXPECT_EQ(t.diffusion(Vec::Constant(1, 0.3), 0)(0, 0), 1.0);
  EXPECT_NEAR(t.drift(Vec::Constant(1, 0.3), 0)[0], 0.0, 1e-6);
}

TEST(LampertiMapTest, PushforwardOfGbmMatchesTransformedSimulation) {
  // One Euler step of GBM mapped through h against one step of the
  // transformed SDE with the same noise. Ito-Taylor: the gap is
  // -sigma'/2 dt (xi^2 - 1) + O(dt^{3/2}), so its mean is O(dt^{3/2}).
  LampertiOptions o;
  o.base_point = Vec::Constant(1, 1.0);
  const LampertiMap m = LampertiMap::build(catalog("gbm1d"), o);
  const SdeSpec src = catalog("gbm1d");
  const SdeSpec tr = m.transformed_spec();
  const CounterRng rng(17, Stream::kTest);
  for (double dt : {1e-2, 1e-3}) {
    const int n = 4000;
    double sum = 0, sum2 = 0;
    for (int i = 0; i < n; ++i) {
      const Vec y = Vec::Constant(1, 0.5 + 2.0 * rng.uniform(3 * i));
      const Vec xi = Vec::Constant(1, rng.normal(3 * i + 1));
      const Vec y1 = euler_maruyama_step(src, y, 0, dt, xi);
      const Vec z1 = euler_maruyama_step(tr, m.h(y, 0), 0, dt, xi);
      const double gap = m.h(y1, 0)[0] - z1[0];
      const double leading = -0.5 * dt * (xi[0] * xi[0] - 1.0);
      EXPECT_LE(std::abs(gap - leading), 10.0 * std::pow(dt, 1.5) * (1 + std::pow(xi[0], 4)));
      sum += gap;
      sum2 += gap * gap;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_LE(std::abs(mean), std::pow(dt, 1.5) + 4.0 * se) << dt;
  }
}
