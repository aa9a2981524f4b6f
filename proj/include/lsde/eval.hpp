#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lsde/datasets.hpp"
#include "lsde/sde.hpp"
#include "lsde/vae.hpp"

namespace lsde {

enum class AlignMode { kOrthogonal, kAffine };

std::string to_string(AlignMode m);
AlignMode align_mode_from_string(const std::string& s);

struct AlignmentResult {
  Mat q;
  Vec b;
  /// (1/N) ||Q A + b 1^T - B||_F^2
  double residual = 0.0;
  AlignMode mode = AlignMode::kOrthogonal;

  Mat apply(const Mat& a) const;
  /// Maps target coordinates back: Q^T (x - b), or Q^{-1} (x - b) in affine mode.
  Mat inverse(const Mat& x) const;
};

/// Best Q (orthogonal or general) and b with Q A + b 1^T ~ B; columns are
/// points. Reflections are allowed in orthogonal mode.
AlignmentResult procrustes(const Mat& a, const Mat& b, AlignMode mode);

/// (L_latent, alignment) of encoded points against the truth.
std::pair<double, AlignmentResult> latent_mse(const Mat& encoded, const Mat& truth, AlignMode mode);

using BatchFn = std::function<Mat(const Mat&)>;

/// Mean of ||Q mu_hat(Q^T (x - b)) - mu(x)||^2 over the columns of points.
double drift_mse(const BatchFn& drift_hat, const DriftFn& mu, const AlignmentResult& align,
                 const Mat& points, double t = 0.0);

/// d / (dt N).
double crlb(int d, double dt, std::size_t n);

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Euler-Maruyama log-likelihood of the increments x1 - x0 under X = A Z,
/// with latent coefficients mu, sigma evaluated at A^+ x0. Pseudo-inverses
/// and pseudo-determinants handle rank deficiency; returns kNegInf when A
/// is rank deficient or an increment leaves the covariance column space.
double linear_loglik(const Mat& a, const Mat& x0, const Mat& x1, const Vec& dt,
                     const DriftFn& mu, const DiffusionFn& sigma, double t0 = 0.0);

/// |D_i| sorted descending.
std::vector<double> diffusion_diag_report(const VaeModel& model);
/// Entries >= threshold * leading entry.
int suggested_dimension(const std::vector<double>& sorted_diag, double threshold = 0.1);

struct MetricsReport {
  double l_latent = 0.0;
  double l_mu = 0.0;
  double reconstruction_mse = 0.0;
  double crlb = 0.0;
  std::size_t n_pairs = 0;
  int d = 0;
  double dt = 0.0;
  AlignMode mode = AlignMode::kOrthogonal;
  AlignmentResult alignment;
};

nlohmann::json to_json(const MetricsReport& m);

/// Encodes every x_t, aligns against the raw latent truth and scores the
/// drift on the true latent points. Throws DegenerateData when the dataset
/// has no truth or the latent sizes differ.
MetricsReport evaluate(const VaeModel& model, const PairedDataset& data, AlignMode mode);

}  // namespace lsde
