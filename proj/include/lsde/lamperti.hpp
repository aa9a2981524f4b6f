#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lsde/sde.hpp"

namespace lsde {

struct ProbePoint {
  Vec y;
  double t = 0.0;
};

struct ProbeResidual {
  Vec y;
  double t = 0.0;
  double curl_residual = 0.0;
  double asymmetry = 0.0;
  double min_eigenvalue = 0.0;
  bool singular = false;
};

struct ReducibilityReport {
  bool reducible = false;
  double max_curl_residual = 0.0;
  std::vector<ProbeResidual> points;
  /// Human-readable reason when `reducible` is false.
  std::string failure;
};

struct ReducibilityOptions {
  double curl_tol = 1e-8;
  /// Require symmetric positive definite sigma at each probe. When false
  /// only invertibility and the curl condition are checked.
  bool require_spd = true;
};

/// Numerical test of the curl condition
///   d sigma/d y_k sigma^{-1} e_j == d sigma/d y_j sigma^{-1} e_k  (all j<k)
/// plus symmetry and positive definiteness, by central differences.
/// A singular sigma marks the probe as violating, it does not throw.
ReducibilityReport check_reducible(const SdeSpec& spec, std::span<const ProbePoint> probes,
                                   const ReducibilityOptions& opts = {});

/// 3^d grid (or 2d+1 axis points for d > 6) around `center`, spacing
/// 0.25 * (1 + |center_i|).
std::vector<ProbePoint> default_probe_grid(const Vec& center, double t = 0.0);

/// Gauss-Legendre nodes and weights mapped to [0, 1].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
Quadrature gauss_legendre_unit(int n);

struct LampertiOptions {
  /// Integration origin; empty means the origin. Must lie where sigma is
  /// positive definite (e.g. base 1 for geometric Brownian motion).
  Vec base_point;
  int quadrature_nodes = 32;
  double inversion_tol = 1e-10;
  int max_newton_iterations = 50;
  ReducibilityOptions reducibility;
};

/// Lamperti change of variables z = h(y, t) taking dY = mu dt + sigma dW to
/// dZ = mu_tilde dt + dW. Immutable after construction.
class LampertiMap {
 public:
  /// Throws InvalidInput when the reducibility check fails on the default
  /// probe grid around the base point.
  static LampertiMap build(SdeSpec source, const LampertiOptions& opts = {});

  const SdeSpec& source() const { return source_; }
  const Vec& base_point() const { return base_; }
  int quadrature_nodes() const { return static_cast<int>(quad_.nodes.size()); }

  /// h(y,t) = int_0^1 sigma(b + s (y - b), t)^{-1} (y - b) ds.
  Vec h(const Vec& y, double t) const;
  /// Damped Newton inverse of h; throws InversionFailure.
  Vec g(const Vec& z, double t) const;
  /// sigma(g(z,t), t)^{-1} (mu(g) - dg/dt - 1/2 Laplacian g), using
  /// dg/dz = sigma(g) so only first differences of sigma and h are needed.
  Vec transformed_drift(const Vec& z, double t) const;
  /// Same quantity with dg/dz, dg/dt and the Laplacian taken by central
  /// differences of g itself. Slower and less accurate; kept as a cross-check.
  Vec transformed_drift_direct(const Vec& z, double t, double step = 1e-4) const;

  /// Unit-diffusion SDE in the transformed coordinates.
  SdeSpec transformed_spec() const;

 private:
  LampertiMap(SdeSpec source, Vec base, Quadrature quad, const LampertiOptions& opts);

  Mat sigma_inverse(const Vec& y, double t) const;
  Vec time_derivative_h(const Vec& y, double t) const;
  /// Finite sigma, positive definite when the reducibility options ask for it.
  bool admissible(const Vec& y, double t) const;

  SdeSpec source_;
  Vec base_;
  Quadrature quad_;
  double inversion_tol_;
  int max_newton_;
  bool require_spd_ = true;
};

}  // namespace lsde
