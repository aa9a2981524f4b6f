#include "lsde/lamperti.hpp"

#include <cmath>
#include <sstream>

#include "lsde/error.hpp"

namespace lsde {
namespace {

double fd_step(const Vec& y) { return 1e-5 * (1.0 + y.norm()); }

std::string format_point(const Vec& y, double t) {
  std::ostringstream os;
  os << "y=(";
  for (Eigen::Index i = 0; i < y.size(); ++i) os << (i ? ", " : "") << y[i];
  os << ") t=" << t;
  return os.str();
}

/// d sigma / d y_k by central differences.
Mat dsigma(const SdeSpec& spec, const Vec& y, double t, int k, double step) {
  Vec yp = y, ym = y;
  yp[k] += step;
  ym[k] -= step;
  return (spec.diffusion(yp, t) - spec.diffusion(ym, t)) / (2.0 * step);
}

}  // namespace

ReducibilityReport check_reducible(const SdeSpec& spec, std::span<const ProbePoint> probes,
                                   const ReducibilityOptions& opts) {
  ReducibilityReport report;
  report.reducible = true;
  const int d = spec.dim;

  for (const ProbePoint& p : probes) {
    if (p.y.size() != d) throw InvalidInput("check_reducible: probe size != spec dim");
    ProbeResidual r;
    r.y = p.y;
    r.t = p.t;

    const Mat sig = spec.diffusion(p.y, p.t);
    const double scale = 1.0 + sig.norm();
    r.asymmetry = (sig - sig.transpose()).norm();
    const Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (sig + sig.transpose()));
    r.min_eigenvalue = eig.eigenvalues().minCoeff();

    Eigen::FullPivLU<Mat> lu(sig);
    const double smin = Eigen::JacobiSVD<Mat>(sig).singularValues().minCoeff();
    r.singular = !lu.isInvertible() || smin <= 1e-12 * scale;

    if (r.singular) {
      report.reducible = false;
      if (report.failure.empty()) {
        report.failure = "singular diffusion at " + format_point(p.y, p.t);
      }
      report.points.push_back(std::move(r));
      continue;
    }
    if (opts.require_spd) {
      if (r.asymmetry > 1e-10 * scale && report.failure.empty()) {
        report.reducible = false;
        report.failure = "non-symmetric diffusion at " + format_point(p.y, p.t);
      }
      if (r.min_eigenvalue <= 0.0 && report.failure.empty()) {
        report.reducible = false;
        report.failure = "diffusion not positive definite at " + format_point(p.y, p.t);
      }
      if (r.asymmetry > 1e-10 * scale || r.min_eigenvalue <= 0.0) report.reducible = false;
    }

    const Mat sig_inv = lu.inverse();
    const double step = fd_step(p.y);
    std::vector<Mat> dsig(d);
    for (int k = 0; k < d; ++k) dsig[k] = dsigma(spec, p.y, p.t, k, step);
    double worst = 0.0;
    for (int j = 0; j < d; ++j) {
      for (int k = j + 1; k < d; ++k) {
        const Vec lhs = dsig[k] * sig_inv.col(j);
        const Vec rhs = dsig[j] * sig_inv.col(k);
        worst = std::max(worst, (lhs - rhs).norm());
      }
    }
    r.curl_residual = worst;
    report.max_curl_residual = std::max(report.max_curl_residual, worst);
    if (worst > opts.curl_tol) {
      report.reducible = false;
      if (report.failure.empty()) {
        report.failure = "curl condition violated at " + format_point(p.y, p.t);
      }
    }
    report.points.push_back(std::move(r));
  }
  return report;
}

std::vector<ProbePoint> default_probe_grid(const Vec& center, double t) {
  const int d = static_cast<int>(center.size());
  std::vector<ProbePoint> grid;
  auto spacing = [&](int i) { return 0.25 * (1.0 + std::abs(center[i])); };
  if (d > 6) {
    grid.push_back({center, t});
    for (int i = 0; i < d; ++i) {
      for (double s : {-1.0, 1.0}) {
        Vec y = center;
        y[i] += s * spacing(i);
        grid.push_back({y, t});
      }
    }
    return grid;
  }
  int total = 1;
  for (int i = 0; i < d; ++i) total *= 3;
  for (int idx = 0; idx < total; ++idx) {
    Vec y = center;
    int rem = idx;
    for (int i = 0; i < d; ++i) {
      y[i] += static_cast<double>(rem % 3 - 1) * spacing(i);
      rem /= 3;
    }
    grid.push_back({y, t});
  }
  return grid;
}

Quadrature gauss_legendre_unit(int n) {
  if (n <= 0) throw InvalidInput("quadrature needs at least one node");
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      // Recompute derivative at the converged root for the weight.
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (n == 1) p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // Map [-1, 1] -> [0, 1].
    q.nodes[i] = 0.5 * (1.0 - x);
    q.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    q.weights[i] = 0.5 * w;
    q.weights[n - 1 - i] = 0.5 * w;
  }
  return q;
}

LampertiMap::LampertiMap(SdeSpec source, Vec base, Quadrature quad, const LampertiOptions& opts)
    : source_(std::move(source)),
      base_(std::move(base)),
      quad_(std::move(quad)),
      inversion_tol_(opts.inversion_tol),
      max_newton_(opts.max_newton_iterations),
      require_spd_(opts.reducibility.require_spd) {}

LampertiMap LampertiMap::build(SdeSpec source, const LampertiOptions& opts) {
  Vec base = opts.base_point.size() == 0 ? Vec::Zero(source.dim) : opts.base_point;
  if (base.size() != source.dim) throw InvalidInput("base point size != spec dim");
  const auto probes = default_probe_grid(base);
  const auto report = check_reducible(source, probes, opts.reducibility);
  if (!report.reducible) {
    throw InvalidInput("SDE '" + source.name + "' is not reducible near the base point: " +
                       report.failure);
  }
  return LampertiMap(std::move(source), std::move(base),
                     gauss_legendre_unit(opts.quadrature_nodes), opts);
}

Mat LampertiMap::sigma_inverse(const Vec& y, double t) const {
  return source_.diffusion(y, t).partialPivLu().inverse();
}

Vec LampertiMap::h(const Vec& y, double t) const {
  const Vec delta = y - base_;
  Vec acc = Vec::Zero(source_.dim);
  for (std::size_t i = 0; i < quad_.nodes.size(); ++i) {
    const Vec point = base_ + quad_.nodes[i] * delta;
    acc += quad_.weights[i] * source_.diffusion(point, t).partialPivLu().solve(delta);
  }
  return acc;
}

bool LampertiMap::admissible(const Vec& y, double t) const {
  if (!y.allFinite()) return false;
  const Mat s = source_.diffusion(y, t);
  if (!s.allFinite()) return false;
  if (!require_spd_) return true;
  return Eigen::LLT<Mat>(0.5 * (s + s.transpose())).info() == Eigen::Success;
}

Vec LampertiMap::g(const Vec& z, double t) const {
  if (z.size() != source_.dim) throw InvalidInput("g: size != spec dim");
  // Newton start from the linearisation at the base point, unless that
  // leaves the region where h is defined.
  Vec y = base_ + source_.diffusion(base_, t) * z;
  if (!admissible(y, t)) y = base_;
  Vec res = h(y, t) - z;
  double res_norm = res.allFinite() ? res.norm() : INFINITY;
  if (!std::isfinite(res_norm)) {
    y = base_;
    res = h(y, t) - z;
    res_norm = res.norm();
  }

  const double tol = inversion_tol_ * (1.0 + z.norm());
  // Damped Newton with dh/dy = sigma^{-1}, so the step is sigma(y) * residual.
  auto newton_step = [&]() {
    const Vec step = source_.diffusion(y, t) * res;
    double alpha = 1.0;
    for (int halvings = 0; halvings < 30; ++halvings) {
      const Vec trial = y - alpha * step;
      if (!admissible(trial, t)) {
        alpha *= 0.5;
        continue;
      }
      const Vec trial_res = h(trial, t) - z;
      const double trial_norm = trial_res.allFinite() ? trial_res.norm() : INFINITY;
      if (trial_norm < res_norm) {
        y = trial;
        res = trial_res;
        res_norm = trial_norm;
        return true;
      }
      alpha *= 0.5;
    }
    return false;
  };

  for (int iter = 0; iter < max_newton_ && res_norm > tol; ++iter) {
    if (!newton_step()) break;
  }
  if (res_norm <= tol) {
    // Polish to working precision; derivatives of g downstream need it.
    for (int k = 0; k < 2 && newton_step(); ++k) {
    }
    return y;
  }
  throw InversionFailure("Lamperti inverse did not converge (residual " +
                             std::to_string(res_norm) + ")",
                         format_point(z, t));
}

Vec LampertiMap::time_derivative_h(const Vec& y, double t) const {
  if (!source_.time_dependent) return Vec::Zero(source_.dim);
  const double step = 1e-5 * (1.0 + std::abs(t));
  return (h(y, t + step) - h(y, t - step)) / (2.0 * step);
}

Vec LampertiMap::transformed_drift(const Vec& z, double t) const {
  const int d = source_.dim;
  const Vec y = g(z, t);
  const Mat sig = source_.diffusion(y, t);
  const double step = fd_step(y);

  // Laplacian of g: (Lap g)_i = sum_k d/dz_k sigma_ik(g(z))
  //                          = sum_{k,m} d sigma_ik / d y_m * sigma_mk.
  Vec lap = Vec::Zero(d);
  for (int m = 0; m < d; ++m) {
    const Mat ds = dsigma(source_, y, t, m, step);
    for (int i = 0; i < d; ++i) {
      for (int k = 0; k < d; ++k) lap[i] += ds(i, k) * sig(m, k);
    }
  }
  // h(g(z,t),t) = z  =>  dg/dt = -sigma(g) dh/dt(g).
  const Vec dg_dt = -sig * time_derivative_h(y, t);
  return sig.partialPivLu().solve(source_.drift(y, t) - dg_dt - 0.5 * lap);
}

Vec LampertiMap::transformed_drift_direct(const Vec& z, double t, double step) const {
  const int d = source_.dim;
  const Vec y = g(z, t);
  Mat jac(d, d);
  Vec lap = Vec::Zero(d);
  for (int k = 0; k < d; ++k) {
    Vec zp = z, zm = z;
    zp[k] += step;
    zm[k] -= step;
    const Vec gp = g(zp, t), gm = g(zm, t);
    jac.col(k) = (gp - gm) / (2.0 * step);
    lap += (gp - 2.0 * y + gm) / (step * step);
  }
  Vec dg_dt = Vec::Zero(d);
  if (source_.time_dependent) {
    const double ts = 1e-5 * (1.0 + std::abs(t));
    dg_dt = (g(z, t + ts) - g(z, t - ts)) / (2.0 * ts);
  }
  return jac.partialPivLu().solve(source_.drift(y, t) - dg_dt - 0.5 * lap);
}

SdeSpec LampertiMap::transformed_spec() const {
  SdeSpec s;
  s.name = source_.name + "_lamperti";
  s.dim = source_.dim;
  s.time_dependent = source_.time_dependent;
  s.isotropic = true;
  const LampertiMap self = *this;
  s.drift = [self](const Vec& z, double t) { return self.transformed_drift(z, t); };
  const int d = s.dim;
  s.diffusion = [d](const Vec&, double) -> Mat { return Mat::Identity(d, d); };
  return s;
}

}  // namespace lsde
