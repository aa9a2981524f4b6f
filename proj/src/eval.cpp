#include "lsde/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lsde/error.hpp"

namespace lsde {

std::string to_string(AlignMode m) { return m == AlignMode::kAffine ? "affine" : "orthogonal"; }

AlignMode align_mode_from_string(const std::string& s) {
  if (s == "orthogonal") return AlignMode::kOrthogonal;
  if (s == "affine") return AlignMode::kAffine;
  throw InvalidInput("unknown alignment mode '" + s + "' (orthogonal | affine)");
}

Mat AlignmentResult::apply(const Mat& a) const {
  Mat out = q * a;
  out.colwise() += b;
  return out;
}

Mat AlignmentResult::inverse(const Mat& x) const {
  const Mat centered = x.colwise() - b;
  if (mode == AlignMode::kOrthogonal) return q.transpose() * centered;
  return q.partialPivLu().solve(centered);
}

AlignmentResult procrustes(const Mat& a, const Mat& b, AlignMode mode) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput("procrustes: point sets must have the same shape");
  }
  const auto d = a.rows();
  const auto n = a.cols();
  if (n < d + 1) throw InvalidInput("procrustes: need at least d + 1 points");

  const Vec ma = a.rowwise().mean();
  const Vec mb = b.rowwise().mean();
  const Mat ac = a.colwise() - ma;
  const Mat bc = b.colwise() - mb;
  const Mat cross = bc * ac.transpose();

  AlignmentResult r;
  r.mode = mode;
  if (mode == AlignMode::kOrthogonal) {
    const Eigen::JacobiSVD<Mat> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    r.q = svd.matrixU() * svd.matrixV().transpose();
  } else {
    const Mat gram = ac * ac.transpose();
    const Eigen::JacobiSVD<Mat> svd(gram);
    const Vec s = svd.singularValues();
    if (!(s[d - 1] > 1e-12 * s[0])) {
      throw DegenerateData("procrustes: estimated latents are rank deficient");
    }
    r.q = gram.ldlt().solve(cross.transpose()).transpose();
  }
  r.b = mb - r.q * ma;
  r.residual = (r.apply(a) - b).squaredNorm() / static_cast<double>(n);
  return r;
}

std::pair<double, AlignmentResult> latent_mse(const Mat& encoded, const Mat& truth,
                                              AlignMode mode) {
  AlignmentResult r = procrustes(encoded, truth, mode);
  return {r.residual, r};
}

double drift_mse(const BatchFn& drift_hat, const DriftFn& mu, const AlignmentResult& align,
                 const Mat& points, double t) {
  const Mat est = align.q * drift_hat(align.inverse(points));
  double sum = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    sum += (est.col(c) - mu(points.col(c), t)).squaredNorm();
  }
  return sum / static_cast<double>(points.cols());
}

double crlb(int d, double dt, std::size_t n) {
  if (d <= 0 || !(dt > 0.0) || n == 0) throw InvalidInput("crlb: d, dt and N must be positive");
  return static_cast<double>(d) / (dt * static_cast<double>(n));
}

double linear_loglik(const Mat& a, const Mat& x0, const Mat& x1, const Vec& dt,
                     const DriftFn& mu, const DiffusionFn& sigma, double t0) {
  if (x0.rows() != a.rows() || x1.rows() != a.rows() || x0.cols() != x1.cols() ||
      dt.size() != x0.cols()) {
    throw InvalidInput("linear_loglik: shapes do not match");
  }
  const auto j = a.cols();
  const Eigen::JacobiSVD<Mat> asvd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec sv = asvd.singularValues();
  if (j == 0 || !(sv[j - 1] > 1e-10 * sv[0])) return kNegInf;
  const Mat& u = asvd.matrixU();
  const Mat pinv = asvd.matrixV() * sv.cwiseInverse().asDiagonal() * u.transpose();
  // Restricted to span(U): cov = U K U^T with K = S V^T s s^T V S dt.
  const Mat sv_vt = sv.asDiagonal() * asvd.matrixV().transpose();

  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  double t = t0;
  for (Eigen::Index p = 0; p < x0.cols(); ++p) {
    const Vec z = pinv * x0.col(p);
    const Vec inc = x1.col(p) - x0.col(p);
    const Mat s = sigma(z, t);
    const Vec mean = a * mu(z, t) * dt[p];
    const Vec v = inc - mean;
    const Vec y = u.transpose() * v;
    if ((v - u * y).norm() > 1e-8 * (1.0 + inc.norm())) return kNegInf;

    const Mat k = sv_vt * s * s.transpose() * sv_vt.transpose() * dt[p];
    const Eigen::SelfAdjointEigenSolver<Mat> eig(k);
    const Vec lam = eig.eigenvalues();
    const double cut = 1e-10 * lam.cwiseAbs().maxCoeff();
    const Vec w = eig.eigenvectors().transpose() * y;
    double quad = 0.0, logdet = 0.0;
    int rank = 0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      if (lam[i] > cut) {
        quad += w[i] * w[i] / lam[i];
        logdet += std::log(lam[i]);
        ++rank;
      } else if (std::abs(w[i]) > 1e-8 * (1.0 + inc.norm())) {
        return kNegInf;
      }
    }
    total += -0.5 * (logdet + quad + rank * log2pi);
    t += dt[p];
  }
  return total;
}

std::vector<double> diffusion_diag_report(const VaeModel& model) {
  if (!model.config().diffusion_diag) {
    throw InvalidInput("model was not built with a learnable diffusion diagonal");
  }
  std::vector<double> out(model.diffusion.size());
  for (Eigen::Index i = 0; i < model.diffusion.size(); ++i) out[i] = std::abs(model.diffusion[i]);
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

int suggested_dimension(const std::vector<double>& sorted_diag, double threshold) {
  if (sorted_diag.empty()) return 0;
  const double cut = threshold * sorted_diag.front();
  return static_cast<int>(
      std::count_if(sorted_diag.begin(), sorted_diag.end(), [&](double v) { return v >= cut; }));
}

nlohmann::json to_json(const MetricsReport& m) {
  const Mat& q = m.alignment.q;
  std::vector<std::vector<double>> qrows;
  for (Eigen::Index r = 0; r < q.rows(); ++r) {
    const Vec row = q.row(r).transpose();
    qrows.emplace_back(row.data(), row.data() + row.size());
  }
  return {{"L_latent", m.l_latent},
          {"L_mu", m.l_mu},
          {"reconstruction_mse", m.reconstruction_mse},
          {"crlb", m.crlb},
          {"n_pairs", m.n_pairs},
          {"d", m.d},
          {"dt", m.dt},
          {"alignment_mode", to_string(m.mode)},
          {"Q", qrows},
          {"b", std::vector<double>(m.alignment.b.data(), m.alignment.b.data() + m.alignment.b.size())}};
}

MetricsReport evaluate(const VaeModel& model, const PairedDataset& data, AlignMode mode) {
  if (!data.z0) throw DegenerateData("dataset carries no latent truth");
  if (data.z0->rows() != model.d()) {
    throw DegenerateData("model latent size " + std::to_string(model.d()) +
                         " differs from the true latent size " +
                         std::to_string(data.z0->rows()));
  }
  if (data.ambient_dim() != model.n()) throw InvalidInput("dataset width does not match model");

  MetricsReport r;
  r.n_pairs = data.size();
  r.d = model.d();
  r.dt = data.dt.mean();
  r.mode = mode;
  r.crlb = crlb(r.d, r.dt, r.n_pairs);

  const Encoding enc = model.encode_batch(data.x0);
  const Mat truth = data.to_raw_latent(*data.z0);
  std::tie(r.l_latent, r.alignment) = latent_mse(enc.mean, truth, mode);

  const SdeSpec spec = catalog(data.meta.generation.spec_name);
  r.l_mu = drift_mse([&](const Mat& z) { return model.drift_at(z); }, spec.drift, r.alignment,
                     truth);
  r.reconstruction_mse = (model.decode(enc.mean) - data.x0).squaredNorm() /
                         static_cast<double>(data.x0.size());
  return r;
}

}  // namespace lsde
