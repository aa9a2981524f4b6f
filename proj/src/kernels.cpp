#include "lsde/kernels.hpp"

#include <cmath>

#include "lsde/error.hpp"
#include "lsde/rng.hpp"

namespace lsde {

namespace {

struct NetGrads {
  MlpGrads body, mean, chol, dec, drift;
  Vec diffusion;

  explicit NetGrads(const VaeModel& m)
      : body(m.encoder_body.zero_grads()),
        mean(m.mean_head.zero_grads()),
        chol(m.chol_head.zero_grads()),
        dec(m.decoder.zero_grads()),
        drift(m.drift.zero_grads()),
        diffusion(Vec::Zero(m.diffusion.size())) {}

  Vec flatten(std::size_t total) const {
    Vec out(static_cast<Eigen::Index>(total));
    std::size_t off = 0;
    Mlp::pack(body, out, off);
    Mlp::pack(mean, out, off);
    Mlp::pack(chol, out, off);
    Mlp::pack(dec, out, off);
    Mlp::pack(drift, out, off);
    out.segment(static_cast<Eigen::Index>(off), diffusion.size()) = diffusion;
    return out;
  }
};

void check_batch(const VaeModel& m, const PairBatch& b) {
  const auto len = b.x0.cols();
  if (b.x0.rows() != m.n() || b.x1.rows() != m.n() || b.x1.cols() != len ||
      b.dt.size() != len || b.eta0.rows() != m.d() || b.eta1.rows() != m.d() ||
      b.eta0.cols() != len || b.eta1.cols() != len) {
    throw InvalidInput("loss: batch shapes do not match the model");
  }
  if ((b.dt.array() <= 0.0).any()) throw InvalidInput("loss: dt must be positive");
}

/// Chol-head gradient from a gradient w.r.t. the lower-triangular factor.
void chol_raw_grad(const Mat& dl, const Vec& raw, int d, bool full, Eigen::Ref<Vec> out) {
  for (int k = 0; k < d; ++k) out[k] = dl(k, k) * sigmoid(raw[k]);
  if (!full) return;
  int idx = d;
  for (int i = 1; i < d; ++i) {
    for (int k = 0; k < i; ++k) out[idx++] = dl(i, k);
  }
}

/// Terms and gradients for pairs [begin, begin + len), each weighted by w.
void chunk_terms(const VaeModel& m, const PairBatch& b, Eigen::Index begin, Eigen::Index len,
                 double w, bool want_grad, LossBreakdown& t, NetGrads* g) {
  const int d = m.d();
  const bool full = m.config().full_covariance;
  const bool diag = m.config().diffusion_diag;
  const double tau = m.config().tau;
  const double nu = m.config().nu;
  const Eigen::Index cols = 2 * len;

  Mat x(m.n(), cols);
  x.leftCols(len) = b.x0.middleCols(begin, len);
  x.rightCols(len) = b.x1.middleCols(begin, len);
  Mat eta(d, cols);
  eta.leftCols(len) = b.eta0.middleCols(begin, len);
  eta.rightCols(len) = b.eta1.middleCols(begin, len);

  MlpTape tb, tm, tc, td, tf;
  const Mat h = m.encoder_body.forward(x, tb);
  const Mat mean = m.mean_head.forward(h, tm);
  const Mat raw = m.chol_head.forward(h, tc);

  std::vector<Mat> ls(static_cast<std::size_t>(cols));
  Mat z(d, cols);
  Mat rowsq(d, cols);
  double entropy = 0.0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    Mat& l = ls[static_cast<std::size_t>(c)];
    l = m.chol(raw.col(c));
    z.col(c) = mean.col(c) + l * eta.col(c);
    rowsq.col(c) = l.rowwise().squaredNorm();
    entropy -= l.diagonal().array().log().sum();
  }
  t.entropy += w * (entropy - static_cast<double>(d * len));

  const Mat xhat = m.decoder.forward(z, td);
  const Mat resid = xhat - x;
  t.reconstruction += w * resid.squaredNorm() / (2.0 * tau);

  const auto m0 = mean.leftCols(len);
  const auto m1 = mean.rightCols(len);
  t.prior += w * 0.5 * nu * (rowsq.leftCols(len).sum() + m0.squaredNorm());

  const Mat f = m.drift.forward(m0, tf);
  const Vec dt = b.dt.segment(begin, len);
  const Mat r = m1 - m0 - f * dt.asDiagonal();

  Vec dabs = Vec::Ones(d);
  if (diag) dabs = m.diffusion.cwiseAbs();
  const Vec inv_d2 = dabs.array().square().inverse().matrix();
  const double log_d_sum = dabs.array().log().sum();

  double transition = 0.0;
  for (Eigen::Index p = 0; p < len; ++p) {
    const Vec s = rowsq.col(p) + rowsq.col(len + p) + r.col(p).cwiseAbs2();
    transition += 0.5 * d * std::log(dt[p]) + log_d_sum + s.dot(inv_d2) / (2.0 * dt[p]);
  }
  t.transition += w * transition;

  if (!want_grad) return;

  const Mat dz = m.decoder.backward(td, (w / tau) * resid, g->dec);
  Mat dmean = dz;
  Mat draw(m.chol_size(), cols);

  Mat gr = r;
  for (Eigen::Index p = 0; p < len; ++p) gr.col(p) = (w / dt[p]) * inv_d2.cwiseProduct(r.col(p));
  dmean.rightCols(len) += gr;
  dmean.leftCols(len) -= gr;
  const Mat df = -(gr * dt.asDiagonal());
  dmean.leftCols(len) += m.drift.backward(tf, df, g->drift);
  if (nu != 0.0) dmean.leftCols(len) += (w * nu) * m0;

  for (Eigen::Index c = 0; c < cols; ++c) {
    const Mat& l = ls[static_cast<std::size_t>(c)];
    const Eigen::Index p = c < len ? c : c - len;
    Mat dl = (dz.col(c) * eta.col(c).transpose()).triangularView<Eigen::Lower>();
    dl += (w / dt[p]) * inv_d2.asDiagonal() * l;
    if (c < len && nu != 0.0) dl += (w * nu) * l;
    for (int k = 0; k < d; ++k) dl(k, k) -= w / l(k, k);
    chol_raw_grad(dl, raw.col(c), d, full, draw.col(c));
  }

  if (diag) {
    Vec gd = Vec::Zero(d);
    for (Eigen::Index p = 0; p < len; ++p) {
      const Vec s = rowsq.col(p) + rowsq.col(len + p) + r.col(p).cwiseAbs2();
      gd += w * (dabs.cwiseInverse() -
                 (s.array() / (dt[p] * dabs.array().cube())).matrix());
    }
    for (int i = 0; i < d; ++i) g->diffusion[i] += m.diffusion[i] < 0.0 ? -gd[i] : gd[i];
  }

  const Mat dh = m.mean_head.backward(tm, dmean, g->mean) + m.chol_head.backward(tc, draw, g->chol);
  m.encoder_body.backward(tb, dh, g->body);
}

void add(LossBreakdown& a, const LossBreakdown& b) {
  a.entropy += b.entropy;
  a.prior += b.prior;
  a.transition += b.transition;
  a.reconstruction += b.reconstruction;
  a.l1 += b.l1;
}

}  // namespace

LossEval loss_terms_serial(const VaeModel& m, const PairBatch& b, bool want_grad) {
  check_batch(m, b);
  const int d = m.d();
  const bool full = m.config().full_covariance;
  const bool diag = m.config().diffusion_diag;
  const double tau = m.config().tau;
  const double nu = m.config().nu;
  const double w = 1.0 / static_cast<double>(b.size());
  NetGrads g(m);
  LossBreakdown t;

  Vec dabs = Vec::Ones(d);
  if (diag) dabs = m.diffusion.cwiseAbs();

  for (Eigen::Index p = 0; p < b.size(); ++p) {
    const double dt = b.dt[p];
    MlpTape tb[2], tm[2], tc[2], td[2], tf;
    Vec mean[2], raw[2], z[2], resid[2];
    Mat l[2];
    const Vec* xs[2] = {nullptr, nullptr};
    const Vec x0 = b.x0.col(p), x1 = b.x1.col(p);
    xs[0] = &x0;
    xs[1] = &x1;
    const Vec eta[2] = {b.eta0.col(p), b.eta1.col(p)};
    for (int k = 0; k < 2; ++k) {
      const Mat h = m.encoder_body.forward(*xs[k], tb[k]);
      mean[k] = m.mean_head.forward(h, tm[k]);
      raw[k] = m.chol_head.forward(h, tc[k]);
      l[k] = m.chol(raw[k]);
      z[k] = mean[k] + l[k] * eta[k];
      resid[k] = m.decoder.forward(z[k], td[k]) - *xs[k];
      t.entropy += w * (-l[k].diagonal().array().log().sum() - 0.5 * d);
      t.reconstruction += w * resid[k].squaredNorm() / (2.0 * tau);
    }
    const Mat sigma0 = l[0] * l[0].transpose();
    const Mat sigma1 = l[1] * l[1].transpose();
    t.prior += w * 0.5 * nu * (sigma0.trace() + mean[0].squaredNorm());
    const Vec f = m.drift.forward(mean[0], tf);
    const Vec r = mean[1] - mean[0] - f * dt;
    double tr = 0.5 * d * std::log(dt);
    for (int i = 0; i < d; ++i) {
      tr += std::log(dabs[i]) +
            (sigma0(i, i) + sigma1(i, i) + r[i] * r[i]) / (2.0 * dt * dabs[i] * dabs[i]);
    }
    t.transition += w * tr;

    if (!want_grad) continue;
    const Vec inv_d2 = dabs.array().square().inverse().matrix();
    const Vec gr = (w / dt) * inv_d2.cwiseProduct(r);
    Vec dmean[2];
    dmean[1] = gr;
    dmean[0] = -gr + m.drift.backward(tf, -dt * gr, g.drift);
    dmean[0] += (w * nu) * mean[0];
    for (int k = 0; k < 2; ++k) {
      const Vec dz = m.decoder.backward(td[k], (w / tau) * resid[k], g.dec);
      dmean[k] += dz;
      Mat dl = Mat::Zero(d, d);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
          dl(i, j) = dz[i] * eta[k][j] + (w / dt) * inv_d2[i] * l[k](i, j);
          if (k == 0) dl(i, j) += w * nu * l[k](i, j);
        }
        dl(i, i) -= w / l[k](i, i);
      }
      Vec draw(m.chol_size());
      chol_raw_grad(dl, raw[k], d, full, draw);
      const Vec dh = m.mean_head.backward(tm[k], dmean[k], g.mean) +
                     m.chol_head.backward(tc[k], draw, g.chol);
      m.encoder_body.backward(tb[k], dh, g.body);
    }
    if (diag) {
      for (int i = 0; i < d; ++i) {
        const double s = sigma0(i, i) + sigma1(i, i) + r[i] * r[i];
        const double gi = w * (1.0 / dabs[i] - s / (dt * dabs[i] * dabs[i] * dabs[i]));
        g.diffusion[i] += m.diffusion[i] < 0.0 ? -gi : gi;
      }
    }
  }
  LossEval out;
  out.terms = t;
  if (want_grad) out.grad = g.flatten(m.num_params());
  return out;
}

LossEval loss_terms_parallel(const VaeModel& m, const PairBatch& b, bool want_grad, int chunk) {
  check_batch(m, b);
  if (chunk < 1) throw InvalidInput("chunk size must be positive");
  const Eigen::Index len = b.size();
  const Eigen::Index n_chunks = (len + chunk - 1) / chunk;
  const double w = 1.0 / static_cast<double>(len);
  std::vector<LossBreakdown> terms(static_cast<std::size_t>(n_chunks));
  std::vector<Vec> grads(static_cast<std::size_t>(n_chunks));

#pragma omp parallel for schedule(dynamic, 1)
  for (Eigen::Index c = 0; c < n_chunks; ++c) {
    const Eigen::Index begin = c * chunk;
    const Eigen::Index size = std::min<Eigen::Index>(chunk, len - begin);
    NetGrads g(m);
    chunk_terms(m, b, begin, size, w, want_grad, terms[static_cast<std::size_t>(c)],
                want_grad ? &g : nullptr);
    if (want_grad) grads[static_cast<std::size_t>(c)] = g.flatten(m.num_params());
  }

  LossEval out;
  for (const auto& t : terms) add(out.terms, t);
  if (want_grad) {
    out.grad = Vec::Zero(static_cast<Eigen::Index>(m.num_params()));
    for (const auto& g : grads) out.grad += g;
  }
  return out;
}

namespace {

Vec ensemble_path(const SdeSpec& spec, const Vec& z0, double dt, int n_steps,
                  const CounterRng& rng, std::uint64_t path) {
  Vec z = z0;
  Vec noise(spec.dim);
  const auto dim = static_cast<std::uint64_t>(spec.dim);
  for (int s = 0; s < n_steps; ++s) {
    const std::uint64_t base = (path * static_cast<std::uint64_t>(n_steps) + s) * dim;
    for (int k = 0; k < spec.dim; ++k) noise[k] = rng.normal(base + k);
    z = euler_maruyama_step(spec, z, s * dt, dt, noise);
  }
  return z;
}

}  // namespace

Mat simulate_ensemble_serial(const SdeSpec& spec, const Mat& z0, double dt, int n_steps,
                             std::uint64_t seed) {
  if (z0.rows() != spec.dim) throw InvalidInput("ensemble: z0 rows must equal spec dim");
  const CounterRng rng(seed, Stream::kWiener);
  Mat out(z0.rows(), z0.cols());
  for (Eigen::Index j = 0; j < z0.cols(); ++j) {
    out.col(j) = ensemble_path(spec, z0.col(j), dt, n_steps, rng, static_cast<std::uint64_t>(j));
  }
  return out;
}

Mat simulate_ensemble_parallel(const SdeSpec& spec, const Mat& z0, double dt, int n_steps,
                               std::uint64_t seed) {
  if (z0.rows() != spec.dim) throw InvalidInput("ensemble: z0 rows must equal spec dim");
  const CounterRng rng(seed, Stream::kWiener);
  Mat out(z0.rows(), z0.cols());
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < z0.cols(); ++j) {
    out.col(j) = ensemble_path(spec, z0.col(j), dt, n_steps, rng, static_cast<std::uint64_t>(j));
  }
  return out;
}

}  // namespace lsde
