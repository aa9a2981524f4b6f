// One PASS/FAIL line per primary criterion, then a summary line.
// Exit status is 0 once every verdict is printed; with --strict it is 1 if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lsde/error.hpp"
#include "lsde/eval.hpp"
#include "lsde/experiment.hpp"
#include "lsde/lamperti.hpp"
#include "lsde/sde.hpp"
#include "lsde/vae.hpp"
#include "oracles.hpp"

using namespace lsde;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;
int total = 0;

void report(const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++total;
  if (!o.pass) ++failures;
  std::printf("%s %s: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

const std::filesystem::path kOut = std::filesystem::temp_directory_path() / "lsde_acceptance";

ExperimentConfig desk_config(std::uint64_t seed) {
  ExperimentConfig c;
  c.dataset.spec = "ou2d";
  c.dataset.map = MapKind::kRandomSmooth;
  c.dataset.n = 32;
  c.dataset.steps = 1000;
  c.dataset.dt = 0.01;
  c.dataset.seed = seed;
  c.dataset.map_seed = seed;
  c.model.seed = seed;
  c.training.seed = seed;
  return c;
}

constexpr int kSeeds = 5;
// Observation noise variance for the robustness run: equal to the decoder
// noise variance tau the model assumes.
constexpr double kNoiseVariance = 0.01;

std::vector<MetricsReport> desk_runs(bool noisy) {
  std::vector<MetricsReport> out;
  for (int s = 0; s < kSeeds; ++s) {
    ExperimentConfig c = desk_config(static_cast<std::uint64_t>(s));
    if (noisy) c.dataset.noise = {NoiseKind::kGaussian, kNoiseVariance, 3};
    const auto dir = kOut / ((noisy ? "noisy_" : "desk_") + std::to_string(s));
    out.push_back(run_experiment(c, dir, 1).runs.front());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const bool strict = argc > 1 && std::string(argv[1]) == "--strict";
  report("crlb_exactness", [] {
    const double a = crlb(2, 0.01, 1000), b = crlb(4, 0.01, 1000), c = crlb(1, 0.01, 1000);
    const auto t = std::chrono::steady_clock::now();
    for (int i = 0; i < 1000; ++i) (void)crlb(2, 0.01, 1000);
    const double per_call = seconds_since(t) / 1000;
    return Outcome{a == 0.2 && b == 0.4 && c == 0.1 && per_call < 1e-3,
                   fmt("%.17g %.17g %.17g", a, b, c)};
  });

  report("gradient_suite", [] {
    const auto t = std::chrono::steady_clock::now();
    const VaeModel m = oracle::tiny_model(2024, true);
    const auto probes = oracle::loss_gradient_probes(m, oracle::random_batch(2, 1, 16, 99), 50, 7);
    double worst = 0.0;
    for (const auto& p : probes) worst = std::max(worst, p.rel_error);
    return Outcome{worst <= 1e-4 && seconds_since(t) < 10, fmt("max relative error %.3g over 50 probes", worst)};
  });

  report("procrustes_oracle", [] {
    const auto t = std::chrono::steady_clock::now();
    double worst = 0.0;
    const int dims[] = {1, 2, 4};
    for (int i = 0; i < 20; ++i) {
      const int d = dims[i % 3];
      const std::uint64_t s = 4000 + 10 * static_cast<std::uint64_t>(i);
      const Mat a = oracle::normal_matrix(d, 40, s);
      Mat b = (oracle::rotation(d, s + 1) * a).colwise() + Vec(oracle::normal_matrix(d, 1, s + 2));
      b += 0.1 * oracle::normal_matrix(d, 40, s + 3);
      const double closed = procrustes(a, b, AlignMode::kOrthogonal).residual;
      worst = std::max(worst, std::abs(closed - oracle::procrustes_by_descent(a, b, true)));
    }
    return Outcome{worst <= 1e-6 && seconds_since(t) < 30, fmt("max |closed - descent| %.3g on 20 instances", worst)};
  });

  report("lamperti_gbm", [] {
    const auto t = std::chrono::steady_clock::now();
    LampertiOptions o;
    o.base_point = Vec::Ones(1);
    const LampertiMap m = LampertiMap::build(catalog("gbm1d"), o);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double y = 0.2 + 4.8 * i / 99.0;
      const Vec z = m.h(Vec::Constant(1, y), 0.0);
      worst = std::max(worst, std::abs(m.transformed_drift(z, 0.0)[0]));
    }
    return Outcome{worst <= 1e-6 && seconds_since(t) < 5, fmt("max |mu_tilde| %.3g on [0.2, 5]", worst)};
  });

  report("sde_moment", [] {
    const auto t = std::chrono::steady_clock::now();
    const std::size_t n = 200000;
    const Trajectory tr = simulate(catalog("ou2d"), Vec::Zero(2), uniform_times(n, 0.01), 2024);
    const Mat tail = tr.states.rightCols(static_cast<Eigen::Index>(n / 2));
    double worst = 0.0;
    std::string detail;
    for (int k = 0; k < 2; ++k) {
      const double mean = tail.row(k).mean();
      const double var = (tail.row(k).array() - mean).square().mean();
      worst = std::max(worst, std::abs(var - 0.125) / 0.125);
      detail += fmt("var[%g] = %.4f ", k, var);
    }
    return Outcome{worst <= 0.05 && seconds_since(t) < 10, detail + fmt("max relative error %.3g", worst)};
  });

  report("isometry_invariance", [] {
    VaeConfig c;
    c.n = 6;
    c.d = 3;
    c.decoder_hidden = {};
    c.drift_depth = 1;
    c.tau = 0.05;
    c.seed = 11;
    VaeModel m(c);
    m.decoder.bias(0) = oracle::normal_matrix(6, 1, 12);
    m.drift.weight(0) = -Mat::Identity(3, 3) + 0.3 * oracle::normal_matrix(3, 3, 13);
    m.drift.bias(0) = oracle::normal_matrix(3, 1, 14);
    const Mat q = oracle::rotation(3, 15);
    const Vec b = oracle::normal_matrix(3, 1, 16);
    const VaeModel moved = m.isometry(q, b);
    const Vec pm = oracle::normal_matrix(3, 1, 17);
    const Mat pc = 0.7 * Mat::Identity(3, 3);
    const GeneratedPairs g = generate_pairs(m, oracle::normal_matrix(3, 100, 18), 0.05, 19);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double a = linear_pair_log_density(m, pm, pc, g.x0.col(i), g.x1.col(i), 0.05);
      const double bb = linear_pair_log_density(moved, q * pm + b, q * pc * q.transpose(),
                                                g.x0.col(i), g.x1.col(i), 0.05);
      worst = std::max(worst, std::abs(a - bb));
    }
    return Outcome{worst <= 1e-8, fmt("max |log p - log p'| %.3g on 100 pairs", worst)};
  });

  std::vector<MetricsReport> clean;
  report("desk_recovery", [&] {
    const auto t = std::chrono::steady_clock::now();
    clean = desk_runs(false);
    std::vector<double> lat, mu;
    for (const auto& r : clean) {
      lat.push_back(r.l_latent);
      mu.push_back(r.l_mu);
    }
    const double secs = seconds_since(t);
    const double bound = 5 * crlb(2, 0.01, 1000);
    return Outcome{median(lat) <= 0.1 && median(mu) <= bound && secs <= 15 * 60,
                   fmt("median L_latent %.4g, median L_mu %.4g (bound %.2g)", median(lat), median(mu), bound)};
  });

  report("noise_robustness", [&] {
    if (clean.empty()) return Outcome{false, "needs the desk runs"};
    const auto noisy = desk_runs(true);
    std::vector<double> a, b;
    for (const auto& r : clean) a.push_back(r.l_latent);
    for (const auto& r : noisy) b.push_back(r.l_latent);
    const double ratio = median(b) / median(a);
    return Outcome{ratio <= 1.25, fmt("median L_latent noisy %.4g vs clean %.4g (ratio %.3g)", median(b),
                                      median(a), ratio)};
  });

  report("dimension_selection", [] {
    int linear_hits = 0;
    for (int s = 0; s < kSeeds; ++s) {
      ExperimentConfig c;
      c.dataset.spec = "ou3d";
      c.dataset.map = MapKind::kLinear;
      c.dataset.n = 6;
      c.dataset.seed = static_cast<std::uint64_t>(s);
      c.dataset.map_seed = static_cast<std::uint64_t>(s) + 100;
      const PairedDataset data = make_dataset(c.dataset);
      if (dimsearch(c, data, DimMode::kLinearLikelihood, {1, 2, 3, 4, 5}).selected == 3) ++linear_hits;
    }
    int diag_hits = 0;
    std::string picks;
    for (int s = 0; s < kSeeds; ++s) {
      ExperimentConfig c = desk_config(static_cast<std::uint64_t>(s));
      c.model.lambda1 = 1.0;
      const PairedDataset data = make_dataset(c.dataset);
      const DimsearchReport r = dimsearch(c, data, DimMode::kDiagHeuristic, {6});
      picks += std::to_string(r.selected);
      if (r.selected == 2) ++diag_hits;
    }
    return Outcome{linear_hits == kSeeds && diag_hits >= 4,
                   "linear " + std::to_string(linear_hits) + "/5, diag " + std::to_string(diag_hits) +
                       "/5 (suggested " + picks + ")"};
  });

  report("loss_term_expectations", [] {
    int ok = 0;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      const oracle::McConfig cfg = oracle::mc_config(i);
      const auto r = oracle::loss_term_checks(cfg.model, cfg.x0, cfg.x1, cfg.dt, 100000, 7000 + 10 * i);
      bool all = true;
      for (const oracle::McCheck* c : {&r.entropy, &r.prior, &r.transition, &r.reconstruction}) {
        if (c->mc_se > 0) worst = std::max(worst, std::abs(c->closed - c->mc_mean) / c->mc_se);
        all = all && (c->within(3) || (c->mc_se == 0 && c->closed == c->mc_mean));
      }
      if (all) ++ok;
    }
    return Outcome{ok == 10, std::to_string(ok) + "/10 configurations, worst " + fmt("%.2f", worst) + " SE"};
  });

  std::printf("%d/%d criteria passed\n", total - failures, total);
  return strict && failures > 0 ? 1 : 0;
}
