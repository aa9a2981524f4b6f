// Serial reference vs OpenMP kernels: loss+gradient and ensemble simulation.
#include <chrono>
#include <cstdio>

#include <omp.h>

#include "lsde/kernels.hpp"
#include "lsde/rng.hpp"

using namespace lsde;

namespace {

template <typename F>
double best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());

  VaeConfig cfg;
  cfg.n = 32;
  cfg.d = 2;
  cfg.seed = 1;
  const VaeModel model(cfg);
  const Eigen::Index pairs = 900;
  const CounterRng rng(3, Stream::kTest);
  PairBatch b;
  b.x0 = Mat(cfg.n, pairs);
  b.x1 = Mat(cfg.n, pairs);
  for (Eigen::Index i = 0; i < b.x0.size(); ++i) {
    b.x0.data()[i] = rng.normal(static_cast<std::uint64_t>(i));
    b.x1.data()[i] = rng.normal(static_cast<std::uint64_t>(i + b.x0.size()));
  }
  b.dt = Vec::Constant(pairs, 0.01);
  b.eta0 = reparam_noise(5, Stream::kReparam, 0, 0, 0, pairs, cfg.d);
  b.eta1 = reparam_noise(5, Stream::kReparam, 0, 1, 0, pairs, cfg.d);

  LossEval ls, lp;
  const double ts = best_of(5, [&] { ls = loss_terms_serial(model, b, true); });
  const double tp = best_of(5, [&] { lp = loss_terms_parallel(model, b, true); });
  std::printf("loss+grad  %ld pairs  serial %.4f s  parallel %.4f s  speedup %.2fx  max|dgrad| %.2e\n",
              static_cast<long>(pairs), ts, tp, ts / tp, (ls.grad - lp.grad).cwiseAbs().maxCoeff());

  const SdeSpec spec = catalog("ou2d");
  const Mat z0 = Mat::Zero(2, 2000);
  Mat es, ep;
  const double ss = best_of(3, [&] { es = simulate_ensemble_serial(spec, z0, 0.01, 500, 9); });
  const double sp = best_of(3, [&] { ep = simulate_ensemble_parallel(spec, z0, 0.01, 500, 9); });
  std::printf("ensemble   2000 paths x 500 steps  serial %.4f s  parallel %.4f s  speedup %.2fx  identical %s\n",
              ss, sp, ss / sp, es == ep ? "yes" : "no");
  return 0;
}
