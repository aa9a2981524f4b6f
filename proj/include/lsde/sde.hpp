#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using DriftFn = std::function<Vec(const Vec& z, double t)>;
using DiffusionFn = std::function<Mat(const Vec& z, double t)>;

/// Coefficients of dZ = mu(Z,t) dt + sigma(Z,t) dW on R^dim.
struct SdeSpec {
  std::string name;
  int dim = 0;
  DriftFn drift;
  DiffusionFn diffusion;
  bool time_dependent = false;
  /// sigma == I everywhere; lets the integrator skip the matrix product.
  bool isotropic = false;
  /// sigma is claimed symmetric positive definite and curl-free, so a
  /// Lamperti map to unit diffusion exists.
  bool reducible = true;
  /// Free-form provenance, e.g. which sign convention a drift follows.
  std::string note;
};

struct Trajectory {
  std::vector<double> times;
  /// dim x times.size(); column k is the state at times[k].
  Mat states;
  std::uint64_t seed = 0;
  std::string spec_name;
};

/// One Euler-Maruyama step z + mu dt + sigma sqrt(dt) noise.
Vec euler_maruyama_step(const SdeSpec& spec, const Vec& z, double t, double dt,
                        const Vec& noise);

/// Wiener increment for step `step` drawn from the counter-based stream
/// keyed on (seed, step, coordinate).
Vec wiener_noise(std::uint64_t seed, std::size_t step, int dim);

/// Chains Euler-Maruyama over the (possibly non-uniform) gaps in `times`.
Trajectory simulate(const SdeSpec& spec, const Vec& z0, std::span<const double> times,
                    std::uint64_t seed);

std::vector<double> uniform_times(std::size_t n_steps, double dt, double t0 = 0.0);

/// Named SDEs from the experiment catalog. Throws NotFound.
SdeSpec catalog(std::string_view name);
const std::vector<std::string>& catalog_names();

/// Checks output shapes of drift/diffusion at each probe; throws InvalidInput.
void validate_spec(const SdeSpec& spec, std::span<const Vec> probes, double t = 0.0);

/// Writes `<base>.bin` (LSDE, rows = time points, cols = dim) and a
/// `<base>.json` sidecar with spec name, seed and the time schedule.
void save_trajectory(const Trajectory& traj, const std::filesystem::path& base);
Trajectory load_trajectory(const std::filesystem::path& base);

}  // namespace lsde
