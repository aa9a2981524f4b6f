#include "lsde/sde.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "lsde/error.hpp"
#include "lsde/lsde_io.hpp"
#include "lsde/rng.hpp"

namespace lsde {

Vec euler_maruyama_step(const SdeSpec& spec, const Vec& z, double t, double dt,
                        const Vec& noise) {
  if (z.size() != spec.dim || noise.size() != spec.dim) {
    throw InvalidInput("euler_maruyama_step: state/noise size does not match spec '" +
                       spec.name + "' dim " + std::to_string(spec.dim));
  }
  if (!(dt > 0.0)) throw InvalidInput("euler_maruyama_step: dt must be positive");

  const double sqrt_dt = std::sqrt(dt);
  Vec next = z + spec.drift(z, t) * dt;
  if (spec.isotropic) {
    next += sqrt_dt * noise;
  } else {
    next += spec.diffusion(z, t) * (sqrt_dt * noise);
  }
  return next;
}

Vec wiener_noise(std::uint64_t seed, std::size_t step, int dim) {
  const CounterRng rng(seed, Stream::kWiener);
  Vec w(dim);
  for (int k = 0; k < dim; ++k) {
    w[k] = rng.normal(static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(dim) +
                      static_cast<std::uint64_t>(k));
  }
  return w;
}

Trajectory simulate(const SdeSpec& spec, const Vec& z0, std::span<const double> times,
                    std::uint64_t seed) {
  if (z0.size() != spec.dim) throw InvalidInput("simulate: z0 size does not match spec dim");
  if (times.empty()) throw InvalidInput("simulate: empty time schedule");
  for (std::size_t k = 1; k < times.size(); ++k) {
    if (!(times[k] > times[k - 1])) {
      throw InvalidInput("simulate: times must be strictly increasing (index " +
                         std::to_string(k) + ")");
    }
  }

  Trajectory traj;
  traj.times.assign(times.begin(), times.end());
  traj.seed = seed;
  traj.spec_name = spec.name;
  traj.states.resize(spec.dim, static_cast<Eigen::Index>(times.size()));
  traj.states.col(0) = z0;
  Vec z = z0;
  for (std::size_t k = 1; k < times.size(); ++k) {
    const double dt = times[k] - times[k - 1];
    z = euler_maruyama_step(spec, z, times[k - 1], dt, wiener_noise(seed, k - 1, spec.dim));
    traj.states.col(static_cast<Eigen::Index>(k)) = z;
  }
  return traj;
}

std::vector<double> uniform_times(std::size_t n_steps, double dt, double t0) {
  std::vector<double> t(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) t[k] = t0 + dt * static_cast<double>(k);
  return t;
}

namespace {

SdeSpec isotropic(std::string name, int dim, DriftFn drift) {
  SdeSpec s;
  s.name = std::move(name);
  s.dim = dim;
  s.drift = std::move(drift);
  s.diffusion = [dim](const Vec&, double) -> Mat { return Mat::Identity(dim, dim); };
  s.isotropic = true;
  return s;
}

std::map<std::string, SdeSpec (*)()> build_catalog() {
  std::map<std::string, SdeSpec (*)()> m;
  m["zero"] = [] {
    SdeSpec s;
    s.name = "zero";
    s.dim = 2;
    s.drift = [](const Vec& z, double) -> Vec { return Vec::Zero(z.size()); };
    s.diffusion = [](const Vec& z, double) -> Mat { return Mat::Zero(z.size(), z.size()); };
    s.reducible = false;
    return s;
  };
  m["constant2d"] = [] {
    return isotropic("constant2d", 2, [](const Vec&, double) -> Vec {
      return Vec{{-0.25, 0.25}};
    });
  };
  m["ou2d"] = [] {
    return isotropic("ou2d", 2, [](const Vec& z, double) -> Vec { return -4.0 * z; });
  };
  m["circle2d"] = [] {
    SdeSpec s = isotropic("circle2d", 2, [](const Vec& z, double) -> Vec {
      return Vec{{-z[0] - 3.0 * z[1], z[1] - 3.0 * z[0]}};
    });
    s.note = "drift (-x-3y, y-3x)";
    return s;
  };
  m["constant4d"] = [] {
    return isotropic("constant4d", 4, [](const Vec&, double) -> Vec { return Vec::Zero(4); });
  };
  // State layout (x0, x1, y0, y1): x holds the horizontal coordinates of
  // both objects and y the vertical ones.
  m["ou4d"] = [] {
    return isotropic("ou4d", 4, [](const Vec& z, double) -> Vec {
      return Vec{{-z[0] - 1.0, -z[1] - 1.0, -z[2] + 1.0, -z[3] + 1.0}};
    });
  };
  m["circle4d"] = [] {
    return isotropic("circle4d", 4, [](const Vec& z, double) -> Vec {
      return Vec{{-z[0] - 2.0 * z[1], -z[1] + 2.0 * z[0], -z[2] - 2.0 * z[3],
                  -z[3] + 2.0 * z[2]}};
    });
  };
  m["ou1d"] = [] {
    return isotropic("ou1d", 1, [](const Vec& z, double) -> Vec { return -2.0 * z; });
  };
  m["double_well1d"] = [] {
    return isotropic("double_well1d", 1, [](const Vec& z, double) -> Vec {
      return Vec::Constant(1, 2.0 * z[0] * (1.0 - z[0] * z[0]));
    });
  };
  m["gbm1d"] = [] {
    SdeSpec s;
    s.name = "gbm1d";
    s.dim = 1;
    s.drift = [](const Vec& z, double) -> Vec { return 0.5 * z; };
    s.diffusion = [](const Vec& z, double) -> Mat { return Mat::Constant(1, 1, z[0]); };
    s.note = "reducible on the positive half-line only";
    return s;
  };
  m["ou3d"] = [] {
    return isotropic("ou3d", 3, [](const Vec& z, double) -> Vec {
      return Vec{{-z[0], -2.0 * z[1], -3.0 * z[2]}};
    });
  };
  m["cauchy3d"] = [] {
    return isotropic("cauchy3d", 3, [](const Vec& z, double) -> Vec {
      return Vec{{-z[0] / (1.0 + z[0] * z[0]), -2.0 * z[1] / (1.0 + z[1] * z[1]),
                  -3.0 * z[2] / (1.0 + z[2] * z[2])}};
    });
  };
  m["anisotropic3d"] = [] {
    SdeSpec s;
    s.name = "anisotropic3d";
    s.dim = 3;
    s.drift = [](const Vec& z, double) -> Vec {
      return Vec{{-z[0], -2.0 * z[1], 0.6 - 0.3 * z[2]}};
    };
    s.diffusion = [](const Vec& z, double) -> Mat {
      Mat m{{1.0, 2.0, 0.0}, {2.5, 3.0, 0.0}, {0.0, 0.0, std::sqrt(std::max(z[2], 0.0))}};
      return m;
    };
    // The constant 2x2 block is not symmetric.
    s.reducible = false;
    s.note = "sqrt entry clamped at 0 for negative states";
    return s;
  };
  return m;
}

const std::map<std::string, SdeSpec (*)()>& registry() {
  static const auto reg = build_catalog();
  return reg;
}

}  // namespace

SdeSpec catalog(std::string_view name) {
  const auto& reg = registry();
  const auto it = reg.find(std::string(name));
  if (it == reg.end()) {
    std::string known;
    for (const auto& n : catalog_names()) known += (known.empty() ? "" : ", ") + n;
    throw NotFound("unknown SDE '" + std::string(name) + "'; catalog: " + known);
  }
  return it->second();
}

const std::vector<std::string>& catalog_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [k, _] : registry()) v.push_back(k);
    return v;
  }();
  return names;
}

void validate_spec(const SdeSpec& spec, std::span<const Vec> probes, double t) {
  if (spec.dim <= 0) throw InvalidInput("spec '" + spec.name + "' has non-positive dim");
  for (const Vec& z : probes) {
    if (z.size() != spec.dim) throw InvalidInput("probe size does not match spec dim");
    const Vec mu = spec.drift(z, t);
    const Mat sig = spec.diffusion(z, t);
    if (mu.size() != spec.dim) throw InvalidInput("drift of '" + spec.name + "' has wrong size");
    if (sig.rows() != spec.dim || sig.cols() != spec.dim) {
      throw InvalidInput("diffusion of '" + spec.name + "' has wrong shape");
    }
  }
}

void save_trajectory(const Trajectory& traj, const std::filesystem::path& base) {
  write_lsde(std::filesystem::path(base).concat(".bin"), traj.states.transpose());
  nlohmann::json j;
  j["spec"] = traj.spec_name;
  j["seed"] = traj.seed;
  j["times"] = traj.times;
  std::ofstream out(std::filesystem::path(base).concat(".json"));
  out << j.dump(2) << '\n';
}

Trajectory load_trajectory(const std::filesystem::path& base) {
  Trajectory traj;
  traj.states = read_lsde(std::filesystem::path(base).concat(".bin")).transpose();
  std::ifstream in(std::filesystem::path(base).concat(".json"));
  if (!in) throw NotFound("missing trajectory sidecar for " + base.string());
  const auto j = nlohmann::json::parse(in);
  traj.spec_name = j.at("spec").get<std::string>();
  traj.seed = j.at("seed").get<std::uint64_t>();
  traj.times = j.at("times").get<std::vector<double>>();
  if (traj.times.size() != static_cast<std::size_t>(traj.states.cols())) {
    throw InvalidInput("trajectory sidecar length does not match payload");
  }
  return traj;
}

}  // namespace lsde
