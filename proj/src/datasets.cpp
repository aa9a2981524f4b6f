#include "lsde/datasets.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "lsde/error.hpp"
#include "lsde/lsde_io.hpp"
#include "lsde/rng.hpp"

namespace lsde {

std::string to_string(MapKind kind) {
  switch (kind) {
    case MapKind::kRandomSmooth: return "random_smooth";
    case MapKind::kRasterBall: return "raster_ball";
    case MapKind::kLinear: return "linear";
  }
  return "?";
}

MapKind map_kind_from_string(const std::string& s) {
  if (s == "random_smooth") return MapKind::kRandomSmooth;
  if (s == "raster_ball") return MapKind::kRasterBall;
  if (s == "linear") return MapKind::kLinear;
  throw InvalidInput("unknown map kind '" + s + "' (random_smooth | raster_ball | linear)");
}

namespace {

Mat normal_matrix(const CounterRng& rng, std::uint64_t offset, int rows, int cols) {
  Mat m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) {
      m(r, c) = rng.normal(offset + static_cast<std::uint64_t>(c) * rows + r);
    }
  }
  return m;
}

Mat orthonormal_columns(const Mat& m) {
  Eigen::HouseholderQR<Mat> qr(m);
  Mat q = qr.householderQ() * Mat::Identity(m.rows(), m.cols());
  // Fix signs so the factor is a deterministic function of m.
  const Mat r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < m.cols(); ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return q;
}

double spectral_norm(const Mat& m) {
  return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

}  // namespace

std::vector<Vec> injectivity_probes(int d) {
  std::vector<Vec> probes;
  const CounterRng rng(0x5eed, Stream::kAmbientMap);
  for (int i = 0; i < 100; ++i) {
    Vec z(d);
    for (int k = 0; k < d; ++k) z[k] = rng.uniform(1000000 + static_cast<std::uint64_t>(i) * d + k);
    probes.push_back(z);
  }
  return probes;
}

AmbientMap make_ambient_map(MapKind kind, int d, int n, std::uint64_t seed,
                            const AmbientMapOptions& opts) {
  if (d <= 0) throw InvalidInput("latent dimension must be positive");
  if (n < d) throw InvalidInput("ambient dimension n must be >= latent dimension d");

  AmbientMap map;
  map.kind = kind;
  map.latent_dim = d;
  map.ambient_dim = n;
  map.seed = seed;
  map.options = opts;
  const CounterRng rng(seed, Stream::kAmbientMap);

  switch (kind) {
    case MapKind::kLinear: {
      if (opts.identity) {
        map.skip = Mat::Identity(n, d);
        break;
      }
      const Mat q = orthonormal_columns(normal_matrix(rng, 0, n, d));
      // Log-uniform spectrum on [0.5, 2].
      Vec spectrum(d);
      for (int k = 0; k < d; ++k) {
        spectrum[k] = std::exp(std::log(0.5) + rng.uniform(900000 + k) * std::log(4.0));
      }
      map.skip = q * spectrum.asDiagonal();
      break;
    }
    case MapKind::kRandomSmooth: {
      // Unnormalised Gaussian skip: singular values near sqrt(n), so each
      // latent unit moves the observation by O(sqrt(n)) like an image would.
      map.skip = normal_matrix(rng, 0, n, d);
      const double skip_min = Eigen::JacobiSVD<Mat>(map.skip).singularValues()(d - 1);
      if (!(skip_min > 0.0)) throw InvalidInput("random_smooth: rank-deficient skip matrix");
      Mat w1 = normal_matrix(rng, 100000, opts.hidden, d);
      Mat w2 = normal_matrix(rng, 200000, n, opts.hidden);
      map.b1 = Vec(opts.hidden);
      for (int k = 0; k < opts.hidden; ++k) map.b1[k] = rng.normal(300000 + k);
      // |tanh'| <= 1, so the tanh branch has Jacobian norm at most
      // ||w2|| ||w1|| = nonlinearity * sigma_min(skip).
      const double s1 = spectral_norm(w1);
      const double s2 = spectral_norm(w2);
      map.w1 = w1 * (3.0 / s1);
      map.w2 = w2 * (opts.nonlinearity * skip_min / (3.0 * s2));
      break;
    }
    case MapKind::kRasterBall: {
      if (d != 2) throw InvalidInput("raster_ball requires latent dimension 2");
      if (n != opts.side * opts.side) {
        throw InvalidInput("raster_ball requires n == side*side (side " +
                           std::to_string(opts.side) + ")");
      }
      break;
    }
  }

  double margin = INFINITY;
  for (const Vec& z : injectivity_probes(d)) {
    const Mat jac = map.jacobian(z);
    margin = std::min(margin, Eigen::JacobiSVD<Mat>(jac).singularValues()(d - 1));
  }
  map.injectivity_margin = margin;
  return map;
}

Vec AmbientMap::apply(const Vec& z) const {
  if (z.size() != latent_dim) throw InvalidInput("ambient map: latent size mismatch");
  switch (kind) {
    case MapKind::kLinear: return skip * z;
    case MapKind::kRandomSmooth:
      return skip * z + w2 * (w1 * z + b1).array().tanh().matrix();
    case MapKind::kRasterBall: {
      const int side = options.side;
      const double inv2w2 = 1.0 / (2.0 * options.bump_width * options.bump_width);
      Vec out(ambient_dim);
      for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
          const double dx = static_cast<double>(i) / side - z[0];
          const double dy = static_cast<double>(j) / side - z[1];
          out[i * side + j] = std::exp(-(dx * dx + dy * dy) * inv2w2);
        }
      }
      return out;
    }
  }
  return {};
}

Mat AmbientMap::apply_batch(const Mat& z) const {
  Mat out(ambient_dim, z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) out.col(c) = apply(z.col(c));
  return out;
}

Mat AmbientMap::jacobian(const Vec& z) const {
  switch (kind) {
    case MapKind::kLinear: return skip;
    case MapKind::kRandomSmooth: {
      const Vec th = (w1 * z + b1).array().tanh().matrix();
      const Vec dth = (1.0 - th.array().square()).matrix();
      return skip + w2 * dth.asDiagonal() * w1;
    }
    case MapKind::kRasterBall: {
      const int side = options.side;
      const double w2inv = 1.0 / (options.bump_width * options.bump_width);
      const Vec v = apply(z);
      Mat jac(ambient_dim, 2);
      for (int i = 0; i < side; ++i) {
        for (int j = 0; j < side; ++j) {
          const int p = i * side + j;
          jac(p, 0) = v[p] * (static_cast<double>(i) / side - z[0]) * w2inv;
          jac(p, 1) = v[p] * (static_cast<double>(j) / side - z[1]) * w2inv;
        }
      }
      return jac;
    }
  }
  return {};
}

double NoiseSpec::student_scale() const {
  if (dof <= 2) return std::sqrt(variance);
  return std::sqrt(variance * (dof - 2.0) / dof);
}

std::string to_string(const NoiseSpec& noise) {
  std::ostringstream os;
  switch (noise.kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kGaussian: os << "gaussian:" << noise.variance; break;
    case NoiseKind::kStudentT: os << "student_t:" << noise.variance << ':' << noise.dof; break;
  }
  return os.str();
}

NoiseSpec parse_noise(const std::string& s) {
  NoiseSpec n;
  if (s == "none" || s.empty()) return n;
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  try {
    if (parts[0] == "gaussian" && parts.size() == 2) {
      n.kind = NoiseKind::kGaussian;
      n.variance = std::stod(parts[1]);
    } else if (parts[0] == "student_t" && (parts.size() == 2 || parts.size() == 3)) {
      n.kind = NoiseKind::kStudentT;
      n.variance = std::stod(parts[1]);
      if (parts.size() == 3) n.dof = std::stoi(parts[2]);
    } else {
      throw InvalidInput("");
    }
  } catch (const std::exception&) {
    throw InvalidInput("bad noise '" + s + "' (none | gaussian:VAR | student_t:VAR[:DOF])");
  }
  if (n.variance < 0.0 || n.dof < 1) throw InvalidInput("bad noise parameters in '" + s + "'");
  return n;
}

Mat PairedDataset::to_raw_latent(const Mat& rescaled) const {
  if (meta.rescale_lo.size() == 0) return rescaled;
  Mat raw = rescaled;
  for (Eigen::Index k = 0; k < raw.rows(); ++k) {
    const double lo = meta.rescale_lo[k], hi = meta.rescale_hi[k];
    if (hi > lo) raw.row(k) = (raw.row(k).array() * (hi - lo) + lo).matrix();
  }
  return raw;
}

PairedDataset PairedDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw InvalidInput("dataset slice out of range");
  const auto b = static_cast<Eigen::Index>(begin);
  const auto len = static_cast<Eigen::Index>(end - begin);
  PairedDataset out;
  out.x0 = x0.middleCols(b, len);
  out.x1 = x1.middleCols(b, len);
  out.dt = dt.segment(b, len);
  if (z0) out.z0 = z0->middleCols(b, len);
  if (z1) out.z1 = z1->middleCols(b, len);
  out.meta = meta;
  return out;
}

Vec default_initial_state(const SdeSpec& spec) {
  if (spec.name == "gbm1d") return Vec::Ones(1);
  if (spec.name == "anisotropic3d") return Vec{{0.0, 0.0, 1.0}};
  return Vec::Zero(spec.dim);
}

PairedDataset generate(const GenerateOptions& opts, const AmbientMap& map) {
  const SdeSpec spec = catalog(opts.spec_name);
  if (map.latent_dim != spec.dim) {
    throw InvalidInput("ambient map latent dim " + std::to_string(map.latent_dim) +
                       " != SDE dim " + std::to_string(spec.dim));
  }
  if (opts.n_trajectories < 1) throw InvalidInput("n_trajectories must be >= 1");

  std::vector<double> times;
  // Nominal gaps are stored as given; differencing the cumulative times
  // would perturb them in the last bits.
  std::vector<double> gaps;
  if (!opts.dt_schedule.empty()) {
    gaps = opts.dt_schedule;
    times.push_back(0.0);
    for (double gap : opts.dt_schedule) {
      if (!(gap > 0.0)) throw InvalidInput("dt schedule entries must be positive");
      times.push_back(times.back() + gap);
    }
  } else {
    if (!(opts.dt > 0.0)) throw InvalidInput("dt must be positive");
    if (opts.n_steps < 1) throw InvalidInput("need at least one step");
    times = uniform_times(opts.n_steps, opts.dt);
    gaps.assign(opts.n_steps, opts.dt);
  }
  const Vec z0 = opts.z0.size() ? opts.z0 : default_initial_state(spec);
  const int n_traj = opts.n_trajectories;
  const auto n_points = static_cast<Eigen::Index>(times.size());
  const int d = spec.dim;

  std::vector<Mat> paths(n_traj);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < n_traj; ++j) {
    const std::uint64_t seed = n_traj == 1 ? opts.seed : splitmix64(opts.seed + j);
    paths[j] = simulate(spec, z0, times, seed).states;
  }

  DatasetMeta meta;
  meta.generation = opts;
  meta.generation.z0 = z0;
  meta.map_kind = map.kind;
  meta.latent_dim = d;
  meta.ambient_dim = map.ambient_dim;
  meta.map_seed = map.seed;
  meta.map_options = map.options;
  meta.injectivity_margin = map.injectivity_margin;

  if (opts.rescale) {
    Vec lo = Vec::Constant(d, INFINITY), hi = Vec::Constant(d, -INFINITY);
    for (const Mat& p : paths) {
      lo = lo.cwiseMin(p.rowwise().minCoeff());
      hi = hi.cwiseMax(p.rowwise().maxCoeff());
    }
    meta.rescale_lo = lo;
    meta.rescale_hi = hi;
    for (int k = 0; k < d; ++k) {
      if (!(hi[k] > lo[k])) {
        meta.rescale_skipped.push_back(k);
        continue;
      }
      for (Mat& p : paths) p.row(k) = ((p.row(k).array() - lo[k]) / (hi[k] - lo[k])).matrix();
    }
  }

  const std::size_t pairs_per = times.size() - 1;
  const auto total = static_cast<Eigen::Index>(pairs_per * n_traj);
  PairedDataset ds;
  ds.x0.resize(map.ambient_dim, total);
  ds.x1.resize(map.ambient_dim, total);
  ds.dt.resize(total);
  ds.z0 = Mat(d, total);
  ds.z1 = Mat(d, total);

  const CounterRng noise_rng(opts.seed, Stream::kObservationNoise);
  const double gauss_sd = std::sqrt(opts.noise.variance);
  const double t_scale = opts.noise.student_scale();
  const auto n_amb = static_cast<std::uint64_t>(map.ambient_dim);

#pragma omp parallel for schedule(static)
  for (int j = 0; j < n_traj; ++j) {
    Mat obs = map.apply_batch(paths[j]);
    if (opts.noise.kind != NoiseKind::kNone) {
      for (Eigen::Index c = 0; c < n_points; ++c) {
        const std::uint64_t base =
            (static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(n_points) +
             static_cast<std::uint64_t>(c)) * n_amb;
        for (Eigen::Index r = 0; r < obs.rows(); ++r) {
          const std::uint64_t idx = base + static_cast<std::uint64_t>(r);
          obs(r, c) += opts.noise.kind == NoiseKind::kGaussian
                           ? gauss_sd * noise_rng.normal(idx)
                           : t_scale * noise_rng.student_t(idx, opts.noise.dof);
        }
      }
    }
    const auto off = static_cast<Eigen::Index>(pairs_per * j);
    const auto len = static_cast<Eigen::Index>(pairs_per);
    ds.x0.middleCols(off, len) = obs.leftCols(len);
    ds.x1.middleCols(off, len) = obs.rightCols(len);
    ds.z0->middleCols(off, len) = paths[j].leftCols(len);
    ds.z1->middleCols(off, len) = paths[j].rightCols(len);
    for (Eigen::Index k = 0; k < len; ++k) ds.dt[off + k] = gaps[static_cast<std::size_t>(k)];
  }
  ds.meta = std::move(meta);
  return ds;
}

namespace {

nlohmann::json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const DatasetMeta& meta) {
  const auto& g = meta.generation;
  nlohmann::json j;
  j["spec"] = g.spec_name;
  j["n_steps"] = g.n_steps;
  j["dt"] = g.dt;
  j["dt_schedule"] = g.dt_schedule;
  j["noise"] = to_string(g.noise);
  j["rescale"] = g.rescale;
  j["seed"] = g.seed;
  j["z0"] = vec_json(g.z0);
  j["n_trajectories"] = g.n_trajectories;
  j["map"] = {{"kind", to_string(meta.map_kind)},
              {"seed", meta.map_seed},
              {"latent_dim", meta.latent_dim},
              {"ambient_dim", meta.ambient_dim},
              {"side", meta.map_options.side},
              {"bump_width", meta.map_options.bump_width},
              {"hidden", meta.map_options.hidden},
              {"nonlinearity", meta.map_options.nonlinearity},
              {"identity", meta.map_options.identity},
              {"injectivity_margin", meta.injectivity_margin}};
  j["rescale_lo"] = vec_json(meta.rescale_lo);
  j["rescale_hi"] = vec_json(meta.rescale_hi);
  j["rescale_skipped"] = meta.rescale_skipped;
  return j;
}

DatasetMeta meta_from_json(const nlohmann::json& j) {
  DatasetMeta meta;
  auto& g = meta.generation;
  g.spec_name = j.at("spec").get<std::string>();
  g.n_steps = j.at("n_steps").get<std::size_t>();
  g.dt = j.at("dt").get<double>();
  g.dt_schedule = j.at("dt_schedule").get<std::vector<double>>();
  g.noise = parse_noise(j.at("noise").get<std::string>());
  g.rescale = j.at("rescale").get<bool>();
  g.seed = j.at("seed").get<std::uint64_t>();
  g.z0 = json_vec(j.at("z0"));
  g.n_trajectories = j.at("n_trajectories").get<int>();
  const auto& m = j.at("map");
  meta.map_kind = map_kind_from_string(m.at("kind").get<std::string>());
  meta.map_seed = m.at("seed").get<std::uint64_t>();
  meta.latent_dim = m.at("latent_dim").get<int>();
  meta.ambient_dim = m.at("ambient_dim").get<int>();
  meta.map_options.side = m.at("side").get<int>();
  meta.map_options.bump_width = m.at("bump_width").get<double>();
  meta.map_options.hidden = m.at("hidden").get<int>();
  meta.map_options.nonlinearity = m.at("nonlinearity").get<double>();
  meta.map_options.identity = m.at("identity").get<bool>();
  meta.injectivity_margin = m.at("injectivity_margin").get<double>();
  meta.rescale_lo = json_vec(j.at("rescale_lo"));
  meta.rescale_hi = json_vec(j.at("rescale_hi"));
  meta.rescale_skipped = j.at("rescale_skipped").get<std::vector<int>>();
  return meta;
}

void save_dataset(const PairedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto n = ds.x0.rows();
  const auto len = ds.x0.cols();
  Mat pairs(len, 2 * n + 1);
  pairs.leftCols(n) = ds.x0.transpose();
  pairs.middleCols(n, n) = ds.x1.transpose();
  pairs.col(2 * n) = ds.dt;
  write_lsde(dir / "pairs.bin", pairs);
  if (ds.z0 && ds.z1) {
    const auto d = ds.z0->rows();
    Mat lat(len, 2 * d);
    lat.leftCols(d) = ds.z0->transpose();
    lat.rightCols(d) = ds.z1->transpose();
    write_lsde(dir / "latent.bin", lat);
  }
  std::ofstream out(dir / "meta.json");
  out << to_json(ds.meta).dump(2) << '\n';
}

PairedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw NotFound("no meta.json in " + dir.string());
  PairedDataset ds;
  ds.meta = meta_from_json(nlohmann::json::parse(in));
  const Mat pairs = read_lsde(dir / "pairs.bin");
  const auto n = ds.meta.ambient_dim;
  if (pairs.cols() != 2 * n + 1) throw InvalidInput("pairs.bin width does not match meta");
  ds.x0 = pairs.leftCols(n).transpose();
  ds.x1 = pairs.middleCols(n, n).transpose();
  ds.dt = pairs.col(2 * n);
  if (std::filesystem::exists(dir / "latent.bin")) {
    const Mat lat = read_lsde(dir / "latent.bin");
    const auto d = lat.cols() / 2;
    ds.z0 = Mat(lat.leftCols(d).transpose());
    ds.z1 = Mat(lat.rightCols(d).transpose());
  }
  return ds;
}

}  // namespace lsde
