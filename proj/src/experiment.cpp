#include "lsde/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <omp.h>

#include "lsde/error.hpp"

namespace lsde {

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  nlohmann::json j;
  j["dataset"] = {{"spec", d.spec},
                  {"map", to_string(d.map)},
                  {"n", d.n},
                  {"steps", d.steps},
                  {"dt", d.dt},
                  {"dt_schedule", d.dt_schedule},
                  {"noise", to_string(d.noise)},
                  {"rescale", d.rescale},
                  {"seed", d.seed},
                  {"map_seed", d.map_seed},
                  {"side", d.map_options.side},
                  {"bump_width", d.map_options.bump_width},
                  {"hidden", d.map_options.hidden},
                  {"nonlinearity", d.map_options.nonlinearity},
                  {"identity", d.map_options.identity},
                  {"n_trajectories", d.n_trajectories}};
  j["model"] = to_json(c.model);
  j["training"] = to_json(c.training);
  j["evaluation"] = {{"mode", to_string(c.evaluation.mode)},
                     {"diag_threshold", c.evaluation.diag_threshold}};
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  for (const auto& [key, _] : j.items()) {
    if (key != "dataset" && key != "model" && key != "training" && key != "evaluation") {
      throw ConfigError("unknown config block '" + key + "'");
    }
  }
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& dj = j["dataset"];
      auto& d = c.dataset;
      d.spec = dj.value("spec", d.spec);
      d.map = map_kind_from_string(dj.value("map", to_string(d.map)));
      d.n = dj.value("n", d.n);
      d.steps = dj.value("steps", d.steps);
      d.dt = dj.value("dt", d.dt);
      d.dt_schedule = dj.value("dt_schedule", d.dt_schedule);
      d.noise = parse_noise(dj.value("noise", to_string(d.noise)));
      d.rescale = dj.value("rescale", d.rescale);
      d.seed = dj.value("seed", d.seed);
      d.map_seed = dj.value("map_seed", d.map_seed);
      d.map_options.side = dj.value("side", d.map_options.side);
      d.map_options.bump_width = dj.value("bump_width", d.map_options.bump_width);
      d.map_options.hidden = dj.value("hidden", d.map_options.hidden);
      d.map_options.nonlinearity = dj.value("nonlinearity", d.map_options.nonlinearity);
      d.map_options.identity = dj.value("identity", d.map_options.identity);
      d.n_trajectories = dj.value("n_trajectories", d.n_trajectories);
    }
    if (j.contains("model")) c.model = vae_config_from_json(j["model"]);
    if (j.contains("training")) c.training = train_config_from_json(j["training"]);
    if (j.contains("evaluation")) {
      const auto& ej = j["evaluation"];
      c.evaluation.mode = align_mode_from_string(ej.value("mode", to_string(c.evaluation.mode)));
      c.evaluation.diag_threshold = ej.value("diag_threshold", c.evaluation.diag_threshold);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return experiment_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

PairedDataset make_dataset(const DatasetConfig& c) {
  const SdeSpec spec = catalog(c.spec);
  const AmbientMap map = make_ambient_map(c.map, spec.dim, c.n, c.map_seed, c.map_options);
  GenerateOptions g;
  g.spec_name = c.spec;
  g.n_steps = c.steps;
  g.dt = c.dt;
  g.dt_schedule = c.dt_schedule;
  g.noise = c.noise;
  g.rescale = c.rescale;
  g.seed = c.seed;
  g.n_trajectories = c.n_trajectories;
  return generate(g, map);
}

VaeConfig resolve_model(const ExperimentConfig& c, const PairedDataset& data) {
  VaeConfig m = c.model;
  m.n = data.ambient_dim();
  if (m.d == 0) m.d = data.meta.latent_dim;
  return m;
}

int repeat_threads() {
  if (const char* env = std::getenv("LSDE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return omp_get_max_threads();
}

MetricStats summarize(const std::string& name, const std::vector<double>& values) {
  MetricStats s;
  s.name = name;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& c, const std::filesystem::path& out,
                          int repeat, bool verbose) {
  if (repeat < 1) throw ConfigError("repeat must be >= 1");
  std::filesystem::create_directories(out);
  {
    std::ofstream cfg(out / "config.json");
    cfg << to_json(c).dump(2) << '\n';
  }
  const PairedDataset data = stage("generate", [&] {
    PairedDataset ds = make_dataset(c.dataset);
    save_dataset(ds, out / "dataset");
    return ds;
  });

  RunSummary summary;
  summary.runs.resize(static_cast<std::size_t>(repeat));
  std::vector<std::string> errors(static_cast<std::size_t>(repeat));
  std::vector<int> codes(static_cast<std::size_t>(repeat), 0);
  const int threads = std::max(1, std::min(repeat_threads(), repeat));

#pragma omp parallel for num_threads(threads) schedule(dynamic, 1)
  for (int i = 0; i < repeat; ++i) {
    const auto dir = out / ("run_" + std::to_string(i));
    try {
      ExperimentConfig rc = c;
      rc.model.seed = c.model.seed + static_cast<std::uint64_t>(i);
      rc.training.seed = c.training.seed + static_cast<std::uint64_t>(i);
      std::filesystem::create_directories(dir);
      VaeModel model = stage("train", [&] {
        VaeModel m(resolve_model(rc, data));
        const TrainResult tr = train(m, data, rc.training, [&](const EpochLog& e) {
          if (verbose && (e.epoch % 100 == 0 || e.epoch + 1 == rc.training.epochs)) {
#pragma omp critical(lsde_log)
            std::cerr << "run " << i << " epoch " << e.epoch << " total " << e.train.total
                      << " val " << e.val_total << '\n';
          }
        });
        save_model(m, dir / "model");
        write_loss_log(tr.log, dir / "loss_log.csv");
        return m;
      });
      const MetricsReport r =
          stage("evaluate", [&] { return evaluate(model, data, rc.evaluation.mode); });
      nlohmann::json mj = to_json(r);
      mj["seeds"] = {{"dataset", rc.dataset.seed},
                     {"map", rc.dataset.map_seed},
                     {"model", rc.model.seed},
                     {"training", rc.training.seed}};
      mj["config_hash"] = std::hash<std::string>{}(to_json(c).dump());
      std::ofstream(dir / "metrics.json") << mj.dump(2) << '\n';
      summary.runs[static_cast<std::size_t>(i)] = r;
    } catch (const Error& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
      codes[static_cast<std::size_t>(i)] = e.exit_code();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
      codes[static_cast<std::size_t>(i)] = 1;
    }
  }
  for (int i = 0; i < repeat; ++i) {
    if (codes[static_cast<std::size_t>(i)] != 0) {
      const std::string msg = "run " + std::to_string(i) + ": " + errors[static_cast<std::size_t>(i)];
      switch (codes[static_cast<std::size_t>(i)]) {
        case 2: throw ConfigError(msg);
        case 3: throw TrainingDiverged(msg, "run");
        case 4: throw DegenerateData(msg);
        default: throw Error(msg);
      }
    }
  }

  auto collect = [&](auto field) {
    std::vector<double> v;
    for (const auto& r : summary.runs) v.push_back(field(r));
    return v;
  };
  summary.stats = {
      summarize("L_latent", collect([](const MetricsReport& r) { return r.l_latent; })),
      summarize("L_mu", collect([](const MetricsReport& r) { return r.l_mu; })),
      summarize("reconstruction_mse",
                collect([](const MetricsReport& r) { return r.reconstruction_mse; })),
      summarize("crlb", collect([](const MetricsReport& r) { return r.crlb; }))};

  std::ofstream csv(out / "metrics.csv");
  csv.precision(10);
  csv << "dataset,sde,metric,mean,std,runs\n";
  for (const auto& s : summary.stats) {
    csv << to_string(c.dataset.map) << ',' << c.dataset.spec << ',' << s.name << ',' << s.mean
        << ',' << s.std << ',' << repeat << '\n';
  }
  return summary;
}

std::string to_string(DimMode m) {
  return m == DimMode::kDiagHeuristic ? "diag_heuristic" : "linear_likelihood";
}

DimMode dim_mode_from_string(const std::string& s) {
  if (s == "diag_heuristic") return DimMode::kDiagHeuristic;
  if (s == "linear_likelihood") return DimMode::kLinearLikelihood;
  throw ConfigError("unknown dimsearch mode '" + s + "' (diag_heuristic | linear_likelihood)");
}

nlohmann::json to_json(const DimsearchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json jr = {{"size", row.size}};
    if (r.mode == DimMode::kLinearLikelihood) {
      jr["loglik"] = std::isfinite(row.loglik) ? nlohmann::json(row.loglik) : nlohmann::json("-inf");
    } else {
      jr["diagonal"] = row.diagonal;
      jr["suggested"] = row.suggested;
    }
    rows.push_back(jr);
  }
  return {{"mode", to_string(r.mode)}, {"rows", rows}, {"selected", r.selected}};
}

Mat estimate_linear_map(const PairedDataset& data, int j) {
  const int n = data.ambient_dim();
  if (j < 1 || j > n) throw InvalidInput("candidate size must be in [1, n]");
  Mat g = data.x1 - data.x0;
  for (Eigen::Index p = 0; p < g.cols(); ++p) g.col(p) /= std::sqrt(data.dt[p]);
  const Vec mean = g.rowwise().mean();
  const Mat centered = g.colwise() - mean;
  const Mat cov = centered * centered.transpose() / static_cast<double>(g.cols());
  const Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  // Eigenvalues ascending; take the top j. Roundoff-level eigenvalues are
  // numerically zero, so candidates beyond the data's rank stay singular.
  Vec lam = eig.eigenvalues().tail(j).reverse();
  const double floor = 1e-10 * std::max(eig.eigenvalues().maxCoeff(), 0.0);
  lam = (lam.array() > floor).select(lam, 0.0);
  const Mat u = eig.eigenvectors().rightCols(j).rowwise().reverse();
  return u * lam.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

DimsearchReport dimsearch(const ExperimentConfig& c, const PairedDataset& data, DimMode mode,
                          const std::vector<int>& sizes, bool verbose) {
  if (sizes.empty()) throw ConfigError("dimsearch needs at least one candidate size");
  DimsearchReport report;
  report.mode = mode;

  if (mode == DimMode::kLinearLikelihood) {
    if (data.meta.map_kind != MapKind::kLinear) {
      throw ConfigError(
          "linear_likelihood applies only to datasets observed through a linear map; this one "
          "uses " + to_string(data.meta.map_kind));
    }
    double best = kNegInf;
    for (int j : sizes) {
      DimsearchRow row;
      row.size = j;
      const Mat a = estimate_linear_map(data, j);
      const Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
      const Vec sv = svd.singularValues();
      if (sv[j - 1] > 1e-10 * sv[0]) {
        const Mat pinv = svd.solve(Mat::Identity(a.rows(), a.rows()));
        const Mat z0 = pinv * data.x0;
        const Mat z1 = pinv * data.x1;
        Mat y = z1 - z0;
        for (Eigen::Index p = 0; p < y.cols(); ++p) y.col(p) /= data.dt[p];
        Mat design(j + 1, z0.cols());
        design.topRows(j) = z0;
        design.row(j).setOnes();
        const Mat coef = design.transpose().colPivHouseholderQr().solve(y.transpose()).transpose();
        const Mat m = coef.leftCols(j);
        const Vec off = coef.col(j);
        row.loglik = linear_loglik(
            a, data.x0, data.x1, data.dt, [&](const Vec& z, double) { return Vec(m * z + off); },
            [j](const Vec&, double) { return Mat(Mat::Identity(j, j)); });
      }
      if (row.loglik > best) {
        best = row.loglik;
        report.selected = j;
      }
      report.rows.push_back(row);
    }
    if (!std::isfinite(best)) {
      throw DegenerateData("no candidate size gives a finite likelihood");
    }
    return report;
  }

  int largest = sizes.front();
  for (int j : sizes) {
    ExperimentConfig rc = c;
    rc.model.d = j;
    rc.model.diffusion_diag = true;
    VaeModel model(resolve_model(rc, data));
    train(model, data, rc.training, [&](const EpochLog& e) {
      if (verbose && e.epoch % 100 == 0) {
        std::cerr << "size " << j << " epoch " << e.epoch << " total " << e.train.total << '\n';
      }
    });
    DimsearchRow row;
    row.size = j;
    row.diagonal = diffusion_diag_report(model);
    row.suggested = suggested_dimension(row.diagonal, c.evaluation.diag_threshold);
    if (j >= largest) {
      largest = j;
      report.selected = row.suggested;
    }
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace lsde
