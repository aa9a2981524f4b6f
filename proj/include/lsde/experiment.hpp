#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsde/datasets.hpp"
#include "lsde/eval.hpp"
#include "lsde/vae.hpp"

namespace lsde {

struct DatasetConfig {
  std::string spec = "ou2d";
  MapKind map = MapKind::kRandomSmooth;
  int n = 32;
  std::size_t steps = 1000;
  double dt = 0.01;
  std::vector<double> dt_schedule;
  NoiseSpec noise;
  bool rescale = true;
  std::uint64_t seed = 0;
  std::uint64_t map_seed = 0;
  AmbientMapOptions map_options;
  int n_trajectories = 1;
};

struct EvalConfig {
  AlignMode mode = AlignMode::kOrthogonal;
  /// Diagonal entries below threshold * leading entry count as unused.
  double diag_threshold = 0.1;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  /// model.n is taken from the dataset; model.d == 0 means the SDE dimension.
  VaeConfig model;
  TrainConfig training;
  EvalConfig evaluation;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing fields keep their defaults; unknown top-level blocks are rejected.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

PairedDataset make_dataset(const DatasetConfig& c);
/// Model config with n and d filled in from the dataset.
VaeConfig resolve_model(const ExperimentConfig& c, const PairedDataset& data);

/// Thread cap for concurrent repeats: LSDE_THREADS, else the OpenMP default.
int repeat_threads();

struct MetricStats {
  std::string name;
  double mean = 0.0;
  double std = 0.0;
};

struct RunSummary {
  std::vector<MetricsReport> runs;
  std::vector<MetricStats> stats;
};

/// generate -> train -> evaluate. Repeat i shifts only the model and
/// training seeds by i. Writes config.json, dataset/, run_<i>/ (model/,
/// loss_log.csv, metrics.json) and metrics.csv with mean and std.
RunSummary run_experiment(const ExperimentConfig& c, const std::filesystem::path& out,
                          int repeat = 1, bool verbose = false);

/// Sample mean and (n-1) standard deviation.
MetricStats summarize(const std::string& name, const std::vector<double>& values);

enum class DimMode { kDiagHeuristic, kLinearLikelihood };

std::string to_string(DimMode m);
DimMode dim_mode_from_string(const std::string& s);

struct DimsearchRow {
  int size = 0;
  /// linear_likelihood mode.
  double loglik = kNegInf;
  /// diag_heuristic mode: |D| sorted descending and the count above threshold.
  std::vector<double> diagonal;
  int suggested = 0;
};

struct DimsearchReport {
  DimMode mode = DimMode::kLinearLikelihood;
  std::vector<DimsearchRow> rows;
  int selected = 0;
};

nlohmann::json to_json(const DimsearchReport& r);

/// Eigen-directions of the increment covariance: A_j = U_j Lambda_j^{1/2}.
Mat estimate_linear_map(const PairedDataset& data, int j);

/// linear_likelihood: log-likelihood of each candidate size, argmax wins.
/// diag_heuristic: trains with a learnable diffusion diagonal at each size;
/// the largest size's count of diagonals above threshold is selected.
DimsearchReport dimsearch(const ExperimentConfig& c, const PairedDataset& data, DimMode mode,
                          const std::vector<int>& sizes, bool verbose = false);

}  // namespace lsde
