#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsde/sde.hpp"

namespace lsde {

enum class MapKind { kRandomSmooth, kRasterBall, kLinear };

std::string to_string(MapKind kind);
MapKind map_kind_from_string(const std::string& s);

struct AmbientMapOptions {
  /// raster_ball grid side; n must equal side * side.
  int side = 16;
  /// Bump standard deviation in unit-square coordinates.
  double bump_width = 1.5 / 16.0;
  /// random_smooth hidden width.
  int hidden = 16;
  /// Spectral norm of the tanh branch relative to the skip matrix's
  /// smallest singular value.
  double nonlinearity = 0.8;
  /// linear: f(z) = [I; 0] z instead of a random matrix.
  bool identity = false;
};

/// Frozen injective decoder R^d -> R^n used to synthesise observations.
struct AmbientMap {
  MapKind kind = MapKind::kLinear;
  int latent_dim = 0;
  int ambient_dim = 0;
  std::uint64_t seed = 0;
  AmbientMapOptions options;

  // random_smooth: skip * z + w2 * tanh(w1 * z + b1). linear: skip * z.
  Mat skip;
  Mat w1;
  Vec b1;
  Mat w2;

  /// Smallest Jacobian singular value seen on a 100-point probe grid.
  double injectivity_margin = 0.0;

  Vec apply(const Vec& z) const;
  /// Columns are latent points.
  Mat apply_batch(const Mat& z) const;
  Mat jacobian(const Vec& z) const;
};

AmbientMap make_ambient_map(MapKind kind, int d, int n, std::uint64_t seed,
                            const AmbientMapOptions& opts = {});

/// Probe grid used for the injectivity margin: 100 points in [0,1]^d.
std::vector<Vec> injectivity_probes(int d);

enum class NoiseKind { kNone, kGaussian, kStudentT };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kNone;
  /// Per-element variance. For Student-t this fixes the scale through
  /// variance = scale^2 * dof / (dof - 2).
  double variance = 0.0;
  int dof = 3;

  double student_scale() const;
};

std::string to_string(const NoiseSpec& noise);
/// Parses "none", "gaussian:<var>", "student_t:<var>[:<dof>]".
NoiseSpec parse_noise(const std::string& s);

struct GenerateOptions {
  std::string spec_name;
  std::size_t n_steps = 1000;
  double dt = 0.01;
  /// Explicit gaps; overrides n_steps/dt when non-empty.
  std::vector<double> dt_schedule;
  NoiseSpec noise;
  bool rescale = true;
  std::uint64_t seed = 0;
  /// Initial state; empty means the catalog default (origin, or 1 where
  /// the diffusion degenerates at 0).
  Vec z0;
  /// Independent trajectories, paired separately and concatenated.
  int n_trajectories = 1;
};

struct DatasetMeta {
  GenerateOptions generation;
  MapKind map_kind = MapKind::kLinear;
  int latent_dim = 0;
  int ambient_dim = 0;
  std::uint64_t map_seed = 0;
  AmbientMapOptions map_options;
  /// Per-coordinate min/max of the raw latent path; rescaled = (raw-lo)/(hi-lo).
  Vec rescale_lo;
  Vec rescale_hi;
  /// Coordinates whose range was zero and were left unscaled.
  std::vector<int> rescale_skipped;
  double injectivity_margin = 0.0;
};

/// Consecutive observation pairs (x_t, x_{t+dt}) as matrix columns.
struct PairedDataset {
  Mat x0;
  Mat x1;
  Vec dt;
  /// Rescaled latent truth aligned with the pairs, when available.
  std::optional<Mat> z0;
  std::optional<Mat> z1;
  DatasetMeta meta;

  std::size_t size() const { return static_cast<std::size_t>(x0.cols()); }
  int ambient_dim() const { return static_cast<int>(x0.rows()); }
  /// Inverts the stored min-max rescale (columns are latent points).
  Mat to_raw_latent(const Mat& rescaled) const;
  /// Slices pairs [begin, end).
  PairedDataset slice(std::size_t begin, std::size_t end) const;
};

Vec default_initial_state(const SdeSpec& spec);

PairedDataset generate(const GenerateOptions& opts, const AmbientMap& map);

nlohmann::json to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(const nlohmann::json& j);

/// Directory with meta.json, pairs.bin (rows: x_t | x_{t+dt} | dt) and
/// latent.bin (rows: z_t | z_{t+dt}).
void save_dataset(const PairedDataset& ds, const std::filesystem::path& dir);
PairedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace lsde
