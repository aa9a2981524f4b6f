#pragma once

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

namespace lsde {

/// Flat little-endian array file: magic "LSDE", u32 version, u32 rows,
/// u32 cols, then rows*cols f64 values in row-major order.
inline constexpr std::uint32_t kLsdeVersion = 1;

void write_lsde(const std::filesystem::path& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_lsde(const std::filesystem::path& path);

}  // namespace lsde
