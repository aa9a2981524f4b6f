#include "lsde/lsde_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "lsde/error.hpp"

namespace lsde {
namespace {

static_assert(std::endian::native == std::endian::little,
              "LSDE files are written in native order; big-endian hosts unsupported");

constexpr std::array<char, 4> kMagic = {'L', 'S', 'D', 'E'};

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void write_lsde(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open for writing: " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, kLsdeVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  if (!out) throw InvalidInput("write failed: " + path.string());
}

Eigen::MatrixXd read_lsde(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open: " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InvalidInput("bad LSDE magic in " + path.string());
  const std::uint32_t version = get_u32(in);
  if (version != kLsdeVersion) {
    throw InvalidInput("unsupported LSDE version " + std::to_string(version));
  }
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  if (!in) throw InvalidInput("truncated LSDE header in " + path.string());
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      double v = 0.0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      m(r, c) = v;
    }
  }
  if (!in) throw InvalidInput("truncated LSDE payload in " + path.string());
  return m;
}

}  // namespace lsde
