#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "spdcov/error.hpp"

namespace spdcov::detail {

static_assert(std::endian::native == std::endian::little,
              "binary checkpoints assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!out_) throw DataError("write failed");
  }
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }

  // Row-major, matching the on-disk convention.
  void matrix(const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }
  void vector(const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
  }

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw DataError(context_ + ": truncated file");
  }
  void expect_magic(const char (&tag)[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, tag, 4) != 0)
      throw DataError(context_ + ": bad magic, expected '" + std::string(tag, 4) + "'");
  }
  std::uint8_t u8() { return read<std::uint8_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  std::int64_t i64() { return read<std::int64_t>(); }
  double f64() { return read<double>(); }

  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64();
    return m;
  }
  Eigen::VectorXd vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = f64();
    return v;
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& context() const { return context_; }

 private:
  template <typename T>
  T read() {
    T v{};
    bytes(&v, sizeof(T));
    return v;
  }

  std::istream& in_;
  std::string context_;
};

}  // namespace spdcov::detail
