#pragma once

// Float32 tensors in the .npy version 1.0 container: magic "\x93NUMPY",
// version bytes 1 0, little-endian u16 header length, a Python-literal dict
// header ({'descr': '<f4', 'fortran_order': False, 'shape': (...), })
// padded with spaces and a newline to a multiple of 64 bytes, then the raw
// C-order payload.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "spdcov/error.hpp"
#include "spdcov/features.hpp"

namespace spdcov {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> values;

  std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
};

namespace detail {

inline constexpr char kNpyMagic[] = "\x93NUMPY";

inline std::string npy_header(const std::vector<std::size_t>& shape) {
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) dict << ",";
    if (i + 1 < shape.size()) dict << " ";
  }
  dict << "), }";
  std::string h = dict.str();
  const std::size_t preamble = 10;  // magic(6) + version(2) + length(2)
  const std::size_t total = ((preamble + h.size() + 1 + 63) / 64) * 64;
  h.append(total - preamble - h.size() - 1, ' ');
  h.push_back('\n');
  return h;
}

inline std::string npy_dict_value(const std::string& header, const std::string& key,
                                  const std::string& context) {
  const std::regex re("['\"]" + key + "['\"]\\s*:\\s*('[^']*'|\"[^\"]*\"|True|False|\\([^)]*\\))");
  std::smatch m;
  if (!std::regex_search(header, m, re)) throw DataError(context + ": npy header lacks '" + key + "'");
  return m[1].str();
}

}  // namespace detail

inline void tensor_write(std::ostream& out, const Tensor& t) {
  if (t.shape.empty()) throw DataError("tensor_write: empty shape");
  if (t.element_count() != t.values.size())
    throw DataError("tensor_write: payload length does not match shape");
  const std::string header = detail::npy_header(t.shape);
  out.write(detail::kNpyMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  static_assert(std::endian::native == std::endian::little);
  out.write(reinterpret_cast<const char*>(t.values.data()),
            static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  if (!out) throw DataError("tensor_write: write failed");
}

inline void tensor_write(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  tensor_write(out, t);
}

inline Tensor tensor_read(std::istream& in, const std::string& context = "tensor") {
  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6 || std::memcmp(magic, detail::kNpyMagic, 6) != 0)
    throw DataError(context + ": bad magic (not an .npy file)");
  unsigned char ver[2];
  in.read(reinterpret_cast<char*>(ver), 2);
  if (in.gcount() != 2) throw DataError(context + ": truncated header");
  if (ver[0] != 1 || ver[1] != 0)
    throw DataError(context + ": unsupported npy version " + std::to_string(ver[0]) + "." +
                    std::to_string(ver[1]));
  unsigned char len_bytes[2];
  in.read(reinterpret_cast<char*>(len_bytes), 2);
  if (in.gcount() != 2) throw DataError(context + ": truncated header");
  const std::size_t len = len_bytes[0] | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len) throw DataError(context + ": truncated header");

  const std::string descr = detail::npy_dict_value(header, "descr", context);
  if (descr != "'<f4'" && descr != "\"<f4\"")
    throw DataError(context + ": dtype " + descr + " is not little-endian float32");
  if (detail::npy_dict_value(header, "fortran_order", context) != "False")
    throw DataError(context + ": column-major (fortran_order) layout is not supported");

  Tensor t;
  const std::string shape = detail::npy_dict_value(header, "shape", context);
  const std::regex dim_re("\\d+");
  for (auto it = std::sregex_iterator(shape.begin(), shape.end(), dim_re); it != std::sregex_iterator(); ++it)
    t.shape.push_back(std::stoull(it->str()));
  if (t.shape.empty()) throw DataError(context + ": scalar tensors are not supported");
  for (auto d : t.shape)
    if (d == 0) throw DataError(context + ": zero-length dimension");

  t.values.resize(t.element_count());
  const auto bytes = static_cast<std::streamsize>(t.values.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(t.values.data()), bytes);
  if (in.gcount() != bytes) throw DataError(context + ": truncated payload");
  for (float v : t.values)
    if (!std::isfinite(v)) throw DataError(context + ": non-finite value in payload");
  return t;
}

inline Tensor tensor_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return tensor_read(in, path.string());
}

inline Tensor to_tensor(const FeatureMap& fm) {
  return {{static_cast<std::size_t>(fm.channels()), static_cast<std::size_t>(fm.height()),
           static_cast<std::size_t>(fm.width())},
          fm.to_chw_float()};
}

/// Accepts (C, H, W) tensors, or (H, W) as a single channel.
inline FeatureMap to_feature_map(const Tensor& t, FeatureSource source = FeatureSource::Other) {
  if (t.shape.size() == 2)
    return FeatureMap::from_chw<float>(1, static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
                                       t.values, source);
  if (t.shape.size() != 3)
    throw DataError("feature tensor must have shape (C, H, W), got rank " + std::to_string(t.shape.size()));
  return FeatureMap::from_chw<float>(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]),
                                     static_cast<int>(t.shape[2]), t.values, source);
}

inline Tensor to_tensor(const Matrix& m) {
  Tensor t{{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, {}};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  return t;
}

inline Matrix to_matrix(const Tensor& t) {
  if (t.shape.size() == 1) {
    Matrix m(static_cast<Eigen::Index>(t.shape[0]), 1);
    for (std::size_t i = 0; i < t.shape[0]; ++i) m(static_cast<Eigen::Index>(i), 0) = t.values[i];
    return m;
  }
  if (t.shape.size() != 2) throw DataError("expected a rank-2 tensor");
  Matrix m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.values[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

}  // namespace spdcov
