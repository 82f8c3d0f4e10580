#pragma once

// Minimal image readers for handcrafted-feature extraction: binary/ASCII PGM
// (P5/P2), float32 .npy with values in [0, 1], and PNG when compiled with
// SPDCOV_WITH_PNG (links libpng).

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <string>

#include "spdcov/error.hpp"
#include "spdcov/features.hpp"
#include "spdcov/tensor_io.hpp"

#ifdef SPDCOV_WITH_PNG
#include <png.h>
#endif

namespace spdcov {

namespace detail {

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

inline long pgm_token(std::istream& in, const std::string& ctx) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
    c = in.peek();
  }
  long v = -1;
  if (!(in >> v) || v < 0) throw DataError(ctx + ": malformed PGM header");
  return v;
}

}  // namespace detail

inline Image read_pgm(std::istream& in, const std::string& ctx = "pgm") {
  char magic[2] = {};
  in.read(magic, 2);
  if (in.gcount() != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '2'))
    throw DataError(ctx + ": not a PGM file (expected P5 or P2)");
  const bool ascii = magic[1] == '2';
  const long w = detail::pgm_token(in, ctx);
  const long h = detail::pgm_token(in, ctx);
  const long maxval = detail::pgm_token(in, ctx);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw DataError(ctx + ": invalid PGM dimensions or maxval");

  Image img{1, static_cast<int>(h), static_cast<int>(w), std::vector<double>(static_cast<std::size_t>(w * h))};
  if (ascii) {
    for (auto& v : img.values) {
      long x = -1;
      if (!(in >> x) || x < 0 || x > maxval) throw DataError(ctx + ": truncated or out-of-range PGM data");
      v = static_cast<double>(x) / maxval;
    }
    return img;
  }
  in.get();  // single whitespace after maxval
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(img.values.size() * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(ctx + ": truncated PGM data");
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const long x = bytes == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];  // big-endian
    if (x > maxval) throw DataError(ctx + ": sample exceeds maxval");
    img.values[i] = static_cast<double>(x) / maxval;
  }
  return img;
}

/// (H, W), (1, H, W) or (3, H, W) float32 tensor.
inline Image image_from_tensor(const Tensor& t, const std::string& ctx) {
  Image img;
  if (t.shape.size() == 2) {
    img = {1, static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), {}};
  } else if (t.shape.size() == 3 && (t.shape[0] == 1 || t.shape[0] == 3)) {
    img = {static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[2]), {}};
  } else {
    throw DataError(ctx + ": image tensor must be (H, W), (1, H, W) or (3, H, W)");
  }
  img.values.assign(t.values.begin(), t.values.end());
  return img;
}

#ifdef SPDCOV_WITH_PNG
/// 8/16-bit PNG; color images are returned as 3-channel RGB, anything else as
/// 1-channel gray. Alpha is dropped.
inline Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw DataError(path.string() + ": " + png.message);
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw DataError(path.string() + ": " + msg);
  }
  const int c = color ? 3 : 1;
  Image img{c, static_cast<int>(png.height), static_cast<int>(png.width), {}};
  img.values.resize(buf.size());
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int k = 0; k < c; ++k) img.values[k * plane + p] = buf[p * c + k] / 255.0;
  return img;
}
#endif

/// Dispatches on the file extension: .pgm, .npy, and .png if available.
inline Image read_image(const std::filesystem::path& path) {
  const std::string ext = detail::lower_extension(path);
  if (ext == ".pgm") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image " + path.string());
    return read_pgm(in, path.string());
  }
  if (ext == ".npy") return image_from_tensor(tensor_read(path), path.string());
#ifdef SPDCOV_WITH_PNG
  if (ext == ".png") return read_png(path);
#endif
  throw DataError(path.string() + ": unsupported image format '" + ext + "'");
}

inline void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
  const Matrix& px = img.intensities();
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(px(r, c) * 255.0))));
}

}  // namespace spdcov
