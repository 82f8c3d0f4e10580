#pragma once

// Per-pixel feature maps: the 8-channel handcrafted gradient features,
// overlapping-window concatenation and PCA reduction of encoder features.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spdcov/error.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

enum class FeatureSource { HC, MedSAM, DINOv2, Other };

inline std::string to_string(FeatureSource s) {
  switch (s) {
    case FeatureSource::HC: return "HC";
    case FeatureSource::MedSAM: return "MedSAM";
    case FeatureSource::DINOv2: return "DINOv2";
    case FeatureSource::Other: break;
  }
  return "other";
}

inline FeatureSource feature_source_from_string(const std::string& s) {
  if (s == "HC" || s == "hc") return FeatureSource::HC;
  if (s == "MedSAM" || s == "medsam") return FeatureSource::MedSAM;
  if (s == "DINOv2" || s == "dinov2" || s == "dinov2-large") return FeatureSource::DINOv2;
  return FeatureSource::Other;
}

/// Channel-major image tensor (C x H x W, row-major) with values in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int c, int row, int col) const {
    return values[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
};

class GrayImage {
 public:
  /// intensities is H x W; every value must be finite and inside [0, 1].
  explicit GrayImage(Matrix intensities) : px_(std::move(intensities)) {
    if (px_.rows() < 1 || px_.cols() < 1) throw DataError("GrayImage: empty image");
    for (Eigen::Index i = 0; i < px_.size(); ++i) {
      const double v = px_.data()[i];
      if (!std::isfinite(v) || v < 0.0 || v > 1.0)
        throw DataError("GrayImage: intensity outside [0, 1]");
    }
  }

  int height() const { return static_cast<int>(px_.rows()); }
  int width() const { return static_cast<int>(px_.cols()); }
  const Matrix& intensities() const { return px_; }

 private:
  Matrix px_;
};

/// C x H x W feature tensor. Stored as a C x (H*W) matrix whose column
/// p = row * W + col is the feature vector of that pixel.
class FeatureMap {
 public:
  FeatureMap(int channels, int height, int width, Matrix data,
             FeatureSource source = FeatureSource::Other)
      : channels_(channels), height_(height), width_(width), data_(std::move(data)),
        source_(source) {
    if (channels < 1 || height < 1 || width < 1)
      throw DataError("FeatureMap: channels, height and width must be positive");
    if (data_.rows() != channels || data_.cols() != static_cast<Eigen::Index>(height) * width)
      throw DataError("FeatureMap: data shape does not match C x (H*W)");
    if (!data_.allFinite()) throw DataError("FeatureMap: non-finite feature values");
  }

  /// Builds a map from a C x H x W row-major buffer.
  template <typename T>
  static FeatureMap from_chw(int channels, int height, int width, std::span<const T> values,
                             FeatureSource source = FeatureSource::Other) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    if (values.size() != plane * channels)
      throw DataError("FeatureMap: buffer length does not match C*H*W");
    Matrix data(channels, static_cast<Eigen::Index>(plane));
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        data(c, static_cast<Eigen::Index>(p)) = static_cast<double>(values[c * plane + p]);
    return FeatureMap(channels, height, width, std::move(data), source);
  }

  std::vector<float> to_chw_float() const {
    const std::size_t plane = pixel_count();
    std::vector<float> out(plane * channels_);
    for (int c = 0; c < channels_; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        out[c * plane + p] = static_cast<float>(data_(c, static_cast<Eigen::Index>(p)));
    return out;
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height_) * width_; }
  FeatureSource source() const { return source_; }
  const Matrix& data() const { return data_; }

  double at(int c, int row, int col) const {
    return data_(c, static_cast<Eigen::Index>(row) * width_ + col);
  }

 private:
  int channels_;
  int height_;
  int width_;
  Matrix data_;
  FeatureSource source_;
};

/// Single channel passes through; three channels become 0.299 R + 0.587 G + 0.114 B.
inline GrayImage to_gray(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw DataError("to_gray: expected 1 or 3 channels, got " + std::to_string(img.channels));
  if (img.values.size() != static_cast<std::size_t>(img.channels) * img.height * img.width)
    throw DataError("to_gray: buffer length does not match C*H*W");
  Matrix out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      out(r, c) = img.channels == 1
                      ? img.at(0, r, c)
                      : 0.299 * img.at(0, r, c) + 0.587 * img.at(1, r, c) + 0.114 * img.at(2, r, c);
  return GrayImage(std::move(out));
}

namespace detail {

// 3x3 correlation with replicate padding. Positive and negative taps are
// summed separately so a flat neighbourhood gives exactly zero.
inline Matrix correlate3x3(const Matrix& img, const double (&k)[3][3]) {
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  Matrix out(h, w);
  for (Eigen::Index r = 0; r < h; ++r)
    for (Eigen::Index c = 0; c < w; ++c) {
      double pos = 0.0, neg = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const Eigen::Index rr = std::clamp<Eigen::Index>(r + dr, 0, h - 1);
          const Eigen::Index cc = std::clamp<Eigen::Index>(c + dc, 0, w - 1);
          const double kv = k[dr + 1][dc + 1];
          if (kv > 0) pos += kv * img(rr, cc);
          else if (kv < 0) neg -= kv * img(rr, cc);
        }
      out(r, c) = pos - neg;
    }
  return out;
}

inline constexpr double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

}  // namespace detail

inline Matrix sobel_x(const Matrix& img) { return detail::correlate3x3(img, detail::kSobelX); }
inline Matrix sobel_y(const Matrix& img) { return detail::correlate3x3(img, detail::kSobelY); }

/// Channel order of the handcrafted map.
enum HcChannel : int { kHcX = 0, kHcY, kHcAbsDx, kHcAbsDy, kHcAbsDxx, kHcAbsDyy, kHcMagnitude,
                       kHcOrientation, kHcChannelCount };

/// Handcrafted per-pixel features (x, y, |Dx|, |Dy|, |Dxx|, |Dyy|, gradient
/// magnitude, orientation). Sobel responses are unnormalized; second
/// derivatives apply the same Sobel kernel twice along one axis.
inline FeatureMap hc_feature_map(const GrayImage& img) {
  const int h = img.height();
  const int w = img.width();
  if (h < 3 || w < 3) throw DataError("hc_feature_map: image must be at least 3x3");
  const Matrix& px = img.intensities();
  const Matrix dx = sobel_x(px);
  const Matrix dy = sobel_y(px);
  const Matrix dxx = sobel_x(dx);
  const Matrix dyy = sobel_y(dy);

  Matrix data(kHcChannelCount, static_cast<Eigen::Index>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const Eigen::Index p = static_cast<Eigen::Index>(r) * w + c;
      const double gx = dx(r, c) + 0.0;  // folds -0 into +0
      const double gy = dy(r, c) + 0.0;
      double alpha = (gx == 0.0 && gy == 0.0) ? 0.0 : std::atan2(gy, gx);
      if (alpha <= -M_PI) alpha = M_PI;
      data(kHcX, p) = static_cast<double>(c) / (w - 1);
      data(kHcY, p) = static_cast<double>(r) / (h - 1);
      data(kHcAbsDx, p) = std::abs(gx);
      data(kHcAbsDy, p) = std::abs(gy);
      data(kHcAbsDxx, p) = std::abs(dxx(r, c));
      data(kHcAbsDyy, p) = std::abs(dyy(r, c));
      data(kHcMagnitude, p) = std::hypot(gx, gy);
      data(kHcOrientation, p) = alpha;
    }
  return FeatureMap(kHcChannelCount, h, w, std::move(data), FeatureSource::HC);
}

struct WindowSpec {
  int window_size = 21;
  int stride = 12;
  int expected_count = 16;
};

/// Top-left offsets {0, stride, 2*stride, ...} that keep the window inside `extent`.
inline std::vector<int> window_offsets(int extent, int window_size, int stride) {
  std::vector<int> out;
  if (window_size > extent || window_size < 1 || stride < 1) return out;
  for (int off = 0; off + window_size <= extent; off += stride) out.push_back(off);
  return out;
}

/// Cuts overlapping square windows and concatenates them along the channel
/// axis: output channel k*C + c holds channel c of window k (row-major window
/// order). Coordinates carried by the input channels stay global.
inline FeatureMap extract_windows(const FeatureMap& fm, const WindowSpec& spec) {
  if (spec.window_size < 1 || spec.stride < 1)
    throw DataError("extract_windows: window size and stride must be positive");
  if (spec.window_size > std::min(fm.height(), fm.width()))
    throw DataError("extract_windows: window size " + std::to_string(spec.window_size) +
                    " exceeds the map (" + std::to_string(fm.height()) + "x" +
                    std::to_string(fm.width()) + ")");
  const auto rows = window_offsets(fm.height(), spec.window_size, spec.stride);
  const auto cols = window_offsets(fm.width(), spec.window_size, spec.stride);
  const int count = static_cast<int>(rows.size() * cols.size());
  if (count != spec.expected_count)
    throw DataError("extract_windows: layout yields " + std::to_string(count) +
                    " windows, expected " + std::to_string(spec.expected_count));

  const int c_in = fm.channels();
  const int ws = spec.window_size;
  Matrix out(static_cast<Eigen::Index>(c_in) * count, static_cast<Eigen::Index>(ws) * ws);
  int k = 0;
  for (int r0 : rows)
    for (int c0 : cols) {
      for (int ch = 0; ch < c_in; ++ch)
        for (int r = 0; r < ws; ++r)
          for (int c = 0; c < ws; ++c)
            out(static_cast<Eigen::Index>(k) * c_in + ch, static_cast<Eigen::Index>(r) * ws + c) =
                fm.at(ch, r0 + r, c0 + c);
      ++k;
    }
  return FeatureMap(c_in * count, ws, ws, std::move(out), fm.source());
}

struct PcaModel {
  int input_dim = 0;
  int output_dim = 0;
  Vector mean;
  Matrix components;  // output_dim x input_dim, orthonormal rows
  Vector explained_variance;
};

/// Fits PCA on the columns of `samples` (input_dim x N). Components are the
/// leading eigenvectors of the sample covariance (N - 1 normalization), in
/// decreasing variance order, each signed so its largest-magnitude entry is
/// positive. Zero-variance directions are kept with zero explained variance.
inline PcaModel pca_fit(const Matrix& samples, int output_dim) {
  const Eigen::Index d = samples.rows();
  const Eigen::Index n = samples.cols();
  if (output_dim < 1 || output_dim > d)
    throw DataError("pca_fit: output_dim " + std::to_string(output_dim) +
                    " must be in [1, " + std::to_string(d) + "]");
  if (!samples.allFinite()) throw DataError("pca_fit: non-finite samples");

  PcaModel model;
  model.input_dim = static_cast<int>(d);
  model.output_dim = output_dim;
  model.mean = n > 0 ? Vector(samples.rowwise().mean()) : Vector::Zero(d);

  Matrix cov = Matrix::Zero(d, d);
  if (n >= 2) {
    const Matrix centered = samples.colwise() - model.mean;
    cov = centered * centered.transpose() / static_cast<double>(n - 1);
  }
  const SymEigen eig = detail::sym_eig(detail::symmetrized(cov));
  const double top = std::max(eig.eigenvalues[d - 1], 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (eig.eigenvalues[i] > 1e-12 * top && eig.eigenvalues[i] > 0.0) ++rank;
  if (n - 1 < output_dim)
    throw DataError("pca_fit: " + std::to_string(n) + " samples cannot support " +
                    std::to_string(output_dim) + " components (achieved rank " +
                    std::to_string(rank) + ")");

  model.components.resize(output_dim, d);
  model.explained_variance.resize(output_dim);
  for (int k = 0; k < output_dim; ++k) {
    const Eigen::Index src = d - 1 - k;
    Vector v = eig.eigenvectors.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    model.components.row(k) = v.transpose();
    model.explained_variance[k] = std::max(eig.eigenvalues[src], 0.0);
  }
  return model;
}

inline Vector pca_project(const PcaModel& model, const Vector& f) {
  if (f.size() != model.input_dim) throw DimensionMismatch("pca_project", model.input_dim, f.size());
  return model.components * (f - model.mean);
}

/// Maps reduced coordinates back to input space: components^T y + mean.
inline Vector pca_reconstruct(const PcaModel& model, const Vector& y) {
  if (y.size() != model.output_dim)
    throw DimensionMismatch("pca_reconstruct", model.output_dim, y.size());
  return model.components.transpose() * y + model.mean;
}

inline FeatureMap pca_transform(const PcaModel& model, const FeatureMap& fm) {
  if (fm.channels() != model.input_dim)
    throw DimensionMismatch("pca_transform", model.input_dim, fm.channels());
  Matrix reduced = model.components * (fm.data().colwise() - model.mean);
  return FeatureMap(model.output_dim, fm.height(), fm.width(), std::move(reduced), fm.source());
}

/// Uniform fixed-size sample of pixel vectors drawn from a stream of feature
/// maps (reservoir sampling, seeded).
class PixelReservoir {
 public:
  PixelReservoir(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

  void add(const FeatureMap& fm) {
    if (dim_ < 0) {
      dim_ = fm.channels();
      buffer_.resize(dim_, static_cast<Eigen::Index>(std::min<std::size_t>(capacity_, 1024)));
    }
    if (fm.channels() != dim_) throw DimensionMismatch("PixelReservoir", dim_, fm.channels());
    for (Eigen::Index p = 0; p < fm.data().cols(); ++p) {
      if (filled_ < capacity_) {
        if (static_cast<Eigen::Index>(filled_) >= buffer_.cols())
          buffer_.conservativeResize(Eigen::NoChange,
                                     std::min<Eigen::Index>(static_cast<Eigen::Index>(capacity_),
                                                            2 * buffer_.cols()));
        buffer_.col(static_cast<Eigen::Index>(filled_)) = fm.data().col(p);
        ++filled_;
      } else {
        std::uniform_int_distribution<std::uint64_t> pick(0, seen_);
        const std::uint64_t j = pick(rng_);
        if (j < capacity_) buffer_.col(static_cast<Eigen::Index>(j)) = fm.data().col(p);
      }
      ++seen_;
    }
  }

  Matrix samples() const { return buffer_.leftCols(static_cast<Eigen::Index>(filled_)); }
  std::uint64_t seen() const { return seen_; }

 private:
  std::size_t capacity_;
  std::mt19937_64 rng_;
  int dim_ = -1;
  Matrix buffer_;
  std::size_t filled_ = 0;
  std::uint64_t seen_ = 0;
};

inline constexpr std::size_t kDefaultPcaSampleCap = 200000;

inline PcaModel pca_fit_feature_maps(std::span<const FeatureMap> maps, int output_dim,
                                     std::uint64_t seed,
                                     std::size_t max_samples = kDefaultPcaSampleCap) {
  if (maps.empty()) throw DataError("pca_fit_feature_maps: no feature maps");
  PixelReservoir reservoir(max_samples, seed);
  for (const auto& fm : maps) reservoir.add(fm);
  return pca_fit(reservoir.samples(), output_dim);
}

}  // namespace spdcov
