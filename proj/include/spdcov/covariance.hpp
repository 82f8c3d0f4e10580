#pragma once

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spdcov/detail/parallel.hpp"
#include "spdcov/error.hpp"
#include "spdcov/features.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

struct CovarianceDescriptor {
  SpdMatrix matrix;
  std::size_t sample_count = 0;
  double regularization_epsilon = 0.0;
  FeatureSource source = FeatureSource::Other;
};

/// Relative ridge used when no epsilon is given: 1e-5 * trace / dim.
inline constexpr double kRelativeRidge = 1e-5;
/// Floor applied to the relative ridge when the covariance is identically zero.
inline constexpr double kRidgeFloor = 1e-12;

/// Unregularized sample covariance over all pixels, 1 / (HW - 1)
/// normalization. Two-pass: channel means first, then centered products.
inline Matrix sample_covariance(const FeatureMap& fm) {
  const auto n = static_cast<Eigen::Index>(fm.pixel_count());
  if (n < 2) throw DataError("covariance_descriptor: need at least 2 pixels");
  const Vector mu = fm.data().rowwise().mean();
  const Matrix centered = fm.data().colwise() - mu;
  Matrix cov = centered * centered.transpose() / static_cast<double>(n - 1);
  return detail::symmetrized(cov);
}

inline double default_ridge(const Matrix& cov) {
  return std::max(kRelativeRidge * cov.trace() / static_cast<double>(cov.rows()), kRidgeFloor);
}

/// Sample covariance plus epsilon * I. A missing epsilon selects the relative
/// ridge. Throws NumericalError when the regularized matrix is not SPD (for
/// example epsilon = 0 on perfectly correlated channels).
inline CovarianceDescriptor covariance_descriptor(const FeatureMap& fm,
                                                  std::optional<double> epsilon = std::nullopt) {
  if (epsilon && (!(*epsilon >= 0.0) || !std::isfinite(*epsilon)))
    throw UsageError("covariance_descriptor: epsilon must be a nonnegative finite number");
  Matrix cov = sample_covariance(fm);
  const double eps = epsilon ? *epsilon : default_ridge(cov);
  cov.diagonal().array() += eps;
  return {SpdMatrix(cov), fm.pixel_count(), eps, fm.source()};
}

/// Per-item failures of a batch, each tagged with the item index.
class BatchError : public Error {
 public:
  using Failure = std::pair<std::size_t, std::string>;

  BatchError(Kind kind, std::vector<Failure> failures)
      : Error(kind, summarize(failures)), failures_(std::move(failures)) {}

  const std::vector<Failure>& failures() const { return failures_; }

 private:
  static std::string summarize(const std::vector<Failure>& failures) {
    std::ostringstream msg;
    msg << failures.size() << " item(s) failed";
    for (const auto& [index, what] : failures) msg << "\n  [" << index << "] " << what;
    return msg.str();
  }

  std::vector<Failure> failures_;
};

/// Order-preserving descriptor computation over `count` maps produced by
/// `load(i)`. Maps are loaded lazily so large encoder outputs need not be
/// resident at once. All channel counts must agree.
inline std::vector<CovarianceDescriptor> batch_descriptors(
    std::size_t count, const std::function<FeatureMap(std::size_t)>& load,
    std::optional<double> epsilon = std::nullopt, unsigned threads = 1) {
  std::vector<std::optional<CovarianceDescriptor>> slots(count);
  std::vector<std::string> errors(count);
  std::vector<Error::Kind> kinds(count, Error::Kind::Data);
  std::vector<int> channels(count, -1);
  detail::parallel_for(count, threads, [&](std::size_t i) {
    try {
      FeatureMap fm = load(i);
      channels[i] = fm.channels();
      slots[i] = covariance_descriptor(fm, epsilon);
    } catch (const Error& e) {
      errors[i] = e.what();
      kinds[i] = e.kind();
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::vector<BatchError::Failure> failures;
  Error::Kind worst = Error::Kind::Data;
  int expected = -1;
  for (std::size_t i = 0; i < count; ++i) {
    if (!errors[i].empty()) {
      failures.emplace_back(i, errors[i]);
      if (kinds[i] == Error::Kind::Numerical) worst = Error::Kind::Numerical;
      continue;
    }
    if (expected < 0) expected = channels[i];
    if (channels[i] != expected)
      failures.emplace_back(i, "channel count " + std::to_string(channels[i]) + " differs from " +
                                   std::to_string(expected));
  }
  if (!failures.empty()) throw BatchError(worst, std::move(failures));

  std::vector<CovarianceDescriptor> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<CovarianceDescriptor> batch_descriptors(
    std::span<const FeatureMap> maps, std::optional<double> epsilon = std::nullopt,
    unsigned threads = 1) {
  return batch_descriptors(
      maps.size(), [&](std::size_t i) { return maps[i]; }, epsilon, threads);
}

}  // namespace spdcov
