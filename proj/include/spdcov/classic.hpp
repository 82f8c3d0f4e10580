#pragma once

// Minimum Distance to Riemannian Mean and Tangent Space LDA classifiers.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spdcov/detail/binary_io.hpp"
#include "spdcov/error.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

using ClassId = int;

namespace detail {

inline std::map<ClassId, std::vector<std::size_t>> group_by_class(std::span<const SpdMatrix> xs,
                                                                  std::span<const ClassId> labels,
                                                                  const char* who) {
  if (xs.size() != labels.size())
    throw DataError(std::string(who) + ": " + std::to_string(xs.size()) + " descriptors but " +
                    std::to_string(labels.size()) + " labels");
  if (xs.empty()) throw DataError(std::string(who) + ": no training descriptors");
  std::map<ClassId, std::vector<std::size_t>> groups;
  const Eigen::Index dim = xs.front().dim();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].dim() != dim) throw DimensionMismatch(who, dim, xs[i].dim());
    if (labels[i] < 0) throw DataError(std::string(who) + ": negative class id");
    groups[labels[i]].push_back(i);
  }
  // Class ids are expected to be contiguous from 0.
  const ClassId top = groups.rbegin()->first;
  for (ClassId c = 0; c <= top; ++c)
    if (!groups.count(c))
      throw DataError(std::string(who) + ": class " + std::to_string(c) + " has no samples");
  return groups;
}

// Index of the largest value; the first one wins ties.
inline std::size_t argmax_first(const Vector& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<Eigen::Index>(best)]) best = static_cast<std::size_t>(i);
  return best;
}

inline Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MDRM

struct MdrmModel {
  std::map<ClassId, SpdMatrix> class_means;
  Eigen::Index dim = 0;

  int num_classes() const { return static_cast<int>(class_means.size()); }
};

struct MdrmPrediction {
  ClassId label;
  std::map<ClassId, double> distances;
};

inline MdrmModel mdrm_fit(std::span<const SpdMatrix> descriptors, std::span<const ClassId> labels) {
  const auto groups = detail::group_by_class(descriptors, labels, "mdrm_fit");
  if (groups.size() < 2) throw DataError("mdrm_fit: at least 2 classes are required");
  MdrmModel model;
  model.dim = descriptors.front().dim();
  for (const auto& [cls, idx] : groups) {
    std::vector<SpdMatrix> members;
    members.reserve(idx.size());
    for (std::size_t i : idx) members.push_back(descriptors[i]);
    model.class_means.emplace(cls, karcher_mean_lem(members));
  }
  return model;
}

/// Nearest class mean under the log-Euclidean distance; ties go to the
/// smallest class id.
inline MdrmPrediction mdrm_predict(const MdrmModel& model, const SpdMatrix& x) {
  if (x.dim() != model.dim) throw DimensionMismatch("mdrm_predict", model.dim, x.dim());
  MdrmPrediction out{0, {}};
  const Matrix log_x = mat_log(x).matrix();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [cls, mean] : model.class_means) {
    const double d = (log_x - mat_log(mean).matrix()).norm();
    out.distances[cls] = d;
    if (d < best) {
      best = d;
      out.label = cls;
    }
  }
  return out;
}

/// Softmax over negative distances (temperature 1), indexed by class id.
inline Vector mdrm_probabilities(const MdrmModel& model, const SpdMatrix& x) {
  const auto pred = mdrm_predict(model, x);
  Vector neg(model.num_classes());
  for (const auto& [cls, d] : pred.distances) neg[cls] = -d;
  return detail::softmax(neg);
}

// ---------------------------------------------------------------------------
// TSLDA

inline constexpr double kDefaultDiscardThreshold = 1e11;
/// Pooled covariance ridge: kLdaRidge * trace / dim.
inline constexpr double kLdaRidge = 1e-6;

struct TsldaModel {
  SpdMatrix base_point = SpdMatrix::identity(1);
  double discard_threshold = kDefaultDiscardThreshold;
  Matrix class_means;  // K x tangent_dim
  Matrix covariance;   // regularized pooled within-class covariance
  Vector priors;       // K, sums to 1
  std::size_t discarded = 0;

  // Derived from the above by tslda_prepare.
  Matrix coefficients;  // K x tangent_dim, rows Sigma^-1 mu_c
  Vector offsets;       // -1/2 mu_c^T Sigma^-1 mu_c + ln pi_c

  Eigen::Index dim() const { return base_point.dim(); }
  int num_classes() const { return static_cast<int>(class_means.rows()); }
};

struct TsldaOptions {
  double discard_threshold = kDefaultDiscardThreshold;
  /// Overrides the empirical class frequencies when set.
  std::optional<Vector> priors;
};

struct TsldaPrediction {
  ClassId label;
  Vector scores;
};

inline void tslda_prepare(TsldaModel& model) {
  Eigen::LDLT<Matrix> solver(model.covariance);
  if (solver.info() != Eigen::Success) throw NumericalError("tslda: pooled covariance factorization failed");
  const int k = model.num_classes();
  model.coefficients.resize(k, model.class_means.cols());
  model.offsets.resize(k);
  for (int c = 0; c < k; ++c) {
    const Vector mu = model.class_means.row(c).transpose();
    const Vector a = solver.solve(mu);
    model.coefficients.row(c) = a.transpose();
    model.offsets[c] = -0.5 * mu.dot(a) + std::log(model.priors[c]);
  }
}

inline Vector tslda_tangent_vector(const SpdMatrix& base, const SpdMatrix& x) {
  return tangent_vectorize(log_map(base, x));
}

/// Maps descriptors into the tangent space at the global log-Euclidean mean,
/// drops samples with any |entry| above the discard threshold and fits LDA
/// with a ridge-regularized pooled covariance.
inline TsldaModel tslda_fit(std::span<const SpdMatrix> descriptors, std::span<const ClassId> labels,
                            const TsldaOptions& options = {}) {
  const auto groups = detail::group_by_class(descriptors, labels, "tslda_fit");
  const int k = static_cast<int>(groups.size());
  if (k < 2) throw DataError("tslda_fit: at least 2 classes are required");

  TsldaModel model;
  model.discard_threshold = options.discard_threshold;
  model.base_point = karcher_mean_lem(descriptors);
  const Eigen::Index td = tangent_dim(model.dim());

  std::vector<std::vector<Vector>> kept(k);
  for (const auto& [cls, idx] : groups)
    for (std::size_t i : idx) {
      Vector v = tslda_tangent_vector(model.base_point, descriptors[i]);
      if (v.cwiseAbs().maxCoeff() > options.discard_threshold || !v.allFinite()) {
        ++model.discarded;
        continue;
      }
      kept[cls].push_back(std::move(v));
    }

  std::size_t total = 0;
  for (int c = 0; c < k; ++c) {
    if (kept[c].size() < 2)
      throw DataError("tslda_fit: class " + std::to_string(c) + " retains " +
                      std::to_string(kept[c].size()) + " sample(s) after discarding, need 2");
    total += kept[c].size();
  }

  model.class_means = Matrix::Zero(k, td);
  Matrix scatter = Matrix::Zero(td, td);
  for (int c = 0; c < k; ++c) {
    Vector mu = Vector::Zero(td);
    for (const auto& v : kept[c]) mu += v;
    mu /= static_cast<double>(kept[c].size());
    model.class_means.row(c) = mu.transpose();
    for (const auto& v : kept[c]) {
      const Vector d = v - mu;
      scatter.selfadjointView<Eigen::Lower>().rankUpdate(d);
    }
  }
  scatter = scatter.selfadjointView<Eigen::Lower>();
  Matrix pooled = scatter / static_cast<double>(total - k);
  const double tr = pooled.trace();
  if (!(tr > 0.0))
    throw DataError("tslda_fit: zero within-class scatter (all samples identical within classes)");
  pooled.diagonal().array() += kLdaRidge * tr / static_cast<double>(td);
  model.covariance = std::move(pooled);

  if (options.priors) {
    if (options.priors->size() != k) throw DimensionMismatch("tslda_fit priors", k, options.priors->size());
    if ((options.priors->array() <= 0.0).any()) throw DataError("tslda_fit: priors must be positive");
    model.priors = *options.priors / options.priors->sum();
  } else {
    model.priors.resize(k);
    for (int c = 0; c < k; ++c) model.priors[c] = static_cast<double>(kept[c].size()) / total;
  }
  tslda_prepare(model);
  return model;
}

/// Linear discriminant scores v^T S^-1 mu_c - mu_c^T S^-1 mu_c / 2 + ln pi_c;
/// argmax wins, ties go to the smallest class id.
inline TsldaPrediction tslda_predict(const TsldaModel& model, const SpdMatrix& x) {
  if (x.dim() != model.dim()) throw DimensionMismatch("tslda_predict", model.dim(), x.dim());
  const Vector v = tslda_tangent_vector(model.base_point, x);
  Vector scores = model.coefficients * v + model.offsets;
  return {static_cast<ClassId>(detail::argmax_first(scores)), std::move(scores)};
}

inline Vector tslda_probabilities(const TsldaModel& model, const SpdMatrix& x) {
  return detail::softmax(tslda_predict(model, x).scores);
}

// ---------------------------------------------------------------------------
// "SPDC" v1 checkpoint: magic, u32 version, u32 method (1 = MDRM, 2 = TSLDA),
// u32 dim, u32 class count, i64 class ids, then method payload. Matrices are
// row-major f64, everything little-endian.

inline constexpr std::uint32_t kSpdcVersion = 1;
enum class ClassicMethod : std::uint32_t { Mdrm = 1, Tslda = 2 };

inline void save_checkpoint(std::ostream& out, const MdrmModel& model) {
  detail::BinaryWriter w(out);
  w.magic("SPDC");
  w.u32(kSpdcVersion);
  w.u32(static_cast<std::uint32_t>(ClassicMethod::Mdrm));
  w.u32(static_cast<std::uint32_t>(model.dim));
  w.u32(static_cast<std::uint32_t>(model.class_means.size()));
  for (const auto& [cls, m] : model.class_means) w.i64(cls);
  for (const auto& [cls, m] : model.class_means) w.matrix(m.matrix());
}

inline void save_checkpoint(std::ostream& out, const TsldaModel& model) {
  detail::BinaryWriter w(out);
  w.magic("SPDC");
  w.u32(kSpdcVersion);
  w.u32(static_cast<std::uint32_t>(ClassicMethod::Tslda));
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  for (int c = 0; c < model.num_classes(); ++c) w.i64(c);
  w.matrix(model.base_point.matrix());
  w.f64(model.discard_threshold);
  w.u32(static_cast<std::uint32_t>(model.class_means.cols()));
  w.u64(model.discarded);
  w.vector(model.priors);
  w.matrix(model.class_means);
  w.matrix(model.covariance);
}

struct ClassicCheckpoint {
  ClassicMethod method;
  std::optional<MdrmModel> mdrm;
  std::optional<TsldaModel> tslda;
};

inline ClassicCheckpoint load_classic_checkpoint(std::istream& in, const std::string& context) {
  detail::BinaryReader r(in, context);
  r.expect_magic("SPDC");
  const auto version = r.u32();
  if (version != kSpdcVersion)
    throw DataError(context + ": unsupported SPDC version " + std::to_string(version));
  const auto method = r.u32();
  const auto dim = static_cast<Eigen::Index>(r.u32());
  const auto k = r.u32();
  if (dim == 0 || k == 0) throw DataError(context + ": empty model");
  std::vector<ClassId> ids(k);
  for (auto& id : ids) id = static_cast<ClassId>(r.i64());

  ClassicCheckpoint ck{static_cast<ClassicMethod>(method), std::nullopt, std::nullopt};
  if (ck.method == ClassicMethod::Mdrm) {
    MdrmModel m;
    m.dim = dim;
    for (auto id : ids) m.class_means.emplace(id, SpdMatrix(r.matrix(dim, dim)));
    ck.mdrm = std::move(m);
  } else if (ck.method == ClassicMethod::Tslda) {
    TsldaModel m;
    m.base_point = SpdMatrix(r.matrix(dim, dim));
    m.discard_threshold = r.f64();
    const auto td = static_cast<Eigen::Index>(r.u32());
    if (td != tangent_dim(dim)) throw DataError(context + ": tangent dimension mismatch");
    m.discarded = r.u64();
    m.priors = r.vector(k);
    m.class_means = r.matrix(k, td);
    m.covariance = r.matrix(td, td);
    tslda_prepare(m);
    ck.tslda = std::move(m);
  } else {
    throw DataError(context + ": unknown classifier method " + std::to_string(method));
  }
  return ck;
}

}  // namespace spdcov
