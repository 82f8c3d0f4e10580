#pragma once

// SPDNet: BiMap (X -> W^T X W, W on the Stiefel manifold), ReEig
// (eigenvalue rectification), LogEig (matrix log + isometric
// half-vectorization) and a linear softmax head. Gradients are analytic;
// spectral layers backpropagate through the Loewner (divided-difference)
// matrix of their scalar function.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "spdcov/classic.hpp"
#include "spdcov/dataset.hpp"
#include "spdcov/detail/binary_io.hpp"
#include "spdcov/detail/parallel.hpp"
#include "spdcov/error.hpp"
#include "spdcov/metrics.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

inline constexpr double kDefaultReEigFloor = 1e-4;
/// Eigenvalue gaps below this use the derivative instead of the difference quotient.
inline constexpr double kDividedDifferenceGap = 1e-10;

struct BiMapLayer {
  Matrix weight;  // input_dim x output_dim, orthonormal columns

  int input_dim() const { return static_cast<int>(weight.rows()); }
  int output_dim() const { return static_cast<int>(weight.cols()); }
};

struct ReEigLayer {
  double epsilon_floor = kDefaultReEigFloor;
};

// ---------------------------------------------------------------------------
// Stiefel manifold helpers

/// Thin QR factor of m with R's diagonal made nonnegative, so the map is
/// continuous and fixes matrices that already have orthonormal columns.
inline Matrix qr_retraction(const Matrix& m) {
  const Eigen::Index n = m.rows();
  const Eigen::Index p = m.cols();
  Eigen::HouseholderQR<Matrix> qr(m);
  Matrix q = qr.householderQ() * Matrix::Identity(n, p);
  const Matrix r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < p; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

/// Projection of an ambient matrix onto the tangent space at w:
/// G - W sym(W^T G).
inline Matrix stiefel_project(const Matrix& w, const Matrix& g) {
  const Matrix wtg = w.transpose() * g;
  return g - w * (0.5 * (wtg + wtg.transpose()));
}

inline Matrix random_stiefel(int n, int p, std::mt19937_64& rng) {
  if (p > n || p < 1) throw UsageError("random_stiefel: need 1 <= p <= n");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix g(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = gauss(rng);
  return qr_retraction(g);
}

inline double orthonormality_error(const Matrix& w) {
  return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

// ---------------------------------------------------------------------------
// Layers on validated SPD inputs

inline SpdMatrix bimap_forward(const BiMapLayer& layer, const SpdMatrix& x) {
  if (x.dim() != layer.input_dim()) throw DimensionMismatch("bimap_forward", layer.input_dim(), x.dim());
  return SpdMatrix(detail::symmetrized(layer.weight.transpose() * x.matrix() * layer.weight));
}

/// Q max(Lambda, eps) Q^T.
inline SpdMatrix reeig_forward(const ReEigLayer& layer, const SpdMatrix& x) {
  const auto& eig = x.eigen();
  Vector clamped = eig.eigenvalues.cwiseMax(layer.epsilon_floor);
  return SpdMatrix::from_spectrum(eig.eigenvectors, std::move(clamped));
}

inline Vector logeig_forward(const SpdMatrix& x) { return tangent_vectorize(mat_log(x)); }

/// Gradient through Y = Q f(Lambda) Q^T for a symmetric upstream gradient:
/// Q (L o (Q^T G Q)) Q^T, where L is the Loewner matrix of f with f' on the
/// diagonal and on near-repeated eigenvalue pairs.
template <typename DividedDiff>
Matrix spectral_backward(const SymEigen& eig, const Matrix& grad_out, DividedDiff&& loewner_entry) {
  const Eigen::Index n = eig.eigenvalues.size();
  Matrix loewner(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) loewner(i, j) = loewner_entry(eig.eigenvalues[i], eig.eigenvalues[j]);
  const Matrix& q = eig.eigenvectors;
  const Matrix inner = loewner.cwiseProduct(q.transpose() * grad_out * q);
  return detail::symmetrized(q * inner * q.transpose());
}

namespace detail {

inline double log_divided_difference(double a, double b) {
  if (std::abs(a - b) < kDividedDifferenceGap) return 1.0 / a;
  return std::log1p((a - b) / b) / (a - b);
}

inline auto reeig_divided_difference(double eps) {
  return [eps](double a, double b) {
    if (std::abs(a - b) < kDividedDifferenceGap) return a > eps ? 1.0 : 0.0;
    return (std::max(a, eps) - std::max(b, eps)) / (a - b);
  };
}

}  // namespace detail

inline Matrix logeig_backward(const SymEigen& eig, const Matrix& grad_out) {
  return spectral_backward(eig, grad_out, detail::log_divided_difference);
}

inline Matrix reeig_backward(const SymEigen& eig, const Matrix& grad_out, double eps) {
  return spectral_backward(eig, grad_out, detail::reeig_divided_difference(eps));
}

// ---------------------------------------------------------------------------
// Model

struct SpdNetConfig {
  /// Matrix sizes along the BiMap chain: dims[0] is the input size, each
  /// following entry is the output of one BiMap/ReEig block.
  std::vector<int> dims;
  int num_classes = 2;
  double reeig_epsilon = kDefaultReEigFloor;
  std::uint64_t seed = 0;
};

/// d -> ceil(d/2) -> ceil(d/4).
inline std::vector<int> default_spdnet_dims(int input_dim) {
  const int h1 = (input_dim + 1) / 2;
  const int h2 = (input_dim + 3) / 4;
  return {input_dim, std::max(h1, 1), std::max(h2, 1)};
}

struct SpdNetModel {
  SpdNetConfig config;
  std::vector<BiMapLayer> bimaps;
  ReEigLayer reeig;
  Matrix head_weight;  // num_classes x feature_dim
  Vector head_bias;
  Vector class_weights;

  int input_dim() const { return config.dims.front(); }
  int output_dim() const { return config.dims.back(); }
  int num_classes() const { return static_cast<int>(head_weight.rows()); }
  int feature_dim() const { return static_cast<int>(tangent_dim(output_dim())); }
};

inline void validate_config(const SpdNetConfig& config) {
  if (config.dims.empty()) throw UsageError("spdnet: layer dims must not be empty");
  for (std::size_t i = 0; i < config.dims.size(); ++i) {
    if (config.dims[i] < 1) throw UsageError("spdnet: layer dims must be positive");
    if (i > 0 && config.dims[i] > config.dims[i - 1])
      throw UsageError("spdnet: BiMap output " + std::to_string(config.dims[i]) +
                       " exceeds its input " + std::to_string(config.dims[i - 1]));
  }
  if (config.num_classes < 2) throw UsageError("spdnet: need at least 2 classes");
  if (!(config.reeig_epsilon > 0.0)) throw UsageError("spdnet: ReEig floor must be positive");
}

/// Random Stiefel BiMap weights, head weights uniform in +-1/sqrt(fan_in),
/// zero biases, unit class weights. Deterministic in config.seed.
inline SpdNetModel make_spdnet(const SpdNetConfig& config) {
  validate_config(config);
  SpdNetModel model;
  model.config = config;
  model.reeig.epsilon_floor = config.reeig_epsilon;
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = 1; i < config.dims.size(); ++i)
    model.bimaps.push_back({random_stiefel(config.dims[i - 1], config.dims[i], rng)});
  const int m = model.feature_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  std::uniform_real_distribution<double> uni(-bound, bound);
  model.head_weight.resize(config.num_classes, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < config.num_classes; ++i) model.head_weight(i, j) = uni(rng);
  model.head_bias = Vector::Zero(config.num_classes);
  model.class_weights = Vector::Ones(config.num_classes);
  return model;
}

/// Intermediates of one forward pass.
struct SpdNetTrace {
  std::vector<Matrix> bimap_inputs;  // input of each BiMap
  std::vector<SymEigen> bimap_eigs;  // eigendecomposition of each BiMap output (pre-ReEig)
  SymEigen logeig_eig;               // eigendecomposition entering LogEig
  Vector features;                   // LogEig output
  Vector logits;
};

/// Forward pass on a raw symmetric matrix. Only the BiMap weights need not
/// be orthonormal; this is what finite-difference checks perturb.
inline SpdNetTrace forward_trace(const SpdNetModel& model, const Matrix& x) {
  if (x.rows() != model.input_dim() || x.cols() != model.input_dim())
    throw DimensionMismatch("model_forward", model.input_dim(), x.rows());
  SpdNetTrace t;
  Matrix cur = x;
  const double eps = model.reeig.epsilon_floor;
  std::optional<SymEigen> last;
  for (const auto& layer : model.bimaps) {
    t.bimap_inputs.push_back(cur);
    const Matrix y = detail::symmetrized(layer.weight.transpose() * cur * layer.weight);
    SymEigen eig = detail::sym_eig(y);
    Vector clamped = eig.eigenvalues.cwiseMax(eps);
    cur = detail::symmetrized(eig.eigenvectors * clamped.asDiagonal() * eig.eigenvectors.transpose());
    last = SymEigen{clamped, eig.eigenvectors};
    t.bimap_eigs.push_back(std::move(eig));
  }
  t.logeig_eig = last ? std::move(*last) : detail::sym_eig(cur);
  if (!(t.logeig_eig.eigenvalues[0] > 0.0))
    throw NumericalError("spdnet: LogEig input is not positive definite");
  t.features = tangent_vectorize(detail::spectral_apply(t.logeig_eig, [](double l) { return std::log(l); }));
  t.logits = model.head_weight * t.features + model.head_bias;
  return t;
}

inline Vector model_forward(const SpdNetModel& model, const SpdMatrix& x) {
  return forward_trace(model, x.matrix()).logits;
}

/// Logits for every input, one column per sample.
inline Matrix model_forward_batch(const SpdNetModel& model, std::span<const SpdMatrix> xs,
                                  unsigned threads = 1) {
  Matrix out(model.num_classes(), static_cast<Eigen::Index>(xs.size()));
  detail::parallel_for(xs.size(), threads, [&](std::size_t i) {
    out.col(static_cast<Eigen::Index>(i)) = model_forward(model, xs[i]);
  });
  return out;
}

inline ClassId spdnet_predict(const SpdNetModel& model, const SpdMatrix& x) {
  return static_cast<ClassId>(detail::argmax_first(model_forward(model, x)));
}

inline Vector spdnet_probabilities(const SpdNetModel& model, const SpdMatrix& x) {
  return detail::softmax(model_forward(model, x));
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;  // num_classes x N
};

/// (1 / sum_i w_{y_i}) sum_i w_{y_i} (-log softmax(logits_i)[y_i]); logits
/// has one column per sample. A zero weight sum yields zero loss and gradient.
inline CrossEntropyResult weighted_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                                 const Vector& class_weights) {
  const Eigen::Index k = logits.rows();
  if (logits.cols() != static_cast<Eigen::Index>(labels.size()))
    throw DimensionMismatch("weighted_cross_entropy", logits.cols(), static_cast<long>(labels.size()));
  if (class_weights.size() != k) throw DimensionMismatch("weighted_cross_entropy weights", k, class_weights.size());
  if ((class_weights.array() < 0.0).any()) throw UsageError("weighted_cross_entropy: negative class weight");
  CrossEntropyResult r;
  r.grad_logits = Matrix::Zero(k, logits.cols());
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k)
      throw DataError("weighted_cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    weight_sum += class_weights[labels[i]];
  }
  if (weight_sum == 0.0) return r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const double w = class_weights[labels[i]] / weight_sum;
    const Vector z = logits.col(col);
    const double top = z.maxCoeff();
    const double lse = top + std::log((z.array() - top).exp().sum());
    r.loss += w * (lse - z[labels[i]]);
    Vector p = (z.array() - lse).exp().matrix();
    p[labels[i]] -= 1.0;
    r.grad_logits.col(col) = w * p;
  }
  return r;
}

struct SpdNetGradients {
  std::vector<Matrix> bimap;  // Euclidean gradient of each W
  Matrix head_weight;
  Vector head_bias;
  Matrix input;  // gradient with respect to the (symmetric) input matrix

  static SpdNetGradients zeros_like(const SpdNetModel& model) {
    SpdNetGradients g;
    for (const auto& l : model.bimaps) g.bimap.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    g.head_weight = Matrix::Zero(model.head_weight.rows(), model.head_weight.cols());
    g.head_bias = Vector::Zero(model.head_bias.size());
    g.input = Matrix::Zero(model.input_dim(), model.input_dim());
    return g;
  }

  SpdNetGradients& operator+=(const SpdNetGradients& o) {
    for (std::size_t i = 0; i < bimap.size(); ++i) bimap[i] += o.bimap[i];
    head_weight += o.head_weight;
    head_bias += o.head_bias;
    input += o.input;
    return *this;
  }

  bool all_finite() const {
    for (const auto& g : bimap)
      if (!g.allFinite()) return false;
    return head_weight.allFinite() && head_bias.allFinite();
  }
};

/// Backpropagates an upstream logit gradient through one recorded forward pass.
inline SpdNetGradients backward_trace(const SpdNetModel& model, const SpdNetTrace& trace,
                                      const Vector& grad_logits) {
  SpdNetGradients g;
  g.head_weight = grad_logits * trace.features.transpose();
  g.head_bias = grad_logits;
  const Vector grad_features = model.head_weight.transpose() * grad_logits;

  Matrix grad = tangent_devectorize_matrix(grad_features);
  grad = logeig_backward(trace.logeig_eig, grad);

  g.bimap.resize(model.bimaps.size());
  for (std::size_t l = model.bimaps.size(); l-- > 0;) {
    grad = reeig_backward(trace.bimap_eigs[l], grad, model.reeig.epsilon_floor);
    const Matrix& w = model.bimaps[l].weight;
    const Matrix& x = trace.bimap_inputs[l];
    g.bimap[l] = 2.0 * x * w * grad;
    grad = detail::symmetrized(w * grad * w.transpose());
  }
  g.input = std::move(grad);
  return g;
}

/// Gradients of the class-weighted cross-entropy of a single sample.
inline SpdNetGradients model_backward(const SpdNetModel& model, const SpdMatrix& x, ClassId label) {
  const SpdNetTrace trace = forward_trace(model, x.matrix());
  const int labels[1] = {label};
  const auto ce = weighted_cross_entropy(trace.logits, labels, model.class_weights);
  return backward_trace(model, trace, ce.grad_logits.col(0));
}

struct BatchGradients {
  double loss = 0.0;
  SpdNetGradients gradients;
};

/// Loss and gradients of the weighted cross-entropy over xs[indices].
/// Per-sample work may run in parallel; the reduction order is fixed.
inline BatchGradients batch_gradients(const SpdNetModel& model, std::span<const SpdMatrix> xs,
                                      std::span<const int> labels, std::span<const std::size_t> indices,
                                      unsigned threads = 1) {
  const std::size_t n = indices.size();
  std::vector<SpdNetTrace> traces(n);
  detail::parallel_for(n, threads, [&](std::size_t i) { traces[i] = forward_trace(model, xs[indices[i]].matrix()); });
  Matrix logits(model.num_classes(), static_cast<Eigen::Index>(n));
  std::vector<int> batch_labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    logits.col(static_cast<Eigen::Index>(i)) = traces[i].logits;
    batch_labels[i] = labels[indices[i]];
  }
  const auto ce = weighted_cross_entropy(logits, batch_labels, model.class_weights);
  std::vector<SpdNetGradients> parts(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    parts[i] = backward_trace(model, traces[i], ce.grad_logits.col(static_cast<Eigen::Index>(i)));
  });
  BatchGradients out{ce.loss, SpdNetGradients::zeros_like(model)};
  for (const auto& p : parts) out.gradients += p;
  return out;
}

// ---------------------------------------------------------------------------
// Riemannian Adam

struct AdamHyperparameters {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

struct RiemannianAdamState {
  AdamHyperparameters hyper;
  std::uint64_t step = 0;
  std::vector<Matrix> bimap_m, bimap_v;
  Matrix head_weight_m, head_weight_v;
  Vector head_bias_m, head_bias_v;
};

inline RiemannianAdamState make_adam_state(const SpdNetModel& model, const AdamHyperparameters& hyper = {}) {
  RiemannianAdamState s;
  s.hyper = hyper;
  for (const auto& l : model.bimaps) {
    s.bimap_m.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    s.bimap_v.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
  }
  s.head_weight_m = Matrix::Zero(model.head_weight.rows(), model.head_weight.cols());
  s.head_weight_v = s.head_weight_m;
  s.head_bias_m = Vector::Zero(model.head_bias.size());
  s.head_bias_v = s.head_bias_m;
  return s;
}

/// One optimizer step. The linear head takes a plain Adam step. Each BiMap
/// weight projects its gradient onto the Stiefel tangent space, updates the
/// moments with it, steps along the (re-projected) Adam direction and
/// retracts with QR; the first moment is then re-projected onto the tangent
/// space at the new point.
inline void riemannian_adam_step(RiemannianAdamState& state, SpdNetModel& model, const SpdNetGradients& grads) {
  if (grads.bimap.size() != model.bimaps.size())
    throw DimensionMismatch("riemannian_adam_step", static_cast<long>(model.bimaps.size()),
                            static_cast<long>(grads.bimap.size()));
  if (!grads.all_finite()) {
    std::string where;
    for (std::size_t l = 0; l < grads.bimap.size(); ++l)
      if (!grads.bimap[l].allFinite()) where += " bimap[" + std::to_string(l) + "]";
    if (!grads.head_weight.allFinite()) where += " head_weight";
    if (!grads.head_bias.allFinite()) where += " head_bias";
    throw NumericalError("riemannian_adam_step: non-finite gradients in" + where + " at step " +
                         std::to_string(state.step + 1));
  }
  const auto& h = state.hyper;
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));

  auto adam_direction = [&](const auto& m, const auto& v) {
    return ((m.array() / c1) / ((v.array() / c2).sqrt() + h.epsilon)).matrix().eval();
  };

  for (std::size_t l = 0; l < model.bimaps.size(); ++l) {
    Matrix& w = model.bimaps[l].weight;
    const Matrix rg = stiefel_project(w, grads.bimap[l]);
    state.bimap_m[l] = h.beta1 * state.bimap_m[l] + (1.0 - h.beta1) * rg;
    state.bimap_v[l] = h.beta2 * state.bimap_v[l] + (1.0 - h.beta2) * rg.cwiseProduct(rg);
    const Matrix dir = stiefel_project(w, adam_direction(state.bimap_m[l], state.bimap_v[l]));
    w = qr_retraction(w - h.learning_rate * dir);
    state.bimap_m[l] = stiefel_project(w, state.bimap_m[l]);
  }

  state.head_weight_m = h.beta1 * state.head_weight_m + (1.0 - h.beta1) * grads.head_weight;
  state.head_weight_v = h.beta2 * state.head_weight_v + (1.0 - h.beta2) * grads.head_weight.cwiseProduct(grads.head_weight);
  model.head_weight -= h.learning_rate * adam_direction(state.head_weight_m, state.head_weight_v);
  state.head_bias_m = h.beta1 * state.head_bias_m + (1.0 - h.beta1) * grads.head_bias;
  state.head_bias_v = h.beta2 * state.head_bias_v + (1.0 - h.beta2) * grads.head_bias.cwiseProduct(grads.head_bias);
  model.head_bias -= h.learning_rate * adam_direction(state.head_bias_m, state.head_bias_v);
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 250;
  int batch_size = 32;
  int patience = 20;
  double min_delta = 1e-4;
  AdamHyperparameters adam;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_balanced_accuracy = 0.0;
};

struct TrainResult {
  SpdNetModel model;  // best validation checkpoint
  RiemannianAdamState optimizer;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_balanced_accuracy = 0.0;
};

inline double spdnet_balanced_accuracy(const SpdNetModel& model, std::span<const SpdMatrix> xs,
                                       std::span<const int> labels, unsigned threads = 1) {
  const Matrix logits = model_forward_batch(model, xs, threads);
  std::vector<int> pred(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    pred[i] = static_cast<int>(detail::argmax_first(logits.col(static_cast<Eigen::Index>(i))));
  return balanced_accuracy(labels, pred, nullptr, model.num_classes());
}

/// Mini-batch training with seeded shuffling. Class weights are set to
/// N / (K N_c) from the training labels. Validation balanced accuracy is
/// measured after every epoch; training stops once `patience` consecutive
/// epochs fail to improve it by more than min_delta, and the best model is
/// returned.
inline TrainResult train_spdnet(SpdNetModel model, std::span<const SpdMatrix> train_x,
                                std::span<const int> train_y, std::span<const SpdMatrix> val_x,
                                std::span<const int> val_y, const TrainConfig& config) {
  if (train_x.empty()) throw DataError("train: empty training split");
  if (val_x.empty()) throw DataError("train: empty validation split");
  if (train_x.size() != train_y.size() || val_x.size() != val_y.size())
    throw DataError("train: descriptor and label counts differ");
  if (config.batch_size < 1 || config.epochs < 1 || config.patience < 0)
    throw UsageError("train: epochs and batch size must be positive, patience nonnegative");
  if (std::all_of(train_y.begin(), train_y.end(), [&](int y) { return y == train_y.front(); }))
    throw DataError("train: training data contains a single class");
  model.class_weights = class_weights_from_labels(train_y, model.num_classes());

  TrainResult result{model, make_adam_state(model, config.adam), {}, 0, -1.0};
  RiemannianAdamState state = result.optimizer;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), 0);

  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const auto step = batch_gradients(model, train_x, train_y, batch, config.threads);
      riemannian_adam_step(state, model, step.gradients);
      loss_sum += step.loss;
      ++batches;
    }
    const double val = spdnet_balanced_accuracy(model, val_x, val_y, config.threads);
    result.history.push_back({epoch, loss_sum / batches, val});
    if (val > best + config.min_delta) {
      best = val;
      since_best = 0;
      result.model = model;
      result.optimizer = state;
      result.best_epoch = epoch;
      result.best_val_balanced_accuracy = val;
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// "SPDN" v1 checkpoint: magic, u32 version, u32 class count, u32 BiMap count,
// u32 dims[count + 1], f64 ReEig floor, u64 seed, f64 class weights, BiMap
// weights, head weight, head bias (all row-major f64), then u8 flag and the
// optional optimizer state (u64 step, f64 lr, beta1, beta2, eps, then first
// and second moments of every parameter in the same order).

inline constexpr std::uint32_t kSpdnVersion = 1;

inline void save_spdnet(std::ostream& out, const SpdNetModel& model, const RiemannianAdamState* state = nullptr) {
  detail::BinaryWriter w(out);
  w.magic("SPDN");
  w.u32(kSpdnVersion);
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u32(static_cast<std::uint32_t>(model.bimaps.size()));
  for (int d : model.config.dims) w.u32(static_cast<std::uint32_t>(d));
  w.f64(model.reeig.epsilon_floor);
  w.u64(model.config.seed);
  w.vector(model.class_weights);
  for (const auto& l : model.bimaps) w.matrix(l.weight);
  w.matrix(model.head_weight);
  w.vector(model.head_bias);
  w.u8(state ? 1 : 0);
  if (state) {
    w.u64(state->step);
    w.f64(state->hyper.learning_rate);
    w.f64(state->hyper.beta1);
    w.f64(state->hyper.beta2);
    w.f64(state->hyper.epsilon);
    for (std::size_t l = 0; l < model.bimaps.size(); ++l) {
      w.matrix(state->bimap_m[l]);
      w.matrix(state->bimap_v[l]);
    }
    w.matrix(state->head_weight_m);
    w.matrix(state->head_weight_v);
    w.vector(state->head_bias_m);
    w.vector(state->head_bias_v);
  }
}

struct SpdNetCheckpoint {
  SpdNetModel model;
  std::optional<RiemannianAdamState> optimizer;
};

inline SpdNetCheckpoint load_spdnet(std::istream& in, const std::string& context) {
  detail::BinaryReader r(in, context);
  r.expect_magic("SPDN");
  const auto version = r.u32();
  if (version != kSpdnVersion) throw DataError(context + ": unsupported SPDN version " + std::to_string(version));
  SpdNetConfig config;
  config.num_classes = static_cast<int>(r.u32());
  const auto layers = r.u32();
  if (layers > 1024) throw DataError(context + ": implausible layer count");
  for (std::uint32_t i = 0; i <= layers; ++i) config.dims.push_back(static_cast<int>(r.u32()));
  config.reeig_epsilon = r.f64();
  config.seed = r.u64();
  try {
    validate_config(config);
  } catch (const UsageError& e) {
    throw DataError(context + ": " + e.what());
  }
  SpdNetModel model;
  model.config = config;
  model.reeig.epsilon_floor = config.reeig_epsilon;
  model.class_weights = r.vector(config.num_classes);
  for (std::uint32_t i = 0; i < layers; ++i) model.bimaps.push_back({r.matrix(config.dims[i], config.dims[i + 1])});
  const auto m = static_cast<Eigen::Index>(tangent_dim(config.dims.back()));
  model.head_weight = r.matrix(config.num_classes, m);
  model.head_bias = r.vector(config.num_classes);

  SpdNetCheckpoint ck{std::move(model), std::nullopt};
  if (r.u8()) {
    RiemannianAdamState s;
    s.step = r.u64();
    s.hyper.learning_rate = r.f64();
    s.hyper.beta1 = r.f64();
    s.hyper.beta2 = r.f64();
    s.hyper.epsilon = r.f64();
    for (const auto& l : ck.model.bimaps) {
      s.bimap_m.push_back(r.matrix(l.weight.rows(), l.weight.cols()));
      s.bimap_v.push_back(r.matrix(l.weight.rows(), l.weight.cols()));
    }
    s.head_weight_m = r.matrix(config.num_classes, m);
    s.head_weight_v = r.matrix(config.num_classes, m);
    s.head_bias_m = r.vector(config.num_classes);
    s.head_bias_v = r.vector(config.num_classes);
    ck.optimizer = std::move(s);
  }
  return ck;
}

}  // namespace spdcov
