#pragma once

// Seeded generators for random SPD matrices and a two-class SPD benchmark.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "spdcov/spd_geometry.hpp"

namespace spdcov {

inline Matrix random_orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Matrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = gauss(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

/// Q diag(exp(u_i)) Q^T with u_i uniform in [-log_spread, log_spread], so the
/// condition number is at most exp(2 log_spread).
inline SpdMatrix random_spd(Eigen::Index n, std::mt19937_64& rng, double log_spread = 1.0) {
  std::uniform_real_distribution<double> uni(-log_spread, log_spread);
  Vector lambda(n);
  for (Eigen::Index i = 0; i < n; ++i) lambda[i] = std::exp(uni(rng));
  const Matrix q = random_orthogonal(n, rng);
  return SpdMatrix(q * lambda.asDiagonal() * q.transpose());
}

inline Matrix random_symmetric(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, scale);
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) m(i, j) = m(j, i) = gauss(rng);
  return m;
}

struct SyntheticSpdConfig {
  int dim = 16;
  int train_per_class = 100;
  int val_per_class = 50;
  int test_per_class = 50;
  /// Per-coordinate standard deviation of the tangent noise.
  double sigma = 0.1;
  /// Distance between the two class centers in units of sigma.
  double separation = 6.0;
  /// Number of tangent directions carrying noise (the separation direction
  /// is always one of them). Zero or negative means every direction.
  int noise_rank = 16;
  std::uint64_t seed = 0;
};

struct SyntheticSpdData {
  std::vector<SpdMatrix> train_x, val_x, test_x;
  std::vector<int> train_y, val_y, test_y;
};

/// Two classes of exp_map(base, c_k + noise): tangent centers c_0, c_1 sit at
/// -/+ separation * sigma / 2 along a random unit direction u; noise is
/// isotropic Gaussian with standard deviation sigma inside a random
/// noise_rank-dimensional subspace containing u.
inline SyntheticSpdData make_synthetic_two_class(const SyntheticSpdConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss;
  const Eigen::Index td = tangent_dim(cfg.dim);
  const Eigen::Index rank = (cfg.noise_rank <= 0 || cfg.noise_rank > td) ? td : cfg.noise_rank;

  const SpdMatrix base = mat_exp(SymmetricMatrix(random_symmetric(cfg.dim, rng, 0.2)));
  Matrix basis = random_orthogonal(td, rng).leftCols(rank);  // first column is u
  const Vector u = basis.col(0);
  const Vector c0 = -0.5 * cfg.separation * cfg.sigma * u;
  const Vector c1 = 0.5 * cfg.separation * cfg.sigma * u;

  auto draw = [&](int cls) {
    Vector z(rank);
    for (Eigen::Index i = 0; i < rank; ++i) z[i] = gauss(rng);
    const Vector t = (cls == 0 ? c0 : c1) + cfg.sigma * basis * z;
    return exp_map(base, tangent_devectorize(t));
  };
  auto fill = [&](int per_class, std::vector<SpdMatrix>& xs, std::vector<int>& ys) {
    for (int i = 0; i < per_class; ++i)
      for (int cls = 0; cls < 2; ++cls) {
        xs.push_back(draw(cls));
        ys.push_back(cls);
      }
  };
  SyntheticSpdData data;
  fill(cfg.train_per_class, data.train_x, data.train_y);
  fill(cfg.val_per_class, data.val_x, data.val_y);
  fill(cfg.test_per_class, data.test_x, data.test_y);
  return data;
}

}  // namespace spdcov
