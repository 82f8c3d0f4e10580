#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "spdcov/covariance.hpp"
#include "spdcov/synthetic.hpp"

using namespace spdcov;

namespace {

FeatureMap random_map(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Matrix d(c, h * w);
  for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = g(rng) + 0.1 * i / d.size();
  return FeatureMap(c, h, w, d);
}

// Direct transcription of the definition, one pixel at a time.
Matrix naive_covariance(const FeatureMap& fm) {
  const int c = fm.channels();
  const auto n = static_cast<double>(fm.pixel_count());
  Vector mu = Vector::Zero(c);
  for (Eigen::Index p = 0; p < fm.data().cols(); ++p) mu += fm.data().col(p);
  mu /= n;
  Matrix s = Matrix::Zero(c, c);
  for (Eigen::Index p = 0; p < fm.data().cols(); ++p) {
    const Vector d = fm.data().col(p) - mu;
    s += d * d.transpose();
  }
  return s / (n - 1);
}

}  // namespace

TEST(Covariance, ConstantMapGivesRidgeOnly) {
  const FeatureMap fm(3, 4, 4, Matrix::Constant(3, 16, 2.5));
  const auto d = covariance_descriptor(fm, 1e-6);
  EXPECT_LT((d.matrix.matrix() - 1e-6 * Matrix::Identity(3, 3)).norm(), 1e-20);
  EXPECT_EQ(d.sample_count, 16u);
  EXPECT_EQ(d.regularization_epsilon, 1e-6);
}

TEST(Covariance, HandComputedTwoByTwo) {
  Matrix data(2, 3);
  data << 1, 2, 3, 2, 4, 6;
  const FeatureMap fm(2, 1, 3, data);
  Matrix expected(2, 2);
  expected << 1, 2, 2, 4;
  EXPECT_EQ(sample_covariance(fm), expected);
  EXPECT_THROW(covariance_descriptor(fm, 0.0), NumericalError);

  const auto d = covariance_descriptor(fm, 0.01);
  Matrix reg(2, 2);
  reg << 1.01, 2, 2, 4.01;
  EXPECT_LT((d.matrix.matrix() - reg).norm(), 1e-15);
  EXPECT_NEAR(d.matrix.eigen().eigenvalues[0], 0.01, 1e-12);
  EXPECT_NEAR(d.matrix.eigen().eigenvalues[1], 5.01, 1e-12);
}

TEST(Covariance, DefaultRidgeIsRelative) {
  std::mt19937_64 rng(31);
  const FeatureMap fm = random_map(4, 6, 6, rng);
  const Matrix s = sample_covariance(fm);
  const auto d = covariance_descriptor(fm);
  EXPECT_DOUBLE_EQ(d.regularization_epsilon, 1e-5 * s.trace() / 4);
  const FeatureMap flat(2, 3, 3, Matrix::Zero(2, 9));
  EXPECT_EQ(covariance_descriptor(flat).regularization_epsilon, kRidgeFloor);
}

TEST(Covariance, MatchesNaiveDefinition) {
  std::mt19937_64 rng(32);
  const FeatureMap fm = random_map(5, 7, 9, rng);
  EXPECT_LT((sample_covariance(fm) - naive_covariance(fm)).norm(), 1e-12);
}

TEST(Covariance, Errors) {
  EXPECT_THROW(covariance_descriptor(FeatureMap(2, 1, 1, Matrix::Zero(2, 1)), 0.1), DataError);
  std::mt19937_64 rng(33);
  EXPECT_THROW(covariance_descriptor(random_map(2, 3, 3, rng), -1.0), UsageError);
}

TEST(Covariance, PixelPermutationInvariance) {
  std::mt19937_64 rng(34);
  for (int t = 0; t < 10; ++t) {
    const FeatureMap fm = random_map(6, 8, 8, rng);
    std::vector<Eigen::Index> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(6, 64);
    for (int p = 0; p < 64; ++p) shuffled.col(p) = fm.data().col(perm[p]);
    const FeatureMap other(6, 8, 8, shuffled);
    EXPECT_LT((covariance_descriptor(fm, 1e-3).matrix.matrix() - covariance_descriptor(other, 1e-3).matrix.matrix())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-10);
  }
}

TEST(Covariance, ChannelPermutationPermutesOutput) {
  std::mt19937_64 rng(35);
  const FeatureMap fm = random_map(5, 6, 7, rng);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  Matrix pd(5, 42);
  for (int i = 0; i < 5; ++i) pd.row(i) = fm.data().row(perm[i]);
  const Matrix a = covariance_descriptor(fm, 1e-3).matrix.matrix();
  const Matrix b = covariance_descriptor(FeatureMap(5, 6, 7, pd), 1e-3).matrix.matrix();
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(b(i, j), a(perm[i], perm[j]), 1e-12);
}

TEST(Covariance, ChannelShiftInvariance) {
  std::mt19937_64 rng(36);
  for (int t = 0; t < 10; ++t) {
    const FeatureMap fm = random_map(4, 5, 5, rng);
    Matrix shifted = fm.data();
    shifted.row(t % 4).array() += 17.0;
    const Matrix a = covariance_descriptor(fm, 1e-4).matrix.matrix();
    const Matrix b = covariance_descriptor(FeatureMap(4, 5, 5, shifted), 1e-4).matrix.matrix();
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Covariance, ConvergesToPopulationCovariance) {
  std::mt19937_64 rng(37);
  const Matrix sigma = random_spd(4, rng, 0.7).matrix();
  const Matrix l = sigma.llt().matrixL();
  std::normal_distribution<double> g;
  const int n = 100000;
  Matrix d(4, n);
  for (int p = 0; p < n; ++p) {
    Vector z(4);
    for (int i = 0; i < 4; ++i) z[i] = g(rng);
    d.col(p) = l * z;
  }
  const double eps = 1e-3;
  const Matrix est = covariance_descriptor(FeatureMap(4, 250, 400, d), eps).matrix.matrix();
  EXPECT_LT((est - sigma - eps * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-1);
}

TEST(BatchDescriptors, EmptySingletonAndOrder) {
  EXPECT_TRUE(batch_descriptors(std::span<const FeatureMap>{}).empty());
  std::mt19937_64 rng(38);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 6; ++i) maps.push_back(random_map(3, 4, 5, rng));
  const auto one = batch_descriptors(std::span<const FeatureMap>(maps.data(), 1), 1e-3);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].matrix.matrix(), covariance_descriptor(maps[0], 1e-3).matrix.matrix());

  const auto all = batch_descriptors(maps, 1e-3, 3);
  std::vector<FeatureMap> reversed(maps.rbegin(), maps.rend());
  const auto rev = batch_descriptors(reversed, 1e-3, 2);
  for (std::size_t i = 0; i < maps.size(); ++i)
    EXPECT_EQ(all[i].matrix.matrix(), rev[maps.size() - 1 - i].matrix.matrix());
}

TEST(BatchDescriptors, FailuresCarryIndices) {
  std::mt19937_64 rng(39);
  std::vector<FeatureMap> maps{random_map(2, 3, 3, rng), random_map(3, 3, 3, rng), random_map(2, 3, 3, rng)};
  try {
    batch_descriptors(maps, 1e-3);
    FAIL();
  } catch (const BatchError& e) {
    ASSERT_EQ(e.failures().size(), 1u);
    EXPECT_EQ(e.failures()[0].first, 1u);
  }

  Matrix data(2, 3);
  data << 1, 2, 3, 2, 4, 6;
  std::vector<FeatureMap> singular{random_map(2, 3, 3, rng), FeatureMap(2, 1, 3, data)};
  try {
    batch_descriptors(singular, 0.0);
    FAIL();
  } catch (const BatchError& e) {
    ASSERT_EQ(e.failures().size(), 1u);
    EXPECT_EQ(e.failures()[0].first, 1u);
    EXPECT_EQ(e.kind(), Error::Kind::Numerical);
  }
}
