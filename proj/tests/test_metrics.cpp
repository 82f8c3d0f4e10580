#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "spdcov/metrics.hpp"

using namespace spdcov;

namespace {

using oracles::pair_count_auc;

Matrix binary_probs(const std::vector<double>& p1) {
  Matrix m(static_cast<Eigen::Index>(p1.size()), 2);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    m(static_cast<Eigen::Index>(i), 0) = 1.0 - p1[i];
    m(static_cast<Eigen::Index>(i), 1) = p1[i];
  }
  return m;
}

}  // namespace

TEST(BalancedAccuracy, Examples) {
  const std::vector<int> y{0, 0, 0, 0, 1, 1};
  const std::vector<int> p{0, 0, 0, 1, 1, 0};
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, p), 0.625);
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, y), 1.0);

  const std::vector<int> y3{0, 0, 1, 1, 2, 2};
  const std::vector<int> constant(6, 1);
  EXPECT_DOUBLE_EQ(balanced_accuracy(y3, constant), 1.0 / 3.0);
}

TEST(BalancedAccuracy, MissingClassIsExcludedWithWarning) {
  const std::vector<int> y{0, 0, 2, 2};
  const std::vector<int> p{0, 1, 2, 2};
  Warnings w;
  EXPECT_DOUBLE_EQ(balanced_accuracy(y, p, &w, 3), 0.75);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("class 1"), std::string::npos);
}

TEST(BalancedAccuracy, RelabelingInvariance) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<int> y(200), p(200);
  for (int i = 0; i < 200; ++i) {
    y[i] = cls(rng);
    p[i] = (i % 3 == 0) ? cls(rng) : y[i];
  }
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> yr(200), pr(200);
  for (int i = 0; i < 200; ++i) {
    yr[i] = perm[y[i]];
    pr[i] = perm[p[i]];
  }
  EXPECT_NEAR(balanced_accuracy(y, p), balanced_accuracy(yr, pr), 1e-15);
}

TEST(BalancedAccuracy, Errors) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(balanced_accuracy(a, b), DataError);
  EXPECT_THROW(balanced_accuracy(std::vector<int>{}, std::vector<int>{}), DataError);
  const std::vector<int> neg{-1, 0};
  EXPECT_THROW(balanced_accuracy(neg, a), DataError);
}

TEST(Auc, Examples) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(auc(y, binary_probs({0.1, 0.4, 0.35, 0.8})), 0.75);
  EXPECT_DOUBLE_EQ(auc(y, binary_probs({0.1, 0.2, 0.7, 0.8})), 1.0);
  EXPECT_DOUBLE_EQ(auc(y, binary_probs({0.5, 0.5, 0.5, 0.5})), 0.5);
  EXPECT_DOUBLE_EQ(auc(y, binary_probs({0.9, 0.8, 0.2, 0.1})), 0.0);
}

TEST(Auc, MatchesPairCounting) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_int_distribution<int> level(0, 9);
  for (int t = 0; t < 100; ++t) {
    const int n = 5 + t % 40;
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
      y[i] = bit(rng);
      s[i] = level(rng) / 10.0;  // coarse levels force ties
    }
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(binary_auc(y, s), pair_count_auc(y, s), 1e-12) << "vector " << t;
    EXPECT_NEAR(auc(y, binary_probs(s)), pair_count_auc(y, s), 1e-12);
  }
}

TEST(Auc, MonotoneTransformInvariance) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> y(50);
  std::vector<double> s(50), t(50);
  for (int i = 0; i < 50; ++i) {
    y[i] = i % 2;
    s[i] = u(rng);
    t[i] = std::exp(3 * s[i]) - 7.0;
  }
  EXPECT_DOUBLE_EQ(binary_auc(y, s), binary_auc(y, t));
}

TEST(Auc, MulticlassMacroOneVsRest) {
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  Matrix p(6, 3);
  p << 0.8, 0.1, 0.1,  //
      0.1, 0.8, 0.1,   //
      0.1, 0.1, 0.8,   //
      0.6, 0.3, 0.1,   //
      0.3, 0.6, 0.1,   //
      0.2, 0.2, 0.6;
  EXPECT_DOUBLE_EQ(auc(y, p), 1.0);

  // Class 2 absent from the labels.
  const std::vector<int> y2{0, 1, 0, 1, 0, 1};
  Warnings w;
  const double a = auc(y2, p, &w);
  std::vector<int> pos0(6), pos1(6);
  std::vector<double> s0(6), s1(6);
  for (int i = 0; i < 6; ++i) {
    pos0[i] = y2[i] == 0;
    pos1[i] = y2[i] == 1;
    s0[i] = p(i, 0);
    s1[i] = p(i, 1);
  }
  EXPECT_NEAR(a, 0.5 * (pair_count_auc(pos0, s0) + pair_count_auc(pos1, s1)), 1e-12);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("class 2"), std::string::npos);
}

TEST(Auc, Errors) {
  const std::vector<int> y{0, 1};
  Matrix bad(2, 2);
  bad << 0.5, 0.6, 0.5, 0.5;
  EXPECT_THROW(auc(y, bad), DataError);
  const std::vector<int> one{1, 1};
  EXPECT_THROW(auc(one, binary_probs({0.2, 0.3})), DataError);
  EXPECT_THROW(auc(y, binary_probs({0.2})), DimensionMismatch);
}

TEST(EvalReport, ConsistencyAndJson) {
  const std::vector<int> y{0, 0, 0, 0, 1, 1};
  const std::vector<int> pred{0, 0, 0, 1, 1, 0};
  const Matrix p = binary_probs({0.1, 0.2, 0.3, 0.6, 0.9, 0.4});
  const EvalReport r = make_report(y, pred, p);
  EXPECT_DOUBLE_EQ(r.balanced_accuracy, 0.625);
  EXPECT_DOUBLE_EQ(r.accuracy, 4.0 / 6.0);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{3, 1}, {1, 1}}));
  EXPECT_EQ(r.confusion[0][0] + r.confusion[1][1], 4u);
  EXPECT_DOUBLE_EQ(r.per_class_recall[0], 0.75);
  EXPECT_DOUBLE_EQ(r.auc, pair_count_auc({0, 0, 0, 0, 1, 1}, {0.1, 0.2, 0.3, 0.6, 0.9, 0.4}));

  const auto j = to_json(r);
  EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
  EXPECT_EQ(j["sample_count"], 6);
  EXPECT_EQ(j["confusion_matrix"][0][1], 1);
  EXPECT_DOUBLE_EQ(j["balanced_accuracy"].get<double>(), 0.625);

  // Evaluation order does not matter.
  const std::vector<int> order{5, 2, 0, 4, 1, 3};
  std::vector<int> y2, p2;
  Matrix pp(6, 2);
  for (int i = 0; i < 6; ++i) {
    y2.push_back(y[order[i]]);
    p2.push_back(pred[order[i]]);
    pp.row(i) = p.row(order[i]);
  }
  EXPECT_EQ(to_json(make_report(y2, p2, pp)), j);
}

TEST(EvalReport, UndefinedAucBecomesWarning) {
  const std::vector<int> y{1, 1};
  const EvalReport r = make_report(y, y, binary_probs({0.7, 0.8}));
  EXPECT_TRUE(std::isnan(r.auc));
  EXPECT_TRUE(std::isnan(r.per_class_recall[0]));
  EXPECT_TRUE(to_json(r)["auc"].is_null());
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_THROW(make_report(std::vector<int>{}, std::vector<int>{}, Matrix(0, 2)), DataError);
}
