#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "spdcov/archive.hpp"
#include "spdcov/synthetic.hpp"

using namespace spdcov;

namespace {

class ArchiveTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = std::filesystem::temp_directory_path() /
          ("spdcov_archive_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir);
    std::mt19937_64 rng(5);
    const Split splits[] = {Split::Train, Split::Train, Split::Val, Split::Test, Split::Train};
    for (int i = 0; i < 5; ++i) {
      records.push_back({"img" + std::to_string(i), "unused.png", i % 2, splits[i]});
      descriptors.push_back({random_spd(4, rng, 1.0), 100, 1e-3, FeatureSource::HC});
    }
  }
  void TearDown() override { std::filesystem::remove_all(dir); }

  std::filesystem::path dir;
  std::vector<ManifestRecord> records;
  std::vector<CovarianceDescriptor> descriptors;
};

}  // namespace

TEST_F(ArchiveTest, RoundTripWithoutPca) {
  archive_write(dir, records, descriptors, 1e-3, std::nullopt);
  const auto a = archive_open(dir);
  EXPECT_EQ(a.dim, 4);
  ASSERT_TRUE(a.epsilon.has_value());
  EXPECT_EQ(*a.epsilon, 1e-3);
  EXPECT_EQ(a.source, FeatureSource::HC);
  EXPECT_FALSE(a.pca.has_value());

  const auto train = a.load(Split::Train, 2);
  ASSERT_EQ(train.ids, (std::vector<std::string>{"img0", "img1", "img4"}));
  EXPECT_EQ(train.labels, (std::vector<int>{0, 1, 0}));
  for (int k : {0, 1}) {
    const Matrix expected = descriptors[k].matrix.matrix().cast<float>().cast<double>();
    EXPECT_EQ(train.descriptors[k].matrix(), expected);
  }
  EXPECT_EQ(a.load(Split::Test).ids, (std::vector<std::string>{"img3"}));
  EXPECT_TRUE(std::filesystem::exists(dir / "descriptors" / "img2.npy"));
}

TEST_F(ArchiveTest, RelativeEpsilonAndPca) {
  PcaModel pca;
  pca.input_dim = 6;
  pca.output_dim = 4;
  pca.mean = Vector::LinSpaced(6, 0.0, 1.0);
  pca.components = Matrix::Identity(4, 6);
  pca.explained_variance = Vector::LinSpaced(4, 4.0, 1.0);
  archive_write(dir, records, descriptors, std::nullopt, pca);
  const auto a = archive_open(dir);
  EXPECT_FALSE(a.epsilon.has_value());
  ASSERT_TRUE(a.pca.has_value());
  EXPECT_EQ(a.pca->output_dim, 4);
  EXPECT_EQ(a.pca->components, pca.components);
  EXPECT_LT((a.pca->mean - pca.mean).norm(), 1e-7);
  EXPECT_EQ(a.pca->explained_variance, pca.explained_variance);
}

TEST_F(ArchiveTest, WriteErrors) {
  auto bad = records;
  bad[1].id = "../escape";
  EXPECT_THROW(archive_write(dir, bad, descriptors, 1e-3, std::nullopt), DataError);
  auto mixed = descriptors;
  std::mt19937_64 rng(1);
  mixed[2].matrix = random_spd(3, rng);
  EXPECT_THROW(archive_write(dir, records, mixed, 1e-3, std::nullopt), DimensionMismatch);
  EXPECT_THROW(archive_write(dir, std::span<const ManifestRecord>(records.data(), 2), descriptors, 1e-3, std::nullopt),
               DataError);
}

TEST_F(ArchiveTest, LoadDetectsCorruption) {
  EXPECT_THROW(archive_open(dir), DataError);
  archive_write(dir, records, descriptors, 1e-3, std::nullopt);

  tensor_write(dir / "descriptors" / "img1.npy", to_tensor(Matrix::Identity(3, 3)));
  try {
    archive_open(dir).load(Split::Train);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("img1"), std::string::npos);
  }

  Matrix indefinite = Matrix::Identity(4, 4);
  indefinite(0, 0) = -1.0;
  tensor_write(dir / "descriptors" / "img1.npy", to_tensor(indefinite));
  EXPECT_THROW(archive_open(dir).load(Split::Train), NumericalError);

  std::ofstream(dir / "archive.json") << "{\"schema_version\": 1}";
  EXPECT_THROW(archive_open(dir), DataError);
}
