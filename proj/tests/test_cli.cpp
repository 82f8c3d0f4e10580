#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>

#include <nlohmann/json.hpp>

#include "spdcov/archive.hpp"
#include "spdcov/image_io.hpp"
#include "spdcov/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace spdcov;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() /
           ("spdclass_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root);
    fs::create_directories(root / "images");
    write_images();
  }
  void TearDown() override { fs::remove_all(root); }

  Outcome run(const std::string& args) const {
    const fs::path log = root / "last.log";
    const std::string cmd = std::string("\"") + SPDCLASS_EXE + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  // Two texture classes: horizontal versus vertical stripes with noise.
  // 8 train, 4 val and 4 test images per class.
  void write_images(const std::string& manifest = "images.csv", bool swap_train_test = false) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> noise(0.0, 0.05);
    std::ofstream csv(root / manifest);
    csv << "id,path,label,split\n";
    for (int label = 0; label < 2; ++label)
      for (int i = 0; i < 16; ++i) {
        const double period = 5.0 + (i % 4);
        Matrix px(64, 64);
        for (int r = 0; r < 64; ++r)
          for (int c = 0; c < 64; ++c) {
            const double t = label == 0 ? r : c;
            px(r, c) = std::clamp(0.5 + 0.35 * std::sin(2 * M_PI * t / period + i) + noise(rng), 0.0, 1.0);
          }
        const std::string id = "c" + std::to_string(label) + "_" + std::to_string(i);
        std::ofstream img(root / "images" / (id + ".pgm"), std::ios::binary);
        write_pgm(img, GrayImage(px));
        std::string split = i < 8 ? "train" : (i < 12 ? "val" : "test");
        if (swap_train_test && split != "val") split = split == "train" ? "test" : "train";
        csv << id << ",images/" << id << ".pgm," << label << ',' << split << '\n';
      }
  }

  // extract-hc then describe; returns the archive path.
  fs::path archive(const std::string& name, const std::string& describe_args, bool windows = true) {
    const fs::path feats = root / (name + "_feats");
    const Outcome ex = run("extract-hc --manifest " + (root / "images.csv").string() + " --out " + feats.string() +
                       (windows ? "" : " --no-windows"));
    EXPECT_EQ(ex.code, 0) << ex.output;
    const fs::path arch = root / name;
    const Outcome de =
        run("describe --manifest " + (feats / "manifest.csv").string() + " --out " + arch.string() + " " + describe_args);
    EXPECT_EQ(de.code, 0) << de.output;
    return arch;
  }

  fs::path root;
};

}  // namespace

TEST_F(CliTest, ExtractWindowsAndFullMaps) {
  const Outcome r = run("extract-hc --manifest " + (root / "images.csv").string() + " --out " + (root / "a").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const Tensor t = tensor_read(root / "a" / "features" / "c0_3.npy");
  EXPECT_EQ(t.shape, (std::vector<std::size_t>{128, 21, 21}));
  EXPECT_EQ(manifest_load(root / "a" / "manifest.csv").records.size(), 32u);

  ASSERT_EQ(run("extract-hc --manifest " + (root / "images.csv").string() + " --out " + (root / "b").string()).code, 0);
  EXPECT_EQ(slurp(root / "a" / "features" / "c1_9.npy"), slurp(root / "b" / "features" / "c1_9.npy"));
  EXPECT_EQ(slurp(root / "a" / "manifest.csv"), slurp(root / "b" / "manifest.csv"));

  ASSERT_EQ(run("extract-hc --no-windows --manifest " + (root / "images.csv").string() + " --out " +
                (root / "full").string())
                .code,
            0);
  EXPECT_EQ(tensor_read(root / "full" / "features" / "c0_0.npy").shape, (std::vector<std::size_t>{8, 64, 64}));
}

TEST_F(CliTest, ExtractReportsBadImages) {
  std::ofstream(root / "images" / "broken.pgm") << "P5\n64 64\n255\n";
  {
    std::ofstream csv(root / "images.csv", std::ios::app);
    csv << "broken,images/broken.pgm,0,train\n";
  }
  const Outcome strict = run("extract-hc --manifest " + (root / "images.csv").string() + " --out " + (root / "s").string());
  EXPECT_EQ(strict.code, 2);
  EXPECT_NE(strict.output.find("broken"), std::string::npos);
  const Outcome lenient = run("extract-hc --keep-going --manifest " + (root / "images.csv").string() + " --out " +
                          (root / "k").string());
  EXPECT_EQ(lenient.code, 0) << lenient.output;
  EXPECT_EQ(manifest_load(root / "k" / "manifest.csv").records.size(), 32u);
}

TEST_F(CliTest, DescribeFitsPcaOnTrainingSplitOnly) {
  const fs::path a = archive("arch", "--pca 6");
  const auto opened = archive_open(a);
  EXPECT_EQ(opened.dim, 6);
  ASSERT_TRUE(opened.pca.has_value());
  EXPECT_EQ(opened.pca->input_dim, 128);

  write_images("images.csv", true);
  const fs::path b = archive("swapped", "--pca 6");
  const Vector ma = archive_open(a).pca->mean, mb = archive_open(b).pca->mean;
  EXPECT_GT((ma - mb).norm(), 1e-4);

  const Outcome too_many = run("describe --manifest " + (root / "arch_feats" / "manifest.csv").string() + " --out " +
                           (root / "x").string() + " --pca 500");
  EXPECT_EQ(too_many.code, 2);
}

TEST_F(CliTest, TrainAndEvaluateClassicModels) {
  const fs::path a = archive("arch", "--pca 6");
  const fs::path runs = root / "runs";
  const Outcome tr = run("train --archive " + a.string() + " --method mdrm --seeds 0,1 --out " + runs.string());
  ASSERT_EQ(tr.code, 0) << tr.output;
  EXPECT_EQ(slurp(runs / "mdrm_seed0.ckpt"), slurp(runs / "mdrm_seed1.ckpt"));
  const auto report = nlohmann::json::parse(slurp(runs / "mdrm_train.json"));
  EXPECT_EQ(report["runs"].size(), 2u);
  EXPECT_EQ(report["descriptor_dim"], 6);

  const Outcome e1 = run("eval --checkpoint " + (runs / "mdrm_seed0.ckpt").string() + " --archive " + a.string() +
                     " --split train --out " + (root / "e1").string());
  ASSERT_EQ(e1.code, 0) << e1.output;
  const auto j = nlohmann::json::parse(slurp(root / "e1" / "mdrm_seed0_train.json"));
  EXPECT_EQ(j["balanced_accuracy"], 1.0);
  EXPECT_EQ(j["method"], "mdrm");
  EXPECT_NE(e1.output.find("balanced accuracy"), std::string::npos);

  ASSERT_EQ(run("eval --checkpoint " + (runs / "mdrm_seed0.ckpt").string() + " --archive " + a.string() +
                " --split train --out " + (root / "e2").string())
                .code,
            0);
  EXPECT_EQ(slurp(root / "e1" / "mdrm_seed0_train.json"), slurp(root / "e2" / "mdrm_seed0_train.json"));

  const Outcome ts = run("train --archive " + a.string() + " --method tslda --out " + runs.string());
  ASSERT_EQ(ts.code, 0) << ts.output;
  EXPECT_TRUE(fs::exists(runs / "tslda_seed0.ckpt"));
}

TEST_F(CliTest, TrainSpdNetOverSeedsWithConfig) {
  const fs::path a = archive("arch", "--pca 6");
  const fs::path runs = root / "runs";
  std::ofstream(root / "run.cfg") << "method = spdnet\nepochs = 3\nseeds = 0..4\nlayers = [6, 4]\n";
  const Outcome tr = run("train --config " + (root / "run.cfg").string() + " --archive " + a.string() + " --out " +
                     runs.string() + " --patience 50");
  ASSERT_EQ(tr.code, 0) << tr.output;
  for (int s = 0; s < 5; ++s) EXPECT_TRUE(fs::exists(runs / ("spdnet_seed" + std::to_string(s) + ".ckpt")));
  EXPECT_NE(tr.output.find("mean +- std"), std::string::npos);
  const auto report = nlohmann::json::parse(slurp(runs / "spdnet_train.json"));
  ASSERT_EQ(report["runs"].size(), 5u);
  for (const auto& r : report["runs"]) EXPECT_EQ(r["history"].size(), 3u);

  const Outcome ev = run("eval --checkpoint " + (runs / "spdnet_seed2.ckpt").string() + " --archive " + a.string());
  EXPECT_EQ(ev.code, 0) << ev.output;
}

TEST_F(CliTest, ExitCodesAndMessages) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("eval --archive x").code, 1);

  const fs::path a = archive("arch", "--pca 6");
  const Outcome conflict = run("train --archive " + a.string() + " --method mdrm --epochs 5 --out " + (root / "r").string());
  EXPECT_EQ(conflict.code, 1);
  EXPECT_EQ(run("train --archive " + a.string() + " --method knn").code, 1);

  const Outcome missing = run("eval --checkpoint " + (root / "nope.ckpt").string() + " --archive " + a.string());
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("nope.ckpt"), std::string::npos);

  ASSERT_EQ(run("train --archive " + a.string() + " --method mdrm --out " + (root / "r").string()).code, 0);
  const fs::path b = archive("small", "--pca 4");
  const Outcome mismatch = run("eval --checkpoint " + (root / "r" / "mdrm_seed0.ckpt").string() + " --archive " + b.string());
  EXPECT_EQ(mismatch.code, 2);
  EXPECT_NE(mismatch.output.find("6x6"), std::string::npos) << mismatch.output;
  EXPECT_NE(mismatch.output.find("4x4"), std::string::npos) << mismatch.output;
}
