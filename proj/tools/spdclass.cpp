// spdclass: batch front end for covariance-descriptor classification.
//
//   spdclass extract-hc --manifest images.csv --out feats/
//   spdclass describe   --manifest feats/manifest.csv --out archive/ [--pca 16]
//   spdclass train      --archive archive/ --method spdnet --seeds 0,1,2,3,4 --out runs/
//   spdclass eval       --checkpoint runs/spdnet_seed0.ckpt --archive archive/ --split test --out runs/
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numerical.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "spdcov/spdcov.hpp"

namespace fs = std::filesystem;
using namespace spdcov;

namespace {

void log(const std::string& msg) { std::cerr << "spdclass: " << msg << '\n'; }

unsigned default_threads() {
  const char* env = std::getenv("SPDCLASS_THREADS");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const long n = std::stol(env, &used);
    if (used == std::string(env).size() && n >= 1) return static_cast<unsigned>(n);
  } catch (const std::exception&) {
  }
  throw UsageError(std::string("SPDCLASS_THREADS must be a positive integer, got '") + env + "'");
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw DataError(what + " not found: " + p.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const auto lo = parse_dims(text.substr(0, dots));
    const auto hi = parse_dims(text.substr(dots + 2));
    if (lo.size() != 1 || hi.size() != 1 || lo[0] < 0 || hi[0] < lo[0])
      throw UsageError("seed range '" + text + "' must look like 0..4");
    for (int s = lo[0]; s <= hi[0]; ++s) out.push_back(static_cast<std::uint64_t>(s));
    return out;
  }
  for (int s : parse_dims(text)) {
    if (s < 0) throw UsageError("seeds must be nonnegative");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw UsageError("no seeds given");
  return out;
}

// ---------------------------------------------------------------------------

struct ExtractOptions {
  std::string manifest, out, images_dir;
  int window_size = 21, stride = 12, windows = 16;
  bool no_windows = false, keep_going = false;
  unsigned threads = 1;
};

int cmd_extract_hc(const ExtractOptions& o) {
  require_file(o.manifest, "manifest");
  DatasetManifest m = manifest_load(o.manifest);
  for (const auto& w : m.warnings) log("warning: " + w);
  if (!o.images_dir.empty()) {
    if (!fs::is_directory(o.images_dir)) throw DataError("images dir not found: " + o.images_dir);
    m.base_dir = o.images_dir;
  }
  const WindowSpec spec{o.window_size, o.stride, o.windows};
  if (!o.no_windows && (spec.window_size < 1 || spec.stride < 1 || spec.expected_count < 1))
    throw UsageError("--window-size, --stride and --windows must be positive");
  const fs::path out_dir(o.out);
  fs::create_directories(out_dir / "features");

  std::vector<std::string> errors(m.records.size());
  detail::parallel_for(m.records.size(), o.threads, [&](std::size_t i) {
    const auto& rec = m.records[i];
    try {
      if (rec.id.find_first_of("/\\") != std::string::npos) throw DataError("id cannot be used as a file name");
      FeatureMap fm = hc_feature_map(to_gray(read_image(m.resolve(rec))));
      if (!o.no_windows) fm = extract_windows(fm, spec);
      tensor_write(out_dir / "features" / (rec.id + ".npy"), to_tensor(fm));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  std::vector<ManifestRecord> kept;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (!errors[i].empty()) {
      ++failed;
      log(m.records[i].id + ": " + errors[i]);
      continue;
    }
    ManifestRecord r = m.records[i];
    r.path = "features/" + r.id + ".npy";
    kept.push_back(std::move(r));
  }
  if (failed && !o.keep_going)
    throw DataError(std::to_string(failed) + " of " + std::to_string(m.records.size()) +
                    " item(s) failed; rerun with --keep-going to skip them");
  if (kept.empty()) throw DataError("no items were extracted");
  manifest_write(out_dir / "manifest.csv", kept);
  log("extracted " + std::to_string(kept.size()) + " feature map(s) into " + out_dir.string() +
      (failed ? " (" + std::to_string(failed) + " skipped)" : ""));
  return 0;
}

// ---------------------------------------------------------------------------

struct DescribeOptions {
  std::string manifest, out;
  std::optional<double> epsilon;
  std::optional<int> pca;
  std::uint64_t seed = 0;
  std::size_t pca_max_samples = kDefaultPcaSampleCap;
  unsigned threads = 1;
};

int cmd_describe(const DescribeOptions& o) {
  require_file(o.manifest, "manifest");
  const DatasetManifest m = manifest_load(o.manifest);
  for (const auto& w : m.warnings) log("warning: " + w);
  const auto missing = missing_files(m);
  if (!missing.empty()) {
    for (const auto& f : missing) log("missing: " + f);
    throw DataError(std::to_string(missing.size()) + " feature file(s) missing");
  }
  if (o.epsilon && !(*o.epsilon >= 0.0)) throw UsageError("--epsilon must be nonnegative");

  auto load = [&](std::size_t i) {
    const auto& rec = m.records[i];
    try {
      return to_feature_map(tensor_read(m.resolve(rec)));
    } catch (const Error& e) {
      throw DataError(rec.id + ": " + e.what());
    }
  };

  std::optional<PcaModel> pca;
  if (o.pca) {
    const auto train = m.indices(Split::Train);
    if (train.empty()) throw DataError("--pca needs a train split to fit on");
    PixelReservoir reservoir(o.pca_max_samples, o.seed);
    for (std::size_t i : train) reservoir.add(load(i));
    const Matrix samples = reservoir.samples();
    if (*o.pca > samples.rows())
      throw DataError("--pca " + std::to_string(*o.pca) + " exceeds the " + std::to_string(samples.rows()) +
                      " feature channels");
    pca = pca_fit(samples, *o.pca);
    log("PCA " + std::to_string(pca->input_dim) + " -> " + std::to_string(pca->output_dim) + " fitted on " +
        std::to_string(samples.cols()) + " train pixels");
  }

  std::vector<CovarianceDescriptor> descriptors;
  try {
    descriptors = batch_descriptors(
        m.records.size(),
        [&](std::size_t i) {
          FeatureMap fm = load(i);
          return pca ? pca_transform(*pca, fm) : fm;
        },
        o.epsilon, o.threads);
  } catch (const BatchError& e) {
    for (const auto& [i, what] : e.failures()) log(m.records[i].id + ": " + what);
    throw;
  }
  archive_write(o.out, m.records, descriptors, o.epsilon, pca);
  log("wrote " + std::to_string(descriptors.size()) + " descriptor(s) of size " +
      std::to_string(descriptors.front().matrix.dim()) + " into " + o.out);
  return 0;
}

// ---------------------------------------------------------------------------

const std::set<std::string> kTrainKeys = {"archive", "method",  "seeds",         "epochs",   "patience",
                                          "min_delta", "lr",    "beta1",         "beta2",    "batch",
                                          "layers",  "reeig_eps", "discard_threshold", "out", "threads"};
const std::set<std::string> kSpdnetOnlyKeys = {"epochs", "patience", "min_delta", "lr",       "beta1",
                                               "beta2",  "batch",    "layers",    "reeig_eps"};

struct TrainOptions {
  // Values already merged: CLI flags win over the config file.
  std::string archive, method, out;
  std::vector<std::uint64_t> seeds{0};
  TrainConfig train;
  std::vector<int> layers;
  double reeig_eps = kDefaultReEigFloor;
  double discard_threshold = kDefaultDiscardThreshold;
  std::set<std::string> given;  // keys set by either source
};

nlohmann::json summary(const std::vector<double>& xs) {
  std::vector<double> v;
  for (double x : xs)
    if (!std::isnan(x)) v.push_back(x);
  if (v.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"n", 0}};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"n", v.size()}};
}

int cmd_train(const TrainOptions& o) {
  if (o.method != "mdrm" && o.method != "tslda" && o.method != "spdnet")
    throw UsageError("--method must be mdrm, tslda or spdnet, got '" + o.method + "'");
  if (o.method != "spdnet")
    for (const auto& k : o.given)
      if (kSpdnetOnlyKeys.count(k)) throw UsageError("'" + k + "' only applies to --method spdnet");
  if (o.method != "tslda" && o.given.count("discard_threshold"))
    throw UsageError("'discard_threshold' only applies to --method tslda");
  if (o.out.empty()) throw UsageError("--out is required");

  const DescriptorArchive archive = archive_open(o.archive);
  for (const auto& w : archive.index.warnings) log("warning: " + w);
  const auto train = archive.load(Split::Train, o.train.threads);
  if (train.descriptors.empty()) throw DataError("archive has no train split");
  const auto val = archive.load(Split::Val, o.train.threads);
  const auto test = archive.load(Split::Test, o.train.threads);
  if (o.method == "spdnet" && val.descriptors.empty())
    throw DataError("spdnet training needs a val split for early stopping");

  std::vector<int> layers = o.layers;
  if (o.method == "spdnet") {
    if (layers.empty()) layers = default_spdnet_dims(static_cast<int>(archive.dim));
    if (layers.front() != archive.dim)
      throw UsageError("layers start at " + std::to_string(layers.front()) + " but the archive holds " +
                       std::to_string(archive.dim) + "x" + std::to_string(archive.dim) + " descriptors");
  }

  fs::create_directories(o.out);
  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> val_ba, val_auc, test_ba, test_auc;
  for (std::uint64_t seed : o.seeds) {
    nlohmann::json run{{"seed", seed}};
    std::optional<Classifier> clf;
    const fs::path ckpt = fs::path(o.out) / (o.method + "_seed" + std::to_string(seed) + ".ckpt");
    if (o.method == "mdrm") {
      clf.emplace(mdrm_fit(train.descriptors, train.labels));
      clf->save(ckpt);
    } else if (o.method == "tslda") {
      clf.emplace(tslda_fit(train.descriptors, train.labels, {o.discard_threshold, std::nullopt}));
      const auto& t = std::get<TsldaModel>(clf->model());
      if (t.discarded) log("tslda discarded " + std::to_string(t.discarded) + " outlying train sample(s)");
      run["discarded"] = t.discarded;
      clf->save(ckpt);
    } else {
      SpdNetConfig net{layers, archive.index.num_classes, o.reeig_eps, seed};
      TrainConfig tc = o.train;
      tc.seed = seed;
      const TrainResult tr = train_spdnet(make_spdnet(net), train.descriptors, train.labels, val.descriptors,
                                          val.labels, tc);
      std::ofstream out(ckpt, std::ios::binary);
      if (!out) throw DataError("cannot write checkpoint " + ckpt.string());
      save_spdnet(out, tr.model, &tr.optimizer);
      run["best_epoch"] = tr.best_epoch;
      run["epochs_run"] = tr.history.size();
      nlohmann::json hist = nlohmann::json::array();
      for (const auto& e : tr.history)
        hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_balanced_accuracy", e.val_balanced_accuracy}});
      run["history"] = hist;
      clf.emplace(tr.model);
    }
    run["checkpoint"] = ckpt.filename().string();
    std::ostringstream line;
    line << o.method << " seed " << seed;
    if (!val.descriptors.empty()) {
      const auto r = evaluate(*clf, val.descriptors, val.labels, o.train.threads);
      run["val"] = to_json(r);
      val_ba.push_back(r.balanced_accuracy);
      val_auc.push_back(r.auc);
      line << "  val BA " << r.balanced_accuracy << " AUC " << r.auc;
    }
    if (!test.descriptors.empty()) {
      const auto r = evaluate(*clf, test.descriptors, test.labels, o.train.threads);
      run["test"] = to_json(r);
      test_ba.push_back(r.balanced_accuracy);
      test_auc.push_back(r.auc);
      line << "  test BA " << r.balanced_accuracy << " AUC " << r.auc;
    }
    std::cout << line.str() << '\n';
    runs.push_back(run);
  }

  nlohmann::json agg;
  if (!val_ba.empty()) agg["val"] = {{"balanced_accuracy", summary(val_ba)}, {"auc", summary(val_auc)}};
  if (!test_ba.empty()) agg["test"] = {{"balanced_accuracy", summary(test_ba)}, {"auc", summary(test_auc)}};
  for (const char* split : {"val", "test"}) {
    if (!agg.contains(split)) continue;
    const auto& ba = agg[split]["balanced_accuracy"];
    const auto& au = agg[split]["auc"];
    std::cout << split << " mean +- std over " << o.seeds.size() << " seed(s):  BA "
              << ba["mean"].dump() << " +- " << ba["std"].dump() << "  AUC " << au["mean"].dump() << " +- "
              << au["std"].dump() << '\n';
  }
  nlohmann::json report{{"schema_version", kReportSchemaVersion},
                        {"method", o.method},
                        {"descriptor_dim", archive.dim},
                        {"num_classes", archive.index.num_classes},
                        {"runs", runs},
                        {"aggregate", agg}};
  if (o.method == "spdnet") {
    report["config"] = {{"layers", layers},
                        {"epochs", o.train.epochs},
                        {"patience", o.train.patience},
                        {"min_delta", o.train.min_delta},
                        {"batch", o.train.batch_size},
                        {"lr", o.train.adam.learning_rate},
                        {"beta1", o.train.adam.beta1},
                        {"beta2", o.train.adam.beta2},
                        {"reeig_eps", o.reeig_eps}};
  }
  write_json(fs::path(o.out) / (o.method + "_train.json"), report);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint, archive, split = "test", out;
  unsigned threads = 1;
};

int cmd_eval(const EvalOptions& o) {
  const Split split = [&] {
    try {
      return split_from_string(o.split);
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
  }();
  require_file(o.checkpoint, "checkpoint");
  const Classifier clf = Classifier::load(o.checkpoint);
  const DescriptorArchive archive = archive_open(o.archive);
  if (clf.input_dim() != archive.dim)
    throw DataError("checkpoint expects " + std::to_string(clf.input_dim()) + "x" + std::to_string(clf.input_dim()) +
                    " descriptors but the archive holds " + std::to_string(archive.dim) + "x" +
                    std::to_string(archive.dim));
  if (archive.index.num_classes > clf.num_classes())
    throw DataError("archive has " + std::to_string(archive.index.num_classes) + " classes, checkpoint only " +
                    std::to_string(clf.num_classes()));
  const auto data = archive.load(split, o.threads);
  if (data.descriptors.empty()) throw DataError("archive has no '" + o.split + "' split");

  const EvalReport r = evaluate(clf, data.descriptors, data.labels, o.threads);
  for (const auto& w : r.warnings) log("warning: " + w);
  nlohmann::json j = to_json(r);
  j["method"] = clf.method();
  j["split"] = o.split;
  print_report(std::cout, r);
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    const std::string stem = fs::path(o.checkpoint).stem().string() + "_" + o.split;
    write_json(fs::path(o.out) / (stem + ".json"), j);
    std::ofstream txt(fs::path(o.out) / (stem + ".txt"));
    if (!txt) throw DataError("cannot write report into " + o.out);
    print_report(txt, r);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariance-descriptor image classification on the SPD manifold"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "spdclass 1.0");

  unsigned threads = 0;
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "Worker threads (default: SPDCLASS_THREADS or 1)")
        ->check(CLI::PositiveNumber);
  };

  ExtractOptions ex;
  auto* extract = app.add_subcommand("extract-hc", "Handcrafted 8-channel gradient features per image");
  extract->add_option("--manifest", ex.manifest, "id,path,label,split CSV of images")->required();
  extract->add_option("--out", ex.out, "Output directory")->required();
  extract->add_option("--images-dir", ex.images_dir, "Resolve relative image paths here");
  extract->add_option("--window-size", ex.window_size, "Window side length")->capture_default_str();
  extract->add_option("--stride", ex.stride, "Window stride")->capture_default_str();
  extract->add_option("--windows", ex.windows, "Expected window count")->capture_default_str();
  extract->add_flag("--no-windows", ex.no_windows, "Keep the full (8, H, W) map");
  extract->add_flag("--keep-going", ex.keep_going, "Skip failed items instead of aborting");
  add_threads(extract);

  DescribeOptions de;
  double epsilon = 0.0;
  int pca_dims = 0;
  auto* describe = app.add_subcommand("describe", "Covariance descriptors into an archive");
  describe->add_option("--manifest", de.manifest, "Feature manifest (from extract-hc or an exporter)")->required();
  describe->add_option("--out", de.out, "Archive directory")->required();
  auto* eps_opt = describe->add_option("--epsilon", epsilon, "Ridge added to the diagonal (default: 1e-5 * trace / d)");
  auto* pca_opt = describe->add_option("--pca", pca_dims, "Reduce channels with PCA fitted on train pixels")
                      ->check(CLI::PositiveNumber);
  describe->add_option("--seed", de.seed, "Seed for PCA pixel subsampling")->capture_default_str();
  describe->add_option("--pca-max-samples", de.pca_max_samples, "Pixel cap for the PCA fit")->capture_default_str();
  add_threads(describe);

  TrainOptions tr;
  std::string config_path, seeds_text, layers_text;
  auto* train = app.add_subcommand("train", "Fit MDRM, TSLDA or SPDNet on an archive");
  train->add_option("--archive", tr.archive, "Descriptor archive");
  train->add_option("--method", tr.method, "mdrm | tslda | spdnet");
  train->add_option("--config", config_path, "key = value file; flags override it");
  train->add_option("--seeds", seeds_text, "Seed list, e.g. 0,1,2 or 0..4 (default 0)");
  train->add_option("--epochs", tr.train.epochs, "SPDNet epoch budget")->capture_default_str();
  train->add_option("--patience", tr.train.patience, "Early-stopping patience")->capture_default_str();
  train->add_option("--min-delta", tr.train.min_delta, "Minimum val improvement")->capture_default_str();
  train->add_option("--lr", tr.train.adam.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--beta1", tr.train.adam.beta1)->capture_default_str();
  train->add_option("--beta2", tr.train.adam.beta2)->capture_default_str();
  train->add_option("--batch", tr.train.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--layers", layers_text, "BiMap dims, e.g. 16,8,4 (default d, d/2, d/4)");
  train->add_option("--reeig-eps", tr.reeig_eps, "ReEig eigenvalue floor")->capture_default_str();
  train->add_option("--discard-threshold", tr.discard_threshold, "TSLDA outlier threshold")->capture_default_str();
  train->add_option("--out", tr.out, "Output directory for checkpoints and report");
  add_threads(train);

  EvalOptions ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on an archive split");
  eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval->add_option("--archive", ev.archive, "Descriptor archive")->required();
  eval->add_option("--split", ev.split, "train | val | test")->capture_default_str();
  eval->add_option("--out", ev.out, "Directory for <checkpoint>_<split>.json/.txt");
  add_threads(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const unsigned nthreads = threads ? threads : default_threads();
    if (*extract) {
      ex.threads = nthreads;
      return cmd_extract_hc(ex);
    }
    if (*describe) {
      de.threads = nthreads;
      if (*eps_opt) de.epsilon = epsilon;
      if (*pca_opt) de.pca = pca_dims;
      return cmd_describe(de);
    }
    if (*train) {
      // Config first, then any flag actually given on the command line.
      RunConfig cfg;
      if (!config_path.empty()) cfg = RunConfig::load(config_path, kTrainKeys);
      auto flag = [&](const char* name) { return train->count(name) > 0; };
      auto merge = [&](const std::string& key, const char* name, auto apply) {
        if (flag(name)) {
          tr.given.insert(key);
        } else if (cfg.has(key)) {
          apply(key);
          tr.given.insert(key);
        }
      };
      merge("archive", "--archive", [&](auto& k) { tr.archive = cfg.get_string(k); });
      merge("method", "--method", [&](auto& k) { tr.method = cfg.get_string(k); });
      merge("out", "--out", [&](auto& k) { tr.out = cfg.get_string(k); });
      merge("seeds", "--seeds", [&](auto& k) { seeds_text = cfg.get_string(k); });
      merge("epochs", "--epochs", [&](auto& k) { tr.train.epochs = static_cast<int>(cfg.get_int(k)); });
      merge("patience", "--patience", [&](auto& k) { tr.train.patience = static_cast<int>(cfg.get_int(k)); });
      merge("min_delta", "--min-delta", [&](auto& k) { tr.train.min_delta = cfg.get_double(k); });
      merge("lr", "--lr", [&](auto& k) { tr.train.adam.learning_rate = cfg.get_double(k); });
      merge("beta1", "--beta1", [&](auto& k) { tr.train.adam.beta1 = cfg.get_double(k); });
      merge("beta2", "--beta2", [&](auto& k) { tr.train.adam.beta2 = cfg.get_double(k); });
      merge("batch", "--batch", [&](auto& k) { tr.train.batch_size = static_cast<int>(cfg.get_int(k)); });
      merge("layers", "--layers", [&](auto& k) { layers_text = cfg.get_string(k); });
      merge("reeig_eps", "--reeig-eps", [&](auto& k) { tr.reeig_eps = cfg.get_double(k); });
      merge("discard_threshold", "--discard-threshold", [&](auto& k) { tr.discard_threshold = cfg.get_double(k); });
      unsigned train_threads = nthreads;
      if (!threads && cfg.has("threads")) {
        const long n = cfg.get_int("threads");
        if (n < 1) throw UsageError("threads must be positive");
        train_threads = static_cast<unsigned>(n);
      }
      if (tr.archive.empty()) throw UsageError("train: --archive is required (flag or config key)");
      if (tr.method.empty()) throw UsageError("train: --method is required (flag or config key)");
      if (!seeds_text.empty()) tr.seeds = parse_seeds(seeds_text);
      if (!layers_text.empty()) tr.layers = parse_dims(layers_text);
      if (tr.train.epochs < 1 || tr.train.batch_size < 1 || tr.train.patience < 0)
        throw UsageError("epochs and batch must be positive, patience nonnegative");
      if (!(tr.train.adam.learning_rate > 0.0)) throw UsageError("lr must be positive");
      tr.train.threads = train_threads;
      return cmd_train(tr);
    }
    if (*eval) {
      ev.threads = nthreads;
      return cmd_eval(ev);
    }
  } catch (const Error& e) {
    log(std::string("error: ") + e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 2;
  }
  return 1;
}
