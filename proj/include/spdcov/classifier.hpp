#pragma once

// Uniform prediction/evaluation front for the three classifiers and their
// checkpoint files.

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "spdcov/classic.hpp"
#include "spdcov/detail/parallel.hpp"
#include "spdcov/metrics.hpp"
#include "spdcov/spdnet.hpp"

namespace spdcov {

class Classifier {
 public:
  using Model = std::variant<MdrmModel, TsldaModel, SpdNetModel>;

  explicit Classifier(Model model) : model_(std::move(model)) {}

  std::string method() const {
    switch (model_.index()) {
      case 0: return "mdrm";
      case 1: return "tslda";
      default: return "spdnet";
    }
  }

  int num_classes() const {
    return std::visit([](const auto& m) { return m.num_classes(); }, model_);
  }

  Eigen::Index input_dim() const {
    if (const auto* m = std::get_if<MdrmModel>(&model_)) return m->dim;
    if (const auto* m = std::get_if<TsldaModel>(&model_)) return m->dim();
    return std::get<SpdNetModel>(model_).input_dim();
  }

  /// Class probabilities: softmin of LEM distances (MDRM), softmax of
  /// discriminant scores (TSLDA) or of logits (SPDNet).
  Vector probabilities(const SpdMatrix& x) const {
    if (x.dim() != input_dim())
      throw DataError("classifier expects " + std::to_string(input_dim()) + "x" +
                      std::to_string(input_dim()) + " descriptors, got " + std::to_string(x.dim()) +
                      "x" + std::to_string(x.dim()));
    if (const auto* m = std::get_if<MdrmModel>(&model_)) return mdrm_probabilities(*m, x);
    if (const auto* m = std::get_if<TsldaModel>(&model_)) return tslda_probabilities(*m, x);
    return spdnet_probabilities(std::get<SpdNetModel>(model_), x);
  }

  ClassId predict(const SpdMatrix& x) const {
    if (const auto* m = std::get_if<MdrmModel>(&model_)) return mdrm_predict(*m, x).label;
    if (const auto* m = std::get_if<TsldaModel>(&model_)) return tslda_predict(*m, x).label;
    return spdnet_predict(std::get<SpdNetModel>(model_), x);
  }

  const Model& model() const { return model_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    if (const auto* m = std::get_if<MdrmModel>(&model_)) save_checkpoint(out, *m);
    else if (const auto* m = std::get_if<TsldaModel>(&model_)) save_checkpoint(out, *m);
    else save_spdnet(out, std::get<SpdNetModel>(model_));
  }

  static Classifier load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    in.seekg(0);
    if (std::string(magic, 4) == "SPDN") return Classifier(load_spdnet(in, path.string()).model);
    auto ck = load_classic_checkpoint(in, path.string());
    if (ck.mdrm) return Classifier(std::move(*ck.mdrm));
    return Classifier(std::move(*ck.tslda));
  }

 private:
  Model model_;
};

/// Runs the classifier over a labelled set and assembles the report.
inline EvalReport evaluate(const Classifier& clf, std::span<const SpdMatrix> xs, std::span<const int> labels,
                           unsigned threads = 1) {
  if (xs.empty()) throw DataError("evaluate: split is empty");
  if (xs.size() != labels.size()) throw DataError("evaluate: descriptor and label counts differ");
  const int k = clf.num_classes();
  Matrix probs(static_cast<Eigen::Index>(xs.size()), k);
  std::vector<int> pred(xs.size());
  detail::parallel_for(xs.size(), threads, [&](std::size_t i) {
    const Vector p = clf.probabilities(xs[i]);
    probs.row(static_cast<Eigen::Index>(i)) = p.transpose();
    pred[i] = clf.predict(xs[i]);
  });
  return make_report(labels, pred, probs);
}

}  // namespace spdcov
