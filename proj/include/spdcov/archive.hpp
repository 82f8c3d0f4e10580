#pragma once

// Descriptor archive: a directory holding
//   index.csv                   id,path,label,split (paths relative to the archive)
//   archive.json                schema version, descriptor dim, epsilon, source, PCA shape
//   descriptors/<id>.npy        (d, d) float32
//   pca_mean.npy, pca_components.npy, pca_explained_variance.npy   when PCA was applied

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spdcov/covariance.hpp"
#include "spdcov/dataset.hpp"
#include "spdcov/detail/parallel.hpp"
#include "spdcov/tensor_io.hpp"

namespace spdcov {

inline constexpr int kArchiveSchemaVersion = 1;

struct ArchiveSplit {
  std::vector<SpdMatrix> descriptors;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

struct DescriptorArchive {
  std::filesystem::path dir;
  DatasetManifest index;
  Eigen::Index dim = 0;
  std::optional<double> epsilon;  // nullopt: relative ridge per item
  FeatureSource source = FeatureSource::Other;
  std::optional<PcaModel> pca;

  ArchiveSplit load(Split split, unsigned threads = 1) const {
    const auto idx = index.indices(split);
    ArchiveSplit out;
    std::vector<std::optional<SpdMatrix>> slots(idx.size());
    detail::parallel_for(idx.size(), threads, [&](std::size_t i) {
      const auto& rec = index.records[idx[i]];
      const Matrix m = to_matrix(tensor_read(index.resolve(rec)));
      if (m.rows() != dim || m.cols() != dim)
        throw DataError(rec.id + ": descriptor is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                        ", archive declares " + std::to_string(dim) + "x" + std::to_string(dim));
      try {
        slots[i] = SpdMatrix(m);
      } catch (const NumericalError& e) {
        throw NumericalError(rec.id + ": " + e.what());
      }
    });
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.descriptors.push_back(std::move(*slots[i]));
      out.labels.push_back(index.records[idx[i]].label);
      out.ids.push_back(index.records[idx[i]].id);
    }
    return out;
  }
};

namespace detail {

inline Tensor vector_tensor(const Vector& v) {
  Tensor t{{static_cast<std::size_t>(v.size())}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.values.push_back(static_cast<float>(v[i]));
  return t;
}

}  // namespace detail

/// Writes descriptors (one per record, same order) plus metadata. Existing
/// files with the same names are overwritten.
inline void archive_write(const std::filesystem::path& dir, std::span<const ManifestRecord> records,
                          std::span<const CovarianceDescriptor> descriptors, std::optional<double> epsilon,
                          const std::optional<PcaModel>& pca) {
  if (records.size() != descriptors.size()) throw DataError("archive_write: record/descriptor count mismatch");
  if (records.empty()) throw DataError("archive_write: nothing to write");
  std::filesystem::create_directories(dir / "descriptors");
  const Eigen::Index dim = descriptors.front().matrix.dim();

  std::vector<ManifestRecord> index;
  index.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (descriptors[i].matrix.dim() != dim)
      throw DimensionMismatch("archive_write: " + records[i].id, dim, descriptors[i].matrix.dim());
    ManifestRecord r = records[i];
    if (r.id.find_first_of("/\\") != std::string::npos || r.id == "." || r.id == "..")
      throw DataError("archive_write: id '" + r.id + "' cannot be used as a file name");
    r.path = "descriptors/" + r.id + ".npy";
    tensor_write(dir / r.path, to_tensor(descriptors[i].matrix.matrix()));
    index.push_back(std::move(r));
  }
  manifest_write(dir / "index.csv", index);

  nlohmann::json meta;
  meta["schema_version"] = kArchiveSchemaVersion;
  meta["dim"] = dim;
  meta["epsilon"] = epsilon ? nlohmann::json(*epsilon) : nlohmann::json("relative");
  meta["source"] = to_string(descriptors.front().source);
  if (pca) {
    meta["pca"] = {{"input_dim", pca->input_dim}, {"output_dim", pca->output_dim}};
    tensor_write(dir / "pca_mean.npy", detail::vector_tensor(pca->mean));
    tensor_write(dir / "pca_components.npy", to_tensor(pca->components));
    tensor_write(dir / "pca_explained_variance.npy", detail::vector_tensor(pca->explained_variance));
  } else {
    meta["pca"] = nullptr;
  }
  std::ofstream out(dir / "archive.json");
  if (!out) throw DataError("cannot write " + (dir / "archive.json").string());
  out << meta.dump(2) << '\n';
}

inline DescriptorArchive archive_open(const std::filesystem::path& dir) {
  const auto meta_path = dir / "archive.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("not a descriptor archive (missing " + meta_path.string() + ")");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (meta.value("schema_version", 0) != kArchiveSchemaVersion)
    throw DataError(meta_path.string() + ": unsupported schema_version");

  DescriptorArchive a;
  a.dir = dir;
  a.index = manifest_load(dir / "index.csv");
  try {
    a.dim = meta.at("dim").get<Eigen::Index>();
    if (meta.at("epsilon").is_number()) a.epsilon = meta["epsilon"].get<double>();
    a.source = feature_source_from_string(meta.at("source").get<std::string>());
    if (!meta.at("pca").is_null()) {
      PcaModel p;
      p.input_dim = meta["pca"].at("input_dim").get<int>();
      p.output_dim = meta["pca"].at("output_dim").get<int>();
      p.mean = to_matrix(tensor_read(dir / "pca_mean.npy")).col(0);
      p.components = to_matrix(tensor_read(dir / "pca_components.npy"));
      p.explained_variance = to_matrix(tensor_read(dir / "pca_explained_variance.npy")).col(0);
      if (p.components.rows() != p.output_dim || p.components.cols() != p.input_dim ||
          p.mean.size() != p.input_dim)
        throw DataError(dir.string() + ": PCA tensors disagree with archive.json");
      a.pca = std::move(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  return a;
}

}  // namespace spdcov
