#pragma once

// `id,path,label,split` CSV manifests and inverse-frequency class weights.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "spdcov/error.hpp"
#include "spdcov/spd_geometry.hpp"

namespace spdcov {

enum class Split { Train, Val, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split token '" + s + "' (expected train, val or test)");
}

struct ManifestRecord {
  std::string id;
  std::string path;  // as written in the file
  int label = 0;
  Split split = Split::Train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  int num_classes = 0;
  std::vector<std::size_t> class_counts;  // over all splits
  std::filesystem::path base_dir;         // relative paths resolve against this
  std::vector<std::string> warnings;

  std::filesystem::path resolve(const ManifestRecord& r) const {
    std::filesystem::path p(r.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> counts(Split s) const {
    std::vector<std::size_t> out(num_classes, 0);
    for (const auto& r : records)
      if (r.split == s) ++out[r.label];
    return out;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Parses and validates a manifest. Duplicate ids, unknown splits and
/// negative or malformed labels are errors; classes with no rows at all
/// (label gaps) become warnings.
inline DatasetManifest manifest_parse(std::istream& in, const std::filesystem::path& base_dir,
                                      const std::string& context = "manifest") {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::string line;
  if (!std::getline(in, line)) throw DataError(context + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
  const auto header = detail::split_csv_line(detail::trim(line));
  if (header != std::vector<std::string>{"id", "path", "label", "split"})
    throw DataError(context + ": header must be 'id,path,label,split'");

  std::set<std::string> seen;
  int top = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_csv_line(detail::trim(line));
    const std::string where = context + ":" + std::to_string(lineno);
    if (fields.size() != 4) throw DataError(where + ": expected 4 fields");
    ManifestRecord r;
    r.id = fields[0];
    r.path = fields[1];
    if (r.id.empty()) throw DataError(where + ": empty id");
    if (!seen.insert(r.id).second) throw DataError(where + ": duplicate id '" + r.id + "'");
    try {
      std::size_t used = 0;
      r.label = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(where + ": label '" + fields[2] + "' is not an integer");
    }
    if (r.label < 0) throw DataError(where + ": negative label " + std::to_string(r.label));
    try {
      r.split = split_from_string(fields[3]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    top = std::max(top, r.label);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) throw DataError(context + ": no records");
  m.num_classes = top + 1;
  m.class_counts.assign(m.num_classes, 0);
  for (const auto& r : m.records) ++m.class_counts[r.label];
  for (int c = 0; c < m.num_classes; ++c)
    if (m.class_counts[c] == 0)
      m.warnings.push_back(context + ": label " + std::to_string(c) + " never occurs (label gap)");
  return m;
}

inline DatasetManifest manifest_load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  return manifest_parse(in, path.parent_path(), path.string());
}

inline void manifest_write(const std::filesystem::path& path, std::span<const ManifestRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << "id,path,label,split\n";
  for (const auto& r : records) out << r.id << ',' << r.path << ',' << r.label << ',' << to_string(r.split) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

/// Files referenced by the manifest that do not exist.
inline std::vector<std::string> missing_files(const DatasetManifest& m) {
  std::vector<std::string> out;
  for (const auto& r : m.records)
    if (!std::filesystem::exists(m.resolve(r))) out.push_back(r.id + ": " + m.resolve(r).string());
  return out;
}

/// w_c = N / (K * N_c); satisfies sum_c w_c N_c = N.
inline Vector class_weights_from_counts(std::span<const std::size_t> counts) {
  const auto k = static_cast<Eigen::Index>(counts.size());
  if (k < 2) throw DataError("class_weights: need at least 2 classes, got " + std::to_string(k));
  double total = 0.0;
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[c] == 0) throw DataError("class_weights: class " + std::to_string(c) + " is empty");
    total += static_cast<double>(counts[c]);
  }
  Vector w(k);
  for (Eigen::Index c = 0; c < k; ++c) w[c] = total / (static_cast<double>(k) * counts[c]);
  return w;
}

inline Vector class_weights_from_labels(std::span<const int> labels, int num_classes) {
  std::vector<std::size_t> counts(std::max(num_classes, 0), 0);
  for (int l : labels) {
    if (l < 0 || l >= num_classes) throw DataError("class_weights: label out of range");
    ++counts[l];
  }
  return class_weights_from_counts(counts);
}

/// Weights from the training split of the manifest.
inline Vector class_weights(const DatasetManifest& m) {
  const auto counts = m.counts(Split::Train);
  return class_weights_from_counts(counts);
}

}  // namespace spdcov
