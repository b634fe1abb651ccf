#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedss/model.hpp"
#include "fedss/numerics.hpp"

namespace fedss {

// Labeled feature vectors; labels are dense ids in [0, num_classes).
struct Dataset {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::vector<DenseVector> features;
  std::vector<ClassId> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  void push_back(DenseVector x, ClassId y);
  // Throws ContractViolation on ragged rows, label >= num_classes, or length mismatch.
  void validate() const;
};

struct SyntheticDatasetSpec {
  std::size_t num_classes = 200;
  std::size_t input_dim = 32;
  std::size_t samples_per_class = 50;
  double dispersion = 1.0;  // radius of the sphere holding the class centers
  double noise_sigma = 0.15;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

// Class centers uniform on the sphere of radius `dispersion`; samples are
// center + N(0, sigma^2 I). Each class is split train/test by train_fraction.
DatasetSplit generate_synthetic(const SyntheticDatasetSpec& spec);

// Maps raw label tokens to dense ids. Integer tokens sort numerically,
// anything else lexicographically.
struct LabelMapping {
  std::vector<std::string> tokens;  // tokens[id] = raw label

  std::size_t size() const noexcept { return tokens.size(); }
  // Throws ContractViolation for unknown tokens.
  ClassId lookup(const std::string& token) const;
};

struct IngestedDataset {
  Dataset data;
  LabelMapping mapping;
};

// Rows are `label,feat_0,...,feat_{p-1}`; a header row is detected and skipped.
// With `mapping` given, labels are resolved against it instead of densified.
IngestedDataset ingest_csv(const std::filesystem::path& path, const LabelMapping* mapping = nullptr);

void write_csv(const Dataset& data, const std::filesystem::path& path);
void write_label_mapping(const LabelMapping& mapping, const std::filesystem::path& path);
LabelMapping read_label_mapping(const std::filesystem::path& path);

// Shortest round-trip decimal representation, locale independent.
std::string format_double(double v);

}  // namespace fedss
