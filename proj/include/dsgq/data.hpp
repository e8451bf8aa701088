#pragma once

#include <string>
#include <vector>

#include "dsgq/tensor.hpp"

namespace dsgq {

struct Dataset {
  Tensor x;             // [n, dim]
  std::vector<int> y;   // [n], in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Isotropic Gaussian blobs: class centers ~ N(0, center_scale^2) per
/// coordinate, points ~ center + N(0, spread^2).
struct BlobSpec {
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t per_class = 256;       // training points per class
  std::size_t test_per_class = 256;  // test points per class
  double spread = 1.0;
  double center_scale = 1.0;
  std::uint64_t seed = 0;
};

DatasetSplit make_blobs(const BlobSpec& spec);

/// Label-first numeric CSV: "label,x0,x1,...". Every row must have the same
/// column count. `classes` is max(label) + 1 unless given.
Dataset load_csv(const std::string& path, std::size_t classes = 0);
void save_csv(const std::string& path, const Dataset& data);

/// Either a blob spec or CSV paths (test falls back to train when empty).
struct DatasetSpec {
  enum class Kind { Blobs, Csv } kind = Kind::Blobs;
  BlobSpec blobs;
  std::string csv_train;
  std::string csv_test;
};

DatasetSplit load_dataset(const DatasetSpec& spec);

}  // namespace dsgq
