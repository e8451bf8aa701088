#include "dsgq/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dsgq {

namespace {

Dataset sample_blobs(const BlobSpec& spec, const Tensor& centers, std::size_t per_class,
                     Rng& rng) {
  const std::size_t n = spec.classes * per_class;
  Dataset d;
  d.classes = spec.classes;
  d.x = Tensor::matrix(n, spec.dim);
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    d.y[i] = int(c);
    for (std::size_t j = 0; j < spec.dim; ++j)
      d.x.at(i, j) = centers.at(c, j) + spec.spread * rng.normal();
  }
  return d;
}

}  // namespace

DatasetSplit make_blobs(const BlobSpec& spec) {
  if (spec.classes < 2) throw Error("blobs: need at least 2 classes");
  if (spec.dim == 0 || spec.per_class == 0 || spec.test_per_class == 0)
    throw Error("blobs: dim and per-class counts must be positive");
  if (!(spec.spread > 0.0) || !(spec.center_scale > 0.0))
    throw Error("blobs: spread and center_scale must be positive");
  Rng centers_rng(spec.seed, Stream::Data, 0);
  const Tensor centers =
      centers_rng.normal_tensor({spec.classes, spec.dim}, 0.0, spec.center_scale);
  Rng train_rng(spec.seed, Stream::Data, 1), test_rng(spec.seed, Stream::Data, 2);
  return {sample_blobs(spec, centers, spec.per_class, train_rng),
          sample_blobs(spec, centers, spec.test_per_class, test_rng)};
}

Dataset load_csv(const std::string& path, std::size_t classes) {
  std::ifstream in(path);
  if (!in) throw Error("csv: cannot open '" + path + "'");
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t width = 0, row = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    const std::string where = path + ": row " + std::to_string(row);
    if (cells.size() < 2) throw Error(where + ": expected a label and at least one feature");
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw Error(where + ": expected " + std::to_string(width) + " columns, got " +
                  std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::string s = cells[c];
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      double v = 0.0;
      const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v))
        throw Error(where + ", column " + std::to_string(c + 1) +
                    ": not a finite number: '" + cells[c] + "'");
      if (c == 0) {
        if (v < 0 || v != std::floor(v))
          throw Error(where + ", column 1: label must be a non-negative integer");
        labels.push_back(int(v));
      } else {
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) throw Error("csv: '" + path + "' has no rows");
  Dataset d;
  d.y = std::move(labels);
  d.x = Tensor({d.y.size(), width - 1}, std::move(values));
  const std::size_t seen = std::size_t(*std::max_element(d.y.begin(), d.y.end())) + 1;
  if (classes != 0 && seen > classes)
    throw Error("csv: label " + std::to_string(seen - 1) + " exceeds class count");
  d.classes = classes ? classes : seen;
  if (d.classes < 2) throw Error("csv: need at least 2 classes");
  return d;
}

void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error("csv: cannot write '" + path + "'");
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.y[i];
    for (double v : data.x.row(i)) {
      const auto r = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, std::size_t(r.ptr - buf));
    }
    out << '\n';
  }
}

DatasetSplit load_dataset(const DatasetSpec& spec) {
  if (spec.kind == DatasetSpec::Kind::Blobs) return make_blobs(spec.blobs);
  DatasetSplit s;
  s.train = load_csv(spec.csv_train);
  s.test = spec.csv_test.empty() ? s.train : load_csv(spec.csv_test, s.train.classes);
  if (s.test.x.cols() != s.train.x.cols())
    throw Error("csv: train and test feature counts differ");
  s.train.classes = std::max(s.train.classes, s.test.classes);
  s.test.classes = s.train.classes;
  return s;
}

}  // namespace dsgq
