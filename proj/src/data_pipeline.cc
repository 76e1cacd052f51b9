//
// Copyright 2026 The Diff2 Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "diff2/data_pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace diff2 {
namespace {

// A feature is considered constant (and dropped) when its population standard
// deviation is this small relative to its magnitude; exact zeros are the
// normal case, the relative slack only absorbs accumulation rounding.
constexpr double kZeroVarianceTolerance = 1e-12;

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

bool ParseDouble(const std::string& cell, double* out) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  *out = std::strtod(begin, &end);
  return end != begin && *end == '\0';
}

}  // namespace

RawDataset LoadCsv(const std::string& path, TaskKind task) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open dataset file: " + path);
  }
  RawDataset dataset;
  dataset.task = task;

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("dataset file is empty: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = SplitCsvLine(line);
  if (header.size() < 2) {
    throw std::runtime_error("dataset needs at least one feature and a target");
  }
  dataset.target_name = header.back();
  dataset.feature_names.assign(header.begin(), header.end() - 1);
  const size_t columns = header.size();

  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = SplitCsvLine(line);
    if (cells.size() != columns) {
      throw std::runtime_error("line " + std::to_string(line_number) + ": has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(columns));
    }
    bool missing = false;
    for (const std::string& cell : cells) {
      if (cell.empty()) {
        missing = true;
        break;
      }
    }
    if (missing) {
      ++dataset.rejected_rows;  // hole in the row: reject, never impute
      continue;
    }
    Sample sample;
    sample.features.resize(columns - 1);
    for (size_t c = 0; c < columns; ++c) {
      double value = 0.0;
      if (!ParseDouble(cells[c], &value)) {
        throw std::runtime_error("line " + std::to_string(line_number) +
                                 ", column '" + header[c] +
                                 "': non-numeric cell '" + cells[c] + "'");
      }
      if (c + 1 < columns) {
        sample.features[c] = value;
      } else {
        sample.target = value;
      }
    }
    if (task == TaskKind::kClassification) {
      const double label = sample.target;
      if (label != std::floor(label) || label < 0.0) {
        throw std::runtime_error("line " + std::to_string(line_number) +
                                 ": class index must be a nonnegative integer");
      }
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

std::pair<std::vector<Sample>, std::vector<Sample>> TrainTestSplit(
    const RawDataset& dataset, double fraction, RngStream& stream) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("split fraction must lie in (0, 1]");
  }
  const int n = static_cast<int>(dataset.samples.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(stream.UniformInt(i + 1));
    std::swap(order[i], order[j]);
  }
  const int train_size = static_cast<int>(std::ceil(fraction * n));
  std::vector<Sample> train, test;
  train.reserve(train_size);
  test.reserve(n - train_size);
  for (int i = 0; i < n; ++i) {
    (i < train_size ? train : test).push_back(dataset.samples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

NormalizationStats FitAndApplyNormalization(std::vector<Sample>* train,
                                            std::vector<Sample>* test,
                                            TaskKind task) {
  if (train->empty()) {
    throw std::invalid_argument("cannot fit normalization on an empty train set");
  }
  const int features = static_cast<int>(train->front().features.size());
  const double n = static_cast<double>(train->size());

  NormalizationStats stats;
  stats.mean.assign(features, 0.0);
  stats.stddev.assign(features, 0.0);
  for (const Sample& z : *train) {
    for (int c = 0; c < features; ++c) stats.mean[c] += z.features[c];
  }
  for (int c = 0; c < features; ++c) stats.mean[c] /= n;
  for (const Sample& z : *train) {
    for (int c = 0; c < features; ++c) {
      const double centered = z.features[c] - stats.mean[c];
      stats.stddev[c] += centered * centered;
    }
  }
  for (int c = 0; c < features; ++c) {
    stats.stddev[c] = std::sqrt(stats.stddev[c] / n);
    const double tolerance =
        kZeroVarianceTolerance * std::max(1.0, std::abs(stats.mean[c]));
    if (stats.stddev[c] > tolerance) {
      stats.kept_features.push_back(c);
    } else {
      stats.dropped_features.push_back(c);
    }
  }

  stats.target_scale = 1.0;
  if (task == TaskKind::kRegression) {
    double max_abs = 0.0;
    for (const Sample& z : *train) max_abs = std::max(max_abs, std::abs(z.target));
    for (const Sample& z : *test) max_abs = std::max(max_abs, std::abs(z.target));
    if (max_abs > 0.0) stats.target_scale = max_abs;
  }

  auto apply = [&](std::vector<Sample>* split) {
    for (Sample& z : *split) {
      std::vector<double> kept;
      kept.reserve(stats.kept_features.size());
      for (int c : stats.kept_features) {
        kept.push_back((z.features[c] - stats.mean[c]) / stats.stddev[c]);
      }
      z.features = std::move(kept);
      if (task == TaskKind::kRegression) z.target /= stats.target_scale;
    }
  };
  apply(train);
  apply(test);
  return stats;
}

void SaveSamplesCsv(const std::string& path,
                    const std::vector<std::string>& feature_names,
                    const std::string& target_name,
                    const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write file: " + path);
  }
  for (const std::string& name : feature_names) out << name << ',';
  out << target_name << '\n';
  char buffer[64];
  for (const Sample& z : samples) {
    for (double v : z.features) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", v);
      out << buffer << ',';
    }
    std::snprintf(buffer, sizeof(buffer), "%.17g", z.target);
    out << buffer << '\n';
  }
  if (!out) {
    throw std::runtime_error("failed while writing file: " + path);
  }
}

}  // namespace diff2
