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

#ifndef DIFF2_DATA_PIPELINE_H_
#define DIFF2_DATA_PIPELINE_H_

#include <string>
#include <utility>
#include <vector>

#include "diff2/model_zoo.h"
#include "diff2/numerics.h"

namespace diff2 {

enum class TaskKind {
  kRegression,
  kClassification,
};

// A parsed, rectangular numeric table.  The last CSV column is the target;
// the others are features.  Rows containing missing (empty) cells are
// rejected at ingestion and counted, so downstream code never sees a hole.
struct RawDataset {
  std::vector<std::string> feature_names;
  std::string target_name;
  std::vector<Sample> samples;
  TaskKind task = TaskKind::kRegression;
  int rejected_rows = 0;  // rows dropped for missing cells
};

// Feature/target scaling fitted by FitAndApplyNormalization.
struct NormalizationStats {
  // Indexed over the *original* feature columns.
  std::vector<double> mean;
  std::vector<double> stddev;  // population convention (divisor n)
  std::vector<int> kept_features;     // original indices, in order
  std::vector<int> dropped_features;  // zero-variance columns, reported
  double target_scale = 1.0;          // max |target|; 1 for classification
};

// Reads a comma-separated UTF-8 file with a header row and decimal-point
// floats.  The final column is the target.  Empty cells cause the row to be
// rejected (counted in rejected_rows); any other non-numeric cell is a hard
// parse error naming the row and column.  For classification the target
// column must hold integral class indices.  Row order is preserved.
RawDataset LoadCsv(const std::string& path, TaskKind task);

// Deterministically shuffles and splits into (train, test) with
// |train| = ceil(fraction * n).
std::pair<std::vector<Sample>, std::vector<Sample>> TrainTestSplit(
    const RawDataset& dataset, double fraction, RngStream& stream);

// Normalizes features to mean 0 and standard deviation 1, with the statistics
// fitted on the train split only (fitting on everything would leak the test
// set into training) and applied to both splits.  The standard deviation uses
// the population convention (divisor n).  Zero-variance features carry no
// information and would divide by zero, so they are dropped from both splits
// and reported in dropped_features.
//
// For regression the target column of both splits is divided by the maximum
// absolute target over train and test together — the scale is a fixed
// property of the whole dataset, not of the split — placing targets in
// [-1, 1].  Classification targets are class indices and are left untouched.
NormalizationStats FitAndApplyNormalization(std::vector<Sample>* train,
                                            std::vector<Sample>* test,
                                            TaskKind task);

// Writes samples as CSV (header row, "%.17g" floats, so a round-trip through
// LoadCsv reproduces every double bit-for-bit).  Used for the normalized
// dataset cache and by tests.
void SaveSamplesCsv(const std::string& path,
                    const std::vector<std::string>& feature_names,
                    const std::string& target_name,
                    const std::vector<Sample>& samples);

}  // namespace diff2

#endif  // DIFF2_DATA_PIPELINE_H_
