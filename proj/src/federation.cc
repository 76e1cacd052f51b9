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

#include "diff2/federation.h"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace diff2 {

int Federation::MinShardSize() const {
  int n_min = std::numeric_limits<int>::max();
  for (const ClientShard& shard : shards) {
    n_min = std::min(n_min, shard.size());
  }
  return shards.empty() ? 0 : n_min;
}

long CommLog::TotalUp() const {
  long total = 0;
  for (const Entry& e : entries) total += e.vectors_up;
  return total;
}

long CommLog::TotalDown() const {
  long total = 0;
  for (const Entry& e : entries) total += e.vectors_down;
  return total;
}

Federation PartitionIid(const std::vector<Sample>& dataset, int clients,
                        RngStream& stream) {
  const int n = static_cast<int>(dataset.size());
  if (clients < 1) {
    throw std::invalid_argument("need at least one client");
  }
  if (n < clients) {
    throw std::invalid_argument("fewer samples than clients");
  }

  // Fisher–Yates permutation driven by the stream, then contiguous chunks.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(stream.UniformInt(i + 1));
    std::swap(order[i], order[j]);
  }

  const int base = n / clients;
  const int remainder = n % clients;
  Federation federation;
  federation.shards.resize(clients);
  int cursor = 0;
  for (int p = 0; p < clients; ++p) {
    const int size = base + (p < remainder ? 1 : 0);
    ClientShard& shard = federation.shards[p];
    shard.client_id = p + 1;
    shard.samples.reserve(size);
    for (int i = 0; i < size; ++i) {
      shard.samples.push_back(dataset[order[cursor++]]);
    }
  }
  return federation;
}

int SelectLocalClient(int round, int clients) {
  if (round < 1 || clients < 1) {
    throw std::invalid_argument("round and client count must be positive");
  }
  return 1 + round % clients;
}

void LogRoundComm(CommLog* log, int round, bool local_routine, int clients) {
  CommLog::Entry entry;
  entry.round = round;
  entry.vectors_up = clients + (local_routine ? 2 : 0);
  entry.vectors_down = clients + (local_routine ? 1 : 0);
  log->entries.push_back(entry);
}

}  // namespace diff2
