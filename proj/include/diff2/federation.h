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

#ifndef DIFF2_FEDERATION_H_
#define DIFF2_FEDERATION_H_

#include <vector>

#include "diff2/model_zoo.h"
#include "diff2/numerics.h"

namespace diff2 {

// One client's private local dataset D_p.  The sample order is fixed at
// construction; every reduction over a shard walks this order, which is part
// of the determinism contract.
struct ClientShard {
  int client_id = 0;  // 1-based, in [1, P]
  std::vector<Sample> samples;

  int size() const { return static_cast<int>(samples.size()); }
};

// The P-client centralized topology: P shards behind a trusted server.
struct Federation {
  std::vector<ClientShard> shards;

  int clients() const { return static_cast<int>(shards.size()); }

  // min_p n_p; the smallest shard size drives the noise calibration.
  int MinShardSize() const;
};

// Communication ledger in units of d-dimensional vectors (not bytes), which
// matches round-based accounting: payload per message is one parameter-sized
// vector regardless of its role.
struct CommLog {
  struct Entry {
    int round = 0;
    long vectors_up = 0;    // client -> server
    long vectors_down = 0;  // server -> clients
  };
  std::vector<Entry> entries;

  long TotalUp() const;
  long TotalDown() const;
};

// Randomly permutes the dataset and splits it into P near-equal shards
// (sizes differ by at most one; the remainder goes to the lowest-numbered
// shards).  Deterministic given the stream.  Throws std::invalid_argument if
// P exceeds the dataset size.
Federation PartitionIid(const std::vector<Sample>& dataset, int clients,
                        RngStream& stream);

// The round-robin local-optimization client: p_r = 1 + (r mod P), for round
// r >= 1.  Periodic with period P and surjective onto [1, P].
int SelectLocalClient(int round, int clients);

// Appends one round's communication counts.  A plain aggregation round costs
// P vectors up (one clipped message per client) and P down (the broadcast
// model update).  A local-routine round additionally costs the selected
// client 2 vectors up (the two returned iterates) and 1 down (the first
// local iterate it starts from).
void LogRoundComm(CommLog* log, int round, bool local_routine, int clients);

}  // namespace diff2

#endif  // DIFF2_FEDERATION_H_
