// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "niser/tensor.hpp"

namespace niser {

enum class EdgeWeighting {
  kCount,   // repeated transitions add weight before normalisation
  kBinary,  // every distinct transition has weight 1
};

/// Per-session directed graph over distinct items.
struct SessionGraph {
  std::vector<std::size_t> nodes;  // distinct items, first-occurrence order
  Tensor a_in;                     // [n x n], row j: normalised weights of edges k -> j
  Tensor a_out;                    // [n x n], row j: normalised weights of edges j -> k
  std::vector<std::size_t> alias;  // sequence position -> node row
  std::size_t last_node = 0;       // node row of the final sequence item

  std::size_t size() const noexcept { return nodes.size(); }
};

/// Throws UsageError on an empty sequence.
SessionGraph build_session_graph(const std::vector<std::size_t>& sequence,
                                 EdgeWeighting weighting = EdgeWeighting::kCount);

/// Fixed-width batch of session graphs.
struct GraphBatch {
  std::size_t batch = 0;
  std::size_t width = 0;                // padded node count per graph
  std::vector<std::size_t> node_items;  // [batch * width], dummy index on padding
  Tensor a_in;                          // [batch x width x width], zero padded
  Tensor a_out;
  std::vector<std::uint8_t> node_mask;  // [batch * width], 1 for real nodes
};

/// Pads every graph to `pad_to` nodes using `dummy_index` as the item of
/// padding nodes. Throws UsageError if a graph has more than `pad_to` nodes.
GraphBatch batch_graphs(const std::vector<SessionGraph>& graphs, std::size_t pad_to,
                        std::size_t dummy_index);

}  // namespace niser
