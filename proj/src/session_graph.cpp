// SPDX-License-Identifier: Apache-2.0
#include "niser/session_graph.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

#include "niser/error.hpp"

namespace niser {

namespace {

void normalize_rows(Tensor& m) {
  const std::size_t n = m.cols();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) total += m.at(r, c);
    if (total > 0.0) {
      for (std::size_t c = 0; c < n; ++c) m.at(r, c) /= total;
    }
  }
}

}  // namespace

SessionGraph build_session_graph(const std::vector<std::size_t>& sequence, EdgeWeighting weighting) {
  if (sequence.empty()) throw UsageError("build_session_graph: empty sequence");
  SessionGraph g;
  std::unordered_map<std::size_t, std::size_t> row;
  g.alias.reserve(sequence.size());
  for (std::size_t item : sequence) {
    const auto [it, inserted] = row.emplace(item, g.nodes.size());
    if (inserted) g.nodes.push_back(item);
    g.alias.push_back(it->second);
  }
  const std::size_t n = g.nodes.size();
  Tensor weights(Shape{n, n});  // weights(u, v): transitions u -> v
  for (std::size_t j = 0; j + 1 < sequence.size(); ++j) {
    double& w = weights.at(g.alias[j], g.alias[j + 1]);
    w = weighting == EdgeWeighting::kCount ? w + 1.0 : 1.0;
  }
  g.a_out = weights;
  g.a_in = Tensor(Shape{n, n});
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) g.a_in.at(v, u) = weights.at(u, v);
  normalize_rows(g.a_out);
  normalize_rows(g.a_in);
  g.last_node = g.alias.back();
  return g;
}

GraphBatch batch_graphs(const std::vector<SessionGraph>& graphs, std::size_t pad_to,
                        std::size_t dummy_index) {
  GraphBatch b;
  b.batch = graphs.size();
  b.width = pad_to;
  b.node_items.assign(b.batch * pad_to, dummy_index);
  b.node_mask.assign(b.batch * pad_to, 0);
  b.a_in = Tensor(Shape{b.batch, pad_to, pad_to});
  b.a_out = Tensor(Shape{b.batch, pad_to, pad_to});
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const SessionGraph& g = graphs[i];
    if (g.size() > pad_to) {
      throw UsageError("batch_graphs: graph with " + std::to_string(g.size()) +
                       " nodes exceeds pad_to=" + std::to_string(pad_to));
    }
    const std::size_t base = i * pad_to;
    for (std::size_t r = 0; r < g.size(); ++r) {
      b.node_items[base + r] = g.nodes[r];
      b.node_mask[base + r] = 1;
      for (std::size_t c = 0; c < g.size(); ++c) {
        b.a_in[(base + r) * pad_to + c] = g.a_in.at(r, c);
        b.a_out[(base + r) * pad_to + c] = g.a_out.at(r, c);
      }
    }
  }
  return b;
}

}  // namespace niser
