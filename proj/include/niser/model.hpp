// SPDX-License-Identifier: Apache-2.0
//
// Session-graph recommender: gated graph propagation over per-session graphs,
// soft-attention readout and softmax scoring over the item catalogue, with
// optional L2 normalisation of item and session embeddings (cosine scores
// scaled by sigma), position embeddings and input dropout.
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "niser/autodiff.hpp"
#include "niser/ingest.hpp"
#include "niser/rng.hpp"
#include "niser/session_graph.hpp"
#include "niser/tensor.hpp"

namespace niser {

enum class Variant { kGnn, kGnnPlus, kNir, kNiser, kNiserPlus };

std::string_view variant_name(Variant v);  // "gnn", "gnn+", "nir", "niser", "niser+"
Variant parse_variant(std::string_view name);

enum class LossReduction { kMean, kSum };

struct ModelConfig {
  Variant variant = Variant::kNiserPlus;
  std::size_t d = 100;
  std::size_t max_len = 10;  // L: position-embedding rows and "+" prefix cap
  std::size_t tau = 1;       // propagation steps
  double sigma = 16.0;
  bool normalize_items = true;
  bool normalize_session = true;
  bool use_position_embeddings = true;
  double dropout_p = 0.1;
  EdgeWeighting edge_weighting = EdgeWeighting::kCount;
  LossReduction loss_reduction = LossReduction::kMean;

  /// Defaults with every flag fixed by `v`.
  static ModelConfig for_variant(Variant v);

  /// Throws UsageError when an invariant fails, including flags that do not
  /// match the variant.
  void validate() const;

  bool is_plus() const { return variant == Variant::kGnnPlus || variant == Variant::kNiserPlus; }
  /// Prefix truncation: `max_len` for "+" variants, uncapped otherwise.
  std::size_t prefix_cap() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Every trainable array. Row `num_items()` of the item table is the padding
/// row and is kept at zero.
struct Parameters {
  Tensor item_embeddings;      // [(m+1) x d]
  Tensor position_embeddings;  // [L x d]
  Tensor h1, h2;               // [d x d]
  Tensor ggnn_bias;            // [2d]
  Tensor wz, wr, wo;           // [d x 2d]
  Tensor uz, ur, uo;           // [d x d]
  Tensor attn_q, attn_c;       // [d]
  Tensor w1, w2;               // [d x d]
  Tensor w3;                   // [d x 2d]

  std::size_t num_items() const { return item_embeddings.rows() - 1; }
  std::size_t padding_index() const { return num_items(); }
  std::size_t dim() const { return item_embeddings.cols(); }

  /// uniform(-1/sqrt(d), 1/sqrt(d)) for every entry; padding row zero.
  static Parameters init(const ModelConfig& config, std::size_t num_items, Rng& rng);

  /// Appends freshly initialised item rows (before the padding row).
  void grow_items(std::size_t new_num_items, Rng& rng);
  void zero_padding_row();

  std::size_t tensor_count() const { return 16; }
  /// Stable name order used by checkpoints and the optimiser.
  static const std::vector<std::string>& names();
  Tensor& by_index(std::size_t i);
  const Tensor& by_index(std::size_t i) const;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Parameters bound into a graph, either as differentiable leaves or as
/// constants (evaluation).
struct ParamVars {
  ad::Var items, positions, h1, h2, ggnn_bias, wz, wr, wo, uz, ur, uo, attn_q, attn_c, w1, w2, w3;

  std::vector<ad::Var> all() const;
};

ParamVars bind_parameters(ad::Graph& g, const Parameters& p, bool differentiable);
/// Binds parameters from leaves in Parameters::names() order.
ParamVars bind_parameters(std::span<const ad::Var> vars);

// ---- building blocks (all batched, all recorded on the graph) ---------------

/// Row-wise unit-norm item table.
ad::Var normalize_item_table(ad::Var items);

struct GgnnWeights {
  ad::Var h1, h2, bias, wz, wr, wo, uz, ur, uo;
};

/// `tau` gated propagation steps. a_in / a_out are [B*N x N] block matrices,
/// nodes is [B*N x d].
ad::Var ggnn_propagate(ad::Var a_in, ad::Var a_out, ad::Var nodes, const GgnnWeights& w,
                       std::size_t blocks, std::size_t tau);

/// Adds position_embeddings[positions[i]] to row i; kNoRow positions add zero.
ad::Var add_position_embeddings(ad::Var seq, ad::Var position_embeddings,
                                const std::vector<std::size_t>& positions);

struct AttentionWeights {
  ad::Var q, c, w1, w2, w3;
};

/// seq: [B*S x d] position rows, last: [B x d], mask: [B*S]. Returns session
/// embeddings s = W3 [s'; last], [B x d]. A batch row with no real position
/// throws DataError.
ad::Var attention_readout(ad::Var seq, ad::Var last, const AttentionWeights& w,
                          const std::vector<std::uint8_t>& mask, std::size_t batch);

/// Logits over the m live items per the variant's scoring rule.
/// `table` is the normalised table when items are normalised, otherwise the
/// raw live rows.
ad::Var score_logits(ad::Var session, ad::Var table, const ModelConfig& config);

/// -log softmax(logits)[target], reduced over the batch.
ad::Var cross_entropy(ad::Var log_probs, const std::vector<std::size_t>& targets, LossReduction reduction);

struct ForwardPass {
  ad::Var logits;     // [B x m]
  ad::Var log_probs;  // [B x m]
  ad::Var loss;       // scalar
};

/// Full pipeline for a batch of examples. `rng` feeds dropout in train mode
/// and may be null otherwise.
ForwardPass forward(ad::Graph& g, const ParamVars& params, std::span<const Example> batch,
                    const ModelConfig& config, bool train_mode, Rng* rng);

/// Eval-mode logits [B x m] without recording gradients.
Tensor predict_logits(const Parameters& params, std::span<const Example> batch, const ModelConfig& config);

/// Eval-mode probabilities [B x m]; rows sum to one.
Tensor predict_scores(const Parameters& params, std::span<const Example> batch, const ModelConfig& config);

/// Item table the scorer compares sessions against (normalised for NIR /
/// NISER variants), [m x d].
Tensor effective_item_table(const Parameters& params, const ModelConfig& config);

}  // namespace niser
