// SPDX-License-Identifier: Apache-2.0
#include "niser/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "niser/error.hpp"

namespace niser {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kGnn: return "gnn";
    case Variant::kGnnPlus: return "gnn+";
    case Variant::kNir: return "nir";
    case Variant::kNiser: return "niser";
    case Variant::kNiserPlus: return "niser+";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : {Variant::kGnn, Variant::kGnnPlus, Variant::kNir, Variant::kNiser, Variant::kNiserPlus}) {
    if (variant_name(v) == name) return v;
  }
  throw UsageError("unknown variant '" + std::string(name) + "' (expected gnn, gnn+, nir, niser, niser+)");
}

ModelConfig ModelConfig::for_variant(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.normalize_items = v == Variant::kNir || v == Variant::kNiser || v == Variant::kNiserPlus;
  c.normalize_session = v == Variant::kNiser || v == Variant::kNiserPlus;
  c.use_position_embeddings = v == Variant::kNiserPlus;
  c.dropout_p = v == Variant::kNiserPlus ? 0.1 : 0.0;
  return c;
}

void ModelConfig::validate() const {
  if (d < 1) throw UsageError("model: d must be >= 1");
  if (max_len < 1) throw UsageError("model: max_len must be >= 1");
  if (normalize_session && !(sigma > 0.0)) throw UsageError("model: sigma must be > 0");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw UsageError("model: dropout_p must be in [0, 1)");
  const ModelConfig ref = for_variant(variant);
  if (normalize_items != ref.normalize_items || normalize_session != ref.normalize_session ||
      use_position_embeddings != ref.use_position_embeddings) {
    throw UsageError("model: normalisation / position flags do not match variant " +
                     std::string(variant_name(variant)));
  }
  if (variant != Variant::kNiserPlus && dropout_p != 0.0) {
    throw UsageError("model: dropout is only part of variant niser+");
  }
}

std::size_t ModelConfig::prefix_cap() const { return is_plus() ? max_len : kNoCap; }

// ---- parameters -------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = uniform(rng, -bound, bound);
  return t;
}

}  // namespace

const std::vector<std::string>& Parameters::names() {
  static const std::vector<std::string> kNames = {
      "item_embeddings", "position_embeddings", "ggnn.h1", "ggnn.h2", "ggnn.bias", "ggnn.wz",
      "ggnn.wr",         "ggnn.wo",             "ggnn.uz", "ggnn.ur", "ggnn.uo",   "attn.q",
      "attn.c",          "attn.w1",             "attn.w2", "mix.w3"};
  return kNames;
}

Tensor& Parameters::by_index(std::size_t i) {
  return const_cast<Tensor&>(static_cast<const Parameters&>(*this).by_index(i));
}

const Tensor& Parameters::by_index(std::size_t i) const {
  switch (i) {
    case 0: return item_embeddings;
    case 1: return position_embeddings;
    case 2: return h1;
    case 3: return h2;
    case 4: return ggnn_bias;
    case 5: return wz;
    case 6: return wr;
    case 7: return wo;
    case 8: return uz;
    case 9: return ur;
    case 10: return uo;
    case 11: return attn_q;
    case 12: return attn_c;
    case 13: return w1;
    case 14: return w2;
    case 15: return w3;
    default: throw UsageError("parameter index out of range");
  }
}

Parameters Parameters::init(const ModelConfig& config, std::size_t num_items, Rng& rng) {
  config.validate();
  if (num_items == 0) throw DataError("cannot initialise a model over an empty catalogue");
  const std::size_t d = config.d;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Parameters p;
  p.item_embeddings = uniform_tensor({num_items + 1, d}, bound, rng);
  p.position_embeddings = uniform_tensor({config.max_len, d}, bound, rng);
  p.h1 = uniform_tensor({d, d}, bound, rng);
  p.h2 = uniform_tensor({d, d}, bound, rng);
  p.ggnn_bias = uniform_tensor({2 * d}, bound, rng);
  p.wz = uniform_tensor({d, 2 * d}, bound, rng);
  p.wr = uniform_tensor({d, 2 * d}, bound, rng);
  p.wo = uniform_tensor({d, 2 * d}, bound, rng);
  p.uz = uniform_tensor({d, d}, bound, rng);
  p.ur = uniform_tensor({d, d}, bound, rng);
  p.uo = uniform_tensor({d, d}, bound, rng);
  p.attn_q = uniform_tensor({d}, bound, rng);
  p.attn_c = uniform_tensor({d}, bound, rng);
  p.w1 = uniform_tensor({d, d}, bound, rng);
  p.w2 = uniform_tensor({d, d}, bound, rng);
  p.w3 = uniform_tensor({d, 2 * d}, bound, rng);
  p.zero_padding_row();
  return p;
}

void Parameters::grow_items(std::size_t new_num_items, Rng& rng) {
  const std::size_t m = num_items(), d = dim();
  if (new_num_items < m) throw UsageError("grow_items: vocabulary cannot shrink");
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor grown({new_num_items + 1, d});
  std::copy_n(item_embeddings.data(), m * d, grown.data());
  for (std::size_t i = m * d; i < new_num_items * d; ++i) grown[i] = uniform(rng, -bound, bound);
  item_embeddings = std::move(grown);
}

void Parameters::zero_padding_row() {
  for (double& v : item_embeddings.row(padding_index())) v = 0.0;
}

std::vector<ad::Var> ParamVars::all() const {
  return {items, positions, h1, h2, ggnn_bias, wz, wr, wo, uz, ur, uo, attn_q, attn_c, w1, w2, w3};
}

ParamVars bind_parameters(ad::Graph& g, const Parameters& p, bool differentiable) {
  std::vector<ad::Var> vars;
  for (std::size_t i = 0; i < p.tensor_count(); ++i) {
    vars.push_back(differentiable ? g.leaf(p.by_index(i)) : g.constant(p.by_index(i)));
  }
  return bind_parameters(vars);
}

ParamVars bind_parameters(std::span<const ad::Var> v) {
  if (v.size() != 16) throw UsageError("bind_parameters: expected 16 tensors");
  return ParamVars{v[0], v[1], v[2],  v[3],  v[4],  v[5],  v[6],  v[7],
                   v[8], v[9], v[10], v[11], v[12], v[13], v[14], v[15]};
}

// ---- building blocks ----------------------------------------------------------

ad::Var normalize_item_table(ad::Var items) { return ad::l2_normalize_rows(items); }

ad::Var ggnn_propagate(ad::Var a_in, ad::Var a_out, ad::Var nodes, const GgnnWeights& w,
                       std::size_t blocks, std::size_t tau) {
  ad::Var h = nodes;
  for (std::size_t t = 0; t < tau; ++t) {
    const ad::Var msg_in = ad::matmul(ad::block_matmul(a_in, h, blocks), w.h1);
    const ad::Var msg_out = ad::matmul(ad::block_matmul(a_out, h, blocks), w.h2);
    const ad::Var a = ad::add_row(ad::concat_cols(msg_in, msg_out), w.bias);
    const ad::Var z = ad::sigmoid(ad::add(ad::matmul(a, w.wz, true), ad::matmul(h, w.uz, true)));
    const ad::Var r = ad::sigmoid(ad::add(ad::matmul(a, w.wr, true), ad::matmul(h, w.ur, true)));
    const ad::Var cand =
        ad::tanh(ad::add(ad::matmul(a, w.wo, true), ad::matmul(ad::mul(r, h), w.uo, true)));
    const ad::Var keep = ad::add_scalar(ad::scale(z, -1.0), 1.0);
    h = ad::add(ad::mul(keep, h), ad::mul(z, cand));
  }
  return h;
}

ad::Var add_position_embeddings(ad::Var seq, ad::Var position_embeddings,
                                const std::vector<std::size_t>& positions) {
  return ad::add(seq, ad::gather_rows(position_embeddings, positions));
}

ad::Var attention_readout(ad::Var seq, ad::Var last, const AttentionWeights& w,
                          const std::vector<std::uint8_t>& mask, std::size_t batch) {
  const std::size_t rows = seq.value().rows();
  if (batch == 0 || rows % batch != 0 || mask.size() != rows) {
    throw ShapeError("attention_readout: " + std::to_string(rows) + " rows, " +
                     std::to_string(mask.size()) + " mask entries for batch " + std::to_string(batch));
  }
  const std::size_t width = rows / batch;
  const std::size_t d = seq.value().cols();
  std::vector<std::size_t> owner(rows);
  for (std::size_t i = 0; i < rows; ++i) owner[i] = i / width;
  const ad::Var last_proj = ad::gather_rows(ad::matmul(last, w.w1, true), owner);
  const ad::Var hidden = ad::sigmoid(ad::add_row(ad::add(ad::matmul(seq, w.w2, true), last_proj), w.c));
  const ad::Var logits = ad::matmul(hidden, ad::reshape(w.q, {1, d}), true);  // [B*S x 1]
  const ad::Var weights = ad::softmax_rows(ad::reshape(logits, {batch, width}), &mask);
  const ad::Var pooled = ad::block_matmul(weights, seq, batch);  // [B x d]
  return ad::matmul(ad::concat_cols(pooled, last), w.w3, true);
}

ad::Var score_logits(ad::Var session, ad::Var table, const ModelConfig& config) {
  if (config.normalize_session) {
    return ad::scale(ad::matmul(ad::l2_normalize_rows(session), table, true), config.sigma);
  }
  return ad::matmul(session, table, true);
}

ad::Var cross_entropy(ad::Var log_probs, const std::vector<std::size_t>& targets, LossReduction reduction) {
  const ad::Var picked = ad::pick(log_probs, targets);
  const ad::Var total = ad::scale(ad::sum(picked), -1.0);
  if (reduction == LossReduction::kSum) return total;
  return ad::scale(total, 1.0 / static_cast<double>(targets.size()));
}

ForwardPass forward(ad::Graph& g, const ParamVars& params, std::span<const Example> batch,
                    const ModelConfig& config, bool train_mode, Rng* rng) {
  if (batch.empty()) throw UsageError("forward: empty batch");
  const std::size_t m = params.items.value().rows() - 1;
  const std::size_t bsz = batch.size();

  std::vector<SessionGraph> graphs;
  graphs.reserve(bsz);
  std::size_t width = 1, seq_width = 1;
  for (const Example& ex : batch) {
    if (ex.prefix.empty()) throw DataError("forward: empty prefix");
    if (ex.target >= m) throw DataError("forward: target " + std::to_string(ex.target) + " outside catalogue");
    for (std::size_t item : ex.prefix) {
      if (item >= m) throw DataError("forward: item " + std::to_string(item) + " outside catalogue");
    }
    if (config.use_position_embeddings && ex.prefix.size() > config.max_len) {
      throw DataError("forward: prefix of length " + std::to_string(ex.prefix.size()) +
                      " exceeds max_len " + std::to_string(config.max_len));
    }
    graphs.push_back(build_session_graph(ex.prefix, config.edge_weighting));
    width = std::max(width, graphs.back().size());
    seq_width = std::max(seq_width, ex.prefix.size());
  }
  const GraphBatch gb = batch_graphs(graphs, width, m);

  const ad::Var live = ad::slice_rows(params.items, 0, m);
  const ad::Var table = config.normalize_items ? normalize_item_table(live) : live;

  ad::Var nodes = ad::gather_rows(table, gb.node_items, m);
  if (train_mode && config.dropout_p > 0.0) {
    if (!rng) throw UsageError("forward: train-mode dropout needs an RNG");
    nodes = ad::dropout(nodes, config.dropout_p, *rng, true);
  }
  const ad::Var a_in = g.constant(gb.a_in.reshaped({bsz * width, width}));
  const ad::Var a_out = g.constant(gb.a_out.reshaped({bsz * width, width}));
  const GgnnWeights gw{params.h1, params.h2, params.ggnn_bias, params.wz, params.wr,
                       params.wo, params.uz, params.ur,        params.uo};
  const ad::Var propagated = ggnn_propagate(a_in, a_out, nodes, gw, bsz, config.tau);

  std::vector<std::size_t> alias(bsz * seq_width, ad::kNoRow);
  std::vector<std::size_t> positions(bsz * seq_width, ad::kNoRow);
  std::vector<std::uint8_t> mask(bsz * seq_width, 0);
  std::vector<std::size_t> last_rows(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    const SessionGraph& sg = graphs[b];
    for (std::size_t j = 0; j < sg.alias.size(); ++j) {
      alias[b * seq_width + j] = b * width + sg.alias[j];
      positions[b * seq_width + j] = j;
      mask[b * seq_width + j] = 1;
    }
    last_rows[b] = b * seq_width + sg.alias.size() - 1;
  }
  ad::Var seq = ad::gather_rows(propagated, alias);
  if (config.use_position_embeddings) seq = add_position_embeddings(seq, params.positions, positions);
  const ad::Var last = ad::gather_rows(seq, last_rows);

  const AttentionWeights aw{params.attn_q, params.attn_c, params.w1, params.w2, params.w3};
  const ad::Var session = attention_readout(seq, last, aw, mask, bsz);

  ForwardPass out;
  out.logits = score_logits(session, table, config);
  out.log_probs = ad::log_softmax_rows(out.logits);
  std::vector<std::size_t> targets(bsz);
  for (std::size_t b = 0; b < bsz; ++b) targets[b] = batch[b].target;
  out.loss = cross_entropy(out.log_probs, targets, config.loss_reduction);
  return out;
}

Tensor predict_logits(const Parameters& params, std::span<const Example> batch, const ModelConfig& config) {
  ad::Graph g;
  const ParamVars vars = bind_parameters(g, params, false);
  return forward(g, vars, batch, config, false, nullptr).logits.value();
}

Tensor predict_scores(const Parameters& params, std::span<const Example> batch, const ModelConfig& config) {
  ad::Graph g;
  const ParamVars vars = bind_parameters(g, params, false);
  Tensor probs = forward(g, vars, batch, config, false, nullptr).log_probs.value();
  for (double& v : probs.values()) v = std::exp(v);
  return probs;
}

Tensor effective_item_table(const Parameters& params, const ModelConfig& config) {
  ad::Graph g;
  const ad::Var live = ad::slice_rows(g.constant(params.item_embeddings), 0, params.num_items());
  return config.normalize_items ? normalize_item_table(live).value() : live.value();
}

}  // namespace niser
