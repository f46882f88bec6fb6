// SPDX-License-Identifier: Apache-2.0
//
// Ranking and popularity-bias metrics.
//
// Ranks are 1-based. An item outranks the target when its score is strictly
// greater, or equal with a smaller item index; the same rule orders top-K
// lists, so rank <= K iff the target is in the top-K list.
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "niser/ingest.hpp"
#include "niser/model.hpp"
#include "niser/tensor.hpp"

namespace niser {

inline constexpr std::size_t kDefaultTopK = 20;

/// Default long-tail thresholds phi*.
const std::vector<double>& default_phi_grid();

/// Rank of `target` within one score row.
std::size_t rank_of(std::span<const double> scores, std::size_t target);

/// Ranks of targets[b] within scores row b.
std::vector<std::size_t> rank_targets(const Tensor& scores, std::span<const std::size_t> targets);

/// Top min(k, m) item indices of one row in descending score order.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k = kDefaultTopK);
/// Reciprocal rank inside the list, 0 beyond rank k.
double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k = kDefaultTopK);

/// Average recommendation popularity: mean over lists of sum(phi(i)) / k.
/// Throws DataError for items outside the vocabulary.
double average_recommendation_popularity(std::span<const std::vector<std::size_t>> lists,
                                         const ItemVocab& vocab, std::size_t k = kDefaultTopK);

/// phi(i) / max phi <= phi_star. With max phi = 0 every item qualifies.
bool in_long_tail(const ItemVocab& vocab, std::size_t item, double phi_star);
std::vector<std::size_t> long_tail_set(const ItemVocab& vocab, double phi_star);

struct PhiBucket {
  double phi_star = 0.0;
  std::size_t count = 0;
  std::optional<double> recall;  // absent for empty buckets
  std::optional<double> mrr;
};

/// Recall / MRR restricted to examples whose target lies in Gamma_{phi*}.
std::vector<PhiBucket> sliced_metrics(std::span<const std::size_t> ranks,
                                      std::span<const std::size_t> targets, const ItemVocab& vocab,
                                      std::span<const double> phi_grid, std::size_t k = kDefaultTopK);

/// Spearman rank correlation with average ranks for ties. 0 when either
/// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

struct DecileRow {
  std::size_t decile = 0;  // 0 = least popular tenth
  std::size_t items = 0;
  double mean_popularity = 0.0;
  double mean_norm = 0.0;
};

struct NormDiagnostic {
  std::vector<DecileRow> deciles;
  double spearman = 0.0;  // phi vs L2 norm over all items
};

/// Items sorted by (phi, index) and cut into ten near-equal buckets; mean
/// L2 norm of `table` rows per bucket.
NormDiagnostic norm_popularity_report(const Tensor& table, const ItemVocab& vocab);

struct MetricsReport {
  std::size_t k = kDefaultTopK;
  std::size_t examples = 0;
  double recall = 0.0;
  double mrr = 0.0;
  double arp = 0.0;
  std::vector<PhiBucket> buckets;
};

struct EvalOptions {
  std::size_t k = kDefaultTopK;
  std::vector<double> phi_grid = default_phi_grid();
  std::size_t batch_size = 256;
  std::size_t workers = 1;
};

struct Ranking {
  std::vector<std::size_t> ranks;
  std::vector<std::size_t> targets;
  std::vector<std::vector<std::size_t>> lists;  // top-k per example
};

/// Scores every example in eval mode. Shards across `workers` threads; the
/// merge is in example order, so output does not depend on the worker count.
Ranking rank_examples(const Parameters& params, const ModelConfig& config,
                      std::span<const Example> examples, const EvalOptions& options);

MetricsReport summarize(const Ranking& ranking, const ItemVocab& vocab, const EvalOptions& options);

MetricsReport evaluate(const Parameters& params, const ModelConfig& config,
                       std::span<const Example> examples, const ItemVocab& vocab,
                       const EvalOptions& options = {});

}  // namespace niser
