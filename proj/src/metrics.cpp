// SPDX-License-Identifier: Apache-2.0
#include "niser/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "niser/error.hpp"

namespace niser {

const std::vector<double>& default_phi_grid() {
  static const std::vector<double> kGrid = {0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0};
  return kGrid;
}

namespace {

inline bool outranks(double si, std::size_t i, double sj, std::size_t j) {
  return si > sj || (si == sj && i < j);
}

}  // namespace

std::size_t rank_of(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw DataError("rank_of: target outside score row");
  const double st = scores[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j != target && outranks(scores[j], j, st, target)) ++rank;
  }
  return rank;
}

std::vector<std::size_t> rank_targets(const Tensor& scores, std::span<const std::size_t> targets) {
  if (scores.rows() != targets.size()) {
    throw ShapeError("rank_targets: " + std::to_string(targets.size()) + " targets for scores " +
                     shape_to_string(scores.shape()));
  }
  std::vector<std::size_t> ranks(targets.size());
  for (std::size_t b = 0; b < targets.size(); ++b) ranks[b] = rank_of(scores.row(b), targets[b]);
  return ranks;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t n = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                    [&](std::size_t a, std::size_t b) { return outranks(scores[a], a, scores[b], b); });
  idx.resize(n);
  return idx;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("recall_at_k: no ranks");
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("mrr_at_k: no ranks");
  double total = 0.0;
  for (std::size_t r : ranks) total += r <= k ? 1.0 / static_cast<double>(r) : 0.0;
  return total / static_cast<double>(ranks.size());
}

double average_recommendation_popularity(std::span<const std::vector<std::size_t>> lists,
                                         const ItemVocab& vocab, std::size_t k) {
  if (lists.empty()) throw DataError("arp: no recommendation lists");
  double total = 0.0;
  for (const auto& list : lists) {
    double list_total = 0.0;
    for (std::size_t item : list) {
      if (item >= vocab.size()) throw DataError("arp: item " + std::to_string(item) + " not in vocabulary");
      list_total += static_cast<double>(vocab.popularity(item));
    }
    total += list_total / static_cast<double>(k);
  }
  return total / static_cast<double>(lists.size());
}

bool in_long_tail(const ItemVocab& vocab, std::size_t item, double phi_star) {
  if (vocab.max_popularity() == 0) return true;
  return static_cast<double>(vocab.popularity(item)) / static_cast<double>(vocab.max_popularity()) <= phi_star;
}

std::vector<std::size_t> long_tail_set(const ItemVocab& vocab, double phi_star) {
  if (!(phi_star > 0.0 && phi_star <= 1.0)) throw UsageError("long_tail_set: phi* must be in (0, 1]");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (in_long_tail(vocab, i, phi_star)) out.push_back(i);
  }
  return out;
}

std::vector<PhiBucket> sliced_metrics(std::span<const std::size_t> ranks,
                                      std::span<const std::size_t> targets, const ItemVocab& vocab,
                                      std::span<const double> phi_grid, std::size_t k) {
  if (phi_grid.empty()) throw UsageError("sliced_metrics: empty phi* grid");
  if (ranks.size() != targets.size()) throw ShapeError("sliced_metrics: ranks / targets length mismatch");
  std::vector<PhiBucket> out;
  for (double phi_star : phi_grid) {
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (in_long_tail(vocab, targets[i], phi_star)) selected.push_back(ranks[i]);
    }
    PhiBucket bucket;
    bucket.phi_star = phi_star;
    bucket.count = selected.size();
    if (!selected.empty()) {
      bucket.recall = recall_at_k(selected, k);
      bucket.mrr = mrr_at_k(selected, k);
    }
    out.push_back(bucket);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  if (x.size() < 2) return 0.0;
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

NormDiagnostic norm_popularity_report(const Tensor& table, const ItemVocab& vocab) {
  const std::size_t m = vocab.size();
  if (table.rows() < m) {
    throw ShapeError("norm_popularity_report: table " + shape_to_string(table.shape()) + " for " +
                     std::to_string(m) + " items");
  }
  std::vector<double> norms(m), phi(m);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (double v : table.row(i)) sq += v * v;
    norms[i] = std::sqrt(sq);
    phi[i] = static_cast<double>(vocab.popularity(i));
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return phi[a] < phi[b]; });

  NormDiagnostic diag;
  const std::size_t buckets = std::min<std::size_t>(10, m);
  diag.deciles.resize(buckets);
  for (std::size_t b = 0; b < buckets; ++b) diag.deciles[b].decile = b;
  for (std::size_t r = 0; r < m; ++r) {
    DecileRow& row = diag.deciles[r * buckets / m];
    ++row.items;
    row.mean_popularity += phi[order[r]];
    row.mean_norm += norms[order[r]];
  }
  for (DecileRow& row : diag.deciles) {
    if (row.items) {
      row.mean_popularity /= static_cast<double>(row.items);
      row.mean_norm /= static_cast<double>(row.items);
    }
  }
  diag.spearman = spearman(phi, norms);
  return diag;
}

Ranking rank_examples(const Parameters& params, const ModelConfig& config,
                      std::span<const Example> examples, const EvalOptions& options) {
  Ranking out;
  const std::size_t n = examples.size();
  out.ranks.resize(n);
  out.targets.resize(n);
  out.lists.resize(n);
  const std::size_t bs = std::max<std::size_t>(options.batch_size, 1);
  const std::size_t batches = (n + bs - 1) / bs;
  auto run_batch = [&](std::size_t b) {
    const std::size_t begin = b * bs, end = std::min(n, begin + bs);
    const Tensor logits = predict_logits(params, examples.subspan(begin, end - begin), config);
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = logits.row(i - begin);
      out.targets[i] = examples[i].target;
      out.ranks[i] = rank_of(row, examples[i].target);
      out.lists[i] = top_k(row, options.k);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(batches, 1));
  if (workers == 1) {
    for (std::size_t b = 0; b < batches; ++b) run_batch(b);
    return out;
  }
  // Each worker owns a strided set of batches and writes disjoint slots.
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t b = w; b < batches; b += workers) run_batch(b);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) if (e) std::rethrow_exception(e);
  return out;
}

MetricsReport summarize(const Ranking& ranking, const ItemVocab& vocab, const EvalOptions& options) {
  MetricsReport r;
  r.k = options.k;
  r.examples = ranking.ranks.size();
  if (r.examples == 0) throw DataError("evaluate: no test examples");
  r.recall = recall_at_k(ranking.ranks, options.k);
  r.mrr = mrr_at_k(ranking.ranks, options.k);
  r.arp = average_recommendation_popularity(ranking.lists, vocab, options.k);
  r.buckets = sliced_metrics(ranking.ranks, ranking.targets, vocab, options.phi_grid, options.k);
  return r;
}

MetricsReport evaluate(const Parameters& params, const ModelConfig& config,
                       std::span<const Example> examples, const ItemVocab& vocab,
                       const EvalOptions& options) {
  return summarize(rank_examples(params, config, examples, options), vocab, options);
}

}  // namespace niser
