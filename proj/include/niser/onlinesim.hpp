// SPDX-License-Identifier: Apache-2.0
//
// Day-by-day replay: retrain on every session up to day t, then score the
// next day's examples whose target is a long-tail item first seen on day t.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "niser/ingest.hpp"
#include "niser/metrics.hpp"
#include "niser/model.hpp"
#include "niser/train.hpp"

namespace niser {

struct OnlineConfig {
  double phi_star = 0.01;
  std::size_t n_days = 0;        // simulated days; 0 = every day that has a successor
  std::size_t initial_days = 0;  // days trained on before the first simulated day; 0 = half
  double validation_fraction = 0.1;
  bool warm_start = false;       // carry parameters across days instead of re-initialising
  EvalOptions eval;

  void validate() const;
};

struct OnlineDay {
  std::int64_t day = 0;       // last training day t
  std::int64_t eval_day = 0;  // day t + 1 bucket
  std::size_t train_sessions = 0;
  std::size_t train_examples = 0;
  std::size_t vocab_size = 0;                  // items seen up to day t
  std::vector<std::size_t> new_items;          // corpus indices first seen on day t
  std::vector<std::size_t> qualifying_items;   // new items inside the long tail of day-t counts
  std::size_t qualifying_examples = 0;         // training examples whose target qualifies
  double f = 0.0;                              // qualifying_examples / train_examples
  std::size_t eval_examples = 0;
  std::optional<double> recall;                // absent when eval_examples == 0
  std::optional<double> mrr;
  std::size_t best_epoch = 0;
};

struct OnlineRun {
  double phi_star = 0.0;
  std::vector<OnlineDay> days;
};

using DayObserver = std::function<void(const OnlineDay&)>;

/// `sessions` index into `vocab`; their order is irrelevant. Items are
/// re-indexed internally in order of first appearance, so the model's item
/// table only ever grows by appending rows. Reported item indices refer to
/// `vocab`. Throws DataError when fewer than n_days + 1 day buckets follow
/// the initial window.
OnlineRun run_online(const std::vector<Session>& sessions, const ItemVocab& vocab, const ModelConfig& model,
                     const TrainConfig& train, const OnlineConfig& config, const DayObserver& observer = {});

}  // namespace niser
