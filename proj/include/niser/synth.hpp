// SPDX-License-Identifier: Apache-2.0
//
// Synthetic click streams with Zipf popularity and partially predictable
// transitions. Items are identified by their catalogue index; the rank of an
// item in the popularity order equals its index.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "niser/ingest.hpp"

namespace niser {

struct SynthConfig {
  std::size_t m = 500;               // catalogue size, base items plus reserved new items
  double zipf_s = 1.1;
  std::size_t n_sessions = 30000;
  std::size_t min_len = 2;
  std::size_t max_len = 8;
  double markov_concentration = 0.7;  // mass on the successor set
  std::size_t successors = 4;         // successor-set size per item
  std::size_t n_days = 10;
  std::size_t new_items_per_day = 0;  // injected on every day >= 1
  std::size_t new_item_sessions = 3;  // sessions per new item on its first day and the next
  std::int64_t first_day = 19000;     // day number of day 0 (epoch days)
  std::uint64_t seed = 0;

  /// Throws UsageError on an invalid configuration.
  void validate() const;
  std::size_t new_items_total() const { return new_items_per_day * (n_days > 0 ? n_days - 1 : 0); }
  std::size_t base_items() const { return m - new_items_total(); }

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// w_i proportional to 1 / (i + 1)^s, summing to one.
std::vector<double> gen_catalog(std::size_t m, double zipf_s);

struct SynthSession {
  std::size_t id = 0;
  std::size_t day = 0;  // 0-based
  std::int64_t start_time = 0;
  std::vector<std::size_t> items;

  friend bool operator==(const SynthSession&, const SynthSession&) = default;
};

struct Transition {
  std::size_t from = 0;
  std::size_t to = 0;
  double probability = 0.0;  // full conditional P(to | from)
};

struct SynthCorpus {
  SynthConfig config;
  std::vector<double> weights;  // base popularity, zero for reserved new items
  std::vector<std::vector<std::size_t>> successor_sets;
  std::vector<std::size_t> new_item_day;  // day of injection per item, 0 for base items
  std::vector<SynthSession> sessions;     // ordered by (day, start_time)

  /// P(to | from) over the catalogue, from the successor mixture.
  double transition_probability(std::size_t from, std::size_t to) const;
  /// Non-zero successor-set entries of the ground-truth transition matrix.
  std::vector<Transition> transitions() const;

  friend bool operator==(const SynthCorpus&, const SynthCorpus&) = default;
};

/// Throws DataError when new-item injection would leave fewer than ten base
/// items in the catalogue.
SynthCorpus gen_sessions(const SynthConfig& config);

/// Click events with session id "s<id>", item id "<index>" and one second
/// between consecutive clicks.
std::vector<RawEvent> to_events(const SynthCorpus& corpus);

/// Native CSV event format (session_id,item_id,timestamp).
void write_events_csv(const std::string& path, const std::vector<RawEvent>& events);
/// from,to,probability rows for every successor-set entry.
void write_transitions_csv(const std::string& path, const SynthCorpus& corpus);

}  // namespace niser
