// SPDX-License-Identifier: Apache-2.0
#include "niser/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "niser/error.hpp"
#include "niser/rng.hpp"

namespace niser {

void SynthConfig::validate() const {
  if (m < 10) throw UsageError("synth: m must be >= 10");
  if (!(zipf_s >= 0.0)) throw UsageError("synth: zipf_s must be >= 0");
  if (min_len < 2 || max_len < min_len) throw UsageError("synth: need 2 <= min_len <= max_len");
  if (!(markov_concentration >= 0.0 && markov_concentration <= 1.0)) {
    throw UsageError("synth: markov_concentration must be in [0, 1]");
  }
  if (n_sessions < 1 || n_days < 1) throw UsageError("synth: n_sessions and n_days must be >= 1");
  const std::size_t per_day = (n_sessions + n_days - 1) / n_days;
  if (per_day + max_len >= static_cast<std::size_t>(kSecondsPerDay)) {
    throw UsageError("synth: too many sessions per day");
  }
}

std::vector<double> gen_catalog(std::size_t m, double zipf_s) {
  std::vector<double> w(m);
  for (std::size_t i = 0; i < m; ++i) w[i] = std::pow(static_cast<double>(i + 1), -zipf_s);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

double SynthCorpus::transition_probability(std::size_t from, std::size_t to) const {
  const double c = config.markov_concentration;
  const auto& succ = successor_sets.at(from);
  double p = (1.0 - c) * weights.at(to);
  if (std::find(succ.begin(), succ.end(), to) != succ.end()) p += c / static_cast<double>(succ.size());
  return p;
}

std::vector<Transition> SynthCorpus::transitions() const {
  std::vector<Transition> out;
  for (std::size_t from = 0; from < successor_sets.size(); ++from) {
    for (std::size_t to : successor_sets[from]) out.push_back({from, to, transition_probability(from, to)});
  }
  return out;
}

namespace {

std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  std::partial_sum(w.begin(), w.end(), c.begin());
  return c;
}

}  // namespace

SynthCorpus gen_sessions(const SynthConfig& config) {
  config.validate();
  if (config.new_items_total() + 10 > config.m) {
    throw DataError("synth: catalogue exhausted by new-item injection (" +
                    std::to_string(config.new_items_total()) + " new items, m = " +
                    std::to_string(config.m) + ")");
  }
  const std::size_t base = config.base_items();
  const std::size_t n_succ = std::min(config.successors, base - 1);
  Rng rng(config.seed);

  SynthCorpus out;
  out.config = config;
  out.weights = gen_catalog(base, config.zipf_s);
  out.weights.resize(config.m, 0.0);
  const std::vector<double> cum = cumulative(out.weights);

  out.successor_sets.resize(config.m);
  for (std::size_t i = 0; i < config.m; ++i) {
    auto& succ = out.successor_sets[i];
    while (succ.size() < n_succ) {
      const std::size_t j = sample_cumulative(cum, rng);
      if (j != i && std::find(succ.begin(), succ.end(), j) == succ.end()) succ.push_back(j);
    }
  }

  out.new_item_day.assign(config.m, 0);
  const std::size_t per_day_sessions = (config.n_sessions + config.n_days - 1) / config.n_days;
  const std::int64_t step =
      std::max<std::int64_t>(1, (kSecondsPerDay - static_cast<std::int64_t>(config.max_len) - 1) /
                                    static_cast<std::int64_t>(per_day_sessions));

  out.sessions.resize(config.n_sessions);
  for (std::size_t k = 0; k < config.n_sessions; ++k) {
    SynthSession& s = out.sessions[k];
    s.id = k;
    s.day = k % config.n_days;
    s.start_time = (config.first_day + static_cast<std::int64_t>(s.day)) * kSecondsPerDay +
                   static_cast<std::int64_t>(k / config.n_days) * step;
    const std::size_t len = config.min_len + uniform_index(rng, config.max_len - config.min_len + 1);
    s.items.push_back(sample_cumulative(cum, rng));
    while (s.items.size() < len) {
      const auto& succ = out.successor_sets[s.items.back()];
      if (!succ.empty() && uniform01(rng) < config.markov_concentration) {
        s.items.push_back(succ[uniform_index(rng, succ.size())]);
      } else {
        s.items.push_back(sample_cumulative(cum, rng));
      }
    }
  }
  std::stable_sort(out.sessions.begin(), out.sessions.end(), [](const SynthSession& a, const SynthSession& b) {
    return a.day != b.day ? a.day < b.day : a.start_time < b.start_time;
  });

  if (config.new_items_per_day > 0) {
    std::vector<std::vector<std::size_t>> by_day(config.n_days);
    for (std::size_t i = 0; i < out.sessions.size(); ++i) by_day[out.sessions[i].day].push_back(i);
    // One injection per session per day keeps injected items from overwriting each other.
    std::vector<std::vector<std::size_t>> pools = by_day;
    for (auto& pool : pools) shuffle(pool, rng);
    auto inject = [&](std::size_t item, std::size_t day) {
      for (std::size_t r = 0; r < config.new_item_sessions; ++r) {
        auto& pool = pools[day];
        if (pool.empty()) {
          throw DataError("synth: too few sessions on day " + std::to_string(day) + " for new-item injection");
        }
        SynthSession& s = out.sessions[pool.back()];
        pool.pop_back();
        s.items[1 + uniform_index(rng, s.items.size() - 1)] = item;
      }
    };
    for (std::size_t day = 1; day < config.n_days; ++day) {
      for (std::size_t q = 0; q < config.new_items_per_day; ++q) {
        const std::size_t item = base + (day - 1) * config.new_items_per_day + q;
        out.new_item_day[item] = day;
        inject(item, day);
        if (day + 1 < config.n_days) inject(item, day + 1);
      }
    }
  }
  return out;
}

std::vector<RawEvent> to_events(const SynthCorpus& corpus) {
  std::vector<RawEvent> events;
  for (const SynthSession& s : corpus.sessions) {
    const std::string sid = "s" + std::to_string(s.id);
    for (std::size_t j = 0; j < s.items.size(); ++j) {
      events.push_back({sid, std::to_string(s.items[j]), s.start_time + static_cast<std::int64_t>(j)});
    }
  }
  return events;
}

void write_events_csv(const std::string& path, const std::vector<RawEvent>& events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "session_id,item_id,timestamp\n";
  for (const RawEvent& e : events) out << e.session_key << ',' << e.item_key << ',' << e.timestamp << '\n';
  if (!out) throw DataError("write failed: " + path);
}

void write_transitions_csv(const std::string& path, const SynthCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.precision(17);
  out << "from,to,probability\n";
  for (const Transition& t : corpus.transitions()) out << t.from << ',' << t.to << ',' << t.probability << '\n';
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace niser
