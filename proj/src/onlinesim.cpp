// SPDX-License-Identifier: Apache-2.0
#include "niser/onlinesim.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "niser/error.hpp"

namespace niser {

void OnlineConfig::validate() const {
  if (!(phi_star > 0.0 && phi_star <= 1.0)) throw UsageError("online: phi* must be in (0, 1]");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw UsageError("online: validation fraction must be in (0, 1)");
  }
}

namespace {

constexpr std::size_t kUnseen = static_cast<std::size_t>(-1);
constexpr std::uint64_t kGrowStream = 3;

}  // namespace

OnlineRun run_online(const std::vector<Session>& sessions, const ItemVocab& vocab, const ModelConfig& model,
                     const TrainConfig& train, const OnlineConfig& config, const DayObserver& observer) {
  config.validate();
  model.validate();
  train.validate();

  std::vector<Session> ordered = sessions;
  std::stable_sort(ordered.begin(), ordered.end(), [](const Session& a, const Session& b) {
    return a.day != b.day ? a.day < b.day : a.start_time < b.start_time;
  });

  // Local index = order of first appearance; global = index into `vocab`.
  std::vector<std::size_t> local_of(vocab.size(), kUnseen);
  std::vector<std::size_t> global_of;
  std::vector<std::int64_t> first_day;
  for (Session& s : ordered) {
    for (std::size_t& item : s.items) {
      if (item >= vocab.size()) throw DataError("online: session " + s.id + " has item outside vocabulary");
      if (local_of[item] == kUnseen) {
        local_of[item] = global_of.size();
        global_of.push_back(item);
        first_day.push_back(s.day);
      }
      item = local_of[item];
    }
  }
  const std::map<std::int64_t, std::vector<Session>> by_day = split_by_day(ordered);
  std::vector<std::int64_t> days;
  for (const auto& [day, bucket] : by_day) days.push_back(day);

  const std::size_t window = config.initial_days ? config.initial_days : std::max<std::size_t>(1, days.size() / 2);
  if (days.size() < window + 2) {
    throw DataError("online: " + std::to_string(days.size()) + " day buckets, need at least " +
                    std::to_string(window + 2) + " for an initial window of " + std::to_string(window));
  }
  const std::size_t available = days.size() - window - 1;
  const std::size_t n_days = config.n_days ? config.n_days : available;
  if (n_days > available) {
    throw DataError("online: " + std::to_string(n_days) + " simulated days requested, only " +
                    std::to_string(available) + " have a following day");
  }

  OnlineRun run;
  run.phi_star = config.phi_star;
  std::vector<Session> train_sessions;
  for (std::size_t i = 0; i < window; ++i) {
    const auto& bucket = by_day.at(days[i]);
    train_sessions.insert(train_sessions.end(), bucket.begin(), bucket.end());
  }
  std::optional<Parameters> carried;
  Rng grow_rng(derive_seed(train.seed, kGrowStream));

  for (std::size_t k = 0; k < n_days; ++k) {
    const std::int64_t t = days[window + k];
    const auto& today = by_day.at(t);
    train_sessions.insert(train_sessions.end(), today.begin(), today.end());

    OnlineDay rec;
    rec.day = t;
    rec.eval_day = days[window + k + 1];
    rec.train_sessions = train_sessions.size();
    const std::size_t m = static_cast<std::size_t>(
        std::upper_bound(first_day.begin(), first_day.end(), t) - first_day.begin());
    rec.vocab_size = m;

    ItemVocab local;
    for (std::size_t i = 0; i < m; ++i) local.add(vocab.key(global_of[i]));
    local.set_popularity(count_popularity(train_sessions, m));

    std::vector<std::uint8_t> qualifies(m, 0);
    for (std::size_t i = 0; i < m; ++i) {
      if (first_day[i] != t) continue;
      rec.new_items.push_back(global_of[i]);
      if (in_long_tail(local, i, config.phi_star)) {
        qualifies[i] = 1;
        rec.qualifying_items.push_back(global_of[i]);
      }
    }
    for (const Session& s : train_sessions) {
      rec.train_examples += s.items.size() - 1;
      for (std::size_t j = 1; j < s.items.size(); ++j) rec.qualifying_examples += qualifies[s.items[j]];
    }
    rec.f = rec.train_examples ? static_cast<double>(rec.qualifying_examples) / static_cast<double>(rec.train_examples)
                               : 0.0;

    const HoldoutSplit split = split_holdout(train_sessions, config.validation_fraction);
    const std::vector<Example> tr = augment_all(split.train, model.prefix_cap());
    const std::vector<Example> va = augment_all(split.validation, model.prefix_cap());
    const Parameters* start = nullptr;
    if (config.warm_start && carried) {
      carried->grow_items(m, grow_rng);
      start = &*carried;
    }
    TrainedModel trained = train_model(tr, va, m, model, train, {}, start);
    rec.best_epoch = trained.trace.best_epoch;

    std::vector<Example> eval;
    for (const Session& s : by_day.at(rec.eval_day)) {
      Session known = s;
      std::erase_if(known.items, [&](std::size_t i) { return i >= m; });
      for (Example& ex : augment_prefixes(known, model.prefix_cap())) {
        if (qualifies[ex.target]) eval.push_back(std::move(ex));
      }
    }
    rec.eval_examples = eval.size();
    if (!eval.empty()) {
      const Ranking r = rank_examples(trained.params, model, eval, config.eval);
      rec.recall = recall_at_k(r.ranks, config.eval.k);
      rec.mrr = mrr_at_k(r.ranks, config.eval.k);
    }
    if (config.warm_start) carried = std::move(trained.params);
    if (observer) observer(rec);
    run.days.push_back(std::move(rec));
  }
  return run;
}

}  // namespace niser
