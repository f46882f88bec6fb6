// SPDX-License-Identifier: Apache-2.0
#include "niser/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "niser/error.hpp"

namespace niser {

EventFormat parse_event_format(std::string_view name) {
  if (name == "csv") return EventFormat::kCsv;
  if (name == "tsv") return EventFormat::kTsv;
  if (name == "jsonl") return EventFormat::kJsonl;
  throw UsageError("unknown event format '" + std::string(name) + "' (expected csv, tsv or jsonl)");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

// Splits one delimited line; double-quoted fields may contain the delimiter
// and "" escapes.
std::vector<std::string> split_fields(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim(s);
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<std::int64_t> parse_date(std::string_view s) {
  s = trim(s);
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  const auto y = parse_int(s.substr(0, 4));
  const auto m = parse_int(s.substr(5, 2));
  const auto d = parse_int(s.substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(*y)),
                                        std::chrono::month(static_cast<unsigned>(*m)),
                                        std::chrono::day(static_cast<unsigned>(*d))};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days(ymd).time_since_epoch().count() * kSecondsPerDay;
}

std::optional<std::int64_t> parse_timestamp(std::string_view s, TimestampFormat fmt) {
  const auto v = fmt == TimestampFormat::kDate ? parse_date(s) : parse_int(s);
  if (!v || *v < 0) return std::nullopt;
  return v;
}

std::optional<std::string> json_key(const nlohmann::json& j) {
  if (j.is_string()) {
    std::string s = j.get<std::string>();
    return s.empty() ? std::nullopt : std::optional<std::string>(std::move(s));
  }
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  return std::nullopt;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("event header lacks column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

LoadResult parse_events(std::istream& in, EventFormat format, const LoadOptions& options) {
  LoadResult result;
  std::string line;
  if (format == EventFormat::kJsonl) {
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      ++result.records;
      const auto j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
      if (j.is_discarded() || !j.is_object() || !j.contains(options.session_column) ||
          !j.contains(options.item_column) || !j.contains(options.timestamp_column)) {
        ++result.malformed;
        continue;
      }
      const auto session = json_key(j[options.session_column]);
      const auto item = json_key(j[options.item_column]);
      const auto& ts = j[options.timestamp_column];
      std::int64_t t = -1;
      if (ts.is_number_integer()) {
        t = ts.get<std::int64_t>();
      } else if (ts.is_string()) {
        t = parse_timestamp(ts.get<std::string>(), options.timestamp_format).value_or(-1);
      }
      if (!session || !item || t < 0) {
        ++result.malformed;
        continue;
      }
      result.events.push_back(RawEvent{*session, *item, t});
    }
  } else {
    const char delim = options.delimiter != '\0' ? options.delimiter
                       : format == EventFormat::kTsv ? '\t' : ',';
    if (!std::getline(in, line)) return result;
    const std::vector<std::string> header = split_fields(line, delim);
    const std::size_t cs = column_index(header, options.session_column);
    const std::size_t ci = column_index(header, options.item_column);
    const std::size_t ct = column_index(header, options.timestamp_column);
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      ++result.records;
      const std::vector<std::string> f = split_fields(line, delim);
      if (f.size() != header.size() || f[cs].empty() || f[ci].empty()) {
        ++result.malformed;
        continue;
      }
      const auto t = parse_timestamp(f[ct], options.timestamp_format);
      if (!t) {
        ++result.malformed;
        continue;
      }
      result.events.push_back(RawEvent{f[cs], f[ci], *t});
    }
  }
  if (result.records > 0 &&
      static_cast<double>(result.malformed) > options.max_malformed_fraction * static_cast<double>(result.records)) {
    throw DataError(std::to_string(result.malformed) + " of " + std::to_string(result.records) +
                    " event records are malformed");
  }
  return result;
}

LoadResult load_events(const std::string& path, EventFormat format, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file '" + path + "'");
  return parse_events(in, format, options);
}

std::optional<std::size_t> ItemVocab::find(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ItemVocab::index_of(const std::string& key) const {
  const auto idx = find(key);
  if (!idx) throw DataError("unknown item '" + key + "'");
  return *idx;
}

std::size_t ItemVocab::add(const std::string& key) {
  if (const auto idx = find(key)) return *idx;
  keys_.push_back(key);
  popularity_.push_back(0);
  index_.emplace(key, keys_.size() - 1);
  return keys_.size() - 1;
}

void ItemVocab::set_popularity(std::vector<std::uint64_t> counts) {
  if (counts.size() != keys_.size()) {
    throw DataError("popularity vector of " + std::to_string(counts.size()) + " entries for " +
                    std::to_string(keys_.size()) + " items");
  }
  popularity_ = std::move(counts);
  max_popularity_ = popularity_.empty() ? 0 : *std::max_element(popularity_.begin(), popularity_.end());
}

std::vector<RawSession> group_sessions(const std::vector<RawEvent>& events) {
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto [it, inserted] = slot.emplace(events[i].session_key, members.size());
    if (inserted) members.emplace_back();
    members[it->second].push_back(i);
  }
  std::vector<RawSession> sessions;
  sessions.reserve(members.size());
  for (auto& idx : members) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return events[a].timestamp < events[b].timestamp;
    });
    RawSession s;
    s.id = events[idx.front()].session_key;
    s.start_time = events[idx.front()].timestamp;
    for (std::size_t i : idx) s.items.push_back(events[i].item_key);
    sessions.push_back(std::move(s));
  }
  std::stable_sort(sessions.begin(), sessions.end(),
                   [](const RawSession& a, const RawSession& b) { return a.start_time < b.start_time; });
  return sessions;
}

Corpus build_corpus(const std::vector<RawEvent>& events, const CorpusFilter& filter) {
  if (events.empty()) throw DataError("build_corpus: no events");
  return build_corpus(group_sessions(events), filter);
}

Corpus build_corpus(const std::vector<RawSession>& input, const CorpusFilter& filter) {
  if (input.empty()) throw DataError("build_corpus: no sessions");
  std::vector<RawSession> sessions = input;
  for (bool changed = true; changed;) {
    changed = false;
    std::unordered_map<std::string, std::size_t> support;
    for (const RawSession& s : sessions)
      for (const std::string& item : s.items) ++support[item];
    std::vector<RawSession> kept;
    kept.reserve(sessions.size());
    for (RawSession& s : sessions) {
      const std::size_t before = s.items.size();
      std::erase_if(s.items, [&](const std::string& item) { return support[item] < filter.min_item_support; });
      if (s.items.size() != before) changed = true;
      if (s.items.size() < std::max<std::size_t>(filter.min_session_len, 1)) {
        changed = true;
        continue;
      }
      kept.push_back(std::move(s));
    }
    sessions = std::move(kept);
  }
  if (sessions.empty()) throw DataError("build_corpus: every session was filtered out");

  Corpus corpus;
  for (const RawSession& s : sessions)
    for (const std::string& item : s.items) corpus.vocab.add(item);
  corpus.sessions = encode_sessions(sessions, corpus.vocab, 1);
  corpus.vocab.set_popularity(count_popularity(corpus.sessions, corpus.vocab.size()));
  return corpus;
}

std::vector<Session> encode_sessions(const std::vector<RawSession>& sessions, const ItemVocab& vocab,
                                     std::size_t min_session_len) {
  std::vector<Session> out;
  out.reserve(sessions.size());
  for (const RawSession& raw : sessions) {
    Session s;
    s.id = raw.id;
    s.start_time = raw.start_time;
    s.day = raw.start_time / kSecondsPerDay;
    for (const std::string& item : raw.items) {
      if (const auto idx = vocab.find(item)) s.items.push_back(*idx);
    }
    if (s.items.size() >= std::max<std::size_t>(min_session_len, 1)) out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> truncate_recent(const std::vector<std::size_t>& sequence, std::size_t cap) {
  if (cap == 0) throw UsageError("truncate_recent: cap must be >= 1");
  if (sequence.size() <= cap) return sequence;
  return {sequence.end() - static_cast<std::ptrdiff_t>(cap), sequence.end()};
}

std::vector<Example> augment_prefixes(const Session& session, std::size_t cap) {
  std::vector<Example> out;
  const auto& items = session.items;
  for (std::size_t j = 1; j < items.size(); ++j) {
    const std::size_t begin = (cap != kNoCap && j > cap) ? j - cap : 0;
    out.push_back(Example{{items.begin() + static_cast<std::ptrdiff_t>(begin),
                           items.begin() + static_cast<std::ptrdiff_t>(j)},
                          items[j]});
  }
  return out;
}

std::vector<Example> augment_all(const std::vector<Session>& sessions, std::size_t cap) {
  std::vector<Example> out;
  for (const Session& s : sessions) {
    std::vector<Example> ex = augment_prefixes(s, cap);
    out.insert(out.end(), std::make_move_iterator(ex.begin()), std::make_move_iterator(ex.end()));
  }
  return out;
}

HoldoutSplit split_holdout(const std::vector<Session>& sessions, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("split_holdout: fraction must be in (0, 1)");
  if (sessions.size() < 2) throw DataError("split_holdout: need at least 2 sessions");
  std::vector<Session> sorted = sessions;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Session& a, const Session& b) {
    return a.day != b.day ? a.day < b.day : a.start_time < b.start_time;
  });
  const auto n = sorted.size();
  // Guard against 0.1 * 10 = 1.0000000000000002 style rounding.
  std::size_t held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  held = std::clamp<std::size_t>(held, 1, n - 1);
  HoldoutSplit split;
  split.train.assign(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(held));
  split.validation.assign(sorted.end() - static_cast<std::ptrdiff_t>(held), sorted.end());
  return split;
}

Dataset prepare_dataset(const std::vector<RawEvent>& events, const CorpusFilter& filter, std::size_t test_days) {
  if (events.empty()) throw DataError("prepare_dataset: no events");
  const std::vector<RawSession> raw = group_sessions(events);
  std::set<std::int64_t> days;
  for (const RawSession& s : raw) days.insert(s.start_time / kSecondsPerDay);
  if (days.size() < test_days + 1) {
    throw DataError("prepare_dataset: " + std::to_string(days.size()) + " distinct days, need at least " +
                    std::to_string(test_days + 1));
  }
  const std::int64_t first_test_day =
      test_days == 0 ? std::numeric_limits<std::int64_t>::max() : *std::prev(days.end(), static_cast<std::ptrdiff_t>(test_days));
  std::vector<RawSession> train_raw, test_raw;
  for (const RawSession& s : raw) {
    (s.start_time / kSecondsPerDay >= first_test_day ? test_raw : train_raw).push_back(s);
  }
  Dataset ds;
  Corpus corpus = build_corpus(train_raw, filter);
  ds.vocab = std::move(corpus.vocab);
  ds.train = std::move(corpus.sessions);
  ds.test = encode_sessions(test_raw, ds.vocab, filter.min_session_len);
  ds.filter = filter;
  ds.test_days = test_days;
  return ds;
}

std::map<std::int64_t, std::vector<Session>> split_by_day(const std::vector<Session>& sessions) {
  std::map<std::int64_t, std::vector<Session>> out;
  for (const Session& s : sessions) out[s.day].push_back(s);
  return out;
}

std::vector<std::uint64_t> count_popularity(const std::vector<Session>& sessions, std::size_t vocab_size) {
  std::vector<std::uint64_t> counts(vocab_size, 0);
  for (const Session& s : sessions)
    for (std::size_t item : s.items) {
      if (item >= vocab_size) throw DataError("item index " + std::to_string(item) + " outside vocabulary");
      ++counts[item];
    }
  return counts;
}

}  // namespace niser
