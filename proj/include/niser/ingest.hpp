// SPDX-License-Identifier: Apache-2.0
//
// Click-log ingestion: raw events -> sessions -> filtered corpus with a dense
// item vocabulary and training-set popularity counts -> next-item examples.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace niser {

inline constexpr std::int64_t kSecondsPerDay = 86400;

struct RawEvent {
  std::string session_key;
  std::string item_key;
  std::int64_t timestamp = 0;  // epoch seconds
};

enum class EventFormat { kCsv, kTsv, kJsonl };

/// "csv", "tsv" or "jsonl"; anything else is a UsageError.
EventFormat parse_event_format(std::string_view name);

enum class TimestampFormat {
  kEpochSeconds,  // integer seconds
  kDate,          // YYYY-MM-DD, midnight UTC
};

/// Column naming for delimited files. Defaults match the native header
/// `session_id,item_id,timestamp`; overriding them lets public click logs be
/// read without conversion (e.g. `;`-separated with an `eventdate` column).
struct LoadOptions {
  std::string session_column = "session_id";
  std::string item_column = "item_id";
  std::string timestamp_column = "timestamp";
  char delimiter = '\0';  // 0: ',' for csv, '\t' for tsv
  TimestampFormat timestamp_format = TimestampFormat::kEpochSeconds;
  double max_malformed_fraction = 0.10;
};

struct LoadResult {
  std::vector<RawEvent> events;  // file order
  std::size_t records = 0;       // data records seen (excluding header)
  std::size_t malformed = 0;     // records skipped
};

/// Throws DataError for unreadable files or when more than
/// `max_malformed_fraction` of the records are malformed.
LoadResult load_events(const std::string& path, EventFormat format, const LoadOptions& options = {});
LoadResult parse_events(std::istream& in, EventFormat format, const LoadOptions& options = {});

/// Dense bijection raw item key <-> [0, size) plus popularity phi(i), the
/// number of occurrences of item i in the training sessions.
class ItemVocab {
 public:
  std::size_t size() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }

  std::optional<std::size_t> find(const std::string& key) const;
  std::size_t index_of(const std::string& key) const;  // throws DataError
  const std::string& key(std::size_t index) const { return keys_.at(index); }
  const std::vector<std::string>& keys() const noexcept { return keys_; }

  /// Appends a new key with popularity 0, or returns the existing index.
  std::size_t add(const std::string& key);

  std::uint64_t popularity(std::size_t index) const { return popularity_.at(index); }
  const std::vector<std::uint64_t>& popularity() const noexcept { return popularity_; }
  std::uint64_t max_popularity() const noexcept { return max_popularity_; }
  void set_popularity(std::vector<std::uint64_t> counts);

  friend bool operator==(const ItemVocab& a, const ItemVocab& b) {
    return a.keys_ == b.keys_ && a.popularity_ == b.popularity_;
  }

 private:
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::uint64_t> popularity_;
  std::uint64_t max_popularity_ = 0;
};

/// Session with raw item keys, events sorted by timestamp (stable).
struct RawSession {
  std::string id;
  std::vector<std::string> items;
  std::int64_t start_time = 0;
};

struct Session {
  std::string id;
  std::vector<std::size_t> items;
  std::int64_t day = 0;         // floor(start_time / 86400)
  std::int64_t start_time = 0;  // first event timestamp

  friend bool operator==(const Session&, const Session&) = default;
};

struct Example {
  std::vector<std::size_t> prefix;
  std::size_t target = 0;

  friend bool operator==(const Example&, const Example&) = default;
};

/// Groups events by session key. Events inside a session are ordered by
/// timestamp with input order breaking ties; sessions are returned ordered
/// by (start_time, first appearance).
std::vector<RawSession> group_sessions(const std::vector<RawEvent>& events);

struct CorpusFilter {
  std::size_t min_item_support = 5;
  std::size_t min_session_len = 2;
};

struct Corpus {
  ItemVocab vocab;
  std::vector<Session> sessions;
};

/// Iterates the item-support and session-length filters to a fixed point,
/// then indexes surviving items in order of first appearance and counts
/// their popularity on the surviving sessions. Throws DataError when the
/// input is empty or nothing survives.
Corpus build_corpus(const std::vector<RawEvent>& events, const CorpusFilter& filter);
Corpus build_corpus(const std::vector<RawSession>& sessions, const CorpusFilter& filter);

/// Maps raw sessions onto an existing vocabulary, dropping unknown items and
/// then sessions shorter than `min_session_len`.
std::vector<Session> encode_sessions(const std::vector<RawSession>& sessions, const ItemVocab& vocab,
                                     std::size_t min_session_len);

inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

/// Last min(len, cap) items, order preserved.
std::vector<std::size_t> truncate_recent(const std::vector<std::size_t>& sequence, std::size_t cap = 10);

/// One example per proper prefix: ([x1..x_{j-1}] truncated to `cap`, x_j) for
/// j = 2..l. Length-1 sessions yield nothing.
std::vector<Example> augment_prefixes(const Session& session, std::size_t cap);
std::vector<Example> augment_all(const std::vector<Session>& sessions, std::size_t cap);

struct HoldoutSplit {
  std::vector<Session> train;
  std::vector<Session> validation;
};

/// Sorts by (day, start_time) with input order breaking ties and holds out
/// the last ceil(fraction * n) sessions.
HoldoutSplit split_holdout(const std::vector<Session>& sessions, double fraction = 0.1);

/// Partition by day index, within-day order preserved, days ascending.
std::map<std::int64_t, std::vector<Session>> split_by_day(const std::vector<Session>& sessions);

/// Corpus with a chronological test split: the last `test_days` distinct
/// days are held out, the vocabulary and popularity come from the remaining
/// training days, and test sessions are encoded against that vocabulary.
struct Dataset {
  ItemVocab vocab;
  std::vector<Session> train;
  std::vector<Session> test;
  CorpusFilter filter;
  std::size_t test_days = 0;
};

/// Throws DataError when fewer than test_days + 1 distinct days exist.
Dataset prepare_dataset(const std::vector<RawEvent>& events, const CorpusFilter& filter, std::size_t test_days);

/// Popularity counts (occurrences) of every vocabulary index in `sessions`.
std::vector<std::uint64_t> count_popularity(const std::vector<Session>& sessions, std::size_t vocab_size);

}  // namespace niser
