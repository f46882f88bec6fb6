// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "niser/error.hpp"
#include "niser/ingest.hpp"
#include "niser/rng.hpp"

using namespace niser;

namespace {

LoadResult parse(const std::string& text, EventFormat format = EventFormat::kCsv, LoadOptions opts = {}) {
  std::istringstream in(text);
  return parse_events(in, format, opts);
}

std::vector<RawEvent> events_of(const std::vector<std::pair<std::string, std::vector<std::string>>>& sessions) {
  std::vector<RawEvent> out;
  std::int64_t t = 1000;
  for (const auto& [id, items] : sessions) {
    for (const auto& item : items) out.push_back({id, item, t++});
  }
  return out;
}

std::vector<std::string> keys(const Corpus& c, const Session& s) {
  std::vector<std::string> out;
  for (std::size_t i : s.items) out.push_back(c.vocab.key(i));
  return out;
}

Session session(std::vector<std::size_t> items, std::int64_t day = 0, std::int64_t start = 0, std::string id = "") {
  return Session{std::move(id), std::move(items), day, start};
}

}  // namespace

TEST(LoadEvents, ThreeLineCsv) {
  const auto r = parse("session_id,item_id,timestamp\n1,a,10\n1,b,11\n2,a,12\n");
  ASSERT_EQ(r.events.size(), 3u);
  EXPECT_EQ(r.events[1].item_key, "b");
  EXPECT_EQ(r.events[2].session_key, "2");
  EXPECT_EQ(r.events[2].timestamp, 12);
  EXPECT_EQ(r.malformed, 0u);
}

TEST(LoadEvents, EmptyFile) {
  const auto r = parse("");
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.malformed, 0u);
}

TEST(LoadEvents, NonIntegerTimestampIsSkipped) {
  std::string text = "session_id,item_id,timestamp\n";
  for (int i = 0; i < 12; ++i) text += "s,i" + std::to_string(i) + "," + std::to_string(100 + i) + "\n";
  text += "s,x,yesterday\n";
  const auto r = parse(text);
  EXPECT_EQ(r.events.size(), 12u);
  EXPECT_EQ(r.malformed, 1u);
}

TEST(LoadEvents, TooManyMalformedIsDataError) {
  EXPECT_THROW(parse("session_id,item_id,timestamp\n1,a,1\n1,b,x\n"), DataError);
}

TEST(LoadEvents, TsvAndJsonl) {
  const auto tsv = parse("session_id\titem_id\ttimestamp\n7\tq\t5\n", EventFormat::kTsv);
  ASSERT_EQ(tsv.events.size(), 1u);
  EXPECT_EQ(tsv.events[0].item_key, "q");
  const auto jl = parse("{\"session_id\": 3, \"item_id\": \"z\", \"timestamp\": 9}\n\n"
                        "{\"session_id\": \"3\", \"item_id\": 12, \"timestamp\": 10}\n",
                        EventFormat::kJsonl);
  ASSERT_EQ(jl.events.size(), 2u);
  EXPECT_EQ(jl.events[0].session_key, "3");
  EXPECT_EQ(jl.events[1].item_key, "12");
}

TEST(LoadEvents, CustomColumnsAndDates) {
  LoadOptions opts;
  opts.session_column = "sessionId";
  opts.item_column = "itemId";
  opts.timestamp_column = "eventdate";
  opts.delimiter = ';';
  opts.timestamp_format = TimestampFormat::kDate;
  const auto r = parse("sessionId;userId;itemId;timeframe;eventdate\n1;NA;81766;526309;2016-05-09\n", EventFormat::kCsv,
                       opts);
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].item_key, "81766");
  EXPECT_EQ(r.events[0].timestamp, 1462752000);
}

TEST(LoadEvents, QuotedFields) {
  const auto r = parse("session_id,item_id,timestamp\n\"s,1\",\"it\"\"em\",4\n");
  ASSERT_EQ(r.events.size(), 1u);
  EXPECT_EQ(r.events[0].session_key, "s,1");
  EXPECT_EQ(r.events[0].item_key, "it\"em");
}

TEST(LoadEvents, MissingColumnAndUnreadableFile) {
  EXPECT_THROW(parse("a,b,c\n1,2,3\n"), DataError);
  EXPECT_THROW(load_events("/nonexistent/events.csv", EventFormat::kCsv), DataError);
  EXPECT_THROW(parse_event_format("parquet"), UsageError);
}

TEST(LoadEvents, FromFile) {
  const auto path = std::filesystem::temp_directory_path() / "niser_ingest_test.csv";
  std::ofstream(path) << "session_id,item_id,timestamp\n1,a,10\n";
  EXPECT_EQ(load_events(path.string(), EventFormat::kCsv).events.size(), 1u);
  std::filesystem::remove(path);
}

TEST(GroupSessions, OrdersByTimestampWithStableTies) {
  const std::vector<RawEvent> ev = {{"s", "c", 5}, {"s", "a", 3}, {"s", "b", 5}, {"t", "x", 1}};
  const auto g = group_sessions(ev);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].id, "t");
  EXPECT_EQ(g[1].items, (std::vector<std::string>{"a", "c", "b"}));
}

TEST(BuildCorpus, CountsPopularity) {
  const Corpus c = build_corpus(events_of({{"s", {"a", "b", "a"}}}), CorpusFilter{1, 2});
  ASSERT_EQ(c.vocab.size(), 2u);
  EXPECT_EQ(c.vocab.popularity(c.vocab.index_of("a")), 2u);
  EXPECT_EQ(c.vocab.popularity(c.vocab.index_of("b")), 1u);
  EXPECT_EQ(c.vocab.max_popularity(), 2u);
}

TEST(BuildCorpus, RareItemIsDropped) {
  std::vector<std::pair<std::string, std::vector<std::string>>> sessions;
  for (int i = 0; i < 5; ++i) sessions.push_back({"s" + std::to_string(i), {"a", "b"}});
  sessions.push_back({"rare", {"a", "b", "z"}});
  const Corpus c = build_corpus(events_of(sessions), CorpusFilter{5, 2});
  EXPECT_FALSE(c.vocab.find("z"));
  ASSERT_EQ(c.sessions.size(), 6u);
  EXPECT_EQ(keys(c, c.sessions.back()), (std::vector<std::string>{"a", "b"}));
}

TEST(BuildCorpus, FilterReachesFixedPoint) {
  // min_support = 2, min_len = 2:
  //   s1 = [a, b], s2 = [a, c], s3 = [b, d]
  // pass 1: c, d occur once -> removed; s2 = [a], s3 = [b] -> removed
  // pass 2: a, b now occur once each -> removed; s1 empty -> removed
  const auto ev = events_of({{"s1", {"a", "b"}}, {"s2", {"a", "c"}}, {"s3", {"b", "d"}}});
  EXPECT_THROW(build_corpus(ev, CorpusFilter{2, 2}), DataError);
  // With an extra [a, b] session the second pass keeps a and b.
  auto ev2 = ev;
  for (const auto& e : events_of({{"s4", {"a", "b"}}})) ev2.push_back({e.session_key, e.item_key, e.timestamp + 100});
  const Corpus c = build_corpus(ev2, CorpusFilter{2, 2});
  EXPECT_EQ(c.vocab.size(), 2u);
  ASSERT_EQ(c.sessions.size(), 2u);
  EXPECT_EQ(c.sessions[0].id, "s1");
  EXPECT_EQ(c.sessions[1].id, "s4");
}

TEST(BuildCorpus, EmptyInputIsDataError) {
  EXPECT_THROW(build_corpus(std::vector<RawEvent>{}, CorpusFilter{}), DataError);
}

TEST(BuildCorpus, PropertiesOnRandomLogs) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RawEvent> ev;
    for (int s = 0; s < 60; ++s) {
      const std::size_t len = 1 + uniform_index(rng, 6);
      for (std::size_t j = 0; j < len; ++j) {
        ev.push_back({"s" + std::to_string(s), "i" + std::to_string(uniform_index(rng, 25)),
                      static_cast<std::int64_t>(s * 100 + j)});
      }
    }
    const CorpusFilter f{3, 2};
    const Corpus c = build_corpus(ev, f);
    // Fixed point: filtering the output again changes nothing.
    std::vector<RawEvent> again;
    for (const Session& s : c.sessions) {
      for (std::size_t j = 0; j < s.items.size(); ++j) {
        again.push_back({s.id, c.vocab.key(s.items[j]), s.start_time + static_cast<std::int64_t>(j)});
      }
    }
    const Corpus c2 = build_corpus(again, f);
    EXPECT_EQ(c2.vocab, c.vocab);
    EXPECT_EQ(c2.sessions.size(), c.sessions.size());
    // Popularity sums to the number of retained clicks.
    std::size_t clicks = 0;
    for (const Session& s : c.sessions) clicks += s.items.size();
    const auto& pop = c.vocab.popularity();
    EXPECT_EQ(std::accumulate(pop.begin(), pop.end(), std::uint64_t{0}), clicks);
    for (const Session& s : c.sessions) {
      EXPECT_GE(s.items.size(), 2u);
      for (std::size_t i : s.items) EXPECT_LT(i, c.vocab.size());
    }
    // Augmentation yields sum (l - 1) examples.
    std::size_t expected = 0;
    for (const Session& s : c.sessions) expected += s.items.size() - 1;
    EXPECT_EQ(augment_all(c.sessions, 10).size(), expected);
  }
}

TEST(TruncateRecent, Examples) {
  std::vector<std::size_t> fifteen(15);
  std::iota(fifteen.begin(), fifteen.end(), std::size_t{0});
  EXPECT_EQ(truncate_recent(fifteen, 10), std::vector<std::size_t>(fifteen.begin() + 5, fifteen.end()));
  EXPECT_EQ(truncate_recent({1, 2, 3}, 10), (std::vector<std::size_t>{1, 2, 3}));
  std::vector<std::size_t> ten(10, 4);
  EXPECT_EQ(truncate_recent(ten, 10), ten);
  EXPECT_THROW(truncate_recent({1}, 0), UsageError);
}

TEST(AugmentPrefixes, Examples) {
  EXPECT_EQ(augment_prefixes(session({0, 1, 2}), 10),
            (std::vector<Example>{{{0}, 1}, {{0, 1}, 2}}));
  EXPECT_EQ(augment_prefixes(session({0, 1}), 10), (std::vector<Example>{{{0}, 1}}));
  EXPECT_TRUE(augment_prefixes(session({0}), 10).empty());
  std::vector<std::size_t> twelve(12);
  std::iota(twelve.begin(), twelve.end(), std::size_t{0});
  const auto ex = augment_prefixes(session(twelve), 10);
  ASSERT_EQ(ex.size(), 11u);
  EXPECT_EQ(ex.back().prefix, std::vector<std::size_t>(twelve.begin() + 1, twelve.begin() + 11));
  EXPECT_EQ(ex.back().target, 11u);
  EXPECT_EQ(augment_prefixes(session(twelve), kNoCap).back().prefix.size(), 11u);
}

TEST(SplitHoldout, CeilingOfFraction) {
  std::vector<Session> ten, seven;
  for (int i = 0; i < 10; ++i) ten.push_back(session({0, 1}, i, i * 10, std::to_string(i)));
  for (int i = 0; i < 7; ++i) seven.push_back(session({0, 1}, 0, i, std::to_string(i)));
  const auto a = split_holdout(ten, 0.1);
  ASSERT_EQ(a.validation.size(), 1u);
  EXPECT_EQ(a.validation[0].id, "9");
  EXPECT_EQ(split_holdout(seven, 0.1).validation.size(), 1u);
  EXPECT_EQ(split_holdout(ten, 0.25).validation.size(), 3u);
}

TEST(SplitHoldout, TiesKeepInputOrder) {
  std::vector<Session> s;
  for (int i = 0; i < 20; ++i) s.push_back(session({0, 1}, 4, 400, std::to_string(i)));
  const auto h = split_holdout(s, 0.1);
  ASSERT_EQ(h.validation.size(), 2u);
  EXPECT_EQ(h.validation[0].id, "18");
  EXPECT_EQ(h.validation[1].id, "19");
}

TEST(SplitHoldout, PartitionsAndHoldsOutLatest) {
  Rng rng(9);
  std::vector<Session> s;
  for (int i = 0; i < 50; ++i) {
    const auto t = static_cast<std::int64_t>(uniform_index(rng, 1000));
    s.push_back(session({0, 1}, t / 100, t, std::to_string(i)));
  }
  const auto h = split_holdout(s, 0.2);
  EXPECT_EQ(h.train.size() + h.validation.size(), s.size());
  std::set<std::string> ids;
  for (const auto* part : {&h.train, &h.validation}) {
    for (const Session& x : *part) ids.insert(x.id);
  }
  EXPECT_EQ(ids.size(), s.size());
  for (const Session& v : h.validation) {
    for (const Session& t : h.train) EXPECT_GE(std::pair(v.day, v.start_time), std::pair(t.day, t.start_time));
  }
}

TEST(SplitHoldout, Errors) {
  EXPECT_THROW(split_holdout({session({0, 1})}, 0.1), DataError);
  EXPECT_THROW(split_holdout({session({0, 1}), session({0, 1})}, 1.0), UsageError);
}

TEST(SplitByDay, Examples) {
  const auto m = split_by_day({session({0}, 3, 0, "a"), session({1}, 5, 0, "b"), session({2}, 3, 0, "c")});
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at(3).size(), 2u);
  EXPECT_EQ(m.at(3)[1].id, "c");
  EXPECT_EQ(m.at(5).size(), 1u);
  EXPECT_TRUE(split_by_day({}).empty());
  EXPECT_EQ(split_by_day({session({0}, 1)}).size(), 1u);
}

TEST(PrepareDataset, HoldsOutLastDaysAgainstTrainingVocab) {
  std::vector<RawEvent> ev;
  for (int day = 0; day < 4; ++day) {
    for (int s = 0; s < 3; ++s) {
      const std::string id = std::to_string(day) + "-" + std::to_string(s);
      const std::int64_t t = day * kSecondsPerDay + s * 10;
      ev.push_back({id, "a", t});
      ev.push_back({id, day == 3 ? "new" : "b", t + 1});
      ev.push_back({id, "a", t + 2});
    }
  }
  const Dataset d = prepare_dataset(ev, CorpusFilter{1, 2}, 1);
  EXPECT_EQ(d.train.size(), 9u);
  EXPECT_EQ(d.vocab.size(), 2u);
  EXPECT_FALSE(d.vocab.find("new"));
  ASSERT_EQ(d.test.size(), 3u);
  EXPECT_EQ(d.test[0].items.size(), 2u);  // unknown item dropped
  EXPECT_EQ(d.vocab.popularity(d.vocab.index_of("a")), 18u);
  EXPECT_THROW(prepare_dataset(ev, CorpusFilter{1, 2}, 4), DataError);
}
