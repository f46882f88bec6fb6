// SPDX-License-Identifier: Apache-2.0
#include "niser/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include <openssl/evp.h>

#include "niser/error.hpp"

namespace niser {

namespace {

void check_keys(const Json& j, std::initializer_list<std::string_view> known, std::string_view where) {
  if (!j.is_object()) throw UsageError(std::string(where) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view k : known) ok = ok || k == key;
    if (!ok) throw UsageError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename F>
auto config_guard(std::string_view where, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw UsageError(std::string(where) + ": " + e.what());
  }
}

template <typename F>
auto data_guard(std::string_view where, F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw DataError(std::string(where) + ": " + e.what());
  }
}

std::string_view edge_name(EdgeWeighting w) { return w == EdgeWeighting::kCount ? "count" : "binary"; }

EdgeWeighting parse_edge(const std::string& s) {
  if (s == "count") return EdgeWeighting::kCount;
  if (s == "binary") return EdgeWeighting::kBinary;
  throw UsageError("unknown edge weighting '" + s + "' (expected count, binary)");
}

std::string_view reduction_name(LossReduction r) { return r == LossReduction::kMean ? "mean" : "sum"; }

LossReduction parse_reduction(const std::string& s) {
  if (s == "mean") return LossReduction::kMean;
  if (s == "sum") return LossReduction::kSum;
  throw UsageError("unknown loss reduction '" + s + "' (expected mean, sum)");
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json session_json(const Session& s) {
  return Json{{"id", s.id}, {"day", s.day}, {"start_time", s.start_time}, {"items", s.items}};
}

Session session_from_json(const Json& j) {
  Session s;
  s.id = j.at("id").get<std::string>();
  s.day = j.at("day").get<std::int64_t>();
  s.start_time = j.at("start_time").get<std::int64_t>();
  s.items = j.at("items").get<std::vector<std::size_t>>();
  return s;
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return Json{{"variant", std::string(variant_name(c.variant))},
              {"d", c.d},
              {"max_len", c.max_len},
              {"tau", c.tau},
              {"sigma", c.sigma},
              {"normalize_items", c.normalize_items},
              {"normalize_session", c.normalize_session},
              {"use_position_embeddings", c.use_position_embeddings},
              {"dropout_p", c.dropout_p},
              {"edge_weighting", std::string(edge_name(c.edge_weighting))},
              {"loss_reduction", std::string(reduction_name(c.loss_reduction))}};
}

ModelConfig model_config_from_json(const Json& j) {
  return config_guard("model config", [&] {
    check_keys(j,
               {"variant", "d", "max_len", "tau", "sigma", "normalize_items", "normalize_session",
                "use_position_embeddings", "dropout_p", "edge_weighting", "loss_reduction"},
               "model config");
    ModelConfig c = ModelConfig::for_variant(
        j.contains("variant") ? parse_variant(j.at("variant").get<std::string>()) : Variant::kNiserPlus);
    read(j, "d", c.d);
    read(j, "max_len", c.max_len);
    read(j, "tau", c.tau);
    read(j, "sigma", c.sigma);
    read(j, "normalize_items", c.normalize_items);
    read(j, "normalize_session", c.normalize_session);
    read(j, "use_position_embeddings", c.use_position_embeddings);
    read(j, "dropout_p", c.dropout_p);
    if (j.contains("edge_weighting")) c.edge_weighting = parse_edge(j.at("edge_weighting").get<std::string>());
    if (j.contains("loss_reduction")) c.loss_reduction = parse_reduction(j.at("loss_reduction").get<std::string>());
    c.validate();
    return c;
  });
}

Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"seed", c.seed},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"lr_decay", c.lr_decay},
              {"workers", c.workers}};
}

TrainConfig train_config_from_json(const Json& j) {
  return config_guard("train config", [&] {
    check_keys(j,
               {"lr", "batch_size", "max_epochs", "patience", "seed", "beta1", "beta2", "adam_eps",
                "weight_decay", "lr_decay", "workers"},
               "train config");
    TrainConfig c;
    read(j, "lr", c.lr);
    read(j, "batch_size", c.batch_size);
    read(j, "max_epochs", c.max_epochs);
    read(j, "patience", c.patience);
    read(j, "seed", c.seed);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "adam_eps", c.adam_eps);
    read(j, "weight_decay", c.weight_decay);
    read(j, "lr_decay", c.lr_decay);
    read(j, "workers", c.workers);
    c.validate();
    return c;
  });
}

Json to_json(const SynthConfig& c) {
  return Json{{"m", c.m},
              {"zipf_s", c.zipf_s},
              {"n_sessions", c.n_sessions},
              {"min_len", c.min_len},
              {"max_len", c.max_len},
              {"markov_concentration", c.markov_concentration},
              {"successors", c.successors},
              {"n_days", c.n_days},
              {"new_items_per_day", c.new_items_per_day},
              {"new_item_sessions", c.new_item_sessions},
              {"first_day", c.first_day},
              {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const Json& j) {
  return config_guard("synth config", [&] {
    check_keys(j,
               {"m", "zipf_s", "n_sessions", "min_len", "max_len", "markov_concentration", "successors",
                "n_days", "new_items_per_day", "new_item_sessions", "first_day", "seed"},
               "synth config");
    SynthConfig c;
    read(j, "m", c.m);
    read(j, "zipf_s", c.zipf_s);
    read(j, "n_sessions", c.n_sessions);
    read(j, "min_len", c.min_len);
    read(j, "max_len", c.max_len);
    read(j, "markov_concentration", c.markov_concentration);
    read(j, "successors", c.successors);
    read(j, "n_days", c.n_days);
    read(j, "new_items_per_day", c.new_items_per_day);
    read(j, "new_item_sessions", c.new_item_sessions);
    read(j, "first_day", c.first_day);
    read(j, "seed", c.seed);
    c.validate();
    return c;
  });
}

Json to_json(const CorpusFilter& f) {
  return Json{{"min_item_support", f.min_item_support}, {"min_session_len", f.min_session_len}};
}

Json to_json(const ItemVocab& v) { return Json{{"keys", v.keys()}, {"popularity", v.popularity()}}; }

ItemVocab vocab_from_json(const Json& j) {
  return data_guard("vocabulary", [&] {
    const auto keys = j.at("keys").get<std::vector<std::string>>();
    auto pop = j.at("popularity").get<std::vector<std::uint64_t>>();
    if (pop.size() != keys.size()) throw DataError("vocabulary: keys / popularity length mismatch");
    ItemVocab v;
    for (const std::string& k : keys) {
      if (v.find(k)) throw DataError("vocabulary: duplicate key '" + k + "'");
      v.add(k);
    }
    v.set_popularity(std::move(pop));
    return v;
  });
}

Json to_json(const Dataset& d) {
  Json train = Json::array(), test = Json::array();
  for (const Session& s : d.train) train.push_back(session_json(s));
  for (const Session& s : d.test) test.push_back(session_json(s));
  return Json{{"format", "niser-corpus"}, {"version", 1},      {"filter", to_json(d.filter)},
              {"test_days", d.test_days}, {"vocab", to_json(d.vocab)}, {"train", std::move(train)},
              {"test", std::move(test)}};
}

Dataset dataset_from_json(const Json& j) {
  return data_guard("corpus", [&] {
    if (j.value("format", "") != "niser-corpus") throw DataError("corpus: not a corpus file");
    if (j.at("version").get<int>() != 1) throw DataError("corpus: unsupported version");
    Dataset d;
    d.filter.min_item_support = j.at("filter").at("min_item_support").get<std::size_t>();
    d.filter.min_session_len = j.at("filter").at("min_session_len").get<std::size_t>();
    d.test_days = j.at("test_days").get<std::size_t>();
    d.vocab = vocab_from_json(j.at("vocab"));
    for (const Json& s : j.at("train")) d.train.push_back(session_from_json(s));
    for (const Json& s : j.at("test")) d.test.push_back(session_from_json(s));
    for (const auto* part : {&d.train, &d.test}) {
      for (const Session& s : *part) {
        for (std::size_t i : s.items) {
          if (i >= d.vocab.size()) throw DataError("corpus: session " + s.id + " has item outside vocabulary");
        }
      }
    }
    return d;
  });
}

void save_dataset(const std::string& path, const Dataset& d) { write_text(path, to_json(d).dump() + "\n"); }

Dataset load_dataset(const std::string& path) {
  const std::string text = read_text(path);
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("corpus: " + path + " is not valid JSON");
  return dataset_from_json(j);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::kData, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

std::string corpus_hash(const Dataset& d) { return sha256_hex(to_json(d).dump()); }

Json to_json(const MetricsReport& r) {
  Json buckets = Json::array();
  for (const PhiBucket& b : r.buckets) {
    buckets.push_back(Json{{"phi_star", b.phi_star},
                           {"count", b.count},
                           {"recall", optional_json(b.recall)},
                           {"mrr", optional_json(b.mrr)}});
  }
  return Json{{"k", r.k},     {"examples", r.examples}, {"recall", r.recall},
              {"mrr", r.mrr}, {"arp", r.arp},           {"buckets", std::move(buckets)}};
}

Json to_json(const TrainTrace& t) {
  auto epochs = [](const std::vector<EpochRecord>& recs) {
    Json a = Json::array();
    for (const EpochRecord& r : recs) {
      a.push_back(Json{{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"val_recall", optional_json(r.val_recall)},
                       {"val_mrr", optional_json(r.val_mrr)}});
    }
    return a;
  };
  return Json{{"best_epoch", t.best_epoch}, {"search", epochs(t.search)}, {"refit", epochs(t.refit)}};
}

Json to_json(const NormDiagnostic& n) {
  Json rows = Json::array();
  for (const DecileRow& r : n.deciles) {
    rows.push_back(Json{{"decile", r.decile},
                        {"items", r.items},
                        {"mean_popularity", r.mean_popularity},
                        {"mean_norm", r.mean_norm}});
  }
  return Json{{"spearman", n.spearman}, {"deciles", std::move(rows)}};
}

Json to_json(const EnsembleReport& r) {
  Json members = Json::array();
  for (const EnsembleMember& m : r.members) {
    members.push_back(Json{{"seed", m.seed},
                           {"best_epoch", m.model.trace.best_epoch},
                           {"test", to_json(m.test)},
                           {"trace", to_json(m.model.trace)}});
  }
  auto ms = [](const MeanStd& v) { return Json{{"mean", v.mean}, {"std", v.std}}; };
  return Json{{"recall", ms(r.recall)}, {"mrr", ms(r.mrr)}, {"arp", ms(r.arp)}, {"members", std::move(members)}};
}

Json to_json(const OnlineConfig& c) {
  return Json{{"phi_star", c.phi_star},
              {"n_days", c.n_days},
              {"initial_days", c.initial_days},
              {"validation_fraction", c.validation_fraction},
              {"warm_start", c.warm_start}};
}

Json to_json(const OnlineRun& r) {
  Json days = Json::array();
  for (const OnlineDay& d : r.days) {
    days.push_back(Json{{"day", d.day},
                        {"eval_day", d.eval_day},
                        {"train_sessions", d.train_sessions},
                        {"train_examples", d.train_examples},
                        {"vocab_size", d.vocab_size},
                        {"new_items", d.new_items},
                        {"qualifying_items", d.qualifying_items},
                        {"qualifying_examples", d.qualifying_examples},
                        {"f", d.f},
                        {"eval_examples", d.eval_examples},
                        {"recall", optional_json(d.recall)},
                        {"mrr", optional_json(d.mrr)},
                        {"best_epoch", d.best_epoch}});
  }
  return Json{{"phi_star", r.phi_star}, {"days", std::move(days)}};
}

namespace {

std::string csv_number(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string csv_optional(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

}  // namespace

std::string online_csv(const OnlineRun& r) {
  std::string out =
      "day,eval_day,train_sessions,train_examples,vocab_size,new_items,qualifying_items,qualifying_examples,f,"
      "eval_examples,recall,mrr,best_epoch\n";
  for (const OnlineDay& d : r.days) {
    out += std::to_string(d.day) + ',' + std::to_string(d.eval_day) + ',' + std::to_string(d.train_sessions) + ',' +
           std::to_string(d.train_examples) + ',' + std::to_string(d.vocab_size) + ',' +
           std::to_string(d.new_items.size()) + ',' + std::to_string(d.qualifying_items.size()) + ',' +
           std::to_string(d.qualifying_examples) + ',' + csv_number(d.f) + ',' + std::to_string(d.eval_examples) +
           ',' + csv_optional(d.recall) + ',' + csv_optional(d.mrr) + ',' + std::to_string(d.best_epoch) + '\n';
  }
  return out;
}

std::string norm_csv(const NormDiagnostic& n) {
  std::string out = "decile,items,mean_popularity,mean_norm\n";
  for (const DecileRow& r : n.deciles) {
    out += std::to_string(r.decile) + ',' + std::to_string(r.items) + ',' + csv_number(r.mean_popularity) + ',' +
           csv_number(r.mean_norm) + '\n';
  }
  return out;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- checkpoint ---------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint: truncated file");
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T le() {
    const std::string_view s = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::vector<Shape> expected_shapes(const ModelConfig& c, std::size_t m) {
  const std::size_t d = c.d;
  const Shape sq{d, d}, wide{d, 2 * d}, vec{d};
  return {{m + 1, d}, {c.max_len, d}, sq, sq, {2 * d}, wide, wide, wide, sq, sq, sq, vec, vec, sq, sq, wide};
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string header =
      Json{{"model", to_json(c.model)}, {"vocab", to_json(c.vocab)}, {"metadata", c.metadata}}.dump();
  put_le<std::uint64_t>(out, header.size());
  out += header;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.tensor_count()));
  for (std::size_t i = 0; i < c.params.tensor_count(); ++i) {
    const std::string& name = Parameters::names()[i];
    const Tensor& t = c.params.by_index(i);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) put_le<std::uint64_t>(out, dim);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.take(sizeof(kCheckpointMagic)) != std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto header_len = r.le<std::uint64_t>();
  const Json header = Json::parse(r.take(header_len), nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw DataError("checkpoint: corrupt header");

  Checkpoint c;
  try {
    c.model = model_config_from_json(header.at("model"));
  } catch (const UsageError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  c.vocab = vocab_from_json(data_guard("checkpoint", [&] { return header.at("vocab"); }));
  c.metadata = header.value("metadata", Json::object());

  const auto count = r.le<std::uint32_t>();
  if (count != c.params.tensor_count()) throw DataError("checkpoint: expected 16 tensors, found " + std::to_string(count));
  const std::vector<Shape> shapes = expected_shapes(c.model, c.vocab.size());
  for (std::size_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint32_t>();
    const std::string name(r.take(name_len));
    if (name != Parameters::names()[i]) {
      throw DataError("checkpoint: tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                      Parameters::names()[i] + "'");
    }
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& dim : shape) dim = r.le<std::uint64_t>();
    if (shape != shapes[i]) {
      throw DataError("checkpoint: tensor " + name + " has shape " + shape_to_string(shape) + ", expected " +
                      shape_to_string(shapes[i]));
    }
    std::vector<double> values(shape_size(shape));
    for (double& v : values) v = std::bit_cast<double>(r.le<std::uint64_t>());
    c.params.by_index(i) = Tensor(std::move(shape), std::move(values));
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) { write_text(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_text(path)); }

}  // namespace niser
