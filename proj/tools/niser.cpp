// SPDX-License-Identifier: Apache-2.0
//
// niser: command-line front end.
//
// Value precedence: command-line flag, then the --config file (TOML, one
// [section] per subcommand), then NISER_<OPTION> environment variables, then
// built-in defaults. Unknown config keys are rejected.
//
// Exit codes: 0 success, 1 usage, 2 data, 3 numeric. Failures print one line
// to stderr: "niser: error: <usage|data|numeric>: <message>".

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "niser/build_info.hpp"
#include "niser/error.hpp"
#include "niser/serialize.hpp"
#include "niser/simd/kernels.hpp"

namespace fs = std::filesystem;
using namespace niser;

namespace {

// ---- option groups ---------------------------------------------------------------

struct ModelOptions {
  std::string variant = "niser+";
  std::optional<std::size_t> d, tau, max_len;
  std::optional<double> sigma;
  std::optional<std::string> edge_weighting, loss_reduction;

  void add(CLI::App* app) {
    app->add_option("--variant", variant, "gnn, gnn+, nir, niser or niser+")->capture_default_str();
    app->add_option("--d", d, "embedding dimension [100]");
    app->add_option("--tau", tau, "propagation steps [1]");
    app->add_option("--max-len", max_len, "position rows and + variant prefix cap [10]");
    app->add_option("--sigma", sigma, "cosine scale [16]");
    app->add_option("--edge-weighting", edge_weighting, "count or binary [count]");
    app->add_option("--loss-reduction", loss_reduction, "mean or sum [mean]");
  }

  ModelConfig build() const {
    Json j = Json::object();
    j["variant"] = variant;
    if (d) j["d"] = *d;
    if (tau) j["tau"] = *tau;
    if (max_len) j["max_len"] = *max_len;
    if (sigma) j["sigma"] = *sigma;
    if (edge_weighting) j["edge_weighting"] = *edge_weighting;
    if (loss_reduction) j["loss_reduction"] = *loss_reduction;
    return model_config_from_json(j);
  }
};

struct TrainOptions {
  TrainConfig c;

  void add(CLI::App* app) {
    app->add_option("--lr", c.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--batch", c.batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--epochs", c.max_epochs, "maximum epochs")->capture_default_str();
    app->add_option("--patience", c.patience, "epochs without validation gain")->capture_default_str();
    app->add_option("--seed", c.seed, "run seed")->capture_default_str();
    app->add_option("--weight-decay", c.weight_decay, "L2 coefficient added to gradients")->capture_default_str();
    app->add_option("--lr-decay", c.lr_decay, "learning-rate factor per epoch")->capture_default_str();
  }
};

std::string upper_env(const std::string& name) {
  std::string out = "NISER_";
  for (char ch : name) out += ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

// Every long option of `app` can also come from NISER_<NAME>.
void bind_env(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (opt->get_lnames().empty() || name == "help" || name == "config") continue;
    opt->envname(upper_env(name));
  }
}

Json lineage(const Json& config, std::uint64_t seed, const std::string& corpus) {
  return Json{{"build", build_identifier()}, {"seed", seed}, {"corpus_hash", corpus}, {"config", config}};
}

void emit(const std::string& out, const Json& report) {
  if (out.empty() || out == "-") {
    std::cout << dump(report);
  } else {
    write_text(out, dump(report));
  }
}

std::vector<Example> examples_of(const std::vector<Session>& sessions, const ModelConfig& model) {
  return augment_all(sessions, model.prefix_cap());
}

// ---- subcommands ------------------------------------------------------------------

struct SynthCommand {
  SynthConfig c;
  std::string out, transitions;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("synth", "generate a synthetic click log");
    app->add_option("--m", c.m, "catalogue size")->capture_default_str();
    app->add_option("--zipf-s", c.zipf_s, "popularity exponent")->capture_default_str();
    app->add_option("--sessions", c.n_sessions, "session count")->capture_default_str();
    app->add_option("--min-len", c.min_len, "shortest session")->capture_default_str();
    app->add_option("--max-len", c.max_len, "longest session")->capture_default_str();
    app->add_option("--markov", c.markov_concentration, "mass on the successor set")->capture_default_str();
    app->add_option("--successors", c.successors, "successor-set size")->capture_default_str();
    app->add_option("--days", c.n_days, "day count")->capture_default_str();
    app->add_option("--new-items-per-day", c.new_items_per_day, "items introduced on each later day")
        ->capture_default_str();
    app->add_option("--new-item-sessions", c.new_item_sessions, "sessions per new item and day")
        ->capture_default_str();
    app->add_option("--first-day", c.first_day, "epoch day of day 0")->capture_default_str();
    app->add_option("--seed", c.seed, "generator seed")->capture_default_str();
    app->add_option("--out", out, "event CSV")->required();
    app->add_option("--transitions", transitions, "ground-truth transition CSV");
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() const {
    c.validate();
    const SynthCorpus corpus = gen_sessions(c);
    const auto events = to_events(corpus);
    write_events_csv(out, events);
    if (!transitions.empty()) write_transitions_csv(transitions, corpus);
    std::cout << dump(Json{{"command", "synth"},
                           {"events", events.size()},
                           {"sessions", corpus.sessions.size()},
                           {"lineage", lineage(to_json(c), c.seed, "")}});
  }
};

struct IngestCommand {
  std::string events, out, format = "csv", session_column = "session_id", item_column = "item_id",
                            time_column = "timestamp", delimiter;
  bool dates = false;
  double max_malformed = 0.10;
  CorpusFilter filter;
  std::size_t test_days = 1;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("ingest", "click log to corpus JSON");
    app->add_option("--events", events, "event file")->required();
    app->add_option("--format", format, "csv, tsv or jsonl")->capture_default_str();
    app->add_option("--session-column", session_column, "session id column")->capture_default_str();
    app->add_option("--item-column", item_column, "item id column")->capture_default_str();
    app->add_option("--time-column", time_column, "timestamp column")->capture_default_str();
    app->add_option("--delimiter", delimiter, "field separator override");
    app->add_flag("--dates", dates, "timestamps are YYYY-MM-DD");
    app->add_option("--max-malformed", max_malformed, "tolerated malformed fraction")->capture_default_str();
    app->add_option("--min-support", filter.min_item_support, "minimum item clicks")->capture_default_str();
    app->add_option("--min-session-len", filter.min_session_len, "minimum session length")->capture_default_str();
    app->add_option("--test-days", test_days, "trailing days held out for testing")->capture_default_str();
    app->add_option("--out", out, "corpus JSON")->required();
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() const {
    LoadOptions opts;
    opts.session_column = session_column;
    opts.item_column = item_column;
    opts.timestamp_column = time_column;
    if (delimiter.size() > 1) throw UsageError("--delimiter must be a single character");
    if (!delimiter.empty()) opts.delimiter = delimiter[0];
    opts.timestamp_format = dates ? TimestampFormat::kDate : TimestampFormat::kEpochSeconds;
    opts.max_malformed_fraction = max_malformed;
    const LoadResult loaded = load_events(events, parse_event_format(format), opts);
    const Dataset d = prepare_dataset(loaded.events, filter, test_days);
    save_dataset(out, d);
    std::cout << dump(Json{{"command", "ingest"},
                           {"records", loaded.records},
                           {"malformed", loaded.malformed},
                           {"items", d.vocab.size()},
                           {"train_sessions", d.train.size()},
                           {"test_sessions", d.test.size()},
                           {"corpus_hash", corpus_hash(d)},
                           {"build", build_identifier()}});
  }
};

struct TrainCommand {
  std::string corpus, out_dir;
  ModelOptions model;
  TrainOptions train;
  std::size_t seeds = 1;
  double validation_fraction = 0.1;
  bool sigma_search_flag = false;
  const std::size_t* workers = nullptr;

  void add(CLI::App& root, const std::size_t* w) {
    workers = w;
    CLI::App* app = root.add_subcommand("train", "train a model, write checkpoint and trace");
    app->add_option("--corpus", corpus, "corpus JSON from ingest")->required();
    app->add_option("--out-dir", out_dir, "output directory")->required();
    model.add(app);
    train.add(app);
    app->add_option("--seeds", seeds, "ensemble size; seeds are seed + 0..n-1")->capture_default_str();
    app->add_option("--validation-fraction", validation_fraction, "held-out share of training sessions")
        ->capture_default_str();
    app->add_flag("--sigma-search", sigma_search_flag, "pick sigma from {4, 9, 16, 25} on validation recall");
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() {
    ModelConfig mc = model.build();
    TrainConfig tc = train.c;
    tc.workers = *workers;
    tc.validate();
    if (seeds < 1) throw UsageError("--seeds must be >= 1");
    const Dataset d = load_dataset(corpus);
    const std::string hash = corpus_hash(d);
    const HoldoutSplit split = split_holdout(d.train, validation_fraction);
    const auto tr = examples_of(split.train, mc), va = examples_of(split.validation, mc);
    const auto te = examples_of(d.test, mc);
    fs::create_directories(out_dir);

    Json search = nullptr;
    if (sigma_search_flag) {
      if (!mc.normalize_session) throw UsageError("--sigma-search needs a cosine-scored variant");
      const auto choices = sigma_search(tr, va, d.vocab.size(), mc, tc, sigma_grid());
      search = Json::array();
      double best = -1.0;
      for (const auto& ch : choices) {
        search.push_back(Json{{"sigma", ch.sigma}, {"val_recall", ch.val_recall}});
        if (ch.val_recall > best) best = ch.val_recall, mc.sigma = ch.sigma;
      }
    }
    const Json config{{"model", to_json(mc)},
                      {"train", to_json(tc)},
                      {"seeds", seeds},
                      {"validation_fraction", validation_fraction}};

    auto checkpoint = [&](const TrainedModel& m, std::uint64_t seed, const std::string& name) {
      Checkpoint c{mc, d.vocab, m.params,
                   Json{{"seed", seed},
                        {"corpus_hash", hash},
                        {"best_epoch", m.trace.best_epoch},
                        {"train", to_json(tc)},
                        {"build", build_identifier()}}};
      save_checkpoint((fs::path(out_dir) / name).string(), c);
    };

    Json report{{"command", "train"}, {"lineage", lineage(config, tc.seed, hash)}};
    if (!search.is_null()) report["sigma_search"] = search;
    if (seeds == 1) {
      const TrainedModel m = train_model(tr, va, d.vocab.size(), mc, tc);
      checkpoint(m, tc.seed, "model.ckpt");
      report["trace"] = to_json(m.trace);
    } else {
      EvalOptions eval;
      eval.workers = tc.workers;
      const EnsembleReport ens = train_ensemble(seeds, tr, va, te, d.vocab, mc, tc, eval);
      for (const auto& mem : ens.members) checkpoint(mem.model, mem.seed, "model-seed" + std::to_string(mem.seed) + ".ckpt");
      report["ensemble"] = to_json(ens);
    }
    write_text((fs::path(out_dir) / "trace.json").string(), dump(report));
    std::cout << dump(Json{{"command", "train"}, {"out_dir", out_dir}, {"corpus_hash", hash}});
  }
};

std::vector<double> parse_grid(const std::vector<double>& grid) {
  for (double g : grid) {
    if (!(g > 0.0 && g <= 1.0)) throw UsageError("phi* values must be in (0, 1]");
  }
  return grid;
}

struct EvaluateCommand {
  std::string checkpoint, corpus, out, split = "test";
  std::size_t k = kDefaultTopK, batch = 256;
  std::vector<double> grid = default_phi_grid();
  const std::size_t* workers = nullptr;

  void add(CLI::App& root, const std::size_t* w) {
    workers = w;
    CLI::App* app = root.add_subcommand("evaluate", "score a split with a checkpoint");
    app->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app->add_option("--corpus", corpus, "corpus JSON")->required();
    app->add_option("--split", split, "test or train")->capture_default_str();
    app->add_option("--k", k, "list length")->capture_default_str();
    app->add_option("--phi-grid", grid, "long-tail thresholds")->capture_default_str()->delimiter(',');
    app->add_option("--batch", batch, "scoring batch size")->capture_default_str();
    app->add_option("--out", out, "report path, stdout when omitted");
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() const {
    if (split != "test" && split != "train") throw UsageError("--split must be test or train");
    if (k < 1 || batch < 1) throw UsageError("--k and --batch must be >= 1");
    const Checkpoint c = load_checkpoint(checkpoint);
    const Dataset d = load_dataset(corpus);
    if (d.vocab.keys() != c.vocab.keys()) throw DataError("checkpoint vocabulary does not match the corpus");
    EvalOptions eval;
    eval.k = k;
    eval.phi_grid = parse_grid(grid);
    eval.batch_size = batch;
    eval.workers = *workers;
    const auto examples = examples_of(split == "test" ? d.test : d.train, c.model);
    if (examples.empty()) throw DataError("no " + split + " examples to evaluate");
    const MetricsReport r = evaluate(c.params, c.model, examples, c.vocab, eval);
    const Json config{{"model", to_json(c.model)},
                      {"train", c.metadata.value("train", Json())},
                      {"split", split},
                      {"k", k},
                      {"phi_grid", eval.phi_grid}};
    emit(out, Json{{"command", "evaluate"},
                   {"lineage", lineage(config, c.metadata.value("seed", std::uint64_t{0}), corpus_hash(d))},
                   {"metrics", to_json(r)}});
  }
};

struct BiasCommand {
  std::string checkpoint, out, csv;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("bias-report", "item-norm versus popularity by decile");
    app->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    app->add_option("--out", out, "report path, stdout when omitted");
    app->add_option("--csv", csv, "per-decile CSV");
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() const {
    const Checkpoint c = load_checkpoint(checkpoint);
    // Norms of the learned rows, before any normalisation.
    ModelConfig raw = ModelConfig::for_variant(Variant::kGnn);
    const NormDiagnostic n = norm_popularity_report(effective_item_table(c.params, raw), c.vocab);
    if (!csv.empty()) write_text(csv, norm_csv(n));
    const Json config{{"model", to_json(c.model)}, {"train", c.metadata.value("train", Json())}};
    emit(out, Json{{"command", "bias-report"},
                   {"lineage", lineage(config, c.metadata.value("seed", std::uint64_t{0}),
                                       c.metadata.value("corpus_hash", std::string()))},
                   {"norms", to_json(n)}});
  }
};

struct OnlineCommand {
  std::string corpus, out, csv;
  ModelOptions model;
  TrainOptions train;
  OnlineConfig online;
  const std::size_t* workers = nullptr;

  void add(CLI::App& root, const std::size_t* w) {
    workers = w;
    CLI::App* app = root.add_subcommand("online-sim", "daily retraining replay");
    app->add_option("--corpus", corpus, "corpus JSON, best ingested with --test-days 0 --min-support 1")->required();
    model.add(app);
    train.add(app);
    app->add_option("--phi-star", online.phi_star, "long-tail threshold")->capture_default_str();
    app->add_option("--sim-days", online.n_days, "simulated days, 0 for all")->capture_default_str();
    app->add_option("--initial-days", online.initial_days, "days before the first simulated day, 0 for half")
        ->capture_default_str();
    app->add_option("--validation-fraction", online.validation_fraction, "held-out share per day")
        ->capture_default_str();
    app->add_flag("--warm-start", online.warm_start, "carry parameters across days");
    app->add_option("--out", out, "report path, stdout when omitted");
    app->add_option("--csv", csv, "per-day CSV");
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() {
    const ModelConfig mc = model.build();
    TrainConfig tc = train.c;
    tc.workers = *workers;
    tc.validate();
    online.eval.workers = *workers;
    const Dataset d = load_dataset(corpus);
    std::vector<Session> all = d.train;
    all.insert(all.end(), d.test.begin(), d.test.end());
    const OnlineRun r = run_online(all, d.vocab, mc, tc, online, [](const OnlineDay& day) {
      std::cerr << "niser: online-sim day " << day.day << " f=" << day.f << " eval=" << day.eval_examples << '\n';
    });
    if (!csv.empty()) write_text(csv, online_csv(r));
    const Json config{{"model", to_json(mc)}, {"train", to_json(tc)}, {"online", to_json(online)}};
    emit(out, Json{{"command", "online-sim"}, {"lineage", lineage(config, tc.seed, corpus_hash(d))}, {"run", to_json(r)}});
  }
};

struct GradCheckCommand {
  ModelOptions model;
  std::size_t m = 12, batch = 3;
  std::uint64_t seed = 0;
  double eps = 1e-5, threshold = 1e-4;

  void add(CLI::App& root) {
    CLI::App* app = root.add_subcommand("grad-check", "finite-difference check of the full model");
    model.add(app);
    app->add_option("--m", m, "catalogue size")->capture_default_str();
    app->add_option("--batch", batch, "examples in the batch")->capture_default_str();
    app->add_option("--seed", seed, "parameter and batch seed")->capture_default_str();
    app->add_option("--eps", eps, "central-difference step")->capture_default_str();
    app->add_option("--threshold", threshold, "maximum accepted relative error")->capture_default_str();
    bind_env(app);
    app->callback([this] { run(); });
  }

  void run() {
    // Tiny defaults: d 8, L 5.
    if (!model.d) model.d = 8;
    if (!model.max_len) model.max_len = 5;
    ModelConfig mc = model.build();
    if (m < 2 || batch < 1) throw UsageError("grad-check needs m >= 2 and batch >= 1");
    Rng rng(seed);
    const Parameters p = Parameters::init(mc, m, rng);
    std::vector<Example> examples;
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<std::size_t> prefix(1 + uniform_index(rng, std::min<std::size_t>(mc.max_len, 6)));
      for (auto& x : prefix) x = uniform_index(rng, m);
      examples.push_back({prefix, uniform_index(rng, m)});
    }
    std::vector<Tensor> leaves;
    for (std::size_t i = 0; i < p.tensor_count(); ++i) leaves.push_back(p.by_index(i));
    // Eval mode: dropout off.
    const ad::LossBuilder build = [&](ad::Graph& g, std::span<const ad::Var> v) {
      return forward(g, bind_parameters(v), examples, mc, false, nullptr).loss;
    };
    const auto report = ad::finite_diff_check(build, leaves, eps);
    Json per = Json::object();
    for (std::size_t i = 0; i < report.per_leaf.size(); ++i) per[Parameters::names()[i]] = report.per_leaf[i];
    const bool pass = report.max_rel_error < threshold;
    std::cout << dump(Json{{"command", "grad-check"},
                           {"lineage", lineage(Json{{"model", to_json(mc)}, {"m", m}, {"batch", batch}, {"eps", eps}},
                                               seed, "")},
                           {"max_rel_error", report.max_rel_error},
                           {"threshold", threshold},
                           {"pass", pass},
                           {"per_tensor", per}});
    if (!pass) {
      throw NumericError("gradient check failed: max relative error " + std::to_string(report.max_rel_error));
    }
  }
};

std::string kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
      return "usage";
    case ErrorKind::kData:
      return "data";
    case ErrorKind::kNumeric:
      return "numeric";
  }
  return "usage";
}

int fail(ErrorKind kind, const std::string& msg) {
  std::string line = msg;
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::cerr << "niser: error: " << kind_name(kind) << ": " << line << '\n';
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-graph recommenders with normalised item and session embeddings"};
  app.set_version_flag("--version", build_identifier());
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML config file; [synth], [train], ... sections");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::size_t workers = 1;
  bool emit_config = false;
  std::string backend = "auto";
  app.add_option("--workers", workers, "threads for training and scoring")->capture_default_str()->envname("NISER_WORKERS");
  app.add_option("--backend", backend, "kernel backend: auto, scalar or avx2")->capture_default_str()->envname("NISER_BACKEND");
  app.add_flag("--emit-config", emit_config, "print the effective configuration and exit")->configurable(false);
  app.parse_complete_callback([&] {
    if (workers < 1) throw CLI::ValidationError("--workers", "must be >= 1");
    if (backend == "scalar") {
      simd::set_backend(simd::Backend::kScalar);
    } else if (backend == "avx2") {
      if (!simd::avx2_available()) throw CLI::ValidationError("--backend", "AVX2 is not available");
      simd::set_backend(simd::Backend::kAvx2);
    } else if (backend != "auto") {
      throw CLI::ValidationError("--backend", "expected auto, scalar or avx2");
    }
    if (emit_config) {
      // Unset optional values have no TOML form; leave them out.
      std::istringstream all(app.config_to_str(true, false));
      for (std::string line; std::getline(all, line);) {
        if (line.ends_with("=\"\"")) continue;
        // List defaults are captured as one quoted string; print them as arrays.
        const auto eq = line.find("=\"[");
        if (eq != std::string::npos && line.ends_with("]\"")) {
          std::string list = line.substr(eq + 2, line.size() - eq - 3);
          for (std::size_t at = list.find(','); at != std::string::npos; at = list.find(',', at + 2)) {
            list.insert(at + 1, " ");
          }
          line = line.substr(0, eq + 1) + list;
        }
        std::cout << line << '\n';
      }
      std::exit(0);
    }
  });

  SynthCommand synth;
  IngestCommand ingest;
  TrainCommand train;
  EvaluateCommand evaluate_cmd;
  BiasCommand bias;
  OnlineCommand online;
  GradCheckCommand grad;
  synth.add(app);
  ingest.add(app);
  train.add(app, &workers);
  evaluate_cmd.add(app, &workers);
  bias.add(app);
  online.add(app, &workers);
  grad.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(ErrorKind::kUsage, e.what());
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(ErrorKind::kData, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ErrorKind::kData, e.what());
  }
  return 0;
}
