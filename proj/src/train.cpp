// SPDX-License-Identifier: Apache-2.0
#include "niser/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "niser/error.hpp"

namespace niser {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw UsageError("train: lr must be > 0");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (patience < 1) throw UsageError("train: patience must be >= 1");
  if (max_epochs < 1) throw UsageError("train: max_epochs must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw UsageError("train: Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw UsageError("train: adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) throw UsageError("train: weight_decay must be >= 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw UsageError("train: lr_decay must be in (0, 1]");
}

AdamState AdamState::for_parameters(const Parameters& params) {
  AdamState s;
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    s.first_moment.push_back(Tensor::zeros_like(params.by_index(i)));
    s.second_moment.push_back(Tensor::zeros_like(params.by_index(i)));
  }
  return s;
}

void adam_step(Parameters& params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config, double lr) {
  if (grads.size() != params.tensor_count() || state.first_moment.size() != params.tensor_count()) {
    throw ShapeError("adam_step: gradient / state count does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.by_index(i).shape()) {
      throw ShapeError("adam_step: gradient for " + Parameters::names()[i] + " has shape " +
                       shape_to_string(grads[i].shape()) + ", parameter has " +
                       shape_to_string(params.by_index(i).shape()));
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + Parameters::names()[i]);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.by_index(i);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j] + config.weight_decay * p[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.adam_eps);
    }
  }
  params.zero_padding_row();
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;

std::vector<Tensor> batch_gradients(const Parameters& params, std::span<const Example> batch,
                                    const ModelConfig& model, Rng& rng, double& loss) {
  ad::Graph g;
  const ParamVars vars = bind_parameters(g, params, true);
  const ForwardPass fp = forward(g, vars, batch, model, true, &rng);
  loss = fp.loss.value()[0];
  if (!std::isfinite(loss)) throw NumericError("train: non-finite loss");
  g.backward(fp.loss);
  std::vector<Tensor> grads;
  grads.reserve(params.tensor_count());
  for (const ad::Var& v : vars.all()) grads.push_back(g.grad(v));
  return grads;
}

EpochRecord validate_epoch(const Parameters& params, std::span<const Example> validation,
                           const ModelConfig& model, const TrainConfig& config, std::size_t epoch,
                           double loss) {
  EpochRecord rec;
  rec.epoch = epoch;
  rec.train_loss = loss;
  if (!validation.empty()) {
    EvalOptions opts;
    opts.workers = config.workers;
    const Ranking r = rank_examples(params, model, validation, opts);
    rec.val_recall = recall_at_k(r.ranks, kDefaultTopK);
    rec.val_mrr = mrr_at_k(r.ranks, kDefaultTopK);
  }
  return rec;
}

}  // namespace

Parameters initial_parameters(const ModelConfig& model, std::size_t num_items, std::uint64_t seed) {
  Rng rng(derive_seed(seed, kInitStream));
  return Parameters::init(model, num_items, rng);
}

double train_epoch(Parameters& params, AdamState& state, std::span<const Example> examples,
                   const ModelConfig& model, const TrainConfig& config, double lr, Rng& rng) {
  if (examples.empty()) throw DataError("train: no training examples");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  double total = 0.0;
  std::size_t batches = 0;
  std::vector<Example> batch;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config.batch_size);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(examples[order[i]]);
    double loss = 0.0;
    const std::vector<Tensor> grads = batch_gradients(params, batch, model, rng, loss);
    adam_step(params, grads, state, config, lr);
    total += loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

TrainedModel train_with_early_stopping(std::span<const Example> train, std::span<const Example> validation,
                                       std::size_t num_items, const ModelConfig& model,
                                       const TrainConfig& config, const EpochObserver& observer,
                                       const Parameters* start) {
  model.validate();
  config.validate();
  if (train.empty() || validation.empty()) throw DataError("train: empty train or validation split");
  TrainedModel out;
  Parameters params = start ? *start : initial_parameters(model, num_items, config.seed);
  AdamState state = AdamState::for_parameters(params);
  Rng rng(derive_seed(config.seed, kTrainStream));
  double lr = config.lr;
  double best_recall = -1.0;
  std::size_t since_best = 0;
  out.params = params;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double loss = train_epoch(params, state, train, model, config, lr, rng);
    lr *= config.lr_decay;
    EpochRecord rec = validate_epoch(params, validation, model, config, epoch, loss);
    out.trace.search.push_back(rec);
    if (observer) observer(rec, false);
    if (*rec.val_recall > best_recall) {
      best_recall = *rec.val_recall;
      out.trace.best_epoch = epoch;
      out.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return out;
}

TrainedModel train_model(std::span<const Example> train, std::span<const Example> validation,
                         std::size_t num_items, const ModelConfig& model, const TrainConfig& config,
                         const EpochObserver& observer, const Parameters* start) {
  TrainedModel search =
      train_with_early_stopping(train, validation, num_items, model, config, observer, start);

  std::vector<Example> combined(train.begin(), train.end());
  combined.insert(combined.end(), validation.begin(), validation.end());
  TrainedModel out;
  out.trace = std::move(search.trace);
  Parameters params = start ? *start : initial_parameters(model, num_items, config.seed);
  AdamState state = AdamState::for_parameters(params);
  Rng rng(derive_seed(config.seed, kTrainStream));
  double lr = config.lr;
  for (std::size_t epoch = 1; epoch <= out.trace.best_epoch; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(params, state, combined, model, config, lr, rng);
    lr *= config.lr_decay;
    out.trace.refit.push_back(rec);
    if (observer) observer(rec, true);
  }
  out.params = std::move(params);
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  if (values.empty()) return r;
  const double n = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / n);
  return r;
}

EnsembleReport train_ensemble(std::size_t n_seeds, std::span<const Example> train,
                              std::span<const Example> validation, std::span<const Example> test,
                              const ItemVocab& vocab, const ModelConfig& model, const TrainConfig& config,
                              const EvalOptions& eval) {
  if (n_seeds < 1) throw UsageError("train_ensemble: need at least one seed");
  EnsembleReport report;
  report.members.resize(n_seeds);
  auto run = [&](std::size_t i) {
    TrainConfig member_cfg = config;
    member_cfg.seed = config.seed + i;
    member_cfg.workers = 1;
    EnsembleMember& m = report.members[i];
    m.seed = member_cfg.seed;
    m.model = train_model(train, validation, vocab.size(), model, member_cfg);
    EvalOptions opts = eval;
    opts.workers = 1;
    m.test = evaluate(m.model.params, model, test, vocab, opts);
  };
  const std::size_t workers = std::clamp<std::size_t>(config.workers, 1, n_seeds);
  if (workers == 1) {
    for (std::size_t i = 0; i < n_seeds; ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          try {
            for (std::size_t i = w; i < n_seeds; i += workers) run(i);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) if (e) std::rethrow_exception(e);
  }
  std::vector<double> recall, mrr, arp;
  for (const EnsembleMember& m : report.members) {
    recall.push_back(m.test.recall);
    mrr.push_back(m.test.mrr);
    arp.push_back(m.test.arp);
  }
  report.recall = mean_std(recall);
  report.mrr = mean_std(mrr);
  report.arp = mean_std(arp);
  return report;
}

const std::vector<double>& sigma_grid() {
  static const std::vector<double> kGrid = {4.0, 9.0, 16.0, 25.0};
  return kGrid;
}

std::vector<SigmaChoice> sigma_search(std::span<const Example> train, std::span<const Example> validation,
                                      std::size_t num_items, const ModelConfig& model,
                                      const TrainConfig& config, std::span<const double> grid) {
  if (!model.normalize_session) throw UsageError("sigma_search: variant does not use sigma");
  std::vector<SigmaChoice> out;
  for (double sigma : grid) {
    ModelConfig m = model;
    m.sigma = sigma;
    const TrainedModel t = train_with_early_stopping(train, validation, num_items, m, config);
    out.push_back({sigma, *t.trace.search.at(t.trace.best_epoch - 1).val_recall});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const SigmaChoice& a, const SigmaChoice& b) { return a.val_recall > b.val_recall; });
  return out;
}

}  // namespace niser
