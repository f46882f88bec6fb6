// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "niser/ingest.hpp"
#include "niser/metrics.hpp"
#include "niser/model.hpp"
#include "niser/tensor.hpp"

namespace niser {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 100;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double lr_decay = 1.0;  // multiplicative, applied after every epoch
  std::size_t workers = 1;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static AdamState for_parameters(const Parameters& params);
};

/// One bias-corrected Adam update at learning rate `lr`. The padding row of
/// the item table is re-zeroed afterwards. Throws NumericError naming the
/// parameter when a gradient is not finite.
void adam_step(Parameters& params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config, double lr);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_recall;
  std::optional<double> val_mrr;
};

struct TrainTrace {
  std::vector<EpochRecord> search;  // phase 1: train split, validated each epoch
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> refit;   // phase 2: train + validation, best_epoch epochs
};

struct TrainedModel {
  Parameters params;
  TrainTrace trace;
};

/// Seed for an independent stream derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Fresh parameters from the run seed; phase 1 and phase 2 start identical.
Parameters initial_parameters(const ModelConfig& model, std::size_t num_items, std::uint64_t seed);

/// Shuffles and trains over `examples` once; returns the mean batch loss.
/// Throws NumericError on a non-finite loss.
double train_epoch(Parameters& params, AdamState& state, std::span<const Example> examples,
                   const ModelConfig& model, const TrainConfig& config, double lr, Rng& rng);

/// Called after every epoch of either phase.
using EpochObserver = std::function<void(const EpochRecord&, bool refit)>;

/// Phase 1 trains on `train` with early stopping on validation Recall@20
/// (`patience` epochs without improvement); phase 2 re-initialises from the
/// same seed and trains on train + validation for exactly best_epoch epochs.
/// Returns the phase-2 parameters.
/// `start`, when given, replaces the seeded initialisation in both phases
/// (warm start).
TrainedModel train_model(std::span<const Example> train, std::span<const Example> validation,
                         std::size_t num_items, const ModelConfig& model, const TrainConfig& config,
                         const EpochObserver& observer = {}, const Parameters* start = nullptr);

/// Phase 1 only; returns the parameters after the best epoch.
TrainedModel train_with_early_stopping(std::span<const Example> train, std::span<const Example> validation,
                                       std::size_t num_items, const ModelConfig& model,
                                       const TrainConfig& config, const EpochObserver& observer = {},
                                       const Parameters* start = nullptr);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

struct EnsembleMember {
  std::uint64_t seed = 0;
  TrainedModel model;
  MetricsReport test;
};

struct EnsembleReport {
  std::vector<EnsembleMember> members;
  MeanStd recall, mrr, arp;
};

/// Trains n_seeds models with seeds base_seed + 0..n-1 and summarises their
/// test metrics. Members train concurrently when config.workers > 1.
EnsembleReport train_ensemble(std::size_t n_seeds, std::span<const Example> train,
                              std::span<const Example> validation, std::span<const Example> test,
                              const ItemVocab& vocab, const ModelConfig& model, const TrainConfig& config,
                              const EvalOptions& eval = {});

/// Sigma values tried by the grid helper.
const std::vector<double>& sigma_grid();

struct SigmaChoice {
  double sigma = 0.0;
  double val_recall = 0.0;
};

/// Phase-1 training for each sigma in `grid`; best validation Recall@20 wins
/// (earliest grid entry on ties).
std::vector<SigmaChoice> sigma_search(std::span<const Example> train, std::span<const Example> validation,
                                      std::size_t num_items, const ModelConfig& model,
                                      const TrainConfig& config, std::span<const double> grid);

}  // namespace niser
