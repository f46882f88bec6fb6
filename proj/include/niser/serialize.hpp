// SPDX-License-Identifier: Apache-2.0
//
// JSON forms of configs, corpora and reports, plus the binary checkpoint
// container (layout in docs/checkpoint-format.md).
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "niser/ingest.hpp"
#include "niser/metrics.hpp"
#include "niser/model.hpp"
#include "niser/onlinesim.hpp"
#include "niser/synth.hpp"
#include "niser/train.hpp"

namespace niser {

using Json = nlohmann::ordered_json;

// Config parsers start from defaults and reject unknown keys (UsageError).
Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const Json& j);
Json to_json(const CorpusFilter& f);

Json to_json(const ItemVocab& v);
ItemVocab vocab_from_json(const Json& j);

Json to_json(const Dataset& d);
Dataset dataset_from_json(const Json& j);
void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

/// SHA-256 (hex) of the canonical serialisation of the corpus.
std::string corpus_hash(const Dataset& d);
std::string sha256_hex(std::string_view bytes);

Json to_json(const MetricsReport& r);
Json to_json(const TrainTrace& t);
Json to_json(const NormDiagnostic& n);
Json to_json(const EnsembleReport& r);
Json to_json(const OnlineConfig& c);
Json to_json(const OnlineRun& r);
/// One row per simulated day, for plotting.
std::string online_csv(const OnlineRun& r);
/// One row per popularity decile.
std::string norm_csv(const NormDiagnostic& n);

/// Deterministic text: two-space indent, trailing newline.
std::string dump(const Json& j);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

inline constexpr char kCheckpointMagic[8] = {'N', 'I', 'S', 'E', 'R', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  ItemVocab vocab;
  Parameters params;
  Json metadata = Json::object();
};

std::string encode_checkpoint(const Checkpoint& c);
/// Throws DataError on a bad magic, version, truncation or tensor mismatch.
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace niser
