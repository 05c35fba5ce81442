#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "charlab/config.hpp"
#include "charlab/evalx.hpp"
#include "charlab/train.hpp"
#include "charlab/vocab.hpp"

namespace charlab {

// Either a vocabulary file or the arguments of build_vocab.
struct VocabSpec {
  std::optional<std::string> path;
  uint64_t seed = 1;
  int vocab_size = 1024;
  int k = 4;
};

// Everything needed to reproduce one run. n_vocab in the model section may be
// left at 0 and is then filled in from the vocabulary.
struct RunConfig {
  std::string run_id = "run";
  VocabSpec vocab;
  ModelConfig model;
  TrainSchedule schedule;
  AnalysisOptions analysis;
  std::string out_dir;  // empty: $CHARLAB_OUT, else "runs"
  bool strict_determinism = false;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown keys are rejected at every level.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

Vocabulary resolve_vocab(const VocabSpec& spec);

// Output root: the explicit value, else $CHARLAB_OUT, else "runs".
std::filesystem::path output_root(const std::string& explicit_dir);

// Refuses an existing non-empty path unless force is set, in which case it is removed.
void prepare_output(const std::filesystem::path& path, bool force);

struct RunOptions {
  bool force = false;
  int jobs = 1;
  std::ostream* log = nullptr;  // progress lines
  int log_every = 100;
};

// Writes config.json, vocab.json, manifest.json, metrics.jsonl, train_log.csv
// and checkpoints/ under <out>/<run_id>; returns the run directory.
std::filesystem::path run_training(const RunConfig& config, const RunOptions& options);

std::string git_describe();
std::string utc_timestamp();

}  // namespace charlab
