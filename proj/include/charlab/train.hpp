#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlab/config.hpp"
#include "charlab/layout.hpp"
#include "charlab/model.hpp"
#include "charlab/scaling.hpp"
#include "charlab/tasks.hpp"
#include "charlab/vocab.hpp"

namespace charlab {

struct TrainSchedule {
  int total_steps = 30000;
  int batch_size = 64;
  double base_lr = 1e-5;
  int warmup_steps = 0;
  int eval_every = 500;
  int eval_samples_per_task = 256;
  int checkpoint_every = 0;  // 0: final checkpoint only
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;     // global-norm clip, 0 disables
  double weight_decay = 0.0;  // decoupled, 0 disables
  bool target_only_loss = false;
  std::vector<int> task_filter;  // empty: all 19 tasks
  int n_words = 16;
  int indexed_n_words = 8;

  void validate() const;
  TaskOptions task_options() const;
};

void to_json(nlohmann::json& j, const TrainSchedule& s);
void from_json(const nlohmann::json& j, TrainSchedule& s);

// Linear warmup, then cosine decay from base_lr at the end of warmup to 0 at total_steps.
double learning_rate(const TrainSchedule& s, int step);

struct MetricsRecord {
  std::string run_id;
  int step = 0;
  std::string task;  // task code ("W1".."C12"), "mean_word" or "mean_char"
  int task_id = -1;  // -1 for the means
  double accuracy = 0.0;
  int n_samples = 0;
  std::optional<double> loss;  // teacher-forced target loss, when a model is available

  bool operator==(const MetricsRecord&) const = default;
};

// One JSON object on a single line, without the trailing newline.
std::string metrics_line(const MetricsRecord& r);
MetricsRecord parse_metrics_line(std::string_view line);
std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path);

// Exact match: the generated ids followed by EOS must equal the target.
bool exact_match(const GenerateResult& out, std::span<const int> target, int eos_id);

using Generator = std::function<GenerateResult(std::span<const int> prompt, int max_new)>;

struct EvalOptions {
  int n_per_task = 256;
  uint64_t seed = 0;
  int step = 0;  // together with seed, selects the evaluation instances
  int jobs = 1;
  TaskOptions task_options;
  std::vector<int> tasks;  // empty: all 19
};

// Per-task accuracy, then the word-level and character-level means.
std::vector<MetricsRecord> evaluate(const Generator& gen, const Vocabulary& v, const EvalOptions& options);
std::vector<MetricsRecord> evaluate(const ParamStore<float>& p, const Vocabulary& v, const EvalOptions& options);

struct AdamState {
  std::vector<float> m, v;
  int64_t t = 0;
};

class Adam {
 public:
  Adam(const MupPlan& plan, const TrainSchedule& s, size_t n_params);

  // One update with learning rate lr (before per-tensor multipliers).
  void step(ParamStore<float>& p, const ParamStore<float>& g, double lr);
  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

 private:
  std::vector<double> lr_mult_;  // per tensor
  double beta1_, beta2_, eps_, weight_decay_;
  AdamState state_;
};

struct Checkpoint {
  ParamStore<float> params;
  int step = 0;
  uint64_t seed = 0;
  std::optional<AdamState> adam;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainSinks {
  std::function<void(const MetricsRecord&)> metric;
  std::function<void(const Checkpoint&)> checkpoint;
  std::function<void(int step, double loss, double lr)> progress;
};

struct TrainOptions {
  std::string run_id;
  int jobs = 1;  // 1 is the strict, fully inline mode
  // Step-0 parameters; drawn from the schedule seed when absent.
  std::optional<ParamStore<float>> init;
};

// Builds each batch with Rng::stream(seed, step); evaluation instances come
// from an independent stream so the evaluation cadence never changes the data.
ParamStore<float> train(const ModelConfig& c, const Vocabulary& v, const TrainSchedule& s, const TrainSinks& sinks,
                        const TrainOptions& options = {});

// Training batch for a step; exposed for tests of the sampling contract.
std::vector<TaskInstance> make_batch(const Vocabulary& v, const TrainSchedule& s, int step);

// Checks config, vocabulary and schedule against each other; throws kInvalidArgument.
void validate_training(const ModelConfig& c, const Vocabulary& v, const TrainSchedule& s);

// Smallest context that fits every task instance for this vocabulary.
int required_max_tokens(const Vocabulary& v, const TrainSchedule& s);

}  // namespace charlab
