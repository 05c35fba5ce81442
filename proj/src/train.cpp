#include "charlab/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "charlab/error.hpp"
#include "charlab/parallel.hpp"
#include "charlab/rng.hpp"

namespace charlab {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); }

// Stream tags keep training data, evaluation data and initialization apart.
constexpr uint64_t kEvalTag = 0x6576616c;  // "eval"
constexpr uint64_t kInitTag = 0x696e6974;  // "init"

constexpr char kMagic[8] = {'C', 'H', 'L', 'M', '0', '0', '0', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
         static_cast<uint32_t>(b[3]) << 24;
}

void write_floats(std::ostream& out, std::span<const float> xs) {
  std::vector<unsigned char> buf(xs.size() * 4);
  for (size_t i = 0; i < xs.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &xs[i], 4);
    for (int k = 0; k < 4; ++k) buf[i * 4 + static_cast<size_t>(k)] = static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_floats(std::istream& in, std::span<float> xs) {
  std::vector<unsigned char> buf(xs.size() * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw Error(ErrorKind::kMalformedFile, "truncated checkpoint payload");
  for (size_t i = 0; i < xs.size(); ++i) {
    uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<uint32_t>(buf[i * 4 + static_cast<size_t>(k)]) << (8 * k);
    std::memcpy(&xs[i], &bits, 4);
  }
}

TrainSequence to_sequence(const TaskInstance& inst) {
  TrainSequence seq;
  seq.ids = inst.prompt_ids;
  seq.ids.insert(seq.ids.end(), inst.target_ids.begin(), inst.target_ids.end());
  seq.target_start = static_cast<int>(inst.prompt_ids.size());
  return seq;
}

// Mean loss and summed gradients over a batch, split in contiguous chunks
// across workers and merged in chunk order.
double batch_loss_and_grads(const ParamStore<float>& p, const Vocabulary& v, const std::vector<TrainSequence>& batch,
                            ParamStore<float>& grads, bool target_only, int jobs) {
  const size_t workers = std::min(batch.size(), static_cast<size_t>(std::max(1, jobs)));
  if (workers <= 1) return loss_and_grads<float>(p, v, batch, &grads, target_only).loss;

  std::vector<ParamStore<float>> partial(workers, ParamStore<float>(p.layout));
  std::vector<LossResult> results(workers);
  parallel_for(workers, static_cast<int>(workers), [&](size_t w) {
    const size_t begin = batch.size() * w / workers;
    const size_t end = batch.size() * (w + 1) / workers;
    results[w] = loss_and_grads<float>(p, v, std::span(batch).subspan(begin, end - begin), &partial[w], target_only);
  });
  size_t total = 0;
  for (const auto& r : results) total += r.n_predictions;
  double loss = 0.0;
  for (size_t w = 0; w < workers; ++w) {
    const double share = static_cast<double>(results[w].n_predictions) / static_cast<double>(total);
    loss += results[w].loss * share;
    const auto f = static_cast<float>(share);
    for (size_t i = 0; i < grads.values.size(); ++i) grads.values[i] += partial[w].values[i] * f;
  }
  return loss;
}

}  // namespace

void TrainSchedule::validate() const {
  if (total_steps <= 0 || batch_size <= 0) invalid("total_steps and batch_size must be positive");
  if (!(base_lr > 0.0)) invalid("base_lr must be positive");
  if (warmup_steps < 0 || warmup_steps >= total_steps) invalid("warmup_steps must lie in [0, total_steps)");
  if (eval_every <= 0 || eval_every > total_steps) invalid("eval_every must lie in [1, total_steps]");
  if (eval_samples_per_task <= 0) invalid("eval_samples_per_task must be positive");
  if (checkpoint_every < 0) invalid("checkpoint_every must be non-negative");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || eps <= 0.0) invalid("bad Adam constants");
  if (grad_clip < 0.0 || weight_decay < 0.0) invalid("grad_clip and weight_decay must be non-negative");
  if (n_words <= 0 || indexed_n_words <= 0) invalid("sentence lengths must be positive");
  for (int t : task_filter) {
    if (t < 0 || t >= kNumTasks) invalid("task filter entry " + std::to_string(t) + " out of range");
  }
}

TaskOptions TrainSchedule::task_options() const {
  TaskOptions o;
  o.n_words = n_words;
  o.indexed_n_words = indexed_n_words;
  return o;
}

void to_json(nlohmann::json& j, const TrainSchedule& s) {
  std::vector<std::string> filter;
  for (int t : s.task_filter) filter.push_back(task(t).code);
  j = nlohmann::json{{"total_steps", s.total_steps},
                     {"batch_size", s.batch_size},
                     {"base_lr", s.base_lr},
                     {"warmup_steps", s.warmup_steps},
                     {"eval_every", s.eval_every},
                     {"eval_samples_per_task", s.eval_samples_per_task},
                     {"checkpoint_every", s.checkpoint_every},
                     {"seed", s.seed},
                     {"beta1", s.beta1},
                     {"beta2", s.beta2},
                     {"eps", s.eps},
                     {"grad_clip", s.grad_clip},
                     {"weight_decay", s.weight_decay},
                     {"target_only_loss", s.target_only_loss},
                     {"task_filter", filter},
                     {"n_words", s.n_words},
                     {"indexed_n_words", s.indexed_n_words}};
}

void from_json(const nlohmann::json& j, TrainSchedule& s) {
  static const std::set<std::string> known = {
      "total_steps", "batch_size", "base_lr",   "warmup_steps", "eval_every",       "eval_samples_per_task",
      "checkpoint_every", "seed",  "beta1",     "beta2",        "eps",              "grad_clip",
      "weight_decay", "target_only_loss", "task_filter", "n_words", "indexed_n_words"};
  if (!j.is_object()) invalid("schedule must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) invalid("unknown schedule key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("total_steps", s.total_steps);
  get("batch_size", s.batch_size);
  get("base_lr", s.base_lr);
  get("warmup_steps", s.warmup_steps);
  get("eval_every", s.eval_every);
  get("eval_samples_per_task", s.eval_samples_per_task);
  get("checkpoint_every", s.checkpoint_every);
  get("seed", s.seed);
  get("beta1", s.beta1);
  get("beta2", s.beta2);
  get("eps", s.eps);
  get("grad_clip", s.grad_clip);
  get("weight_decay", s.weight_decay);
  get("target_only_loss", s.target_only_loss);
  get("n_words", s.n_words);
  get("indexed_n_words", s.indexed_n_words);
  if (j.contains("task_filter")) {
    s.task_filter.clear();
    for (const auto& item : j.at("task_filter")) {
      if (item.is_number_integer()) {
        s.task_filter.push_back(item.get<int>());
        continue;
      }
      const auto id = task_id_from_code(item.get<std::string>());
      if (!id) invalid("unknown task '" + item.get<std::string>() + "'");
      s.task_filter.push_back(*id);
    }
  }
}

double learning_rate(const TrainSchedule& s, int step) {
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
  const double span = static_cast<double>(s.total_steps - s.warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - s.warmup_steps) / span, 0.0, 1.0);
  return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string metrics_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  j["step"] = r.step;
  if (r.task_id >= 0) {
    j["task_id"] = r.task_id;
  } else {
    j["task_id"] = r.task;
  }
  j["task"] = r.task;
  j["accuracy"] = r.accuracy;
  j["n_samples"] = r.n_samples;
  j["loss"] = r.loss ? nlohmann::ordered_json(*r.loss) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

MetricsRecord parse_metrics_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.step = j.at("step").get<int>();
    const auto& id = j.at("task_id");
    if (id.is_number_integer()) {
      r.task_id = id.get<int>();
      r.task = task(r.task_id).code;
    } else {
      r.task = id.get<std::string>();
    }
    r.accuracy = j.at("accuracy").get<double>();
    r.n_samples = j.at("n_samples").get<int>();
    if (j.contains("loss") && !j.at("loss").is_null()) r.loss = j.at("loss").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("bad metrics line: ") + e.what());
  }
}

std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_metrics_line(line));
  }
  return out;
}

bool exact_match(const GenerateResult& out, std::span<const int> target, int eos_id) {
  if (!out.hit_eos || target.empty() || target.back() != eos_id) return false;
  const auto body = target.first(target.size() - 1);
  return std::equal(out.ids.begin(), out.ids.end(), body.begin(), body.end());
}

namespace {

std::vector<MetricsRecord> evaluate_impl(const Generator& gen, const ParamStore<float>* p, const Vocabulary& v,
                                         const EvalOptions& o) {
  std::vector<int> tasks = o.tasks;
  if (tasks.empty()) {
    for (int t = 0; t < kNumTasks; ++t) tasks.push_back(t);
  }
  const auto n = static_cast<size_t>(o.n_per_task);
  std::vector<TaskInstance> instances;
  instances.reserve(tasks.size() * n);
  for (int t : tasks) {
    Rng rng = Rng::stream(o.seed ^ kEvalTag, static_cast<uint64_t>(o.step), static_cast<uint64_t>(t));
    const std::vector<int> only = {t};
    for (size_t i = 0; i < n; ++i) instances.push_back(make_example(v, rng, only, o.task_options));
  }

  std::vector<char> hit(instances.size(), 0);
  std::vector<double> loss_sum(instances.size(), 0.0);
  std::vector<size_t> loss_count(instances.size(), 0);
  const int max_tokens = p ? p->config().max_tokens : std::numeric_limits<int>::max();
  parallel_for(instances.size(), o.jobs, [&](size_t i) {
    const auto& inst = instances[i];
    try {
      const auto out = gen(inst.prompt_ids, static_cast<int>(inst.target_ids.size()));
      hit[i] = exact_match(out, inst.target_ids, v.eos_id()) ? 1 : 0;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kContextOverflow) throw;
    }
    if (p && static_cast<int>(inst.prompt_ids.size() + inst.target_ids.size()) <= max_tokens) {
      const TrainSequence seq = to_sequence(inst);
      const auto r = loss_and_grads<float>(*p, v, std::span(&seq, 1), nullptr, true);
      loss_sum[i] = r.loss * static_cast<double>(r.n_predictions);
      loss_count[i] = r.n_predictions;
    }
  });

  std::vector<MetricsRecord> out;
  double word_acc = 0, char_acc = 0, word_loss = 0, char_loss = 0;
  int n_word = 0, n_char = 0, samples_word = 0, samples_char = 0;
  for (size_t k = 0; k < tasks.size(); ++k) {
    const auto& d = task(tasks[k]);
    MetricsRecord r;
    r.step = o.step;
    r.task = d.code;
    r.task_id = d.task_id;
    r.n_samples = o.n_per_task;
    size_t hits = 0;
    double ls = 0;
    size_t lc = 0;
    for (size_t i = k * n; i < (k + 1) * n; ++i) {
      hits += static_cast<size_t>(hit[i]);
      ls += loss_sum[i];
      lc += loss_count[i];
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    if (p && lc > 0) r.loss = ls / static_cast<double>(lc);
    if (d.level == TaskLevel::kWord) {
      word_acc += r.accuracy;
      word_loss += r.loss.value_or(0.0);
      ++n_word;
      samples_word += r.n_samples;
    } else {
      char_acc += r.accuracy;
      char_loss += r.loss.value_or(0.0);
      ++n_char;
      samples_char += r.n_samples;
    }
    out.push_back(r);
  }
  auto mean_record = [&](const char* name, double acc, double loss, int count, int samples) {
    MetricsRecord r;
    r.step = o.step;
    r.task = name;
    r.accuracy = acc / count;
    r.n_samples = samples;
    if (p) r.loss = loss / count;
    out.push_back(r);
  };
  if (n_word) mean_record("mean_word", word_acc, word_loss, n_word, samples_word);
  if (n_char) mean_record("mean_char", char_acc, char_loss, n_char, samples_char);
  return out;
}

}  // namespace

std::vector<MetricsRecord> evaluate(const Generator& gen, const Vocabulary& v, const EvalOptions& options) {
  return evaluate_impl(gen, nullptr, v, options);
}

std::vector<MetricsRecord> evaluate(const ParamStore<float>& p, const Vocabulary& v, const EvalOptions& options) {
  const Generator gen = [&](std::span<const int> prompt, int max_new) {
    return generate<float>(p, v, prompt, max_new);
  };
  return evaluate_impl(gen, &p, v, options);
}

Adam::Adam(const MupPlan& plan, const TrainSchedule& s, size_t n_params)
    : beta1_(s.beta1), beta2_(s.beta2), eps_(s.eps), weight_decay_(s.weight_decay) {
  for (const auto& t : plan.tensors) lr_mult_.push_back(t.lr_mult);
  state_.m.assign(n_params, 0.0f);
  state_.v.assign(n_params, 0.0f);
}

void Adam::step(ParamStore<float>& p, const ParamStore<float>& g, double lr) {
  ++state_.t;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.t));
  const auto b1 = static_cast<float>(beta1_);
  const auto b2 = static_cast<float>(beta2_);
  const auto& specs = p.layout->specs();
  for (size_t k = 0; k < specs.size(); ++k) {
    const double tensor_lr = lr * lr_mult_[k];
    const auto step_size = static_cast<float>(tensor_lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(eps_);
    const auto decay = static_cast<float>(1.0 - tensor_lr * weight_decay_);
    const size_t begin = specs[k].offset;
    const size_t end = begin + specs[k].size();
    for (size_t i = begin; i < end; ++i) {
      const float gi = g.values[i];
      float& m = state_.m[i];
      float& v = state_.v[i];
      m = b1 * m + (1.0f - b1) * gi;
      v = b2 * v + (1.0f - b2) * gi * gi;
      if (weight_decay_ > 0.0) p.values[i] *= decay;
      p.values[i] -= step_size * m / (std::sqrt(v * inv_c2) + eps);
    }
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::ordered_json header;
  nlohmann::json cfg = c.params.config();
  header["config"] = cfg;
  header["step"] = c.step;
  header["rng_state"] = {{"seed", c.seed}, {"next_step", c.step}};
  auto index = nlohmann::ordered_json::array();
  for (const auto& s : c.params.layout->specs()) index.push_back({{"name", s.name}, {"dims", {s.rows, s.cols}}});
  if (c.adam) {
    index.push_back({{"name", "adam.m"}, {"dims", {c.adam->m.size()}}});
    index.push_back({{"name", "adam.v"}, {"dims", {c.adam->v.size()}}});
  }
  header["tensor_index"] = std::move(index);
  if (c.adam) header["adam_t"] = c.adam->t;
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_u32(out, static_cast<uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_floats(out, c.params.values);
    if (c.adam) {
      write_floats(out, c.adam->m);
      write_floats(out, c.adam->v);
    }
    if (!out) throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    if (in && std::memcmp(magic, kMagic, 4) == 0) throw Error(ErrorKind::kVersionMismatch, "unsupported checkpoint version");
    throw Error(ErrorKind::kMalformedFile, path.string() + " is not a checkpoint");
  }
  const uint32_t len = read_u32(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw Error(ErrorKind::kMalformedFile, "truncated checkpoint header");
  try {
    const auto header = nlohmann::json::parse(text);
    ModelConfig config;
    from_json(header.at("config"), config);
    config.validate();
    auto layout = std::make_shared<const Layout>(config);
    const auto& index = header.at("tensor_index");
    const auto& specs = layout->specs();
    if (index.size() < specs.size()) throw Error(ErrorKind::kMalformedFile, "tensor index too short");
    for (size_t i = 0; i < specs.size(); ++i) {
      const auto dims = index[i].at("dims").get<std::vector<int>>();
      if (index[i].at("name").get<std::string>() != specs[i].name || dims.size() != 2 || dims[0] != specs[i].rows ||
          dims[1] != specs[i].cols) {
        throw Error(ErrorKind::kMalformedFile, "tensor index does not match the configuration");
      }
    }
    Checkpoint c;
    c.params = ParamStore<float>(layout);
    c.step = header.at("step").get<int>();
    c.seed = header.at("rng_state").at("seed").get<uint64_t>();
    read_floats(in, c.params.values);
    if (header.contains("adam_t")) {
      AdamState a;
      a.t = header.at("adam_t").get<int64_t>();
      a.m.resize(c.params.values.size());
      a.v.resize(c.params.values.size());
      read_floats(in, a.m);
      read_floats(in, a.v);
      c.adam = std::move(a);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("bad checkpoint header: ") + e.what());
  }
}

std::vector<TaskInstance> make_batch(const Vocabulary& v, const TrainSchedule& s, int step) {
  Rng rng = Rng::stream(s.seed, static_cast<uint64_t>(step));
  const auto options = s.task_options();
  std::vector<TaskInstance> batch;
  batch.reserve(static_cast<size_t>(s.batch_size));
  for (int b = 0; b < s.batch_size; ++b) batch.push_back(make_example(v, rng, s.task_filter, options));
  return batch;
}

int required_max_tokens(const Vocabulary& v, const TrainSchedule& s) {
  return max_example_tokens(v.max_surface_length(), s.task_options());
}

void validate_training(const ModelConfig& c, const Vocabulary& v, const TrainSchedule& s) {
  c.validate();
  s.validate();
  if (c.n_vocab != v.size()) invalid("config n_vocab does not match the vocabulary");
  if (c.max_tokens < required_max_tokens(v, s)) {
    invalid("max_tokens " + std::to_string(c.max_tokens) + " is below the longest example (" +
            std::to_string(required_max_tokens(v, s)) + " tokens)");
  }
  if (c.char_enabled && c.max_token_chars < v.max_surface_length()) {
    invalid("max_token_chars is below the longest token surface");
  }
}

ParamStore<float> train(const ModelConfig& c, const Vocabulary& v, const TrainSchedule& s, const TrainSinks& sinks,
                        const TrainOptions& options) {
  validate_training(c, v, s);

  const auto layout = std::make_shared<const Layout>(c);
  const MupPlan plan = mup_plan(c, s.base_lr);
  ParamStore<float> p = options.init ? *options.init : init_parameters<float>(layout, plan, s.seed ^ kInitTag);
  if (p.layout->specs().size() != layout->specs().size() || p.values.size() != layout->total_size()) {
    invalid("initial parameters do not match the configuration");
  }
  Adam adam(plan, s, p.values.size());
  ParamStore<float> grads(p.layout);

  EvalOptions eval;
  eval.n_per_task = s.eval_samples_per_task;
  eval.seed = s.seed;
  eval.jobs = options.jobs;
  eval.task_options = s.task_options();

  auto emit_eval = [&](int step) {
    eval.step = step;
    for (auto r : evaluate(p, v, eval)) {
      r.run_id = options.run_id;
      if (sinks.metric) sinks.metric(r);
    }
  };
  auto emit_checkpoint = [&](int step) {
    if (sinks.checkpoint) sinks.checkpoint(Checkpoint{p, step, s.seed, adam.state()});
  };

  for (int step = 0; step < s.total_steps; ++step) {
    if (step % s.eval_every == 0) emit_eval(step);

    std::vector<TrainSequence> batch;
    for (const auto& inst : make_batch(v, s, step)) batch.push_back(to_sequence(inst));
    grads.zero();
    double loss = 0.0;
    try {
      loss = batch_loss_and_grads(p, v, batch, grads, s.target_only_loss, options.jobs);
      for (float g : grads.values) {
        if (!std::isfinite(g)) throw Error(ErrorKind::kNumericFailure, "non-finite gradient");
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumericFailure) throw;
      emit_checkpoint(step);
      throw Error(ErrorKind::kNumericFailure, std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (s.grad_clip > 0.0) {
      double norm = 0.0;
      for (float g : grads.values) norm += static_cast<double>(g) * g;
      norm = std::sqrt(norm);
      if (norm > s.grad_clip) {
        const auto f = static_cast<float>(s.grad_clip / norm);
        for (float& g : grads.values) g *= f;
      }
    }
    const double lr = learning_rate(s, step);
    if (sinks.progress) sinks.progress(step, loss, lr);
    adam.step(p, grads, lr);

    if (s.checkpoint_every > 0 && (step + 1) % s.checkpoint_every == 0 && step + 1 < s.total_steps) {
      emit_checkpoint(step + 1);
    }
  }
  emit_eval(s.total_steps);
  emit_checkpoint(s.total_steps);
  return p;
}

}  // namespace charlab
