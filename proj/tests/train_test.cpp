#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "charlab/error.hpp"
#include "charlab/model.hpp"
#include "charlab/train.hpp"
#include "test_util.hpp"

namespace charlab {
namespace {

ModelConfig small_config(const Vocabulary& v, int d_tokens) {
  ModelConfig c;
  c.n_vocab = v.size();
  c.n_layers = 2;
  c.d_tokens = d_tokens;
  c.n_heads = 4;
  c.d_mlp = 2 * d_tokens;
  c.d_chars = 32;
  c.char_heads = 4;
  c.d_char_mlp = 64;
  c.max_tokens = 128;
  c.max_token_chars = 4;
  return c;
}

TEST(Train, CosineScheduleEndpoints) {
  TrainSchedule s;
  s.total_steps = 1000;
  s.eval_every = 100;
  EXPECT_DOUBLE_EQ(learning_rate(s, 0), 1e-5);
  EXPECT_NEAR(learning_rate(s, 500), 0.5e-5, 1e-18);
  EXPECT_LT(learning_rate(s, 999), 1e-9);
}

TEST(Train, CopyTaskIsLearnedByATinyModel) {
  const auto v = build_vocab(1, 32, 2);
  auto c = small_config(v, 64);
  TrainSchedule s;
  s.total_steps = 2000;
  s.batch_size = 8;
  s.base_lr = 1e-3;
  s.eval_every = 2000;
  s.eval_samples_per_task = 32;
  s.task_filter = {0};
  s.n_words = 8;
  s.seed = 7;
  std::vector<MetricsRecord> records;
  TrainSinks sinks;
  sinks.metric = [&](const MetricsRecord& r) { records.push_back(r); };
  const auto p = train(c, v, s, sinks);
  EvalOptions e;
  e.n_per_task = 64;
  e.seed = 99;
  e.tasks = {0};
  e.task_options = s.task_options();
  const auto result = evaluate(p, v, e);
  EXPECT_EQ(result.front().task, "W1");
  EXPECT_DOUBLE_EQ(result.front().accuracy, 1.0);
}

ModelConfig tiny(const Vocabulary& v) {
  auto c = testing::tiny_config(v);
  c.init_std = 0.02;
  c.max_tokens = 128;
  return c;
}

TrainSchedule short_schedule() {
  TrainSchedule s;
  s.total_steps = 6;
  s.batch_size = 4;
  s.base_lr = 1e-3;
  s.eval_every = 3;
  s.eval_samples_per_task = 2;
  s.n_words = 4;
  s.indexed_n_words = 4;
  s.seed = 11;
  return s;
}

TEST(Train, StrictModeIsBitReproducible) {
  const auto v = build_vocab(1, 32, 2);
  const auto c = tiny(v);
  const auto s = short_schedule();
  auto run = [&](std::vector<std::string>& lines, std::vector<Checkpoint>& ckpts) {
    TrainSinks sinks;
    sinks.metric = [&](const MetricsRecord& r) { lines.push_back(metrics_line(r)); };
    sinks.checkpoint = [&](const Checkpoint& k) { ckpts.push_back(k); };
    TrainOptions o;
    o.run_id = "strict";
    return train(c, v, s, sinks, o);
  };
  std::vector<std::string> a, b;
  std::vector<Checkpoint> ca, cb;
  const auto pa = run(a, ca);
  const auto pb = run(b, cb);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 3u * (kNumTasks + 2));
  EXPECT_EQ(pa.values, pb.values);
  ASSERT_EQ(ca.size(), 1u);
  EXPECT_EQ(ca[0].step, s.total_steps);
}

TEST(Train, CheckpointRoundTrip) {
  testing::TempDir dir("ckpt");
  const auto v = build_vocab(1, 32, 2);
  Checkpoint k;
  k.params = init_parameters<float>(tiny(v), 5);
  k.step = 123;
  k.seed = 0xfeedbeefcafeULL;
  AdamState st;
  st.m.assign(k.params.values.size(), 0.25f);
  st.v.assign(k.params.values.size(), -1.5e-7f);
  st.t = 123;
  k.adam = st;
  save_checkpoint(dir / "a.ckpt", k);
  const auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.params.values, k.params.values);
  EXPECT_EQ(back.params.config(), k.params.config());
  EXPECT_EQ(back.step, 123);
  EXPECT_EQ(back.seed, k.seed);
  ASSERT_TRUE(back.adam.has_value());
  EXPECT_EQ(back.adam->m, st.m);
  EXPECT_EQ(back.adam->v, st.v);
  EXPECT_EQ(back.adam->t, 123);

  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), Error);
}

TEST(Eval, ExactMatchIsStrict) {
  const std::vector<int> target{5, 6, 9};
  EXPECT_TRUE(exact_match({{5, 6}, true}, target, 9));
  EXPECT_FALSE(exact_match({{5, 6, 7}, true}, target, 9));
  EXPECT_FALSE(exact_match({{5}, true}, target, 9));
  EXPECT_FALSE(exact_match({{5, 6}, false}, target, 9));
}

// Answers every prompt by re-deriving the task instance from it.
Generator perfect_generator(const Vocabulary& v) {
  return [&v](std::span<const int> prompt, int) {
    const int id = v.task_of(prompt.front());
    const auto& d = task(id);
    std::vector<TaskParam> params;
    for (size_t i = 0; i < d.params.size(); ++i) {
      const char c = v.entry(prompt[1 + i]).surface[0];
      params.push_back({d.params[i], d.params[i] == ParamDomain::kLetter ? static_cast<int>(c) : c - '0'});
    }
    const size_t body = 2 + d.params.size();
    const std::vector<int> in(prompt.begin() + static_cast<std::ptrdiff_t>(body), prompt.end() - 1);
    std::vector<std::string> words;
    std::istringstream ss(decode(v, in));
    for (std::string w; ss >> w;) words.push_back(w);
    auto ex = render_example(v, id, params, words);
    ex.target_ids.pop_back();
    return GenerateResult{ex.target_ids, true};
  };
}

TEST(Eval, PerfectGeneratorScoresOne) {
  const auto v = build_vocab(4, 128, 3);
  EvalOptions e;
  e.n_per_task = 16;
  e.seed = 3;
  const auto records = evaluate(perfect_generator(v), v, e);
  ASSERT_EQ(records.size(), static_cast<size_t>(kNumTasks + 2));
  for (const auto& r : records) EXPECT_DOUBLE_EQ(r.accuracy, 1.0) << r.task;
  EXPECT_EQ(records[kNumTasks].task, "mean_word");
  EXPECT_EQ(records[kNumTasks + 1].task, "mean_char");
}

TEST(Eval, UntrainedModelIsNearZeroOnCharacterTasks) {
  const auto v = build_vocab(2, 8192, 4);
  auto c = tiny(v);
  TrainSchedule s;
  s.n_words = 4;
  s.indexed_n_words = 4;
  c.max_tokens = required_max_tokens(v, s);
  const auto p = init_parameters<float>(c, 1);
  EvalOptions e;
  e.n_per_task = 8;
  e.task_options = s.task_options();
  for (int id = kNumWordTasks; id < kNumTasks; ++id) e.tasks.push_back(id);
  const auto records = evaluate(p, v, e);
  EXPECT_LE(records.back().accuracy, 0.01);
  EXPECT_EQ(records.back().task, "mean_char");
}

TEST(Train, InitialLossIsNearLogVocab) {
  const auto v = build_vocab(3, 512, 3);
  const auto c = tiny(v);
  const auto p = init_parameters<float>(c, 2);
  TrainSchedule s;
  s.batch_size = 16;
  s.n_words = 4;
  std::vector<TrainSequence> batch;
  for (const auto& inst : make_batch(v, s, 0)) {
    TrainSequence seq{inst.prompt_ids, static_cast<int>(inst.prompt_ids.size())};
    seq.ids.insert(seq.ids.end(), inst.target_ids.begin(), inst.target_ids.end());
    batch.push_back(seq);
  }
  const auto loss = loss_and_grads<float>(p, v, batch, nullptr).loss;
  EXPECT_NEAR(loss, std::log(static_cast<double>(v.size())), 0.1 * std::log(static_cast<double>(v.size())));
}

TEST(Metrics, LineRoundTrip) {
  MetricsRecord r{"run-1", 500, "C4", 10, 0.3125, 256, 2.75};
  const auto line = metrics_line(r);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(parse_metrics_line(line), r);
  MetricsRecord mean{"run-1", 0, "mean_char", -1, 0.0, 3072, std::nullopt};
  EXPECT_EQ(parse_metrics_line(metrics_line(mean)), mean);
  EXPECT_THROW(parse_metrics_line("{\"step\": 1"), Error);
}

TEST(Train, ValidationRejectsMismatchedVocabulary) {
  const auto v = build_vocab(1, 32, 2);
  auto c = tiny(v);
  c.n_vocab += 1;
  EXPECT_THROW(validate_training(c, v, short_schedule()), Error);
  c = tiny(v);
  c.max_tokens = 8;
  EXPECT_THROW(validate_training(c, v, short_schedule()), Error);
  c = tiny(v);
  EXPECT_NO_THROW(validate_training(c, v, short_schedule()));
}

}  // namespace
}  // namespace charlab
