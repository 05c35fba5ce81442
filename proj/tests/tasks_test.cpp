#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "charlab/error.hpp"
#include "charlab/rng.hpp"
#include "charlab/tasks.hpp"
#include "charlab/train.hpp"
#include "oracles/reference.hpp"

namespace charlab {
namespace {

TaskParam letter(char c) { return {ParamDomain::kLetter, c}; }
TaskParam word_index(int i) { return {ParamDomain::kWordIndex, i}; }

TEST(Tasks, CatalogShape) {
  const auto& cat = task_catalog();
  ASSERT_EQ(cat.size(), 19u);
  int word = 0, chr = 0;
  for (const auto& d : cat) (d.level == TaskLevel::kWord ? word : chr)++;
  EXPECT_EQ(word, 7);
  EXPECT_EQ(chr, 12);
  EXPECT_EQ(task(*task_id_from_code("C6")).name, "Remove letter");
  EXPECT_EQ(task(*task_id_from_code("C7")).name, "Replace letters");
  EXPECT_EQ(task(*task_id_from_code("C8")).name, "Rewrite uppercase");
  std::set<IoClass> classes;
  for (const auto& d : cat) classes.insert(d.io);
  EXPECT_EQ(classes.size(), 4u);
}

TEST(Tasks, OracleExamples) {
  auto t = [](const char* code) { return task(*task_id_from_code(code)); };
  EXPECT_EQ(oracle(t("W2"), {}, "ab cd ef"), "ef cd ab");
  const std::vector<TaskParam> a{letter('a')};
  EXPECT_EQ(oracle(t("C6"), a, "aXba cdad"), "Xb cdd");
  EXPECT_EQ(oracle(t("C8"), {}, "abCd"), "ABCD");
  EXPECT_EQ(oracle(t("W1"), {}, "any text here"), "any text here");
  const std::vector<TaskParam> i3{word_index(3)};
  EXPECT_EQ(oracle(t("W4"), i3, "ab cd ef"), "ef");
  const std::vector<TaskParam> i4{word_index(4)};
  try {
    oracle(t("W4"), i4, "ab cd ef");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidParameter);
  }
}

TEST(Tasks, SampleSentence) {
  const auto v = build_vocab(1, 256, 4);
  Rng rng(3);
  const auto s = sample_sentence(v, 16, rng);
  ASSERT_EQ(s.size(), 16u);
  for (const auto& w : s) EXPECT_EQ(w.size(), 4u);
  EXPECT_TRUE(sample_sentence(v, 0, rng).empty());
}

TEST(Tasks, SampleSentenceIsUniform) {
  const auto v = build_vocab(1, 256, 4);
  Rng rng(8);
  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n / 10; ++i) {
    for (const auto& w : sample_sentence(v, 10, rng)) counts[w]++;
  }
  ASSERT_EQ(counts.size(), 256u);
  const double expected = n / 256.0;
  double chi2 = 0;
  for (const auto& [w, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99.9% quantile of chi-square with 255 degrees of freedom.
  EXPECT_LT(chi2, 330.52);
}

TEST(Tasks, CopyLayout) {
  const auto v = vocab_from_words(std::vector<std::string>{"ab", "cd"});
  const auto ex = render_example(v, 0, {}, {"ab", "cd"});
  EXPECT_EQ(render(v, ex.prompt_ids), "<T_W1> <SEP> ab cd <SEP>");
  EXPECT_EQ(render(v, ex.target_ids), "ab cd <EOS>");
}

TEST(Tasks, UppercaseFallsBackToLetters) {
  const auto v = vocab_from_words(std::vector<std::string>{"abcd"});
  const auto ex = render_example(v, *task_id_from_code("C8"), {}, {"abcd"});
  const std::vector<int> want{v.char_token('A'), v.char_token('B'), v.char_token('C'), v.char_token('D'), v.eos_id()};
  EXPECT_EQ(ex.target_ids, want);
}

TEST(Tasks, GeneratedInstancesAgreeWithReference) {
  const auto v = build_vocab(2, 256, 4);
  for (int i = 0; i < 10000; ++i) {
    Rng rng = Rng::stream(99, static_cast<uint64_t>(i));
    ASSERT_EQ(reference::check_instance(v, make_example(v, rng)), "");
  }
}

TEST(Tasks, MixedVocabularyInstancesAgreeWithReference) {
  const auto v = load_vocab(std::filesystem::path(CHARLAB_FIXTURE_DIR) / "mixed_vocab.json");
  for (int i = 0; i < 2000; ++i) {
    Rng rng = Rng::stream(5, static_cast<uint64_t>(i));
    ASSERT_EQ(reference::check_instance(v, make_example(v, rng)), "");
  }
}

TEST(Tasks, GenerationIsDeterministicPerStream) {
  const auto v = build_vocab(2, 64, 3);
  for (int i = 0; i < 50; ++i) {
    Rng a = Rng::stream(1, static_cast<uint64_t>(i)), b = Rng::stream(1, static_cast<uint64_t>(i));
    const auto x = make_example(v, a), y = make_example(v, b);
    EXPECT_EQ(x.prompt_ids, y.prompt_ids);
    EXPECT_EQ(x.target_ids, y.target_ids);
  }
}

TEST(Tasks, TaskFrequenciesAreUniform) {
  const auto v = build_vocab(1, 64, 3);
  TrainSchedule s;
  s.batch_size = 64;
  std::vector<int> counts(kNumTasks, 0);
  int n = 0;
  for (int step = 0; n < 100000; ++step) {
    for (const auto& ex : make_batch(v, s, step)) {
      counts[static_cast<size_t>(ex.task_id)]++;
      ++n;
    }
  }
  const double p = 1.0 / kNumTasks;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - n * p), 3 * sigma);
}

TEST(Tasks, FilterRestrictsTasks) {
  const auto v = build_vocab(1, 64, 3);
  const std::vector<int> filter{*task_id_from_code("C10")};
  Rng rng(4);
  for (int i = 0; i < 200; ++i) EXPECT_EQ(make_example(v, rng, filter).task_id, filter[0]);
}

TEST(Tasks, ExamplesFitTheContextBound) {
  const auto v = build_vocab(1, 64, 6);
  const int bound = max_example_tokens(6);
  for (int i = 0; i < 3000; ++i) {
    Rng rng = Rng::stream(2, static_cast<uint64_t>(i));
    const auto ex = make_example(v, rng);
    EXPECT_LE(static_cast<int>(ex.prompt_ids.size() + ex.target_ids.size()), bound);
  }
}

}  // namespace
}  // namespace charlab
