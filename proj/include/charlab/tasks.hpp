#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "charlab/rng.hpp"
#include "charlab/vocab.hpp"

namespace charlab {

enum class TaskLevel { kWord, kCharacter };

// How input and output are tokenized.
enum class IoClass {
  kWordsToWords,
  kCharsToWords,  // dirty input: the sentence arrives as characters
  kWordsToChars,  // clean input: output is rendered character by character
  kMixed,         // output goes through normal encoding and falls back where words break
};

enum class ParamDomain {
  kLetter,     // any of the 52 letters
  kWordIndex,  // 1-based word position
  kCharIndex,  // 1-based character position
};

struct TaskDescriptor {
  int task_id = 0;
  std::string code;  // "W1".."W7", "C1".."C12"
  std::string name;
  TaskLevel level = TaskLevel::kWord;
  IoClass io = IoClass::kWordsToWords;
  std::vector<ParamDomain> params;

  bool indexed() const;
};

// Letters are stored as their character code, indices as 1-based integers.
struct TaskParam {
  ParamDomain domain = ParamDomain::kLetter;
  int value = 0;

  bool operator==(const TaskParam&) const = default;
};

struct TaskOptions {
  int n_words = 16;
  int indexed_n_words = 8;
  int max_param_retries = 100;
};

struct TaskInstance {
  int task_id = 0;
  std::vector<TaskParam> params;
  std::vector<std::string> sentence;
  std::vector<int> prompt_ids;
  std::vector<int> target_ids;

  std::string input_text() const;
};

inline constexpr int kNumTasks = 19;
inline constexpr int kNumWordTasks = 7;

const std::vector<TaskDescriptor>& task_catalog();
const TaskDescriptor& task(int task_id);
std::optional<int> task_id_from_code(std::string_view code);

std::vector<std::string> sample_sentence(const Vocabulary& v, int n_words, Rng& rng);

// Pure string transformation; words are separated by single spaces.
std::string oracle(const TaskDescriptor& d, std::span<const TaskParam> params, std::string_view sentence);

int draw_task(Rng& rng, std::span<const int> task_filter);

TaskInstance make_example(const Vocabulary& v, Rng& rng, std::span<const int> task_filter = {},
                          const TaskOptions& options = {});

// Rebuilds prompt/target ids for fixed task, params and sentence.
TaskInstance render_example(const Vocabulary& v, int task_id, std::vector<TaskParam> params,
                            std::vector<std::string> sentence);

// Upper bound on prompt + target length in tokens for a vocabulary whose
// longest word has max_word_len characters.
int max_example_tokens(int max_word_len, const TaskOptions& options = {});

}  // namespace charlab
