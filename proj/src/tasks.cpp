#include "charlab/tasks.hpp"

#include <algorithm>
#include <cctype>

#include "charlab/error.hpp"

namespace charlab {

namespace {

using enum ParamDomain;

std::vector<TaskDescriptor> make_catalog() {
  const auto W = TaskLevel::kWord;
  const auto C = TaskLevel::kCharacter;
  const auto ww = IoClass::kWordsToWords;
  std::vector<TaskDescriptor> tasks = {
      {0, "W1", "Copy", W, ww, {}},
      {1, "W2", "Reverse words", W, ww, {}},
      {2, "W3", "Duplicate each word", W, ww, {}},
      {3, "W4", "Select word", W, ww, {kWordIndex}},
      {4, "W5", "Remove word", W, ww, {kWordIndex}},
      {5, "W6", "Swap words", W, ww, {kWordIndex, kWordIndex}},
      {6, "W7", "Rotate words left", W, ww, {}},
      {7, "C1", "Spell words", C, IoClass::kWordsToChars, {}},
      {8, "C2", "First char of each word", C, IoClass::kWordsToChars, {}},
      {9, "C3", "Last char of each word", C, IoClass::kWordsToChars, {}},
      {10, "C4", "Reverse spell words", C, IoClass::kWordsToChars, {}},
      {11, "C5", "Merge chars", C, IoClass::kCharsToWords, {}},
      {12, "C6", "Remove letter", C, IoClass::kMixed, {kLetter}},
      {13, "C7", "Replace letters", C, IoClass::kMixed, {kLetter, kLetter}},
      {14, "C8", "Rewrite uppercase", C, IoClass::kMixed, {}},
      {15, "C9", "Rewrite lowercase", C, IoClass::kMixed, {}},
      {16, "C10", "Insert letter", C, IoClass::kMixed, {kLetter, kCharIndex}},
      {17, "C11", "Swap first and last char", C, IoClass::kMixed, {}},
      {18, "C12", "Words containing letter", C, IoClass::kMixed, {kLetter}},
  };
  return tasks;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  if (s.empty()) return words;
  size_t start = 0;
  for (;;) {
    const size_t pos = s.find(' ', start);
    words.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

[[noreturn]] void bad_param(const std::string& what) { throw Error(ErrorKind::kInvalidParameter, what); }

char letter_param(const TaskParam& p) {
  const char c = static_cast<char>(p.value);
  if (p.domain != kLetter || !alphabet::is_letter(c)) bad_param("expected a letter parameter");
  return c;
}

size_t word_index_param(const TaskParam& p, size_t n_words) {
  if (p.domain != kWordIndex || p.value < 1 || p.value > 9) bad_param("expected a word index in 1..9");
  if (static_cast<size_t>(p.value) > n_words) {
    bad_param("word index " + std::to_string(p.value) + " beyond " + std::to_string(n_words) + " words");
  }
  return static_cast<size_t>(p.value - 1);
}

template <typename F>
std::string map_words(const std::vector<std::string>& words, F&& f) {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(f(w));
  return join_words(out);
}

int draw_param(const TaskDescriptor& d, ParamDomain domain, const Vocabulary& v, const TaskOptions& options,
               Rng& rng) {
  switch (domain) {
    case kLetter:
      return alphabet::kLetters[rng.uniform(alphabet::kNumLetters)];
    case kWordIndex: {
      const int n = std::min(9, d.indexed() ? options.indexed_n_words : options.n_words);
      return 1 + static_cast<int>(rng.uniform(static_cast<uint64_t>(std::max(1, n))));
    }
    case kCharIndex: {
      const int n = std::min(9, v.min_word_length() + 1);
      return 1 + static_cast<int>(rng.uniform(static_cast<uint64_t>(std::max(1, n))));
    }
  }
  return 0;
}

}  // namespace

bool TaskDescriptor::indexed() const {
  return std::find(params.begin(), params.end(), kWordIndex) != params.end();
}

std::string TaskInstance::input_text() const { return join_words(sentence); }

const std::vector<TaskDescriptor>& task_catalog() {
  static const std::vector<TaskDescriptor> catalog = make_catalog();
  return catalog;
}

const TaskDescriptor& task(int task_id) {
  if (task_id < 0 || task_id >= kNumTasks) throw Error(ErrorKind::kOutOfRange, "task id " + std::to_string(task_id));
  return task_catalog()[static_cast<size_t>(task_id)];
}

std::optional<int> task_id_from_code(std::string_view code) {
  for (const auto& d : task_catalog()) {
    if (d.code == code) return d.task_id;
  }
  return std::nullopt;
}

std::vector<std::string> sample_sentence(const Vocabulary& v, int n_words, Rng& rng) {
  const auto& words = v.word_ids();
  if (words.empty()) throw Error(ErrorKind::kNoWordTokens, "vocabulary has no word tokens");
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(std::max(0, n_words)));
  for (int i = 0; i < n_words; ++i) {
    out.push_back(v.entry(words[rng.uniform(words.size())]).surface);
  }
  return out;
}

std::string oracle(const TaskDescriptor& d, std::span<const TaskParam> params, std::string_view sentence) {
  if (params.size() != d.params.size()) bad_param(d.code + " takes " + std::to_string(d.params.size()) + " parameters");
  auto words = split_words(sentence);
  switch (d.task_id) {
    case 0:  // Copy
      return std::string(sentence);
    case 1:
      std::reverse(words.begin(), words.end());
      return join_words(words);
    case 2: {
      std::vector<std::string> out;
      for (const auto& w : words) {
        out.push_back(w);
        out.push_back(w);
      }
      return join_words(out);
    }
    case 3:
      return words[word_index_param(params[0], words.size())];
    case 4:
      words.erase(words.begin() + static_cast<std::ptrdiff_t>(word_index_param(params[0], words.size())));
      return join_words(words);
    case 5:
      std::swap(words[word_index_param(params[0], words.size())], words[word_index_param(params[1], words.size())]);
      return join_words(words);
    case 6:
      if (!words.empty()) std::rotate(words.begin(), words.begin() + 1, words.end());
      return join_words(words);
    case 7:   // Spell words: same text, rendered as characters
    case 11:  // Merge chars: same text, rendered as words
      return std::string(sentence);
    case 8:
      return map_words(words, [](const std::string& w) { return w.substr(0, 1); });
    case 9:
      return map_words(words, [](const std::string& w) { return w.empty() ? w : w.substr(w.size() - 1); });
    case 10:
      return map_words(words, [](std::string w) {
        std::reverse(w.begin(), w.end());
        return w;
      });
    case 12: {
      const char x = letter_param(params[0]);
      std::vector<std::string> out;
      for (auto w : words) {
        std::erase(w, x);
        // A word made only of x disappears along with its separator.
        if (!w.empty()) out.push_back(std::move(w));
      }
      return join_words(out);
    }
    case 13: {
      const char x = letter_param(params[0]);
      const char y = letter_param(params[1]);
      return map_words(words, [&](std::string w) {
        std::replace(w.begin(), w.end(), x, y);
        return w;
      });
    }
    case 14:
      return map_words(words, [](std::string w) {
        for (auto& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        return w;
      });
    case 15:
      return map_words(words, [](std::string w) {
        for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return w;
      });
    case 16: {
      const char x = letter_param(params[0]);
      const auto& p = params[1];
      if (p.domain != kCharIndex || p.value < 1 || p.value > 9) bad_param("expected a character index in 1..9");
      const auto at = static_cast<size_t>(p.value - 1);
      return map_words(words, [&](std::string w) {
        if (at > w.size()) bad_param("insert position " + std::to_string(p.value) + " beyond word '" + w + "'");
        w.insert(w.begin() + static_cast<std::ptrdiff_t>(at), x);
        return w;
      });
    }
    case 17:
      return map_words(words, [](std::string w) {
        if (w.size() > 1) std::swap(w.front(), w.back());
        return w;
      });
    case 18: {
      const char x = letter_param(params[0]);
      std::vector<std::string> out;
      for (const auto& w : words) {
        if (w.find(x) != std::string::npos) out.push_back(w);
      }
      return join_words(out);
    }
    default:
      throw Error(ErrorKind::kOutOfRange, "task id " + std::to_string(d.task_id));
  }
}

int draw_task(Rng& rng, std::span<const int> task_filter) {
  if (task_filter.empty()) return static_cast<int>(rng.uniform(kNumTasks));
  return task_filter[rng.uniform(task_filter.size())];
}

TaskInstance render_example(const Vocabulary& v, int task_id, std::vector<TaskParam> params,
                            std::vector<std::string> sentence) {
  const auto& d = task(task_id);
  TaskInstance inst;
  inst.task_id = task_id;
  inst.params = std::move(params);
  inst.sentence = std::move(sentence);
  const std::string input = inst.input_text();
  const std::string output = oracle(d, inst.params, input);

  auto& prompt = inst.prompt_ids;
  prompt.push_back(v.task_token(task_id));
  for (const auto& p : inst.params) {
    const char c = p.domain == kLetter ? static_cast<char>(p.value) : static_cast<char>('0' + p.value);
    prompt.push_back(v.char_token(c));
  }
  prompt.push_back(v.sep_id());
  const auto in_ids = d.io == IoClass::kCharsToWords ? encode_characters(v, input) : encode(v, input);
  prompt.insert(prompt.end(), in_ids.begin(), in_ids.end());
  prompt.push_back(v.sep_id());

  inst.target_ids = d.io == IoClass::kWordsToChars ? encode_characters(v, output) : encode(v, output);
  inst.target_ids.push_back(v.eos_id());
  return inst;
}

TaskInstance make_example(const Vocabulary& v, Rng& rng, std::span<const int> task_filter,
                          const TaskOptions& options) {
  const auto& d = task(draw_task(rng, task_filter));
  auto sentence = sample_sentence(v, d.indexed() ? options.indexed_n_words : options.n_words, rng);
  for (int attempt = 0; attempt < options.max_param_retries; ++attempt) {
    std::vector<TaskParam> params;
    for (auto domain : d.params) params.push_back({domain, draw_param(d, domain, v, options, rng)});
    try {
      return render_example(v, d.task_id, std::move(params), sentence);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kInvalidParameter) throw;
    }
  }
  throw Error(ErrorKind::kInvalidParameter,
              "no valid parameters for " + d.code + " after " + std::to_string(options.max_param_retries) + " tries");
}

int max_example_tokens(int max_word_len, const TaskOptions& options) {
  int worst = 0;
  for (const auto& d : task_catalog()) {
    const int n = d.indexed() ? options.indexed_n_words : options.n_words;
    const int spaces = std::max(0, n - 1);
    const int spelled = n * max_word_len + spaces;
    const int input = d.io == IoClass::kCharsToWords ? spelled : n + spaces;
    int output = n + spaces;
    if (d.task_id == 2) output = 2 * n + 2 * n - 1;
    if (d.io == IoClass::kWordsToChars || d.io == IoClass::kMixed) output = spelled;
    if (d.task_id == 16) output = n * (max_word_len + 1) + spaces;
    const int total = 1 + static_cast<int>(d.params.size()) + 1 + input + 1 + output + 1;
    worst = std::max(worst, total);
  }
  return worst;
}

}  // namespace charlab
