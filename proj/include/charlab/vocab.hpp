#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace charlab {

enum class TokenKind { kLetter, kDigit, kSpace, kWord, kTask, kSep, kEos };

const char* to_string(TokenKind kind);
TokenKind token_kind_from_string(std::string_view s);

struct TokenEntry {
  int id = 0;
  std::string surface;
  TokenKind kind = TokenKind::kLetter;
  std::vector<int> char_ids;

  bool operator==(const TokenEntry&) const = default;
};

struct TokenChars {
  std::vector<int> char_ids;
  std::vector<int> intra_pos;
};

// Character alphabet shared by the tokenizer and the character encoder.
// Ids 0..62 are the atomic characters (a-z, A-Z, 0-9, space); ids 63..83 are
// the reserved one-character spellings of the 21 special tokens.
namespace alphabet {

inline constexpr std::string_view kLetters =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ";
inline constexpr std::string_view kDigits = "0123456789";
inline constexpr std::string_view kAtomic =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ";
// 19 task tokens, then SEP, then EOS.
inline constexpr std::string_view kReserved = "!#%&'()*+,-./:;<=>?|$";

inline constexpr int kNumLetters = 52;
inline constexpr int kNumAtomic = 63;
inline constexpr int kNumReserved = 21;
inline constexpr int kSize = kNumAtomic + kNumReserved;

inline bool is_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
// Character id of c, or -1 when c is outside the alphabet.
int char_id(char c);
char char_of(int char_id);

}  // namespace alphabet

// Immutable token table: 63 atomic tokens, then word tokens, then the 19 task
// tokens, SEP and EOS (order of the trailing groups is free in loaded files).
class Vocabulary {
 public:
  static constexpr int kVersion = 1;
  static constexpr int kNumTasks = 19;
  static constexpr int kNumSpecial = 21;

  // Validates every invariant; throws Error(kInvariantViolation) otherwise.
  // k == nullopt marks a "mixed" vocabulary with variable word lengths.
  Vocabulary(uint64_t seed, std::optional<int> k, std::vector<TokenEntry> entries);

  uint64_t seed() const { return seed_; }
  std::optional<int> k() const { return k_; }
  int size() const { return static_cast<int>(entries_.size()); }
  const std::vector<TokenEntry>& entries() const { return entries_; }
  const TokenEntry& entry(int id) const;
  std::optional<int> find(std::string_view surface) const;

  const std::vector<int>& word_ids() const { return word_ids_; }
  int n_char_tokens() const { return alphabet::kNumAtomic; }
  int n_word_tokens() const { return static_cast<int>(word_ids_.size()); }
  int n_special_tokens() const { return kNumSpecial; }
  int max_surface_length() const { return max_surface_length_; }
  int min_word_length() const { return min_word_length_; }

  int task_token(int task_id) const { return task_ids_.at(static_cast<size_t>(task_id)); }
  // Task index of a task token, or -1.
  int task_of(int id) const;
  int sep_id() const { return sep_id_; }
  int eos_id() const { return eos_id_; }
  int space_id() const { return alphabet::kNumAtomic - 1; }
  // Token id of the single-character token spelled c (atomic or special).
  int char_token(char c) const;
  bool is_special(int id) const;

  bool operator==(const Vocabulary& other) const {
    return seed_ == other.seed_ && k_ == other.k_ && entries_ == other.entries_;
  }

 private:
  uint64_t seed_;
  std::optional<int> k_;
  std::vector<TokenEntry> entries_;
  std::unordered_map<std::string, int> by_surface_;
  std::vector<int> word_ids_;
  std::vector<int> task_ids_;
  std::vector<int> special_by_reserved_;
  int sep_id_ = -1;
  int eos_id_ = -1;
  int max_surface_length_ = 1;
  int min_word_length_ = 0;
};

Vocabulary build_vocab(uint64_t seed, int vocab_size, int k);

// Vocabulary over an external word list (letters only, length >= 2; repeated
// words are kept once). K is set when all words share one length.
Vocabulary vocab_from_words(std::span<const std::string> words);

// Whole-run tokenization with character fallback.
std::vector<int> encode(const Vocabulary& v, std::string_view text);
// Every character becomes its own single-character token.
std::vector<int> encode_characters(const Vocabulary& v, std::string_view text);
std::string decode(const Vocabulary& v, std::span<const int> ids);
// Display form: special tokens as <NAME>, separated from text by a space.
std::string render(const Vocabulary& v, std::span<const int> ids);
std::string special_name(const Vocabulary& v, int id);

TokenChars chars_of(const Vocabulary& v, int id);

std::string vocab_to_json(const Vocabulary& v);
Vocabulary vocab_from_json(std::string_view text);
void save_vocab(const Vocabulary& v, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace charlab
