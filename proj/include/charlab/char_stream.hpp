#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "charlab/vocab.hpp"

namespace charlab {

// Flattened characters of a token sequence. owner[i] is the index of the
// token that character i spells; spans[t] is [start, end) of token t.
struct CharStream {
  std::vector<int> char_ids;
  std::vector<int> intra_pos;
  std::vector<int> owner;
  std::vector<std::pair<int, int>> spans;

  int size() const { return static_cast<int>(char_ids.size()); }
  int n_tokens() const { return static_cast<int>(spans.size()); }
  void append(const TokenChars& chars);
};

CharStream build_char_stream(const Vocabulary& v, std::span<const int> token_ids);

class Mask {
 public:
  Mask() = default;
  Mask(int rows, int cols) : rows_(rows), cols_(cols), bits_(static_cast<size_t>(rows) * cols, 0) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool operator()(int r, int c) const { return bits_[static_cast<size_t>(r) * cols_ + c] != 0; }
  void set(int r, int c, bool allow) { bits_[static_cast<size_t>(r) * cols_ + c] = allow ? 1 : 0; }
  bool operator==(const Mask&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<uint8_t> bits_;
};

// Character q may attend to character k iff owner(k) <= owner(q).
Mask self_attn_mask(const CharStream& cs);
// Token i may attend to character j iff owner(j) <= i.
Mask cross_attn_mask(int n_tokens, const CharStream& cs);
Mask causal_mask(int n);

}  // namespace charlab
