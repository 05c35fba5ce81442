#include "charlab/char_stream.hpp"

#include <string>

#include "charlab/error.hpp"

namespace charlab {

void CharStream::append(const TokenChars& chars) {
  const int start = size();
  const int token = n_tokens();
  char_ids.insert(char_ids.end(), chars.char_ids.begin(), chars.char_ids.end());
  intra_pos.insert(intra_pos.end(), chars.intra_pos.begin(), chars.intra_pos.end());
  owner.insert(owner.end(), chars.char_ids.size(), token);
  spans.emplace_back(start, size());
}

CharStream build_char_stream(const Vocabulary& v, std::span<const int> token_ids) {
  CharStream cs;
  for (int id : token_ids) cs.append(chars_of(v, id));
  return cs;
}

Mask self_attn_mask(const CharStream& cs) {
  const int m = cs.size();
  Mask mask(m, m);
  for (int q = 0; q < m; ++q) {
    // Keys are sorted by owner, so the allowed set is a prefix ending with q's block.
    const int end = cs.spans[static_cast<size_t>(cs.owner[static_cast<size_t>(q)])].second;
    for (int k = 0; k < end; ++k) mask.set(q, k, true);
  }
  return mask;
}

Mask cross_attn_mask(int n_tokens, const CharStream& cs) {
  if (n_tokens != cs.n_tokens()) {
    throw Error(ErrorKind::kInvalidArgument, "cross mask for " + std::to_string(n_tokens) + " tokens but stream covers " +
                                                 std::to_string(cs.n_tokens()));
  }
  Mask mask(n_tokens, cs.size());
  for (int i = 0; i < n_tokens; ++i) {
    const int end = cs.spans[static_cast<size_t>(i)].second;
    for (int j = 0; j < end; ++j) mask.set(i, j, true);
  }
  return mask;
}

Mask causal_mask(int n) {
  Mask mask(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) mask.set(i, j, true);
  }
  return mask;
}

}  // namespace charlab
