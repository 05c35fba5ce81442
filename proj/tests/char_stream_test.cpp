#include <gtest/gtest.h>

#include "charlab/char_stream.hpp"
#include "charlab/rng.hpp"
#include "charlab/vocab.hpp"
#include "oracles/reference.hpp"

namespace charlab {
namespace {

TEST(CharStream, Examples) {
  const auto v = vocab_from_words(std::vector<std::string>{"abcd"});
  const int abcd = *v.find("abcd");
  const std::vector<int> one{abcd};
  auto cs = build_char_stream(v, one);
  EXPECT_EQ(cs.owner, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(cs.intra_pos, (std::vector<int>{0, 1, 2, 3}));
  const std::vector<int> two{v.char_token('x'), abcd};
  cs = build_char_stream(v, two);
  EXPECT_EQ(cs.owner, (std::vector<int>{0, 1, 1, 1, 1}));
  EXPECT_EQ(cs.intra_pos, (std::vector<int>{0, 0, 1, 2, 3}));
  EXPECT_EQ(cs.spans, (std::vector<std::pair<int, int>>{{0, 1}, {1, 5}}));
  EXPECT_EQ(build_char_stream(v, {}).size(), 0);
}

TEST(CharStream, MaskExamples) {
  const auto v = vocab_from_words(std::vector<std::string>{"ab"});
  const std::vector<int> ids{v.char_token('x'), *v.find("ab")};
  const auto cs = build_char_stream(v, ids);
  const auto self = self_attn_mask(cs);
  EXPECT_TRUE(self(0, 0));
  EXPECT_FALSE(self(0, 1));
  EXPECT_FALSE(self(0, 2));
  for (int q = 1; q < 3; ++q) {
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(self(q, k));
  }
  const auto cross = cross_attn_mask(2, cs);
  EXPECT_TRUE(cross(0, 0));
  EXPECT_FALSE(cross(0, 1));
  EXPECT_FALSE(cross(0, 2));
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(cross(1, k));

  const std::vector<int> single{*v.find("ab")};
  const auto m = self_attn_mask(build_char_stream(v, single));
  EXPECT_EQ(m.rows(), 2);
  EXPECT_TRUE(m(0, 1));
}

TEST(CharStream, CrossMaskRejectsTokenCountMismatch) {
  const auto v = build_vocab(1, 4, 2);
  const std::vector<int> ids{0, 1};
  EXPECT_ANY_THROW(cross_attn_mask(3, build_char_stream(v, ids)));
}

TEST(CharStream, MasksMatchBruteForce) {
  const auto v = load_vocab(std::filesystem::path(CHARLAB_FIXTURE_DIR) / "mixed_vocab.json");
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    ASSERT_EQ(reference::check_masks(v, reference::random_mask_sequence(v, rng)), "") << "trial " << trial;
  }
}

TEST(CharStream, CausalMask) {
  const auto m = causal_mask(4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_EQ(m(i, j), j <= i);
  }
}

}  // namespace
}  // namespace charlab
