#include <gtest/gtest.h>

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "charlab/error.hpp"
#include "charlab/rng.hpp"
#include "charlab/vocab.hpp"
#include "oracles/reference.hpp"
#include "test_util.hpp"

namespace charlab {
namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

TEST(SplitMix64, KnownOutputsForSeedZero) {
  SplitMix64 sm(0);
  EXPECT_EQ(sm.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(sm.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(sm.next(), 0x06c45d188009454fULL);
}

TEST(Rng, UniformStaysInRangeAndStreamsAreOrderFree) {
  Rng rng(9);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.uniform(52), 52u);
  auto a = Rng::stream(4, 1, 2), b = Rng::stream(4, 1, 2);
  Rng::stream(4, 7, 7).next();
  for (int i = 0; i < 8; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(Rng::stream(4, 1, 2).next(), Rng::stream(4, 2, 1).next());
}

TEST(Vocab, BuildCountsAndLengths) {
  const auto v = build_vocab(1, 256, 4);
  EXPECT_EQ(v.n_word_tokens(), 256);
  EXPECT_EQ(v.size(), 63 + 256 + 21);
  EXPECT_EQ(v.k(), 4);
  for (int id : v.word_ids()) {
    const auto& s = v.entry(id).surface;
    EXPECT_EQ(s.size(), 4u);
    for (char c : s) EXPECT_TRUE(alphabet::is_letter(c));
  }
}

TEST(Vocab, SingleWordVocabularyHas85Entries) {
  const auto v = build_vocab(1, 1, 2);
  EXPECT_EQ(v.n_word_tokens(), 1);
  EXPECT_EQ(v.size(), 85);
}

TEST(Vocab, AtomicOrderAndSpecialSpellings) {
  const auto v = build_vocab(2, 10, 3);
  const std::string atomic = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ";
  for (int i = 0; i < 63; ++i) EXPECT_EQ(v.entry(i).surface, std::string(1, atomic[static_cast<size_t>(i)]));
  std::set<char> reserved;
  for (const auto& e : v.entries()) {
    if (e.kind == TokenKind::kTask || e.kind == TokenKind::kSep || e.kind == TokenKind::kEos) {
      ASSERT_EQ(e.surface.size(), 1u);
      EXPECT_EQ(atomic.find(e.surface[0]), std::string::npos);
      EXPECT_TRUE(reserved.insert(e.surface[0]).second);
    }
  }
  EXPECT_EQ(reserved.size(), 21u);
}

TEST(Vocab, BuildErrors) {
  EXPECT_EQ(kind_of([] { build_vocab(0, 52 * 52 + 1, 2); }), ErrorKind::kInfeasibleUniqueness);
  EXPECT_EQ(kind_of([] { build_vocab(0, 10, 1); }), ErrorKind::kInvalidK);
  EXPECT_EQ(kind_of([] { build_vocab(0, 0, 3); }), ErrorKind::kInvalidArgument);
  // Exactly 52^2 words is feasible.
  EXPECT_EQ(build_vocab(0, 52 * 52, 2).n_word_tokens(), 52 * 52);
}

TEST(Vocab, BuildIsDeterministic) {
  EXPECT_EQ(vocab_to_json(build_vocab(5, 300, 4)), vocab_to_json(build_vocab(5, 300, 4)));
  EXPECT_NE(vocab_to_json(build_vocab(5, 300, 4)), vocab_to_json(build_vocab(6, 300, 4)));
}

// A vocabulary with known words, assembled by hand.
Vocabulary handmade(const std::vector<std::string>& words) { return vocab_from_words(words); }

TEST(Vocab, EncodeExamples) {
  const auto v = handmade({"abcd", "efgh"});
  const int abcd = *v.find("abcd");
  EXPECT_EQ(encode(v, "abcd"), std::vector<int>{abcd});
  auto id = [&](char c) { return v.char_token(c); };
  EXPECT_EQ(encode(v, "ABCD"), (std::vector<int>{id('A'), id('B'), id('C'), id('D')}));
  EXPECT_EQ(encode(v, "abcd xyzq"), (std::vector<int>{abcd, id(' '), id('x'), id('y'), id('z'), id('q')}));
  // No partial subword: "abcde" contains "abcd" but is not a whole-run match.
  EXPECT_EQ(encode(v, "abcde").size(), 5u);
  EXPECT_EQ(kind_of([&] { encode(v, "ab_cd"); }), ErrorKind::kUnknownCharacter);
}

TEST(Vocab, DecodeExamples) {
  const auto v = handmade({"abcd"});
  EXPECT_EQ(decode(v, {}), "");
  const std::vector<int> one{*v.find("abcd")};
  EXPECT_EQ(decode(v, one), "abcd");
  const std::vector<int> bad{v.size()};
  EXPECT_EQ(kind_of([&] { decode(v, bad); }), ErrorKind::kOutOfRange);
}

TEST(Vocab, CharsOf) {
  const auto v = handmade({"abcd"});
  const auto tc = chars_of(v, *v.find("abcd"));
  EXPECT_EQ(tc.char_ids, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(tc.intra_pos, (std::vector<int>{0, 1, 2, 3}));
  const auto space = chars_of(v, v.space_id());
  EXPECT_EQ(space.char_ids, std::vector<int>{62});
  EXPECT_EQ(space.intra_pos, std::vector<int>{0});
  for (int t = 0; t < Vocabulary::kNumTasks; ++t) {
    const auto tt = chars_of(v, v.task_token(t));
    ASSERT_EQ(tt.char_ids.size(), 1u);
    EXPECT_GE(tt.char_ids[0], alphabet::kNumAtomic);
    EXPECT_EQ(tt.intra_pos, std::vector<int>{0});
  }
}

TEST(Vocab, EveryWordEncodesToItself) {
  const auto v = build_vocab(3, 500, 3);
  for (int id : v.word_ids()) EXPECT_EQ(encode(v, v.entry(id).surface), std::vector<int>{id});
}

TEST(Vocab, EncodeDecodeRoundTripAndFallbackProperty) {
  const auto v = build_vocab(4, 256, 3);
  Rng rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto text = reference::random_text(v, rng);
    ASSERT_EQ(reference::check_roundtrip(v, text), "");
  }
}

TEST(Vocab, JsonRoundTripIsExact) {
  testing::TempDir dir("vocab");
  const auto v = build_vocab(1, 256, 4);
  save_vocab(v, dir / "v.json");
  const auto back = load_vocab(dir / "v.json");
  EXPECT_EQ(back, v);
  save_vocab(back, dir / "w.json");
  EXPECT_EQ(read_file(dir / "v.json"), read_file(dir / "w.json"));
}

TEST(Vocab, LoadErrors) {
  const auto good = vocab_to_json(build_vocab(1, 4, 2));
  EXPECT_EQ(kind_of([] { vocab_from_json("{not json"); }), ErrorKind::kMalformedFile);
  auto doc = nlohmann::json::parse(good);
  doc["version"] = 2;
  EXPECT_EQ(kind_of([&] { vocab_from_json(doc.dump()); }), ErrorKind::kVersionMismatch);
  doc = nlohmann::json::parse(good);
  doc["entries"][63]["surface"] = "abc";  // wrong length for K = 2
  EXPECT_EQ(kind_of([&] { vocab_from_json(doc.dump()); }), ErrorKind::kInvariantViolation);
  doc = nlohmann::json::parse(good);
  doc["entries"][64]["id"] = 70;
  EXPECT_EQ(kind_of([&] { vocab_from_json(doc.dump()); }), ErrorKind::kInvariantViolation);
}

TEST(Vocab, DuplicateSurfaceFixtureIsRejected) {
  EXPECT_EQ(kind_of([] { load_vocab(std::filesystem::path(CHARLAB_FIXTURE_DIR) / "duplicate_surface.json"); }),
            ErrorKind::kInvariantViolation);
}

TEST(Vocab, MixedLengthFixtureLoads) {
  const auto v = load_vocab(std::filesystem::path(CHARLAB_FIXTURE_DIR) / "mixed_vocab.json");
  EXPECT_FALSE(v.k().has_value());
  std::set<size_t> lengths;
  for (const auto& e : v.entries()) lengths.insert(e.surface.size());
  EXPECT_EQ(*lengths.begin(), 1u);
  EXPECT_EQ(*lengths.rbegin(), 12u);
  EXPECT_EQ(lengths.size(), 12u);
  EXPECT_EQ(encode(v, "Xylophonists"), std::vector<int>{*v.find("Xylophonists")});
  EXPECT_NE(vocab_to_json(v).find("\"K\": \"mixed\""), std::string::npos);
}

TEST(Vocab, FromWords) {
  const std::vector<std::string> words{"hello", "world", "hello"};
  const auto v = vocab_from_words(words);
  EXPECT_EQ(v.n_word_tokens(), 2);
  EXPECT_EQ(v.k(), 5);
  EXPECT_EQ(kind_of([] { vocab_from_words(std::vector<std::string>{"a1"}); }), ErrorKind::kInvariantViolation);
  EXPECT_EQ(kind_of([] { vocab_from_words(std::vector<std::string>{}); }), ErrorKind::kNoWordTokens);
}

}  // namespace
}  // namespace charlab
