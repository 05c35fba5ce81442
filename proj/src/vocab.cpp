#include "charlab/vocab.hpp"

#include <fstream>
#include <array>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "charlab/error.hpp"
#include "charlab/rng.hpp"

namespace charlab {

namespace {

constexpr std::array<std::string_view, Vocabulary::kNumTasks> kTaskCodes = {
    "W1", "W2", "W3", "W4", "W5", "W6", "W7", "C1", "C2", "C3",
    "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11", "C12"};

[[noreturn]] void violation(const std::string& what) {
  throw Error(ErrorKind::kInvariantViolation, what);
}

bool all_letters(std::string_view s) {
  for (char c : s) {
    if (!alphabet::is_letter(c)) return false;
  }
  return true;
}

TokenKind atomic_kind(int index) {
  if (index < alphabet::kNumLetters) return TokenKind::kLetter;
  if (index < alphabet::kNumAtomic - 1) return TokenKind::kDigit;
  return TokenKind::kSpace;
}

std::vector<int> spell(std::string_view surface) {
  std::vector<int> ids;
  ids.reserve(surface.size());
  for (char c : surface) ids.push_back(alphabet::char_id(c));
  return ids;
}

}  // namespace

namespace alphabet {

int char_id(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= 'A' && c <= 'Z') return 26 + (c - 'A');
  if (c >= '0' && c <= '9') return 52 + (c - '0');
  if (c == ' ') return 62;
  const auto pos = kReserved.find(c);
  if (pos != std::string_view::npos) return kNumAtomic + static_cast<int>(pos);
  return -1;
}

char char_of(int id) {
  if (id >= 0 && id < kNumAtomic) return kAtomic[static_cast<size_t>(id)];
  if (id >= kNumAtomic && id < kSize) return kReserved[static_cast<size_t>(id - kNumAtomic)];
  throw Error(ErrorKind::kOutOfRange, "character id " + std::to_string(id));
}

}  // namespace alphabet

const char* to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::kLetter: return "letter";
    case TokenKind::kDigit: return "digit";
    case TokenKind::kSpace: return "space";
    case TokenKind::kWord: return "word";
    case TokenKind::kTask: return "task";
    case TokenKind::kSep: return "sep";
    case TokenKind::kEos: return "eos";
  }
  return "?";
}

TokenKind token_kind_from_string(std::string_view s) {
  for (auto kind : {TokenKind::kLetter, TokenKind::kDigit, TokenKind::kSpace, TokenKind::kWord,
                    TokenKind::kTask, TokenKind::kSep, TokenKind::kEos}) {
    if (s == to_string(kind)) return kind;
  }
  throw Error(ErrorKind::kMalformedFile, "unknown token kind '" + std::string(s) + "'");
}

Vocabulary::Vocabulary(uint64_t seed, std::optional<int> k, std::vector<TokenEntry> entries)
    : seed_(seed), k_(k), entries_(std::move(entries)) {
  if (k_ && *k_ < 2) violation("K must be at least 2");
  if (static_cast<int>(entries_.size()) < alphabet::kNumAtomic) {
    violation("vocabulary must start with the 63 atomic tokens");
  }
  special_by_reserved_.assign(alphabet::kNumReserved, -1);
  for (size_t i = 0; i < entries_.size(); ++i) {
    auto& e = entries_[i];
    const int id = static_cast<int>(i);
    if (e.id != id) violation("token ids must be dense and in entry order (at " + std::to_string(i) + ")");
    if (id < alphabet::kNumAtomic) {
      if (e.surface != std::string(1, alphabet::kAtomic[i]) || e.kind != atomic_kind(id)) {
        violation("atomic token " + std::to_string(id) + " out of order");
      }
    } else {
      switch (e.kind) {
        case TokenKind::kWord:
          if (!all_letters(e.surface)) violation("word '" + e.surface + "' has non-letter characters");
          if (k_ ? static_cast<int>(e.surface.size()) != *k_ : e.surface.size() < 2) {
            violation("word '" + e.surface + "' has the wrong length");
          }
          word_ids_.push_back(id);
          break;
        case TokenKind::kTask:
        case TokenKind::kSep:
        case TokenKind::kEos: {
          const int cid = e.surface.size() == 1 ? alphabet::char_id(e.surface[0]) : -1;
          if (cid < alphabet::kNumAtomic) violation("special token needs a reserved one-character spelling");
          special_by_reserved_[static_cast<size_t>(cid - alphabet::kNumAtomic)] = id;
          if (e.kind == TokenKind::kTask) task_ids_.push_back(id);
          if (e.kind == TokenKind::kSep) {
            if (sep_id_ >= 0) violation("duplicate SEP token");
            sep_id_ = id;
          }
          if (e.kind == TokenKind::kEos) {
            if (eos_id_ >= 0) violation("duplicate EOS token");
            eos_id_ = id;
          }
          break;
        }
        default:
          violation("atomic kind after the atomic block at id " + std::to_string(id));
      }
    }
    e.char_ids = spell(e.surface);
    if (!by_surface_.emplace(e.surface, id).second) violation("duplicate surface '" + e.surface + "'");
    max_surface_length_ = std::max(max_surface_length_, static_cast<int>(e.surface.size()));
  }
  if (static_cast<int>(task_ids_.size()) != kNumTasks) violation("expected 19 task tokens");
  if (sep_id_ < 0 || eos_id_ < 0) violation("missing SEP or EOS token");
  min_word_length_ = max_surface_length_;
  for (int id : word_ids_) {
    min_word_length_ = std::min(min_word_length_, static_cast<int>(entries_[static_cast<size_t>(id)].surface.size()));
  }
  if (word_ids_.empty()) min_word_length_ = 0;
}

const TokenEntry& Vocabulary::entry(int id) const {
  if (id < 0 || id >= size()) throw Error(ErrorKind::kOutOfRange, "token id " + std::to_string(id));
  return entries_[static_cast<size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view surface) const {
  auto it = by_surface_.find(std::string(surface));
  if (it == by_surface_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::task_of(int id) const {
  for (size_t t = 0; t < task_ids_.size(); ++t) {
    if (task_ids_[t] == id) return static_cast<int>(t);
  }
  return -1;
}

int Vocabulary::char_token(char c) const {
  const int cid = alphabet::char_id(c);
  if (cid < 0) {
    throw Error(ErrorKind::kUnknownCharacter, "character code " + std::to_string(static_cast<unsigned char>(c)));
  }
  if (cid < alphabet::kNumAtomic) return cid;
  const int id = special_by_reserved_[static_cast<size_t>(cid - alphabet::kNumAtomic)];
  if (id < 0) throw Error(ErrorKind::kUnknownCharacter, std::string("unassigned reserved character '") + c + "'");
  return id;
}

bool Vocabulary::is_special(int id) const {
  const auto kind = entry(id).kind;
  return kind == TokenKind::kTask || kind == TokenKind::kSep || kind == TokenKind::kEos;
}

Vocabulary build_vocab(uint64_t seed, int vocab_size, int k) {
  if (k < 2) throw Error(ErrorKind::kInvalidK, "K = " + std::to_string(k) + ", need K >= 2");
  if (vocab_size < 1) throw Error(ErrorKind::kInvalidArgument, "vocab_size must be >= 1");
  // 52^K, saturating once it exceeds any representable vocab_size.
  uint64_t capacity = 1;
  for (int i = 0; i < k && capacity <= static_cast<uint64_t>(vocab_size); ++i) capacity *= alphabet::kNumLetters;
  if (static_cast<uint64_t>(vocab_size) > capacity) {
    throw Error(ErrorKind::kInfeasibleUniqueness,
                std::to_string(vocab_size) + " unique words do not exist for K = " + std::to_string(k));
  }

  std::vector<TokenEntry> entries;
  entries.reserve(static_cast<size_t>(alphabet::kNumAtomic + vocab_size + Vocabulary::kNumSpecial));
  for (int i = 0; i < alphabet::kNumAtomic; ++i) {
    entries.push_back({i, std::string(1, alphabet::kAtomic[static_cast<size_t>(i)]), atomic_kind(i), {}});
  }

  Rng rng(seed);
  std::unordered_set<std::string> seen;
  std::string word(static_cast<size_t>(k), ' ');
  while (static_cast<int>(seen.size()) < vocab_size) {
    for (auto& c : word) c = alphabet::kLetters[rng.uniform(alphabet::kNumLetters)];
    if (!seen.insert(word).second) continue;
    entries.push_back({static_cast<int>(entries.size()), word, TokenKind::kWord, {}});
  }

  for (int i = 0; i < Vocabulary::kNumSpecial; ++i) {
    TokenKind kind = i < Vocabulary::kNumTasks ? TokenKind::kTask
                     : i == Vocabulary::kNumTasks ? TokenKind::kSep
                                                  : TokenKind::kEos;
    entries.push_back({static_cast<int>(entries.size()),
                       std::string(1, alphabet::kReserved[static_cast<size_t>(i)]), kind, {}});
  }
  return Vocabulary(seed, k, std::move(entries));
}

Vocabulary vocab_from_words(std::span<const std::string> words) {
  std::vector<TokenEntry> entries;
  for (int i = 0; i < alphabet::kNumAtomic; ++i) {
    entries.push_back({i, std::string(1, alphabet::kAtomic[static_cast<size_t>(i)]), atomic_kind(i), {}});
  }
  std::unordered_set<std::string> seen;
  std::optional<int> k;
  bool uniform = true;
  for (const auto& w : words) {
    if (w.size() < 2 || !all_letters(w)) {
      throw Error(ErrorKind::kInvariantViolation, "word '" + w + "' is not made of at least two letters");
    }
    if (!seen.insert(w).second) continue;
    if (!k) k = static_cast<int>(w.size());
    if (*k != static_cast<int>(w.size())) uniform = false;
    entries.push_back({static_cast<int>(entries.size()), w, TokenKind::kWord, {}});
  }
  if (seen.empty()) throw Error(ErrorKind::kNoWordTokens, "word list is empty");
  for (int i = 0; i < Vocabulary::kNumSpecial; ++i) {
    TokenKind kind = i < Vocabulary::kNumTasks ? TokenKind::kTask
                     : i == Vocabulary::kNumTasks ? TokenKind::kSep
                                                  : TokenKind::kEos;
    entries.push_back({static_cast<int>(entries.size()),
                       std::string(1, alphabet::kReserved[static_cast<size_t>(i)]), kind, {}});
  }
  return Vocabulary(0, uniform ? k : std::nullopt, std::move(entries));
}

std::vector<int> encode(const Vocabulary& v, std::string_view text) {
  std::vector<int> ids;
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ids.push_back(v.space_id());
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    const auto run = text.substr(i, j - i);
    if (auto id = v.find(run)) {
      ids.push_back(*id);
    } else {
      for (char c : run) ids.push_back(v.char_token(c));
    }
    i = j;
  }
  return ids;
}

std::vector<int> encode_characters(const Vocabulary& v, std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(v.char_token(c));
  return ids;
}

std::string decode(const Vocabulary& v, std::span<const int> ids) {
  std::string out;
  for (int id : ids) out += v.entry(id).surface;
  return out;
}

std::string special_name(const Vocabulary& v, int id) {
  switch (v.entry(id).kind) {
    case TokenKind::kSep: return "SEP";
    case TokenKind::kEos: return "EOS";
    case TokenKind::kTask: return "T_" + std::string(kTaskCodes[static_cast<size_t>(v.task_of(id))]);
    default: return v.entry(id).surface;
  }
}

std::string render(const Vocabulary& v, std::span<const int> ids) {
  std::vector<std::string> segments;
  bool in_text = false;
  for (int id : ids) {
    if (v.is_special(id)) {
      segments.push_back("<" + special_name(v, id) + ">");
      in_text = false;
    } else {
      if (!in_text) segments.emplace_back();
      segments.back() += v.entry(id).surface;
      in_text = true;
    }
  }
  std::string out;
  for (size_t i = 0; i < segments.size(); ++i) {
    if (i) out += ' ';
    // Text segments carry their own boundary spaces; trim them for display.
    const auto& s = segments[i];
    const auto b = s.find_first_not_of(' ');
    const auto e = s.find_last_not_of(' ');
    out += b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

TokenChars chars_of(const Vocabulary& v, int id) {
  const auto& e = v.entry(id);
  TokenChars tc;
  tc.char_ids = e.char_ids;
  tc.intra_pos.resize(e.char_ids.size());
  for (size_t i = 0; i < tc.intra_pos.size(); ++i) tc.intra_pos[i] = static_cast<int>(i);
  return tc;
}

std::string vocab_to_json(const Vocabulary& v) {
  nlohmann::ordered_json doc;
  doc["version"] = Vocabulary::kVersion;
  doc["seed"] = v.seed();
  if (v.k()) {
    doc["K"] = *v.k();
  } else {
    doc["K"] = "mixed";
  }
  doc["dedup"] = "resample";
  auto& entries = doc["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : v.entries()) {
    nlohmann::ordered_json item;
    item["id"] = e.id;
    item["surface"] = e.surface;
    item["kind"] = to_string(e.kind);
    entries.push_back(std::move(item));
  }
  return doc.dump(2) + "\n";
}

Vocabulary vocab_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("version") || !doc.contains("entries")) {
      throw Error(ErrorKind::kMalformedFile, "vocab file needs 'version' and 'entries'");
    }
    if (doc.at("version").get<int>() != Vocabulary::kVersion) {
      throw Error(ErrorKind::kVersionMismatch, "vocab version " + doc.at("version").dump());
    }
    const uint64_t seed = doc.value("seed", uint64_t{0});
    std::optional<int> k;
    const auto& kfield = doc.at("K");
    if (kfield.is_string()) {
      if (kfield.get<std::string>() != "mixed") throw Error(ErrorKind::kMalformedFile, "K must be an integer or \"mixed\"");
    } else {
      k = kfield.get<int>();
    }
    std::vector<TokenEntry> entries;
    for (const auto& item : doc.at("entries")) {
      entries.push_back({item.at("id").get<int>(), item.at("surface").get<std::string>(),
                         token_kind_from_string(item.at("kind").get<std::string>()), {}});
    }
    return Vocabulary(seed, k, std::move(entries));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, e.what());
  }
}

void save_vocab(const Vocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << vocab_to_json(v);
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return vocab_from_json(buf.str());
}

}  // namespace charlab
