#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "charlab/config.hpp"
#include "charlab/vocab.hpp"

namespace charlab::testing {

// The small char-aware configuration used by the gradient and coordinate checks.
inline ModelConfig tiny_config(const Vocabulary& v) {
  ModelConfig c;
  c.n_vocab = v.size();
  c.n_layers = 1;
  c.d_tokens = 16;
  c.n_heads = 2;
  c.d_mlp = 32;
  c.d_chars = 8;
  c.char_heads = 2;
  c.d_char_mlp = 16;
  c.max_tokens = 64;
  c.max_token_chars = 4;
  c.init_std = 0.3;
  return c;
}

// Fresh scratch directory under the build tree, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("charlab_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace charlab::testing
