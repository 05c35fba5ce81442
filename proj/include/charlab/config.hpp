#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace charlab {

enum class Insertion { kEveryLayer, kFirst, kMiddle, kLast };
enum class Parametrization { kStandard, kMup };

const char* to_string(Insertion insertion);
Insertion insertion_from_string(const std::string& s);
const char* to_string(Parametrization p);
Parametrization parametrization_from_string(const std::string& s);

struct ModelConfig {
  int n_vocab = 0;  // number of token ids (atomic + words + specials)
  int n_layers = 8;
  int d_tokens = 512;
  int n_heads = 8;
  int d_mlp = 256;
  bool char_enabled = true;
  int d_chars = 256;
  int char_heads = 4;
  int d_char_mlp = 1024;
  int char_layers = 1;
  int char_vocab = 84;
  Insertion insertion = Insertion::kEveryLayer;
  int max_tokens = 256;
  int max_token_chars = 12;
  double width_mult = 1.0;
  Parametrization parametrization = Parametrization::kStandard;
  double init_std = 0.02;

  int d_head() const { return d_tokens / n_heads; }
  int max_chars() const { return max_tokens * max_token_chars; }
  // Layers that carry a cross-attention sub-block (empty without characters).
  std::vector<int> cross_layers() const;
  // Throws Error(kInvalidArgument) on inconsistent fields.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

// 8 layers at width 512 with a 256-wide single-block character encoder.
ModelConfig paper_config(int n_vocab);

}  // namespace charlab
