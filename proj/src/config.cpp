#include "charlab/config.hpp"

#include <set>

#include "charlab/error.hpp"

namespace charlab {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); }

}  // namespace

const char* to_string(Insertion insertion) {
  switch (insertion) {
    case Insertion::kEveryLayer: return "every_layer";
    case Insertion::kFirst: return "first";
    case Insertion::kMiddle: return "middle";
    case Insertion::kLast: return "last";
  }
  return "?";
}

Insertion insertion_from_string(const std::string& s) {
  if (s == "every_layer" || s == "every") return Insertion::kEveryLayer;
  if (s == "first") return Insertion::kFirst;
  if (s == "middle") return Insertion::kMiddle;
  if (s == "last") return Insertion::kLast;
  invalid("unknown insertion '" + s + "'");
}

const char* to_string(Parametrization p) { return p == Parametrization::kMup ? "mup" : "standard"; }

Parametrization parametrization_from_string(const std::string& s) {
  if (s == "standard") return Parametrization::kStandard;
  if (s == "mup") return Parametrization::kMup;
  invalid("unknown parametrization '" + s + "'");
}

std::vector<int> ModelConfig::cross_layers() const {
  if (!char_enabled) return {};
  switch (insertion) {
    case Insertion::kEveryLayer: {
      std::vector<int> all(static_cast<size_t>(n_layers));
      for (int i = 0; i < n_layers; ++i) all[static_cast<size_t>(i)] = i;
      return all;
    }
    case Insertion::kFirst: return {0};
    case Insertion::kMiddle: return {n_layers / 2};
    case Insertion::kLast: return {n_layers - 1};
  }
  return {};
}

void ModelConfig::validate() const {
  if (n_vocab <= 0) invalid("n_vocab must be positive");
  if (n_layers <= 0 || d_tokens <= 0 || n_heads <= 0 || d_mlp <= 0) invalid("base widths must be positive");
  if (d_tokens % n_heads != 0) invalid("d_tokens must be divisible by n_heads");
  if (max_tokens <= 0 || max_token_chars <= 0) invalid("context lengths must be positive");
  if (init_std <= 0.0 || width_mult <= 0.0) invalid("init_std and width_mult must be positive");
  if (char_enabled) {
    if (d_chars <= 0 || char_heads <= 0 || d_char_mlp <= 0 || char_layers <= 0) {
      invalid("character encoder widths must be positive");
    }
    if (d_chars % char_heads != 0) invalid("d_chars must be divisible by char_heads");
    if (d_chars > d_tokens) invalid("d_chars must not exceed d_tokens");
    if (char_vocab <= 0) invalid("char_vocab must be positive");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_vocab", c.n_vocab},
                     {"n_layers", c.n_layers},
                     {"d_tokens", c.d_tokens},
                     {"n_heads", c.n_heads},
                     {"d_mlp", c.d_mlp},
                     {"char_enabled", c.char_enabled},
                     {"d_chars", c.d_chars},
                     {"char_heads", c.char_heads},
                     {"d_char_mlp", c.d_char_mlp},
                     {"char_layers", c.char_layers},
                     {"char_vocab", c.char_vocab},
                     {"insertion", to_string(c.insertion)},
                     {"max_tokens", c.max_tokens},
                     {"max_token_chars", c.max_token_chars},
                     {"width_mult", c.width_mult},
                     {"parametrization", to_string(c.parametrization)},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known = {
      "n_vocab",    "n_layers",   "d_tokens",   "n_heads",         "d_mlp",           "char_enabled",
      "d_chars",    "char_heads", "d_char_mlp", "char_layers",     "char_vocab",      "insertion",
      "max_tokens", "max_token_chars", "width_mult", "parametrization", "init_std"};
  if (!j.is_object()) invalid("model config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) invalid("unknown model config key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_vocab", c.n_vocab);
  get("n_layers", c.n_layers);
  get("d_tokens", c.d_tokens);
  get("n_heads", c.n_heads);
  get("d_mlp", c.d_mlp);
  get("char_enabled", c.char_enabled);
  get("d_chars", c.d_chars);
  get("char_heads", c.char_heads);
  get("d_char_mlp", c.d_char_mlp);
  get("char_layers", c.char_layers);
  get("char_vocab", c.char_vocab);
  get("max_tokens", c.max_tokens);
  get("max_token_chars", c.max_token_chars);
  get("width_mult", c.width_mult);
  get("init_std", c.init_std);
  if (j.contains("insertion")) c.insertion = insertion_from_string(j.at("insertion").get<std::string>());
  if (j.contains("parametrization")) {
    c.parametrization = parametrization_from_string(j.at("parametrization").get<std::string>());
  }
}

ModelConfig paper_config(int n_vocab) {
  ModelConfig c;
  c.n_vocab = n_vocab;
  return c;
}

}  // namespace charlab
