#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "charlab/config.hpp"
#include "charlab/layout.hpp"

namespace charlab {

struct TensorPlan {
  std::string name;
  TensorRole role = TensorRole::kVector;
  double init_std = 0.0;  // 0 for biases and gains (constant init)
  double lr_mult = 1.0;
};

// Per-tensor initialization and learning-rate rules for a configuration.
// The character encoder is never width-scaled, so its tensors keep unit
// multipliers under either parametrization.
struct MupPlan {
  double width_mult = 1.0;
  Parametrization parametrization = Parametrization::kStandard;
  double base_lr = 0.0;
  double output_mult = 1.0;
  // Attention logits are multiplied by d_head^-attn_exponent.
  double attn_exponent = 0.5;
  std::vector<TensorPlan> tensors;

  nlohmann::json to_json() const;
};

// Multiplies d_tokens, d_mlp and n_heads by m (head width fixed) and
// accumulates m into width_mult; the character encoder is left untouched.
ModelConfig scale_config(const ModelConfig& base, double m);

MupPlan mup_plan(const ModelConfig& c, double base_lr);

double attention_scale(Parametrization p, int d_head);

}  // namespace charlab
