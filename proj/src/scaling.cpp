#include "charlab/scaling.hpp"

#include <cmath>

#include "charlab/error.hpp"

namespace charlab {

namespace {

int scaled_width(int width, double m, const char* field) {
  const double scaled = width * m;
  const double rounded = std::round(scaled);
  if (rounded < 1.0 || std::abs(scaled - rounded) > 1e-9) {
    throw Error(ErrorKind::kInvalidArgument, std::string(field) + " = " + std::to_string(width) + " times " +
                                                 std::to_string(m) + " is not a positive integer");
  }
  return static_cast<int>(rounded);
}

}  // namespace

ModelConfig scale_config(const ModelConfig& base, double m) {
  if (!(m > 0.0)) throw Error(ErrorKind::kInvalidArgument, "width multiplier must be positive");
  ModelConfig c = base;
  c.d_tokens = scaled_width(base.d_tokens, m, "d_tokens");
  c.d_mlp = scaled_width(base.d_mlp, m, "d_mlp");
  c.n_heads = scaled_width(base.n_heads, m, "n_heads");
  if (c.d_tokens / c.n_heads != base.d_head() || c.d_tokens % c.n_heads != 0) {
    throw Error(ErrorKind::kInvalidArgument, "scaling must keep the head width fixed");
  }
  c.width_mult = base.width_mult * m;
  return c;
}

double attention_scale(Parametrization p, int d_head) {
  return p == Parametrization::kMup ? 1.0 / d_head : 1.0 / std::sqrt(static_cast<double>(d_head));
}

MupPlan mup_plan(const ModelConfig& c, double base_lr) {
  const Layout layout(c);
  MupPlan plan;
  plan.width_mult = c.width_mult;
  plan.parametrization = c.parametrization;
  plan.base_lr = base_lr;
  const bool mup = c.parametrization == Parametrization::kMup;
  const double m = c.width_mult;
  plan.output_mult = mup ? 1.0 / m : 1.0;
  plan.attn_exponent = mup ? 1.0 : 0.5;
  for (const auto& s : layout.specs()) {
    TensorPlan t{s.name, s.role, s.role == TensorRole::kVector ? 0.0 : c.init_std, 1.0};
    if (mup && s.group != TensorGroup::kCharEncoder && s.role == TensorRole::kHidden) {
      // Hidden fan-in grows with m: std ~ 1/sqrt(fan_in), Adam step ~ 1/fan_in.
      t.init_std = c.init_std / std::sqrt(m);
      t.lr_mult = 1.0 / m;
    }
    plan.tensors.push_back(std::move(t));
  }
  return plan;
}

nlohmann::json MupPlan::to_json() const {
  nlohmann::json tensors_json = nlohmann::json::array();
  for (const auto& t : tensors) {
    tensors_json.push_back({{"name", t.name}, {"role", to_string(t.role)}, {"init_std", t.init_std},
                            {"lr_mult", t.lr_mult}});
  }
  return {{"width_mult", width_mult},   {"parametrization", to_string(parametrization)},
          {"base_lr", base_lr},         {"output_mult", output_mult},
          {"attn_exponent", attn_exponent}, {"tensors", tensors_json}};
}

}  // namespace charlab
