#include "charlab/layout.hpp"

#include "charlab/error.hpp"

namespace charlab {

const char* to_string(TensorRole role) {
  switch (role) {
    case TensorRole::kInput: return "input";
    case TensorRole::kHidden: return "hidden";
    case TensorRole::kVector: return "vector";
    case TensorRole::kOutput: return "output";
  }
  return "?";
}

Layout::Layout(const ModelConfig& config) : config_(config) {
  config_.validate();
  const auto& c = config_;
  const auto E = TensorGroup::kEmbedding;
  tok_emb = add("tok_emb", c.n_vocab, c.d_tokens, TensorRole::kInput, E);
  pos_emb = add("pos_emb", c.max_tokens, c.d_tokens, TensorRole::kInput, E);

  cross_slot.assign(static_cast<size_t>(c.n_layers), -1);
  for (int layer : c.cross_layers()) cross_slot[static_cast<size_t>(layer)] = 0;
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    blocks.push_back(add_block(prefix, c.d_tokens, c.d_mlp, TensorGroup::kBase));
    if (cross_slot[static_cast<size_t>(l)] >= 0) {
      const auto X = TensorGroup::kCrossAttention;
      CrossIdx x{};
      x.ln_g = add(prefix + ".cross.ln.g", 1, c.d_tokens, TensorRole::kVector, X, true);
      x.ln_b = add(prefix + ".cross.ln.b", 1, c.d_tokens, TensorRole::kVector, X);
      x.attn = add_attn(prefix + ".cross", c.d_tokens, c.d_chars, c.d_tokens, c.d_tokens, X, TensorRole::kInput);
      cross_slot[static_cast<size_t>(l)] = static_cast<int>(crosses.size());
      crosses.push_back(x);
    }
  }
  lnf_g = add("ln_f.g", 1, c.d_tokens, TensorRole::kVector, TensorGroup::kBase, true);
  lnf_b = add("ln_f.b", 1, c.d_tokens, TensorRole::kVector, TensorGroup::kBase);
  w_out = add("w_out", c.d_tokens, c.n_vocab, TensorRole::kOutput, E);

  if (c.char_enabled) {
    const auto C = TensorGroup::kCharEncoder;
    char_emb = add("char_emb", c.char_vocab, c.d_chars, TensorRole::kInput, C);
    intra_pos = add("char_intra_pos", c.max_token_chars, c.d_chars, TensorRole::kInput, C);
    inter_pos = add("char_inter_pos", c.max_tokens, c.d_chars, TensorRole::kInput, C);
    for (int l = 0; l < c.char_layers; ++l) {
      char_blocks.push_back(add_block("char_block" + std::to_string(l), c.d_chars, c.d_char_mlp, C));
    }
    char_lnf_g = add("char_ln_f.g", 1, c.d_chars, TensorRole::kVector, C, true);
    char_lnf_b = add("char_ln_f.b", 1, c.d_chars, TensorRole::kVector, C);
  }
}

int Layout::find(const std::string& name) const {
  for (size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int Layout::add(std::string name, int rows, int cols, TensorRole role, TensorGroup group, bool is_gain) {
  TensorSpec s{std::move(name), rows, cols, role, group, is_gain, total_};
  total_ += s.size();
  specs_.push_back(std::move(s));
  return static_cast<int>(specs_.size()) - 1;
}

AttnIdx Layout::add_attn(const std::string& prefix, int q_in, int kv_in, int inner, int out, TensorGroup group,
                         TensorRole kv_role) {
  const auto H = TensorRole::kHidden;
  const auto B = TensorRole::kVector;
  AttnIdx a{};
  a.wq = add(prefix + ".wq", q_in, inner, H, group);
  a.bq = add(prefix + ".bq", 1, inner, B, group);
  a.wk = add(prefix + ".wk", kv_in, inner, kv_role, group);
  a.bk = add(prefix + ".bk", 1, inner, B, group);
  a.wv = add(prefix + ".wv", kv_in, inner, kv_role, group);
  a.bv = add(prefix + ".bv", 1, inner, B, group);
  a.wo = add(prefix + ".wo", inner, out, H, group);
  a.bo = add(prefix + ".bo", 1, out, B, group);
  return a;
}

BlockIdx Layout::add_block(const std::string& prefix, int width, int mlp, TensorGroup group) {
  const auto B = TensorRole::kVector;
  BlockIdx b{};
  b.ln1_g = add(prefix + ".ln1.g", 1, width, B, group, true);
  b.ln1_b = add(prefix + ".ln1.b", 1, width, B, group);
  b.attn = add_attn(prefix + ".attn", width, width, width, width, group, TensorRole::kHidden);
  b.ln2_g = add(prefix + ".ln2.g", 1, width, B, group, true);
  b.ln2_b = add(prefix + ".ln2.b", 1, width, B, group);
  b.w1 = add(prefix + ".mlp.w1", width, mlp, TensorRole::kHidden, group);
  b.b1 = add(prefix + ".mlp.b1", 1, mlp, B, group);
  b.w2 = add(prefix + ".mlp.w2", mlp, width, TensorRole::kHidden, group);
  b.b2 = add(prefix + ".mlp.b2", 1, width, B, group);
  return b;
}

ParamCount param_count(const ModelConfig& config) {
  const Layout layout(config);
  ParamCount count;
  for (const auto& s : layout.specs()) {
    count.total += s.size();
    switch (s.group) {
      case TensorGroup::kEmbedding: count.embeddings += s.size(); break;
      case TensorGroup::kBase: count.base_excl_embeddings += s.size(); break;
      case TensorGroup::kCharEncoder: count.char_module += s.size(); break;
      case TensorGroup::kCrossAttention: count.cross_attention += s.size(); break;
    }
  }
  return count;
}

}  // namespace charlab
