#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "charlab/config.hpp"

namespace charlab {

// Width-scaling role of a tensor: input-like (one width-scaled dimension on
// the output side), hidden (both sides scale), vector-like (biases, gains),
// output-like (the readout).
enum class TensorRole { kInput, kHidden, kVector, kOutput };
enum class TensorGroup { kEmbedding, kBase, kCharEncoder, kCrossAttention };

const char* to_string(TensorRole role);

struct TensorSpec {
  std::string name;
  int rows = 1;  // fan-in for matrices
  int cols = 1;
  TensorRole role = TensorRole::kVector;
  TensorGroup group = TensorGroup::kBase;
  bool is_gain = false;
  size_t offset = 0;

  size_t size() const { return static_cast<size_t>(rows) * static_cast<size_t>(cols); }
};

struct AttnIdx {
  int wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockIdx {
  int ln1_g, ln1_b;
  AttnIdx attn;
  int ln2_g, ln2_b, w1, b1, w2, b2;
};

struct CrossIdx {
  int ln_g, ln_b;
  AttnIdx attn;
};

// Every learnable tensor of a configuration, laid out in one flat buffer.
class Layout {
 public:
  explicit Layout(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<TensorSpec>& specs() const { return specs_; }
  const TensorSpec& spec(int idx) const { return specs_[static_cast<size_t>(idx)]; }
  size_t total_size() const { return total_; }
  int find(const std::string& name) const;

  int tok_emb = -1, pos_emb = -1;
  std::vector<BlockIdx> blocks;
  std::vector<int> cross_slot;  // per layer: index into crosses or -1
  std::vector<CrossIdx> crosses;
  int lnf_g = -1, lnf_b = -1, w_out = -1;

  int char_emb = -1, intra_pos = -1, inter_pos = -1;
  std::vector<BlockIdx> char_blocks;
  int char_lnf_g = -1, char_lnf_b = -1;

 private:
  int add(std::string name, int rows, int cols, TensorRole role, TensorGroup group, bool is_gain = false);
  BlockIdx add_block(const std::string& prefix, int width, int mlp, TensorGroup group);
  AttnIdx add_attn(const std::string& prefix, int q_in, int kv_in, int inner, int out, TensorGroup group,
                   TensorRole kv_role);

  ModelConfig config_;
  std::vector<TensorSpec> specs_;
  size_t total_ = 0;
};

struct ParamCount {
  size_t total = 0;
  size_t base_excl_embeddings = 0;  // transformer blocks + final norm
  size_t char_module = 0;           // character encoder incl. its embedding tables
  size_t cross_attention = 0;
  size_t embeddings = 0;  // token/position tables and the readout

  bool operator==(const ParamCount&) const = default;
};

ParamCount param_count(const ModelConfig& config);

// Vectorized reductions peel leading elements up to an alignment boundary, so
// the buffer alignment has to be fixed for results to be reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
struct ParamStore {
  std::shared_ptr<const Layout> layout;
  AlignedVector<T> values;

  ParamStore() = default;
  explicit ParamStore(std::shared_ptr<const Layout> l) : layout(std::move(l)), values(layout->total_size(), T(0)) {}

  const ModelConfig& config() const { return layout->config(); }
  T* data(int idx) { return values.data() + layout->spec(idx).offset; }
  const T* data(int idx) const { return values.data() + layout->spec(idx).offset; }
  std::span<T> tensor(int idx) { return {data(idx), layout->spec(idx).size()}; }
  std::span<const T> tensor(int idx) const { return {data(idx), layout->spec(idx).size()}; }
  void zero() { std::fill(values.begin(), values.end(), T(0)); }
};

template <typename To, typename From>
ParamStore<To> cast_params(const ParamStore<From>& p) {
  ParamStore<To> out(p.layout);
  for (size_t i = 0; i < p.values.size(); ++i) out.values[i] = static_cast<To>(p.values[i]);
  return out;
}

}  // namespace charlab
