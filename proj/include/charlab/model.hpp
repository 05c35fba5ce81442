#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "charlab/char_stream.hpp"
#include "charlab/config.hpp"
#include "charlab/layout.hpp"
#include "charlab/scaling.hpp"
#include "charlab/vocab.hpp"

namespace charlab {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Draws every tensor from N(0, plan.init_std); gains start at 1 and biases at 0.
template <typename T>
ParamStore<T> init_parameters(std::shared_ptr<const Layout> layout, const MupPlan& plan, uint64_t seed);

template <typename T>
ParamStore<T> init_parameters(const ModelConfig& config, uint64_t seed);

// One training sequence: prompt ++ target. With target-only loss, only the
// predictions of ids[target_start..] are scored.
struct TrainSequence {
  std::vector<int> ids;
  int target_start = 1;
};

// Per-layer RMS of the token residual stream after each block, summed over
// every token seen by loss_and_grads.
struct ActivationProbe {
  std::vector<double> sum_squares;
  std::vector<size_t> counts;

  std::vector<double> rms() const;
};

struct LossResult {
  double loss = 0.0;  // mean cross-entropy over scored predictions
  size_t n_predictions = 0;
};

// Character encoder output (M x d_chars) for a stream.
template <typename T>
Matrix<T> encode_chars(const ParamStore<T>& p, const CharStream& cs);

// Logits (n_tokens x n_vocab).
template <typename T>
Matrix<T> forward(const ParamStore<T>& p, std::span<const int> ids, const CharStream& cs);

template <typename T>
Matrix<T> forward(const ParamStore<T>& p, const Vocabulary& v, std::span<const int> ids);

// Mean next-token cross-entropy over the batch. Gradients are added to
// *grads when it is non-null.
template <typename T>
LossResult loss_and_grads(const ParamStore<T>& p, const Vocabulary& v, std::span<const TrainSequence> batch,
                          ParamStore<T>* grads, bool target_only = false, ActivationProbe* probe = nullptr);

// Feeds one token at a time, caching keys and values so that each step costs
// one row of work. The character stream grows with every pushed token.
template <typename T>
class IncrementalDecoder {
 public:
  IncrementalDecoder(const ParamStore<T>& p, const Vocabulary& v);

  // Appends a token and returns the logits predicting the next one.
  const Eigen::Matrix<T, 1, Eigen::Dynamic>& push(int token);
  int length() const { return n_tokens_; }
  int n_chars() const { return n_chars_; }

 private:
  const ParamStore<T>& p_;
  const Vocabulary& v_;
  const Layout& layout_;
  T tok_scale_, char_scale_, out_mult_;
  int n_tokens_ = 0;
  int n_chars_ = 0;
  std::vector<Matrix<T>> tok_k_, tok_v_;
  std::vector<Matrix<T>> char_k_, char_v_;
  std::vector<Matrix<T>> cross_k_, cross_v_;
  Eigen::Matrix<T, 1, Eigen::Dynamic> logits_;
};

struct GenerateResult {
  std::vector<int> ids;  // generated tokens, EOS excluded
  bool hit_eos = false;
};

// Greedy decoding until EOS, max_new tokens, or a full context.
template <typename T>
GenerateResult generate(const ParamStore<T>& p, const Vocabulary& v, std::span<const int> prompt, int max_new);

}  // namespace charlab
