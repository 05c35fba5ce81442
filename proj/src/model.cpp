#include "charlab/model.hpp"

#include <cmath>
#include <string>

#include "charlab/error.hpp"
#include "charlab/rng.hpp"

namespace charlab {

namespace {

template <typename T>
using Mat = Matrix<T>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ConstRef = Eigen::Ref<const Mat<T>>;

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

template <typename T>
Eigen::Map<const Mat<T>> weight(const ParamStore<T>& p, int idx) {
  const auto& s = p.layout->spec(idx);
  return Eigen::Map<const Mat<T>>(p.data(idx), s.rows, s.cols);
}

template <typename T>
Eigen::Map<Mat<T>> weight(ParamStore<T>& p, int idx) {
  const auto& s = p.layout->spec(idx);
  return Eigen::Map<Mat<T>>(p.data(idx), s.rows, s.cols);
}

template <typename T>
Eigen::Map<const RowVec<T>> vec(const ParamStore<T>& p, int idx) {
  return Eigen::Map<const RowVec<T>>(p.data(idx), static_cast<Eigen::Index>(p.layout->spec(idx).size()));
}

template <typename T>
Eigen::Map<RowVec<T>> vec(ParamStore<T>& p, int idx) {
  return Eigen::Map<RowVec<T>>(p.data(idx), static_cast<Eigen::Index>(p.layout->spec(idx).size()));
}

// ---------------------------------------------------------------- kernels

template <typename T>
struct LnCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
void ln_forward(const ConstRef<T>& x, const T* g, const T* b, Mat<T>& y, LnCache<T>* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  y.resize(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(static_cast<size_t>(n));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    T var = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const T c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    for (Eigen::Index j = 0; j < d; ++j) {
      const T xh = (x(i, j) - mean) * rstd;
      if (cache) cache->xhat(i, j) = xh;
      y(i, j) = xh * g[j] + b[j];
    }
    if (cache) cache->rstd[static_cast<size_t>(i)] = rstd;
  }
}

// dx += d LN / dx applied to dy.
template <typename T>
void ln_backward(const Mat<T>& dy, const LnCache<T>& c, const T* g, T* dg, T* db, Mat<T>& dx) {
  const Eigen::Index n = dy.rows();
  const Eigen::Index d = dy.cols();
  std::vector<T> dxhat(static_cast<size_t>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    T mean_dxhat = 0;
    T mean_dxhat_xhat = 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const T xh = c.xhat(i, j);
      dg[j] += dy(i, j) * xh;
      db[j] += dy(i, j);
      const T v = dy(i, j) * g[j];
      dxhat[static_cast<size_t>(j)] = v;
      mean_dxhat += v;
      mean_dxhat_xhat += v * xh;
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    const T rstd = c.rstd[static_cast<size_t>(i)];
    for (Eigen::Index j = 0; j < d; ++j) {
      dx(i, j) += rstd * (dxhat[static_cast<size_t>(j)] - mean_dxhat - c.xhat(i, j) * mean_dxhat_xhat);
    }
  }
}

template <typename T>
void linear_forward(const ConstRef<T>& x, const ParamStore<T>& p, int w, int b, Mat<T>& y) {
  y.noalias() = x * weight(p, w);
  y.rowwise() += vec(p, b);
}

// Accumulates dW, db and (when dx is given) dx.
template <typename T>
void linear_backward(const ConstRef<T>& x, const Mat<T>& dy, const ParamStore<T>& p, ParamStore<T>& g, int w, int b,
                     Mat<T>* dx) {
  weight(g, w).noalias() += x.transpose() * dy;
  vec(g, b) += dy.colwise().sum();
  if (dx) dx->noalias() += dy * weight(p, w).transpose();
}

template <typename T>
T gelu(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = static_cast<T>(kGeluC) * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
  return static_cast<T>(0.5) * (T(1) + t) + static_cast<T>(0.5) * x * (T(1) - t * t) * du;
}

// Masked row softmax in place. Rows without any allowed key become zero.
template <typename T>
void softmax_rows(Mat<T>& s, const Mask* mask) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    T max = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (!mask || (*mask)(static_cast<int>(i), static_cast<int>(j))) max = std::max(max, s(i, j));
    }
    if (max == -std::numeric_limits<T>::infinity()) {
      s.row(i).setZero();
      continue;
    }
    T sum = 0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      if (!mask || (*mask)(static_cast<int>(i), static_cast<int>(j))) {
        s(i, j) = std::exp(s(i, j) - max);
        sum += s(i, j);
      } else {
        s(i, j) = 0;
      }
    }
    s.row(i) /= sum;
  }
}

template <typename T>
void attention_forward(const ConstRef<T>& q, const ConstRef<T>& k, const ConstRef<T>& v, const Mask* mask, int heads,
                       T scale, std::vector<Mat<T>>* probs, Mat<T>& o) {
  const Eigen::Index dh = q.cols() / heads;
  o.setZero(q.rows(), q.cols());
  if (probs) probs->resize(static_cast<size_t>(heads));
  Mat<T> s;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    s.noalias() = q.middleCols(c0, dh) * k.middleCols(c0, dh).transpose();
    s *= scale;
    softmax_rows(s, mask);
    o.middleCols(c0, dh).noalias() = s * v.middleCols(c0, dh);
    if (probs) (*probs)[static_cast<size_t>(h)].swap(s);
  }
}

template <typename T>
void attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int heads, T scale,
                        const std::vector<Mat<T>>& probs, const Mat<T>& d_o, Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
  const Eigen::Index dh = q.cols() / heads;
  dq.setZero(q.rows(), q.cols());
  dk.setZero(k.rows(), k.cols());
  dv.setZero(v.rows(), v.cols());
  Mat<T> dp;
  Mat<T> ds;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index c0 = h * dh;
    const Mat<T>& prob = probs[static_cast<size_t>(h)];
    dp.noalias() = d_o.middleCols(c0, dh) * v.middleCols(c0, dh).transpose();
    dv.middleCols(c0, dh).noalias() += prob.transpose() * d_o.middleCols(c0, dh);
    ds.resize(prob.rows(), prob.cols());
    for (Eigen::Index i = 0; i < prob.rows(); ++i) {
      const T dot = prob.row(i).dot(dp.row(i));
      ds.row(i) = (prob.row(i).array() * (dp.row(i).array() - dot) * scale).matrix();
    }
    dq.middleCols(c0, dh).noalias() += ds * k.middleCols(c0, dh);
    dk.middleCols(c0, dh).noalias() += ds.transpose() * q.middleCols(c0, dh);
  }
}

// ---------------------------------------------------------------- blocks

template <typename T>
struct AttnCache {
  Mat<T> h;
  LnCache<T> ln;
  Mat<T> q, k, v, o;
  std::vector<Mat<T>> probs;
};

template <typename T>
struct BlockCache {
  Mat<T> x_in;
  AttnCache<T> self;
  Mat<T> x_attn;
  bool has_cross = false;
  AttnCache<T> cross;
  Mat<T> x_cross;
  Mat<T> h2;
  LnCache<T> ln2;
  Mat<T> pre, act;

  const Mat<T>& mid() const { return has_cross ? x_cross : x_attn; }
};

struct AttnShape {
  int heads;
  double scale;
};

// y = Wo * attention(LN(x) Wq, src Wk, src Wv), with src = LN(x) when kv_src is null.
template <typename T>
void attn_sub_forward(const ParamStore<T>& p, int ln_g, int ln_b, const AttnIdx& a, const Mat<T>& x,
                      const Mat<T>* kv_src, const Mask* mask, AttnShape shape, AttnCache<T>& c, Mat<T>& y) {
  ln_forward<T>(x, p.data(ln_g), p.data(ln_b), c.h, &c.ln);
  const Mat<T>& src = kv_src ? *kv_src : c.h;
  linear_forward<T>(c.h, p, a.wq, a.bq, c.q);
  linear_forward<T>(src, p, a.wk, a.bk, c.k);
  linear_forward<T>(src, p, a.wv, a.bv, c.v);
  attention_forward<T>(c.q, c.k, c.v, mask, shape.heads, static_cast<T>(shape.scale), &c.probs, c.o);
  linear_forward<T>(c.o, p, a.wo, a.bo, y);
}

template <typename T>
void attn_sub_backward(const ParamStore<T>& p, ParamStore<T>& g, int ln_g, int ln_b, const AttnIdx& a,
                       const AttnCache<T>& c, const Mat<T>* kv_src, AttnShape shape, const Mat<T>& dy, Mat<T>& dx,
                       Mat<T>* d_src) {
  Mat<T> d_o = Mat<T>::Zero(c.o.rows(), c.o.cols());
  linear_backward<T>(c.o, dy, p, g, a.wo, a.bo, &d_o);
  Mat<T> dq, dk, dv;
  attention_backward<T>(c.q, c.k, c.v, shape.heads, static_cast<T>(shape.scale), c.probs, d_o, dq, dk, dv);
  Mat<T> dh = Mat<T>::Zero(c.h.rows(), c.h.cols());
  linear_backward<T>(c.h, dq, p, g, a.wq, a.bq, &dh);
  const Mat<T>& src = kv_src ? *kv_src : c.h;
  Mat<T>* d_kv = kv_src ? d_src : &dh;
  linear_backward<T>(src, dk, p, g, a.wk, a.bk, d_kv);
  linear_backward<T>(src, dv, p, g, a.wv, a.bv, d_kv);
  ln_backward<T>(dh, c.ln, p.data(ln_g), g.data(ln_g), g.data(ln_b), dx);
}

template <typename T>
void block_forward(const ParamStore<T>& p, const BlockIdx& b, const CrossIdx* cross, const Mat<T>& x_in,
                   const Mat<T>* chars, const Mask& self_mask, const Mask* cross_mask, AttnShape shape,
                   BlockCache<T>& c, Mat<T>& x_out) {
  c.x_in = x_in;
  Mat<T> y;
  attn_sub_forward<T>(p, b.ln1_g, b.ln1_b, b.attn, c.x_in, nullptr, &self_mask, shape, c.self, y);
  c.x_attn = c.x_in + y;
  c.has_cross = cross != nullptr;
  if (cross) {
    attn_sub_forward<T>(p, cross->ln_g, cross->ln_b, cross->attn, c.x_attn, chars, cross_mask, shape, c.cross, y);
    c.x_cross = c.x_attn + y;
  }
  ln_forward<T>(c.mid(), p.data(b.ln2_g), p.data(b.ln2_b), c.h2, &c.ln2);
  linear_forward<T>(c.h2, p, b.w1, b.b1, c.pre);
  c.act = c.pre.unaryExpr([](T v) { return gelu(v); });
  linear_forward<T>(c.act, p, b.w2, b.b2, y);
  x_out = c.mid() + y;
}

// Returns d x_in; cross-attention key/value gradients go to d_chars.
template <typename T>
Mat<T> block_backward(const ParamStore<T>& p, ParamStore<T>& g, const BlockIdx& b, const CrossIdx* cross,
                      const BlockCache<T>& c, const Mat<T>* chars, AttnShape shape, const Mat<T>& d_out,
                      Mat<T>* d_chars) {
  Mat<T> d_mid = d_out;
  Mat<T> d_act = Mat<T>::Zero(c.act.rows(), c.act.cols());
  linear_backward<T>(c.act, d_out, p, g, b.w2, b.b2, &d_act);
  const Mat<T> d_pre = d_act.cwiseProduct(c.pre.unaryExpr([](T v) { return gelu_grad(v); }));
  Mat<T> d_h2 = Mat<T>::Zero(c.h2.rows(), c.h2.cols());
  linear_backward<T>(c.h2, d_pre, p, g, b.w1, b.b1, &d_h2);
  ln_backward<T>(d_h2, c.ln2, p.data(b.ln2_g), g.data(b.ln2_g), g.data(b.ln2_b), d_mid);

  Mat<T> d_attn = d_mid;
  if (cross) {
    attn_sub_backward<T>(p, g, cross->ln_g, cross->ln_b, cross->attn, c.cross, chars, shape, d_mid, d_attn, d_chars);
  }
  Mat<T> d_in = d_attn;
  attn_sub_backward<T>(p, g, b.ln1_g, b.ln1_b, b.attn, c.self, nullptr, shape, d_attn, d_in, nullptr);
  return d_in;
}

template <typename T>
void require_finite(const Mat<T>& m, const char* where) {
  if (!m.allFinite()) throw Error(ErrorKind::kNumericFailure, std::string("non-finite values in ") + where);
}

struct Scales {
  double tok;
  double chr;
  double out;
};

Scales scales_for(const ModelConfig& c) {
  const auto plan_exponent = c.parametrization == Parametrization::kMup;
  Scales s{};
  s.tok = attention_scale(c.parametrization, c.d_head());
  s.chr = c.char_enabled ? attention_scale(c.parametrization, c.d_chars / c.char_heads) : 1.0;
  s.out = plan_exponent ? 1.0 / c.width_mult : 1.0;
  return s;
}

void check_stream(const ModelConfig& c, const CharStream& cs) {
  if (cs.size() > c.max_chars()) {
    throw Error(ErrorKind::kContextOverflow,
                std::to_string(cs.size()) + " characters exceed max_chars " + std::to_string(c.max_chars()));
  }
  for (int i = 0; i < cs.size(); ++i) {
    const auto u = static_cast<size_t>(i);
    if (cs.intra_pos[u] >= c.max_token_chars) {
      throw Error(ErrorKind::kContextOverflow, "token longer than max_token_chars");
    }
    if (cs.char_ids[u] < 0 || cs.char_ids[u] >= c.char_vocab) {
      throw Error(ErrorKind::kOutOfRange, "character id " + std::to_string(cs.char_ids[u]));
    }
    if (cs.owner[u] >= c.max_tokens) throw Error(ErrorKind::kContextOverflow, "character owner beyond max_tokens");
  }
}

// ---------------------------------------------------------------- full pass

template <typename T>
class Pass {
 public:
  explicit Pass(const ParamStore<T>& p)
      : p_(p), L_(*p.layout), c_(p.config()), scales_(scales_for(c_)) {}

  const Mat<T>& run_chars(const CharStream& cs) {
    check_stream(c_, cs);
    cs_ = &cs;
    const Eigen::Index m = cs.size();
    e0_.resize(m, c_.d_chars);
    const auto emb = weight(p_, L_.char_emb);
    const auto intra = weight(p_, L_.intra_pos);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto u = static_cast<size_t>(i);
      e0_.row(i) = emb.row(cs.char_ids[u]) + intra.row(cs.intra_pos[u]);
    }
    char_mask_ = self_attn_mask(cs);
    char_blocks_.resize(L_.char_blocks.size());
    Mat<T> x = e0_;
    Mat<T> next;
    const AttnShape shape{c_.char_heads, scales_.chr};
    for (size_t b = 0; b < L_.char_blocks.size(); ++b) {
      block_forward<T>(p_, L_.char_blocks[b], nullptr, x, nullptr, char_mask_, nullptr, shape, char_blocks_[b], next);
      x.swap(next);
    }
    Mat<T> f;
    ln_forward<T>(x, p_.data(L_.char_lnf_g), p_.data(L_.char_lnf_b), f, &char_lnf_);
    const auto inter = weight(p_, L_.inter_pos);
    chars_ = f;
    for (Eigen::Index i = 0; i < m; ++i) chars_.row(i) += inter.row(cs.owner[static_cast<size_t>(i)]);
    return chars_;
  }

  const Mat<T>& run(std::span<const int> ids, const CharStream& cs, ActivationProbe* probe) {
    const auto n = static_cast<Eigen::Index>(ids.size());
    if (n > c_.max_tokens) {
      throw Error(ErrorKind::kContextOverflow,
                  std::to_string(n) + " tokens exceed max_tokens " + std::to_string(c_.max_tokens));
    }
    ids_ = ids;
    if (c_.char_enabled) {
      if (cs.n_tokens() != n) throw Error(ErrorKind::kInvalidArgument, "character stream does not match tokens");
      run_chars(cs);
      cross_mask_ = cross_attn_mask(static_cast<int>(n), cs);
    }
    const auto tok = weight(p_, L_.tok_emb);
    const auto pos = weight(p_, L_.pos_emb);
    Mat<T> x(n, c_.d_tokens);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int id = ids[static_cast<size_t>(i)];
      if (id < 0 || id >= c_.n_vocab) throw Error(ErrorKind::kOutOfRange, "token id " + std::to_string(id));
      x.row(i) = tok.row(id) + pos.row(i);
    }
    causal_ = causal_mask(static_cast<int>(n));
    blocks_.resize(L_.blocks.size());
    if (probe && probe->sum_squares.size() != L_.blocks.size()) {
      probe->sum_squares.assign(L_.blocks.size(), 0.0);
      probe->counts.assign(L_.blocks.size(), 0);
    }
    const AttnShape shape{c_.n_heads, scales_.tok};
    Mat<T> next;
    for (size_t l = 0; l < L_.blocks.size(); ++l) {
      const int slot = L_.cross_slot[l];
      const CrossIdx* cross = slot >= 0 ? &L_.crosses[static_cast<size_t>(slot)] : nullptr;
      block_forward<T>(p_, L_.blocks[l], cross, x, cross ? &chars_ : nullptr, causal_, cross ? &cross_mask_ : nullptr,
                       shape, blocks_[l], next);
      x.swap(next);
      if (probe) {
        probe->sum_squares[l] += static_cast<double>(x.squaredNorm());
        probe->counts[l] += static_cast<size_t>(x.size());
      }
    }
    x_last_ = x;
    ln_forward<T>(x, p_.data(L_.lnf_g), p_.data(L_.lnf_b), hf_, &lnf_);
    logits_.noalias() = hf_ * weight(p_, L_.w_out);
    logits_ *= static_cast<T>(scales_.out);
    require_finite(logits_, "logits");
    return logits_;
  }

  void backward(const Mat<T>& d_logits, ParamStore<T>& g) {
    const T out = static_cast<T>(scales_.out);
    const Mat<T> d_scaled = d_logits * out;
    weight(g, L_.w_out).noalias() += hf_.transpose() * d_scaled;
    const Mat<T> d_hf = d_scaled * weight(p_, L_.w_out).transpose();
    Mat<T> dx = Mat<T>::Zero(x_last_.rows(), x_last_.cols());
    ln_backward<T>(d_hf, lnf_, p_.data(L_.lnf_g), g.data(L_.lnf_g), g.data(L_.lnf_b), dx);

    Mat<T> d_chars;
    if (c_.char_enabled) d_chars = Mat<T>::Zero(chars_.rows(), chars_.cols());
    const AttnShape shape{c_.n_heads, scales_.tok};
    for (size_t l = L_.blocks.size(); l-- > 0;) {
      const int slot = L_.cross_slot[l];
      const CrossIdx* cross = slot >= 0 ? &L_.crosses[static_cast<size_t>(slot)] : nullptr;
      dx = block_backward<T>(p_, g, L_.blocks[l], cross, blocks_[l], cross ? &chars_ : nullptr, shape, dx,
                             cross ? &d_chars : nullptr);
    }
    auto d_tok = weight(g, L_.tok_emb);
    auto d_pos = weight(g, L_.pos_emb);
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      d_tok.row(ids_[static_cast<size_t>(i)]) += dx.row(i);
      d_pos.row(i) += dx.row(i);
    }
    if (c_.char_enabled) backward_chars(d_chars, g);
  }

  void backward_chars(const Mat<T>& d_chars, ParamStore<T>& g) {
    const CharStream& cs = *cs_;
    auto d_inter = weight(g, L_.inter_pos);
    for (Eigen::Index i = 0; i < d_chars.rows(); ++i) d_inter.row(cs.owner[static_cast<size_t>(i)]) += d_chars.row(i);
    Mat<T> dx = Mat<T>::Zero(d_chars.rows(), c_.d_chars);
    ln_backward<T>(d_chars, char_lnf_, p_.data(L_.char_lnf_g), g.data(L_.char_lnf_g), g.data(L_.char_lnf_b), dx);
    const AttnShape shape{c_.char_heads, scales_.chr};
    for (size_t b = L_.char_blocks.size(); b-- > 0;) {
      dx = block_backward<T>(p_, g, L_.char_blocks[b], nullptr, char_blocks_[b], nullptr, shape, dx, nullptr);
    }
    auto d_emb = weight(g, L_.char_emb);
    auto d_intra = weight(g, L_.intra_pos);
    for (Eigen::Index i = 0; i < dx.rows(); ++i) {
      const auto u = static_cast<size_t>(i);
      d_emb.row(cs.char_ids[u]) += dx.row(i);
      d_intra.row(cs.intra_pos[u]) += dx.row(i);
    }
  }

 private:
  const ParamStore<T>& p_;
  const Layout& L_;
  const ModelConfig& c_;
  Scales scales_;

  std::span<const int> ids_;
  const CharStream* cs_ = nullptr;
  Mat<T> e0_;
  Mask char_mask_;
  std::vector<BlockCache<T>> char_blocks_;
  LnCache<T> char_lnf_;
  Mat<T> chars_;

  Mask causal_, cross_mask_;
  std::vector<BlockCache<T>> blocks_;
  Mat<T> x_last_, hf_;
  LnCache<T> lnf_;
  Mat<T> logits_;
};

// ---------------------------------------------------------------- inference rows

template <typename T>
void mlp_rows(const ParamStore<T>& p, const BlockIdx& b, Mat<T>& x) {
  Mat<T> h, pre, y;
  ln_forward<T>(x, p.data(b.ln2_g), p.data(b.ln2_b), h, nullptr);
  linear_forward<T>(h, p, b.w1, b.b1, pre);
  pre = pre.unaryExpr([](T v) { return gelu(v); });
  linear_forward<T>(pre, p, b.w2, b.b2, y);
  x += y;
}

// New rows attend to every cached key (all of them are visible to the rows).
template <typename T>
void cached_attention(const ParamStore<T>& p, int ln_g, int ln_b, const AttnIdx& a, Mat<T>& x, Mat<T>* k_cache,
                      Mat<T>* v_cache, int start, const Mat<T>& k_all, const Mat<T>& v_all, int n_keys,
                      AttnShape shape) {
  Mat<T> h, q, o, y;
  ln_forward<T>(x, p.data(ln_g), p.data(ln_b), h, nullptr);
  linear_forward<T>(h, p, a.wq, a.bq, q);
  if (k_cache) {
    Mat<T> k, v;
    linear_forward<T>(h, p, a.wk, a.bk, k);
    linear_forward<T>(h, p, a.wv, a.bv, v);
    k_cache->middleRows(start, k.rows()) = k;
    v_cache->middleRows(start, v.rows()) = v;
  }
  attention_forward<T>(q, k_all.topRows(n_keys), v_all.topRows(n_keys), nullptr, shape.heads,
                       static_cast<T>(shape.scale), nullptr, o);
  linear_forward<T>(o, p, a.wo, a.bo, y);
  x += y;
}

}  // namespace

std::vector<double> ActivationProbe::rms() const {
  std::vector<double> out(sum_squares.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = counts[i] ? std::sqrt(sum_squares[i] / static_cast<double>(counts[i])) : 0.0;
  }
  return out;
}

template <typename T>
ParamStore<T> init_parameters(std::shared_ptr<const Layout> layout, const MupPlan& plan, uint64_t seed) {
  if (plan.tensors.size() != layout->specs().size()) {
    throw Error(ErrorKind::kInvalidArgument, "plan does not match the parameter layout");
  }
  ParamStore<T> p(layout);
  Rng rng(seed);
  for (size_t i = 0; i < layout->specs().size(); ++i) {
    const auto& s = layout->specs()[i];
    auto t = p.tensor(static_cast<int>(i));
    if (s.role == TensorRole::kVector) {
      std::fill(t.begin(), t.end(), s.is_gain ? T(1) : T(0));
      continue;
    }
    const double std = plan.tensors[i].init_std;
    for (auto& v : t) v = static_cast<T>(std * rng.normal());
  }
  return p;
}

template <typename T>
ParamStore<T> init_parameters(const ModelConfig& config, uint64_t seed) {
  return init_parameters<T>(std::make_shared<const Layout>(config), mup_plan(config, 0.0), seed);
}

template <typename T>
Matrix<T> encode_chars(const ParamStore<T>& p, const CharStream& cs) {
  if (!p.config().char_enabled) throw Error(ErrorKind::kInvalidArgument, "character encoder is disabled");
  Pass<T> pass(p);
  return pass.run_chars(cs);
}

template <typename T>
Matrix<T> forward(const ParamStore<T>& p, std::span<const int> ids, const CharStream& cs) {
  Pass<T> pass(p);
  return pass.run(ids, cs, nullptr);
}

template <typename T>
Matrix<T> forward(const ParamStore<T>& p, const Vocabulary& v, std::span<const int> ids) {
  const CharStream cs = p.config().char_enabled ? build_char_stream(v, ids) : CharStream{};
  return forward(p, ids, cs);
}

template <typename T>
LossResult loss_and_grads(const ParamStore<T>& p, const Vocabulary& v, std::span<const TrainSequence> batch,
                          ParamStore<T>* grads, bool target_only, ActivationProbe* probe) {
  size_t count = 0;
  for (const auto& seq : batch) {
    const auto n = static_cast<int>(seq.ids.size());
    if (seq.target_start < 1 || seq.target_start >= n) {
      throw Error(ErrorKind::kEmptyInput, "sequence without target tokens");
    }
    count += static_cast<size_t>(n - (target_only ? seq.target_start : 1));
  }
  if (count == 0) throw Error(ErrorKind::kEmptyInput, "empty batch");
  const double inv_count = 1.0 / static_cast<double>(count);
  const bool chars = p.config().char_enabled;

  double total = 0.0;
  for (const auto& seq : batch) {
    const CharStream cs = chars ? build_char_stream(v, seq.ids) : CharStream{};
    Pass<T> pass(p);
    const Mat<T>& logits = pass.run(seq.ids, cs, probe);
    const Eigen::Index n = logits.rows();
    const Eigen::Index first = target_only ? seq.target_start - 1 : 0;
    Mat<T> d_logits;
    if (grads) d_logits = Mat<T>::Zero(n, logits.cols());
    for (Eigen::Index t = first; t + 1 < n; ++t) {
      const int target = seq.ids[static_cast<size_t>(t + 1)];
      const T max = logits.row(t).maxCoeff();
      const T sum = (logits.row(t).array() - max).exp().sum();
      const T lse = max + std::log(sum);
      total += static_cast<double>(lse - logits(t, target));
      if (grads) {
        d_logits.row(t) = ((logits.row(t).array() - lse).exp() * static_cast<T>(inv_count)).matrix();
        d_logits(t, target) -= static_cast<T>(inv_count);
      }
    }
    if (grads) pass.backward(d_logits, *grads);
  }
  const double loss = total * inv_count;
  if (!std::isfinite(loss)) throw Error(ErrorKind::kNumericFailure, "non-finite loss");
  return {loss, count};
}

template <typename T>
IncrementalDecoder<T>::IncrementalDecoder(const ParamStore<T>& p, const Vocabulary& v)
    : p_(p), v_(v), layout_(*p.layout) {
  const auto& c = p.config();
  const auto s = scales_for(c);
  tok_scale_ = static_cast<T>(s.tok);
  char_scale_ = static_cast<T>(s.chr);
  out_mult_ = static_cast<T>(s.out);
  tok_k_.assign(layout_.blocks.size(), Mat<T>(c.max_tokens, c.d_tokens));
  tok_v_ = tok_k_;
  if (c.char_enabled) {
    char_k_.assign(layout_.char_blocks.size(), Mat<T>(c.max_chars(), c.d_chars));
    char_v_ = char_k_;
    cross_k_.assign(layout_.crosses.size(), Mat<T>(c.max_chars(), c.d_tokens));
    cross_v_ = cross_k_;
  }
}

template <typename T>
const Eigen::Matrix<T, 1, Eigen::Dynamic>& IncrementalDecoder<T>::push(int token) {
  const auto& c = p_.config();
  const auto& L = layout_;
  if (n_tokens_ >= c.max_tokens) throw Error(ErrorKind::kContextOverflow, "decoder context is full");
  if (token < 0 || token >= c.n_vocab) throw Error(ErrorKind::kOutOfRange, "token id " + std::to_string(token));
  const int pos = n_tokens_;

  if (c.char_enabled) {
    const TokenChars tc = chars_of(v_, token);
    const int added = static_cast<int>(tc.char_ids.size());
    if (n_chars_ + added > c.max_chars()) throw Error(ErrorKind::kContextOverflow, "character context is full");
    if (added > c.max_token_chars) throw Error(ErrorKind::kContextOverflow, "token longer than max_token_chars");
    const auto emb = weight(p_, L.char_emb);
    const auto intra = weight(p_, L.intra_pos);
    Mat<T> e(added, c.d_chars);
    for (int i = 0; i < added; ++i) {
      e.row(i) = emb.row(tc.char_ids[static_cast<size_t>(i)]) + intra.row(tc.intra_pos[static_cast<size_t>(i)]);
    }
    const AttnShape shape{c.char_heads, static_cast<double>(char_scale_)};
    for (size_t b = 0; b < L.char_blocks.size(); ++b) {
      const auto& blk = L.char_blocks[b];
      cached_attention<T>(p_, blk.ln1_g, blk.ln1_b, blk.attn, e, &char_k_[b], &char_v_[b], n_chars_, char_k_[b],
                          char_v_[b], n_chars_ + added, shape);
      mlp_rows<T>(p_, blk, e);
    }
    Mat<T> f;
    ln_forward<T>(e, p_.data(L.char_lnf_g), p_.data(L.char_lnf_b), f, nullptr);
    f.rowwise() += weight(p_, L.inter_pos).row(pos);
    for (size_t s = 0; s < L.crosses.size(); ++s) {
      const auto& a = L.crosses[s].attn;
      Mat<T> k, vv;
      linear_forward<T>(f, p_, a.wk, a.bk, k);
      linear_forward<T>(f, p_, a.wv, a.bv, vv);
      cross_k_[s].middleRows(n_chars_, added) = k;
      cross_v_[s].middleRows(n_chars_, added) = vv;
    }
    n_chars_ += added;
  }

  Mat<T> x = weight(p_, L.tok_emb).row(token) + weight(p_, L.pos_emb).row(pos);
  const AttnShape shape{c.n_heads, static_cast<double>(tok_scale_)};
  for (size_t l = 0; l < L.blocks.size(); ++l) {
    const auto& blk = L.blocks[l];
    cached_attention<T>(p_, blk.ln1_g, blk.ln1_b, blk.attn, x, &tok_k_[l], &tok_v_[l], pos, tok_k_[l], tok_v_[l],
                        pos + 1, shape);
    const int slot = L.cross_slot[l];
    if (slot >= 0) {
      const auto& cr = L.crosses[static_cast<size_t>(slot)];
      cached_attention<T>(p_, cr.ln_g, cr.ln_b, cr.attn, x, nullptr, nullptr, 0,
                          cross_k_[static_cast<size_t>(slot)], cross_v_[static_cast<size_t>(slot)], n_chars_, shape);
    }
    mlp_rows<T>(p_, blk, x);
  }
  Mat<T> hf;
  ln_forward<T>(x, p_.data(L.lnf_g), p_.data(L.lnf_b), hf, nullptr);
  logits_ = (hf * weight(p_, L.w_out)) * out_mult_;
  if (!logits_.allFinite()) throw Error(ErrorKind::kNumericFailure, "non-finite logits while decoding");
  ++n_tokens_;
  return logits_;
}

template <typename T>
GenerateResult generate(const ParamStore<T>& p, const Vocabulary& v, std::span<const int> prompt, int max_new) {
  const auto& c = p.config();
  if (prompt.empty()) throw Error(ErrorKind::kInvalidArgument, "empty prompt");
  if (static_cast<int>(prompt.size()) > c.max_tokens) {
    throw Error(ErrorKind::kContextOverflow, "prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_tokens");
  }
  IncrementalDecoder<T> dec(p, v);
  const Eigen::Matrix<T, 1, Eigen::Dynamic>* logits = nullptr;
  for (int id : prompt) logits = &dec.push(id);
  GenerateResult result;
  for (int step = 0; step < max_new; ++step) {
    Eigen::Index next = 0;
    logits->maxCoeff(&next);
    if (static_cast<int>(next) == v.eos_id()) {
      result.hit_eos = true;
      break;
    }
    result.ids.push_back(static_cast<int>(next));
    if (step + 1 == max_new || dec.length() >= c.max_tokens) break;
    logits = &dec.push(static_cast<int>(next));
  }
  return result;
}

#define CHARLAB_INSTANTIATE(T)                                                                                   \
  template ParamStore<T> init_parameters<T>(std::shared_ptr<const Layout>, const MupPlan&, uint64_t);          \
  template ParamStore<T> init_parameters<T>(const ModelConfig&, uint64_t);                                     \
  template Matrix<T> encode_chars<T>(const ParamStore<T>&, const CharStream&);                                 \
  template Matrix<T> forward<T>(const ParamStore<T>&, std::span<const int>, const CharStream&);                \
  template Matrix<T> forward<T>(const ParamStore<T>&, const Vocabulary&, std::span<const int>);                \
  template LossResult loss_and_grads<T>(const ParamStore<T>&, const Vocabulary&, std::span<const TrainSequence>, \
                                        ParamStore<T>*, bool, ActivationProbe*);                               \
  template class IncrementalDecoder<T>;                                                                        \
  template GenerateResult generate<T>(const ParamStore<T>&, const Vocabulary&, std::span<const int>, int);

CHARLAB_INSTANTIATE(float)
CHARLAB_INSTANTIATE(double)

#undef CHARLAB_INSTANTIATE

}  // namespace charlab
