#include "charlab/percolation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "charlab/error.hpp"
#include "charlab/parallel.hpp"

namespace charlab {

const char* to_string(PropertyMode mode) {
  return mode == PropertyMode::kCharacter ? "char" : "char_position";
}

PropertyMode property_mode_from_string(const std::string& s) {
  if (s == "char") return PropertyMode::kCharacter;
  if (s == "char_position") return PropertyMode::kCharPosition;
  throw Error(ErrorKind::kInvalidArgument, "unknown property mode '" + s + "'");
}

UnionFind::UnionFind(int n_nodes, int n_tokens)
    : parent_(static_cast<size_t>(n_nodes)), size_(static_cast<size_t>(n_nodes), 1), tokens_(static_cast<size_t>(n_nodes), 0) {
  std::iota(parent_.begin(), parent_.end(), 0);
  for (int i = 0; i < n_tokens; ++i) tokens_[static_cast<size_t>(i)] = 1;
}

int UnionFind::find(int x) {
  auto u = static_cast<size_t>(x);
  while (parent_[u] != static_cast<int>(u)) {
    parent_[u] = parent_[static_cast<size_t>(parent_[u])];
    u = static_cast<size_t>(parent_[u]);
  }
  return static_cast<int>(u);
}

int UnionFind::unite(int a, int b) {
  auto ra = static_cast<size_t>(find(a));
  auto rb = static_cast<size_t>(find(b));
  if (ra == rb) return static_cast<int>(ra);
  if (size_[ra] < size_[rb]) std::swap(ra, rb);
  parent_[rb] = static_cast<int>(ra);
  size_[ra] += size_[rb];
  tokens_[ra] += tokens_[rb];
  return static_cast<int>(ra);
}

namespace {

void check_edge(const BipartiteGraph& g, const std::pair<int, int>& e) {
  if (e.first < 0 || e.first >= g.n_tokens || e.second < 0 || e.second >= g.n_props) {
    throw Error(ErrorKind::kOutOfRange, "edge endpoint out of range");
  }
}

}  // namespace

ComponentSize giant_component(const BipartiteGraph& g) {
  UnionFind uf(g.n_nodes(), g.n_tokens);
  for (const auto& e : g.edges) {
    check_edge(g, e);
    uf.unite(e.first, g.n_tokens + e.second);
  }
  ComponentSize best;
  for (int x = 0; x < g.n_nodes(); ++x) {
    if (uf.find(x) != x) continue;
    const ComponentSize c{uf.size(x), uf.tokens(x)};
    if (c.size > best.size || (c.size == best.size && c.tokens > best.tokens)) best = c;
  }
  return best;
}

std::optional<int64_t> first_giant_step(int n_tokens, int n_props, std::span<const std::pair<int, int>> edges,
                                        double criterion) {
  if (!(criterion > 0.0 && criterion <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "criterion must lie in (0, 1]");
  const double need = criterion * n_tokens;
  UnionFind uf(n_tokens + n_props, n_tokens);
  for (size_t i = 0; i < edges.size(); ++i) {
    const auto& [t, p] = edges[i];
    if (t < 0 || t >= n_tokens || p < 0 || p >= n_props) throw Error(ErrorKind::kOutOfRange, "edge endpoint out of range");
    const int root = uf.unite(t, n_tokens + p);
    if (uf.tokens(root) >= need) return static_cast<int64_t>(i + 1);
  }
  return std::nullopt;
}

BipartiteGraph sample_incidences(int vocab_size, int k, const SimulateOptions& options, Rng& rng) {
  if (vocab_size <= 0 || k <= 0 || options.alphabet_size <= 0) {
    throw Error(ErrorKind::kInvalidArgument, "sizes must be positive");
  }
  if (std::log(static_cast<double>(vocab_size)) > k * std::log(static_cast<double>(options.alphabet_size)) + 1e-9) {
    throw Error(ErrorKind::kInfeasibleUniqueness, "more tokens than distinct words");
  }
  const auto a = static_cast<uint64_t>(options.alphabet_size);
  BipartiteGraph g;
  g.n_tokens = vocab_size;
  g.n_props = options.mode == PropertyMode::kCharacter ? options.alphabet_size : options.alphabet_size * k;
  g.edges.reserve(static_cast<size_t>(vocab_size) * static_cast<size_t>(k));
  std::unordered_set<std::string> seen;
  std::vector<int> word(static_cast<size_t>(k));
  for (int t = 0; t < vocab_size; ++t) {
    for (;;) {
      std::string key;
      for (int i = 0; i < k; ++i) {
        word[static_cast<size_t>(i)] = static_cast<int>(rng.uniform(a));
        key += std::to_string(word[static_cast<size_t>(i)]) + ',';
      }
      if (seen.insert(key).second) break;
    }
    for (int i = 0; i < k; ++i) {
      const int c = word[static_cast<size_t>(i)];
      g.edges.emplace_back(t, options.mode == PropertyMode::kCharacter ? c : c * k + i);
    }
  }
  return g;
}

std::optional<int64_t> simulate(int vocab_size, int k, const SimulateOptions& options, Rng& rng) {
  if (!(options.criterion > 0.0 && options.criterion <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "criterion must lie in (0, 1]");
  }
  auto g = sample_incidences(vocab_size, k, options, rng);
  rng.shuffle(g.edges);
  return first_giant_step(g.n_tokens, g.n_props, g.edges, options.criterion);
}

ScalingFit scaling_fit(std::span<const ScalingSample> samples) {
  if (samples.size() < 3) throw Error(ErrorKind::kInsufficientData, "scaling fit needs at least three samples");
  std::vector<double> x, y;
  for (const auto& s : samples) {
    if (s.vocab_size <= 0 || s.k <= 0 || s.t_c <= 0) throw Error(ErrorKind::kInvalidArgument, "samples must be positive");
    x.push_back(std::log(s.vocab_size * s.k));
    y.push_back(std::log(s.t_c));
  }
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (*hi - *lo < std::log(10.0) - 1e-12) {
    throw Error(ErrorKind::kInsufficientData, "samples must span at least one decade of |V|*K");
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  ScalingFit f;
  f.n = x.size();
  f.exponent = sxy / sxx;
  f.intercept = my - f.exponent * mx;
  double ss = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.exponent * x[i]);
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  return f;
}

PercolationResult run_percolation(const PercolationGrid& grid, int jobs) {
  if (grid.trials <= 0) throw Error(ErrorKind::kInvalidArgument, "trials must be positive");
  if (!(grid.sim.criterion > 0.0 && grid.sim.criterion <= 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "criterion must lie in (0, 1]");
  }
  PercolationResult result;
  for (int vs : grid.vocab_sizes) {
    for (int k : grid.ks) {
      for (int t = 0; t < grid.trials; ++t) result.rows.push_back({vs, k, t, std::nullopt});
    }
  }
  parallel_for(result.rows.size(), jobs, [&](size_t i) {
    auto& row = result.rows[i];
    Rng rng = Rng::stream(grid.seed, (static_cast<uint64_t>(row.vocab_size) << 16) | static_cast<uint64_t>(row.k),
                          static_cast<uint64_t>(row.trial));
    row.t_c = simulate(row.vocab_size, row.k, grid.sim, rng);
  });

  for (size_t start = 0; start < result.rows.size(); start += static_cast<size_t>(grid.trials)) {
    std::vector<double> values;
    for (size_t i = start; i < start + static_cast<size_t>(grid.trials); ++i) {
      // A trial that never percolates counts as later than any finite one.
      values.push_back(result.rows[i].t_c ? static_cast<double>(*result.rows[i].t_c)
                                          : std::numeric_limits<double>::infinity());
    }
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    if (std::isfinite(median)) {
      result.medians.push_back({static_cast<double>(result.rows[start].vocab_size),
                                static_cast<double>(result.rows[start].k), median});
    }
  }

  std::ostringstream verdict;
  try {
    result.fit = scaling_fit(result.medians);
    result.within_band = std::abs(result.fit.exponent - grid.hypothesis) <= grid.band;
    verdict.precision(4);
    if (result.within_band) {
      verdict << "fitted exponent " << result.fit.exponent << " agrees with " << grid.hypothesis << " within +/-"
              << grid.band;
    } else {
      verdict << "DISCREPANCY: fitted exponent " << result.fit.exponent << " lies outside " << grid.hypothesis
              << " +/- " << grid.band;
    }
  } catch (const Error& e) {
    verdict << "no fit: " << e.what();
  }
  result.verdict = verdict.str();
  return result;
}

std::string percolation_csv(const PercolationGrid& grid, const PercolationResult& result) {
  std::ostringstream out;
  out.precision(10);
  out << "vocab_size,K,mode,criterion,trial,t_c\n";
  for (const auto& r : result.rows) {
    out << r.vocab_size << ',' << r.k << ',' << to_string(grid.sim.mode) << ',' << grid.sim.criterion << ','
        << r.trial << ',';
    if (r.t_c) out << *r.t_c;
    out << '\n';
  }
  out << "#summary,exponent=" << result.fit.exponent << ",intercept=" << result.fit.intercept
      << ",residual=" << result.fit.residual << ",hypothesis=" << grid.hypothesis << ",band=" << grid.band
      << ",within_band=" << (result.within_band ? "true" : "false") << ",verdict=" << result.verdict << '\n';
  return out.str();
}

}  // namespace charlab
