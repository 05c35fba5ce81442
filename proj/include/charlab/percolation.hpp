#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "charlab/rng.hpp"

namespace charlab {

// Right-hand nodes: plain characters, or (character, position) pairs.
enum class PropertyMode { kCharacter, kCharPosition };

const char* to_string(PropertyMode mode);
PropertyMode property_mode_from_string(const std::string& s);

// Tokens are nodes 0..n_tokens-1, properties follow at n_tokens..n_tokens+n_props-1.
struct BipartiteGraph {
  int n_tokens = 0;
  int n_props = 0;
  std::vector<std::pair<int, int>> edges;  // (token, property index)

  int n_nodes() const { return n_tokens + n_props; }
};

class UnionFind {
 public:
  UnionFind(int n_nodes, int n_tokens);

  int find(int x);
  // Returns the root of the merged component.
  int unite(int a, int b);
  int size(int x) { return size_[static_cast<size_t>(find(x))]; }
  int tokens(int x) { return tokens_[static_cast<size_t>(find(x))]; }

 private:
  std::vector<int> parent_, size_, tokens_;
};

struct ComponentSize {
  int size = 0;    // nodes
  int tokens = 0;  // token nodes inside
  bool operator==(const ComponentSize&) const = default;
};

// Largest component by node count; ties go to the one with more tokens.
ComponentSize giant_component(const BipartiteGraph& g);

// Edge count after which some component first holds at least
// criterion * n_tokens tokens, adding edges in the given order.
std::optional<int64_t> first_giant_step(int n_tokens, int n_props, std::span<const std::pair<int, int>> edges,
                                        double criterion);

struct SimulateOptions {
  int alphabet_size = 52;
  double criterion = 0.5;
  PropertyMode mode = PropertyMode::kCharacter;
};

// Samples a vocabulary of distinct words, shuffles its |V|*K incidences and
// returns the percolation step (none if the criterion is never met).
std::optional<int64_t> simulate(int vocab_size, int k, const SimulateOptions& options, Rng& rng);

// The incidence list of a freshly sampled vocabulary, before shuffling.
BipartiteGraph sample_incidences(int vocab_size, int k, const SimulateOptions& options, Rng& rng);

struct ScalingSample {
  double vocab_size = 0;
  double k = 0;
  double t_c = 0;
};

struct ScalingFit {
  double exponent = 0.0;
  double intercept = 0.0;  // log t_c = intercept + exponent * log(|V| K)
  double residual = 0.0;   // root mean square of the log residuals
  size_t n = 0;
};

// Least squares on log t_c against log(|V| K); needs three samples spanning a decade.
ScalingFit scaling_fit(std::span<const ScalingSample> samples);

struct PercolationRow {
  int vocab_size = 0;
  int k = 0;
  int trial = 0;
  std::optional<int64_t> t_c;
};

struct PercolationGrid {
  std::vector<int> vocab_sizes;
  std::vector<int> ks;
  int trials = 50;
  uint64_t seed = 0;
  SimulateOptions sim;
  double hypothesis = 0.5;
  double band = 0.15;
};

struct PercolationResult {
  std::vector<PercolationRow> rows;
  std::vector<ScalingSample> medians;
  ScalingFit fit;
  bool within_band = false;
  std::string verdict;
};

// Trials run on independent streams and are reduced in (|V|, K, trial) order.
PercolationResult run_percolation(const PercolationGrid& grid, int jobs = 1);

// Rows (vocab_size, K, mode, criterion, trial, t_c), then one "#summary" row.
std::string percolation_csv(const PercolationGrid& grid, const PercolationResult& result);

}  // namespace charlab
