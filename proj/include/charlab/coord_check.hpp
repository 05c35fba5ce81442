#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "charlab/config.hpp"
#include "charlab/vocab.hpp"

namespace charlab {

struct CoordRow {
  double width_mult = 1.0;
  int step = 0;
  int layer = 0;
  double rms = 0.0;
};

struct CoordCheckOptions {
  int steps = 10;
  int batch_size = 8;
  double lr = 1e-2;
  uint64_t seed = 0;
  int n_words = 8;
  int indexed_n_words = 8;
};

// One-layer model at width 16 with an 8-wide character encoder over v.
ModelConfig coord_check_base(const Vocabulary& v);

// Trains scale_config(base, m) for each m on the same batches and records
// the RMS of every block's residual output before each update and after the
// last one (steps + 1 rows per layer and width). base.parametrization picks
// standard or muP rules.
std::vector<CoordRow> coord_check(const ModelConfig& base, const Vocabulary& v, const std::vector<double>& m_list,
                                  const CoordCheckOptions& options);

// Largest over layers of max_m rms / min_m rms at the given step.
double max_rms_ratio(const std::vector<CoordRow>& rows, int step);

std::string coord_csv(const std::vector<CoordRow>& rows);

}  // namespace charlab
