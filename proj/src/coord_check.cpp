#include "charlab/coord_check.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "charlab/error.hpp"
#include "charlab/model.hpp"
#include "charlab/scaling.hpp"
#include "charlab/train.hpp"

namespace charlab {

ModelConfig coord_check_base(const Vocabulary& v) {
  ModelConfig c;
  c.n_vocab = v.size();
  c.n_layers = 1;
  c.d_tokens = 16;
  c.n_heads = 2;
  c.d_mlp = 32;
  c.d_chars = 8;
  c.char_heads = 2;
  c.d_char_mlp = 16;
  c.max_tokens = 128;
  c.max_token_chars = std::max(4, v.max_surface_length());
  return c;
}

std::vector<CoordRow> coord_check(const ModelConfig& base, const Vocabulary& v, const std::vector<double>& m_list,
                                  const CoordCheckOptions& options) {
  if (options.steps < 1) throw Error(ErrorKind::kInvalidArgument, "coordinate check needs at least one step");
  if (m_list.empty()) throw Error(ErrorKind::kInvalidArgument, "no widths given");

  TrainSchedule s;
  s.total_steps = options.steps;
  s.eval_every = options.steps;
  s.batch_size = options.batch_size;
  s.base_lr = options.lr;
  s.seed = options.seed;
  s.n_words = options.n_words;
  s.indexed_n_words = options.indexed_n_words;

  std::vector<std::vector<TrainSequence>> batches;
  for (int step = 0; step <= options.steps; ++step) {
    std::vector<TrainSequence> batch;
    for (const auto& inst : make_batch(v, s, step)) {
      TrainSequence seq{inst.prompt_ids, static_cast<int>(inst.prompt_ids.size())};
      seq.ids.insert(seq.ids.end(), inst.target_ids.begin(), inst.target_ids.end());
      batch.push_back(std::move(seq));
    }
    batches.push_back(std::move(batch));
  }

  std::vector<CoordRow> rows;
  for (double m : m_list) {
    const ModelConfig c = scale_config(base, m);
    const auto layout = std::make_shared<const Layout>(c);
    const MupPlan plan = mup_plan(c, options.lr);
    auto p = init_parameters<float>(layout, plan, options.seed);
    ParamStore<float> grads(layout);
    Adam adam(plan, s, p.values.size());
    for (int step = 0; step <= options.steps; ++step) {
      ActivationProbe probe;
      grads.zero();
      const bool update = step < options.steps;
      loss_and_grads<float>(p, v, batches[static_cast<size_t>(step)], update ? &grads : nullptr, false, &probe);
      const auto rms = probe.rms();
      for (size_t l = 0; l < rms.size(); ++l) {
        if (!std::isfinite(rms[l])) throw Error(ErrorKind::kNumericFailure, "non-finite activation RMS");
        rows.push_back({m, step, static_cast<int>(l), rms[l]});
      }
      if (update) adam.step(p, grads, options.lr);
    }
  }
  return rows;
}

double max_rms_ratio(const std::vector<CoordRow>& rows, int step) {
  std::map<int, std::pair<double, double>> range;  // layer -> (min, max)
  for (const auto& r : rows) {
    if (r.step != step) continue;
    auto [it, fresh] = range.try_emplace(r.layer, r.rms, r.rms);
    if (!fresh) {
      it->second.first = std::min(it->second.first, r.rms);
      it->second.second = std::max(it->second.second, r.rms);
    }
  }
  if (range.empty()) throw Error(ErrorKind::kInsufficientData, "no rows at step " + std::to_string(step));
  double worst = 1.0;
  for (const auto& [layer, mm] : range) worst = std::max(worst, mm.second / mm.first);
  return worst;
}

std::string coord_csv(const std::vector<CoordRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "width_mult,step,layer,rms\n";
  for (const auto& r : rows) out << r.width_mult << ',' << r.step << ',' << r.layer << ',' << r.rms << '\n';
  return out.str();
}

}  // namespace charlab
