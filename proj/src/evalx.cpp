#include "charlab/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "charlab/error.hpp"

namespace charlab {

namespace {

using ojson = nlohmann::ordered_json;

double scale_of(const EmergencePoint& p, double exponent) {
  return std::pow(static_cast<double>(p.vocab_size) * p.k, exponent);
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

ojson optional_json(const std::optional<double>& x) { return x ? ojson(*x) : ojson(nullptr); }

ojson collapse_json(std::span<const EmergencePoint> points, double exponent) {
  try {
    const auto s = collapse(points, exponent);
    ojson grid = ojson::array();
    for (const auto& [e, cv] : s.grid) grid.push_back({e, cv});
    return {{"scale_exponent", s.exponent}, {"raw_dispersion", s.raw_cv},   {"scaled_dispersion", s.scaled_cv},
            {"best_exponent", s.best_exponent}, {"best_dispersion", s.best_cv}, {"n_points", s.n_points},
            {"grid", grid}};
  } catch (const Error& e) {
    return {{"error", e.what()}};
  }
}

}  // namespace

std::optional<int> emergence_step(std::span<const CurvePoint> curve, double threshold) {
  if (curve.empty()) throw Error(ErrorKind::kEmptyInput, "empty accuracy curve");
  for (size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].step <= curve[i - 1].step) throw Error(ErrorKind::kInvalidArgument, "curve steps must increase");
  }
  for (const auto& p : curve) {
    if (p.accuracy > threshold) return p.step;
  }
  return std::nullopt;
}

double coefficient_of_variation(std::span<const double> xs) {
  if (xs.empty()) throw Error(ErrorKind::kEmptyInput, "no values");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= n;
  if (var == 0.0) return 0.0;
  return std::sqrt(var) / mean;
}

CollapseStats collapse(std::span<const EmergencePoint> points, double exponent) {
  std::vector<EmergencePoint> kept;
  for (const auto& p : points) {
    if (p.step) {
      if (p.vocab_size <= 0 || p.k <= 0.0) throw Error(ErrorKind::kInvalidArgument, "vocab size and K must be positive");
      kept.push_back(p);
    }
  }
  if (kept.size() < 2) {
    throw Error(ErrorKind::kInsufficientData,
                "collapse needs at least two emergence points, got " + std::to_string(kept.size()));
  }
  auto cv_at = [&](double e) {
    std::vector<double> xs;
    for (const auto& p : kept) xs.push_back(*p.step / scale_of(p, e));
    return coefficient_of_variation(xs);
  };
  CollapseStats s;
  s.exponent = exponent;
  s.n_points = kept.size();
  s.raw_cv = cv_at(0.0);
  s.scaled_cv = cv_at(exponent);
  s.best_cv = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 20; ++i) {
    const double e = i / 20.0;
    const double cv = cv_at(e);
    s.grid.emplace_back(e, cv);
    // Near-equal values tie and keep the smaller exponent.
    if (cv < s.best_cv - 1e-12) {
      s.best_cv = cv;
      s.best_exponent = e;
    }
  }
  return s;
}

Monotonicity monotonicity(std::span<const EmergencePoint> points) {
  std::vector<EmergencePoint> sorted(points.begin(), points.end());
  std::vector<int> sizes;
  for (const auto& p : sorted) sizes.push_back(p.vocab_size);
  std::sort(sizes.begin(), sizes.end());
  if (std::unique(sizes.begin(), sizes.end()) - sizes.begin() < 3) {
    throw Error(ErrorKind::kInsufficientData, "monotonicity needs at least three vocabulary sizes");
  }
  constexpr double kNever = std::numeric_limits<double>::infinity();
  std::vector<double> v, t;
  for (const auto& p : sorted) {
    v.push_back(p.vocab_size);
    t.push_back(p.step.value_or(kNever));
  }
  Monotonicity m;
  m.spearman = pearson(average_ranks(v), average_ranks(t));
  std::vector<size_t> order(sorted.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return v[a] < v[b] || (v[a] == v[b] && t[a] < t[b]);
  });
  m.non_decreasing = true;
  for (size_t i = 1; i < order.size(); ++i) {
    if (t[order[i]] < t[order[i - 1]]) m.non_decreasing = false;
  }
  return m;
}

RunData load_run(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(ErrorKind::kIo, "no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("bad manifest: ") + e.what());
  }
  RunData r;
  try {
    r.run_id = manifest.at("run_id").get<std::string>();
    ModelConfig c;
    from_json(manifest.at("config"), c);
    r.char_enabled = c.char_enabled;
    r.insertion = to_string(c.insertion);
    std::filesystem::path vocab_path = manifest.at("vocab_path").get<std::string>();
    if (vocab_path.is_relative()) vocab_path = dir / vocab_path;
    const auto v = load_vocab(vocab_path);
    r.vocab_size = v.n_word_tokens();
    if (v.k()) {
      r.k = *v.k();
    } else {
      double total = 0;
      for (int id : v.word_ids()) total += static_cast<double>(v.entry(id).surface.size());
      r.k = total / std::max<size_t>(1, v.word_ids().size());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, std::string("bad manifest: ") + e.what());
  }
  r.metrics = load_metrics(dir / "metrics.jsonl");
  return r;
}

nlohmann::ordered_json analyze(std::span<const RunData> runs, const AnalysisOptions& options) {
  if (runs.empty()) throw Error(ErrorKind::kEmptyInput, "no runs to analyze");
  ojson report;
  report["threshold"] = options.threshold;
  report["scale_exponent"] = options.exponent;
  ojson runs_json = ojson::array();
  ojson entries = ojson::array();
  ojson curves = ojson::array();

  // (char_enabled) -> mean_char points; (char_enabled, K) -> points for monotonicity.
  std::map<bool, std::vector<EmergencePoint>> by_arch;
  std::map<std::pair<bool, double>, std::vector<EmergencePoint>> by_arch_k;

  for (const auto& run : runs) {
    runs_json.push_back({{"run_id", run.run_id},
                         {"vocab_size", run.vocab_size},
                         {"K", run.k},
                         {"char_enabled", run.char_enabled},
                         {"insertion", run.insertion}});
    // task -> step -> accuracy (later records for the same step win)
    std::map<std::string, std::map<int, double>> series;
    std::vector<std::string> order;
    for (const auto& m : run.metrics) {
      if (!series.contains(m.task)) order.push_back(m.task);
      series[m.task][m.step] = m.accuracy;
    }
    std::stable_sort(order.begin(), order.end(), [](const std::string& a, const std::string& b) {
      auto rank = [](const std::string& t) {
        if (t == "mean_word") return 100;
        if (t == "mean_char") return 101;
        const auto id = task_id_from_code(t);
        return id ? *id : 200;
      };
      return rank(a) < rank(b);
    });
    for (const auto& name : order) {
      std::vector<CurvePoint> curve;
      for (const auto& [step, acc] : series[name]) curve.push_back({step, acc});
      const auto step = emergence_step(curve, options.threshold);
      EmergencePoint point{run.vocab_size, run.k, step ? std::optional<double>(*step) : std::nullopt};
      const ojson scaled = step ? ojson(*step / scale_of(point, options.exponent)) : ojson(nullptr);
      entries.push_back({{"run_id", run.run_id},
                         {"vocab_size", run.vocab_size},
                         {"K", run.k},
                         {"char_enabled", run.char_enabled},
                         {"task", name},
                         {"emergence_step", step ? ojson(*step) : ojson(nullptr)},
                         {"threshold", options.threshold},
                         {"scaled_step", scaled}});
      if (name == "mean_word" || name == "mean_char") {
        ojson pts = ojson::array();
        for (const auto& p : curve) pts.push_back({p.step, p.accuracy});
        curves.push_back({{"run_id", run.run_id},
                          {"vocab_size", run.vocab_size},
                          {"K", run.k},
                          {"char_enabled", run.char_enabled},
                          {"task", name},
                          {"points", pts}});
      }
      if (name == "mean_char") {
        by_arch[run.char_enabled].push_back(point);
        by_arch_k[{run.char_enabled, run.k}].push_back(point);
      }
    }
  }

  ojson coll = ojson::object();
  for (const auto& [arch, points] : by_arch) {
    coll[arch ? "char" : "baseline"] = collapse_json(points, options.exponent);
  }
  ojson mono = ojson::array();
  for (const auto& [key, points] : by_arch_k) {
    ojson item = {{"char_enabled", key.first}, {"K", key.second}};
    ojson sizes = ojson::array(), steps = ojson::array();
    for (const auto& p : points) {
      sizes.push_back(p.vocab_size);
      steps.push_back(optional_json(p.step));
    }
    item["vocab_sizes"] = sizes;
    item["emergence_steps"] = steps;
    try {
      const auto m = monotonicity(points);
      item["spearman"] = m.spearman;
      item["non_decreasing"] = m.non_decreasing;
    } catch (const Error& e) {
      item["error"] = e.what();
    }
    mono.push_back(item);
  }
  report["runs"] = std::move(runs_json);
  report["entries"] = std::move(entries);
  report["curves"] = std::move(curves);
  report["collapse"] = std::move(coll);
  report["monotonicity"] = std::move(mono);
  return report;
}

std::string report_csv(const nlohmann::ordered_json& report) {
  std::ostringstream out;
  out.precision(12);
  out << "run_id,vocab_size,K,task,emergence_step,scaled_step\n";
  for (const auto& e : report.at("entries")) {
    out << e.at("run_id").get<std::string>() << ',' << e.at("vocab_size").get<int>() << ','
        << e.at("K").get<double>() << ',' << e.at("task").get<std::string>() << ',';
    if (!e.at("emergence_step").is_null()) out << e.at("emergence_step").get<int>();
    out << ',';
    if (!e.at("scaled_step").is_null()) out << e.at("scaled_step").get<double>();
    out << '\n';
  }
  return out.str();
}

}  // namespace charlab
