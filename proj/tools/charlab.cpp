#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "charlab/coord_check.hpp"
#include "charlab/error.hpp"
#include "charlab/evalx.hpp"
#include "charlab/parallel.hpp"
#include "charlab/percolation.hpp"
#include "charlab/plot.hpp"
#include "charlab/run.hpp"
#include "charlab/scaling.hpp"
#include "charlab/tasks.hpp"
#include "charlab/vocab.hpp"

namespace fs = std::filesystem;
using namespace charlab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Thrown for argument combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text, bool force) {
  prepare_output(path, force);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

nlohmann::ordered_json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, path.string() + ": " + e.what());
  }
}

int resolve_jobs(int flag) { return flag > 0 ? flag : default_jobs(); }

// "256", "2^8" or a power-of-two range "2^8..2^14".
std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  auto value = [](const std::string& s) -> long long {
    size_t used = 0;
    long long x = 0;
    if (const auto caret = s.find('^'); caret != std::string::npos) {
      const long long base = std::stoll(s.substr(0, caret));
      const long long e = std::stoll(s.substr(caret + 1), &used);
      if (used != s.size() - caret - 1) throw UsageError("bad number '" + s + "'");
      x = std::llround(std::pow(static_cast<double>(base), static_cast<double>(e)));
    } else {
      x = std::stoll(s, &used);
      if (used != s.size()) throw UsageError("bad number '" + s + "'");
    }
    if (x <= 0 || x > (1LL << 30)) throw UsageError("number out of range '" + s + "'");
    return x;
  };
  while (std::getline(ss, item, ',')) {
    try {
      if (const auto dots = item.find(".."); dots != std::string::npos) {
        const std::string lo = item.substr(0, dots), hi = item.substr(dots + 2);
        if (lo.rfind("2^", 0) != 0 || hi.rfind("2^", 0) != 0) throw UsageError("ranges take powers of two: " + item);
        for (long long x = value(lo); x <= value(hi); x *= 2) out.push_back(static_cast<int>(x));
      } else {
        out.push_back(static_cast<int>(value(item)));
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad number list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      const double x = std::stod(item, &used);
      if (used != item.size() || !(x > 0)) throw UsageError("bad value '" + item + "'");
      out.push_back(x);
    } catch (const std::logic_error&) {
      throw UsageError("bad number list '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty number list");
  return out;
}

struct MakeVocabArgs {
  uint64_t seed = 1;
  int vocab_size = 0;
  int k = 0;
  std::string words;
  std::string out;
  bool force = false;
};

int make_vocab(const MakeVocabArgs& a, CLI::App* cmd) {
  Vocabulary v = [&] {
    if (!a.words.empty()) {
      if (cmd->count("--vocab-size") || cmd->count("--k")) throw UsageError("--words excludes --vocab-size and --k");
      std::ifstream in(a.words);
      if (!in) throw Error(ErrorKind::kIo, "cannot read " + a.words);
      std::vector<std::string> words;
      for (std::string w; in >> w;) words.push_back(w);
      return vocab_from_words(words);
    }
    if (!cmd->count("--vocab-size") || !cmd->count("--k")) throw UsageError("--vocab-size and --k are required");
    return build_vocab(a.seed, a.vocab_size, a.k);
  }();
  write_file(a.out, vocab_to_json(v), a.force);
  std::cerr << "wrote " << a.out << ": " << v.n_word_tokens() << " word tokens, " << v.size() << " ids\n";
  return 0;
}

struct GenTasksArgs {
  std::string vocab;
  int n = 10;
  uint64_t seed = 0;
  std::vector<std::string> tasks;
  int n_words = 16;
  int indexed_n_words = 8;
  std::string out;
  bool force = false;
};

int gen_tasks(const GenTasksArgs& a) {
  const auto v = load_vocab(a.vocab);
  std::vector<int> filter;
  for (const auto& code : a.tasks) {
    const auto id = task_id_from_code(code);
    if (!id) throw UsageError("unknown task '" + code + "'");
    filter.push_back(*id);
  }
  if (a.n < 0) throw UsageError("--n must be non-negative");
  TaskOptions options;
  options.n_words = a.n_words;
  options.indexed_n_words = a.indexed_n_words;
  std::ostringstream out;
  for (int i = 0; i < a.n; ++i) {
    Rng rng = Rng::stream(a.seed, static_cast<uint64_t>(i));
    const auto ex = make_example(v, rng, filter, options);
    nlohmann::ordered_json params = nlohmann::ordered_json::array();
    for (const auto& p : ex.params) {
      if (p.domain == ParamDomain::kLetter) {
        params.push_back(std::string(1, static_cast<char>(p.value)));
      } else {
        params.push_back(p.value);
      }
    }
    std::vector<int> all = ex.prompt_ids;
    all.insert(all.end(), ex.target_ids.begin(), ex.target_ids.end());
    nlohmann::ordered_json j;
    j["task_id"] = ex.task_id;
    j["task"] = task(ex.task_id).code;
    j["params"] = params;
    j["prompt_ids"] = ex.prompt_ids;
    j["target_ids"] = ex.target_ids;
    j["text"] = render(v, all);
    out << j.dump() << '\n';
  }
  if (a.out.empty()) {
    std::cout << out.str();
  } else {
    write_file(a.out, out.str(), a.force);
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  bool char_on = false;
  bool char_off = false;
  std::string insertion;
  double width_mult = 0.0;
  std::string parametrization;
  bool strict = false;
  bool force = false;
  int jobs = 0;
  std::string out;
  std::string run_id;
  int steps = 0;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a, CLI::App* cmd) {
  RunConfig config = load_run_config(a.config);
  if (a.char_on && a.char_off) throw UsageError("--char and --no-char are exclusive");
  if (a.char_on) config.model.char_enabled = true;
  if (a.char_off) config.model.char_enabled = false;
  try {
    if (!a.insertion.empty()) config.model.insertion = insertion_from_string(a.insertion);
    if (!a.parametrization.empty()) config.model.parametrization = parametrization_from_string(a.parametrization);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (cmd->count("--width-mult")) {
    if (!(a.width_mult > 0)) throw UsageError("--width-mult must be positive");
    config.model = scale_config(config.model, a.width_mult);
  }
  if (a.strict) config.strict_determinism = true;
  if (!a.out.empty()) config.out_dir = a.out;
  if (!a.run_id.empty()) config.run_id = a.run_id;
  if (cmd->count("--steps")) config.schedule.total_steps = a.steps;

  RunOptions options;
  options.force = a.force;
  options.jobs = resolve_jobs(a.jobs);
  options.log = a.quiet ? nullptr : &std::cerr;
  const auto dir = run_training(config, options);
  std::cout << dir.string() << '\n';
  return 0;
}

struct AnalyzeArgs {
  std::vector<std::string> runs;
  double threshold = kDefaultEmergenceThreshold;
  double exponent = 0.5;
  std::string out;
  std::string plots;
  bool force = false;
};

int analyze_cmd(const AnalyzeArgs& a) {
  std::vector<RunData> runs;
  for (const auto& dir : a.runs) runs.push_back(load_run(dir));
  const auto report = analyze(runs, {a.threshold, a.exponent});

  const fs::path out = a.out;
  fs::path csv = out;
  csv.replace_extension(".csv");
  const fs::path plots = a.plots.empty() ? out.parent_path() / (out.stem().string() + "_plots") : fs::path(a.plots);
  for (const auto& p : {out, csv, plots}) prepare_output(p, a.force);
  write_file(out, report.dump(2) + "\n", a.force);
  write_file(csv, report_csv(report), a.force);
  write_plots(report, plots);

  for (const auto& m : report.at("monotonicity")) {
    std::cout << (m.at("char_enabled").get<bool>() ? "char" : "baseline") << " K=" << m.at("K").get<double>() << ": ";
    if (m.contains("error")) {
      std::cout << m.at("error").get<std::string>() << '\n';
    } else {
      std::cout << "spearman=" << m.at("spearman").get<double>()
                << " non_decreasing=" << (m.at("non_decreasing").get<bool>() ? "true" : "false") << '\n';
    }
  }
  return 0;
}

struct PercolateArgs {
  std::string grid = "default";
  int trials = 50;
  uint64_t seed = 0;
  double criterion = 0.5;
  std::string mode = "char";
  int alphabet = 52;
  double hypothesis = 0.5;
  double band = 0.15;
  int jobs = 0;
  std::string out;
  bool force = false;
};

int percolate_cmd(const PercolateArgs& a) {
  PercolationGrid grid;
  std::string spec = a.grid == "default" ? "2^8..2^14:4,6,8" : a.grid;
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw UsageError("--grid takes SIZES:KS, e.g. 2^8..2^14:4,6,8");
  grid.vocab_sizes = parse_int_list(spec.substr(0, colon));
  grid.ks = parse_int_list(spec.substr(colon + 1));
  grid.trials = a.trials;
  grid.seed = a.seed;
  grid.sim.criterion = a.criterion;
  grid.sim.alphabet_size = a.alphabet;
  try {
    grid.sim.mode = property_mode_from_string(a.mode);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  grid.hypothesis = a.hypothesis;
  grid.band = a.band;
  if (!a.out.empty()) prepare_output(a.out, a.force);

  const auto result = run_percolation(grid, resolve_jobs(a.jobs));
  const auto csv = percolation_csv(grid, result);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_file(a.out, csv, a.force);
  }
  std::cerr << "exponent " << result.fit.exponent << " residual " << result.fit.residual << ": " << result.verdict
            << '\n';
  return 0;
}

struct CoordArgs {
  std::string widths = "1,2,4";
  int steps = 10;
  double lr = 1e-2;
  int batch = 8;
  uint64_t seed = 0;
  std::string parametrization = "both";
  std::string out;
  bool force = false;
};

int coordcheck_cmd(const CoordArgs& a) {
  const auto widths = parse_double_list(a.widths);
  std::vector<Parametrization> which;
  if (a.parametrization == "both") {
    which = {Parametrization::kMup, Parametrization::kStandard};
  } else {
    try {
      which = {parametrization_from_string(a.parametrization)};
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (!a.out.empty()) prepare_output(a.out, a.force);

  const auto v = build_vocab(a.seed, 32, 2);
  CoordCheckOptions options;
  options.steps = a.steps;
  options.lr = a.lr;
  options.batch_size = a.batch;
  options.seed = a.seed;
  std::ostringstream table;
  table << "parametrization," << coord_csv({});
  for (auto p : which) {
    auto base = coord_check_base(v);
    base.parametrization = p;
    const auto rows = coord_check(base, v, widths, options);
    std::istringstream lines(coord_csv(rows));
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) table << to_string(p) << ',' << line << '\n';
    std::cerr << to_string(p) << ": max rms ratio across widths at step " << a.steps << " = "
              << max_rms_ratio(rows, a.steps) << '\n';
  }
  if (a.out.empty()) {
    std::cout << table.str();
  } else {
    write_file(a.out, table.str(), a.force);
  }
  return 0;
}

struct PlotArgs {
  std::string report;
  std::string out;
  bool force = false;
};

int plot_cmd(const PlotArgs& a) {
  const auto report = read_json(a.report);
  if (!report.contains("curves") || !report.contains("entries") || !report.contains("collapse")) {
    throw Error(ErrorKind::kMalformedFile, a.report + " is not an analysis report");
  }
  if (report.at("curves").empty()) throw Error(ErrorKind::kEmptyInput, "report has no curves to plot");
  prepare_output(a.out, a.force);
  for (const auto& p : write_plots(report, a.out)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"charlab: character-aware language model experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", git_describe());

  MakeVocabArgs mv;
  auto* mv_cmd = app.add_subcommand("make-vocab", "Build a vocabulary file");
  mv_cmd->add_option("--seed", mv.seed, "RNG seed");
  mv_cmd->add_option("--vocab-size", mv.vocab_size, "Number of word tokens");
  mv_cmd->add_option("--k", mv.k, "Word length");
  mv_cmd->add_option("--words", mv.words, "Whitespace-separated word list instead of random words");
  mv_cmd->add_option("--out", mv.out, "Output JSON file")->required();
  mv_cmd->add_flag("--force", mv.force, "Overwrite existing output");

  GenTasksArgs gt;
  auto* gt_cmd = app.add_subcommand("gen-tasks", "Print task instances as JSON lines");
  gt_cmd->add_option("--vocab", gt.vocab, "Vocabulary file")->required();
  gt_cmd->add_option("--n", gt.n, "Number of instances");
  gt_cmd->add_option("--seed", gt.seed, "RNG seed");
  gt_cmd->add_option("--task", gt.tasks, "Restrict to task codes (repeatable)");
  gt_cmd->add_option("--n-words", gt.n_words, "Sentence length");
  gt_cmd->add_option("--indexed-n-words", gt.indexed_n_words, "Sentence length for indexed tasks");
  gt_cmd->add_option("--out", gt.out, "Output file (default: stdout)");
  gt_cmd->add_flag("--force", gt.force, "Overwrite existing output");

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train one run");
  tr_cmd->add_option("--config", tr.config, "Run config JSON")->required();
  tr_cmd->add_flag("--char", tr.char_on, "Enable the character module");
  tr_cmd->add_flag("--no-char", tr.char_off, "Disable the character module");
  tr_cmd->add_option("--insertion", tr.insertion, "every|first|middle|last");
  tr_cmd->add_option("--width-mult", tr.width_mult, "Width multiplier applied to the config");
  tr_cmd->add_option("--parametrization", tr.parametrization, "standard|mup");
  tr_cmd->add_flag("--strict-determinism", tr.strict, "Single-threaded bit-reproducible mode");
  tr_cmd->add_option("--out", tr.out, "Output root (default: $CHARLAB_OUT or runs)");
  tr_cmd->add_option("--run-id", tr.run_id, "Override the run id");
  tr_cmd->add_option("--steps", tr.steps, "Override total steps");
  tr_cmd->add_option("--jobs", tr.jobs, "Worker threads (default: $CHARLAB_JOBS or all cores)");
  tr_cmd->add_flag("--force", tr.force, "Overwrite an existing run directory");
  tr_cmd->add_flag("--quiet", tr.quiet, "No progress output");

  AnalyzeArgs an;
  auto* an_cmd = app.add_subcommand("analyze", "Emergence analysis over run directories");
  an_cmd->add_option("--runs", an.runs, "Run directories")->required()->expected(1, -1);
  an_cmd->add_option("--threshold", an.threshold, "Emergence accuracy threshold");
  an_cmd->add_option("--exponent", an.exponent, "Collapse exponent");
  an_cmd->add_option("--out", an.out, "Report JSON")->required();
  an_cmd->add_option("--plots", an.plots, "Plot directory (default: <report>_plots)");
  an_cmd->add_flag("--force", an.force, "Overwrite existing outputs");

  PercolateArgs pc;
  auto* pc_cmd = app.add_subcommand("percolate", "Bipartite percolation simulation");
  pc_cmd->add_option("--grid", pc.grid, "SIZES:KS, e.g. 2^8..2^14:4,6,8, or 'default'");
  pc_cmd->add_option("--trials", pc.trials, "Trials per grid cell");
  pc_cmd->add_option("--seed", pc.seed, "RNG seed");
  pc_cmd->add_option("--criterion", pc.criterion, "Fraction of tokens in the giant component");
  pc_cmd->add_option("--mode", pc.mode, "char|char_position");
  pc_cmd->add_option("--alphabet", pc.alphabet, "Alphabet size");
  pc_cmd->add_option("--hypothesis", pc.hypothesis, "Exponent to compare against");
  pc_cmd->add_option("--band", pc.band, "Acceptance band around the hypothesis");
  pc_cmd->add_option("--jobs", pc.jobs, "Worker threads");
  pc_cmd->add_option("--out", pc.out, "Output CSV (default: stdout)");
  pc_cmd->add_flag("--force", pc.force, "Overwrite existing output");

  CoordArgs cc;
  auto* cc_cmd = app.add_subcommand("coordcheck", "Activation scale across widths");
  cc_cmd->add_option("--widths", cc.widths, "Comma-separated width multipliers");
  cc_cmd->add_option("--steps", cc.steps, "Training steps");
  cc_cmd->add_option("--lr", cc.lr, "Base learning rate");
  cc_cmd->add_option("--batch", cc.batch, "Batch size");
  cc_cmd->add_option("--seed", cc.seed, "RNG seed");
  cc_cmd->add_option("--parametrization", cc.parametrization, "mup|standard|both");
  cc_cmd->add_option("--out", cc.out, "Output CSV (default: stdout)");
  cc_cmd->add_flag("--force", cc.force, "Overwrite existing output");

  PlotArgs pl;
  auto* pl_cmd = app.add_subcommand("plot", "SVG and CSV plots from an analysis report");
  pl_cmd->add_option("--report", pl.report, "Report JSON")->required();
  pl_cmd->add_option("--out", pl.out, "Output directory")->required();
  pl_cmd->add_flag("--force", pl.force, "Overwrite existing output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*mv_cmd) return make_vocab(mv, mv_cmd);
    if (*gt_cmd) return gen_tasks(gt);
    if (*tr_cmd) return train_cmd(tr, tr_cmd);
    if (*an_cmd) return analyze_cmd(an);
    if (*pc_cmd) return percolate_cmd(pc);
    if (*cc_cmd) return coordcheck_cmd(cc);
    if (*pl_cmd) return plot_cmd(pl);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
