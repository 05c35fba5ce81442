#include "charlab/run.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "charlab/error.hpp"

#ifndef CHARLAB_GIT_DESCRIBE
#define CHARLAB_GIT_DESCRIBE "unknown"
#endif

namespace charlab {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorKind::kInvalidArgument, what); }

void check_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) invalid(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) invalid("unknown " + where + " key '" + key + "'");
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace

void to_json(nlohmann::json& j, const RunConfig& c) {
  nlohmann::json vocab;
  if (c.vocab.path) {
    vocab = {{"path", *c.vocab.path}};
  } else {
    vocab = {{"seed", c.vocab.seed}, {"vocab_size", c.vocab.vocab_size}, {"k", c.vocab.k}};
  }
  j = nlohmann::json{{"run_id", c.run_id},
                     {"vocab", vocab},
                     {"model", c.model},
                     {"schedule", c.schedule},
                     {"analysis", {{"threshold", c.analysis.threshold}, {"exponent", c.analysis.exponent}}},
                     {"out_dir", c.out_dir},
                     {"strict_determinism", c.strict_determinism}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  try {
    check_keys(j, {"run_id", "vocab", "model", "schedule", "analysis", "out_dir", "strict_determinism"}, "run config");
    if (j.contains("run_id")) c.run_id = j.at("run_id").get<std::string>();
    if (j.contains("vocab")) {
      const auto& v = j.at("vocab");
      check_keys(v, {"path", "seed", "vocab_size", "k"}, "vocab");
      if (v.contains("path")) {
        if (v.size() != 1) invalid("vocab takes either a path or build arguments");
        c.vocab.path = v.at("path").get<std::string>();
      }
      if (v.contains("seed")) c.vocab.seed = v.at("seed").get<uint64_t>();
      if (v.contains("vocab_size")) c.vocab.vocab_size = v.at("vocab_size").get<int>();
      if (v.contains("k")) c.vocab.k = v.at("k").get<int>();
    }
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("schedule")) from_json(j.at("schedule"), c.schedule);
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      check_keys(a, {"threshold", "exponent"}, "analysis");
      if (a.contains("threshold")) c.analysis.threshold = a.at("threshold").get<double>();
      if (a.contains("exponent")) c.analysis.exponent = a.at("exponent").get<double>();
    }
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("strict_determinism")) c.strict_determinism = j.at("strict_determinism").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    invalid(std::string("bad run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedFile, path.string() + ": " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  if (c.vocab.path && std::filesystem::path(*c.vocab.path).is_relative()) {
    c.vocab.path = (path.parent_path() / *c.vocab.path).string();
  }
  return c;
}

Vocabulary resolve_vocab(const VocabSpec& spec) {
  if (spec.path) return load_vocab(*spec.path);
  return build_vocab(spec.seed, spec.vocab_size, spec.k);
}

std::filesystem::path output_root(const std::string& explicit_dir) {
  if (!explicit_dir.empty()) return explicit_dir;
  if (const char* env = std::getenv("CHARLAB_OUT"); env && *env) return env;
  return "runs";
}

void prepare_output(const std::filesystem::path& path, bool force) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) return;
  const bool empty_dir = fs::is_directory(path) && fs::is_empty(path);
  if (empty_dir) return;
  if (!force) throw Error(ErrorKind::kIo, path.string() + " already exists (use --force to overwrite)");
  fs::remove_all(path);
}

std::string git_describe() { return CHARLAB_GIT_DESCRIBE; }

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::filesystem::path run_training(const RunConfig& input, const RunOptions& options) {
  RunConfig config = input;
  const Vocabulary v = resolve_vocab(config.vocab);
  if (config.model.n_vocab == 0) config.model.n_vocab = v.size();
  validate_training(config.model, v, config.schedule);
  if (config.run_id.empty() || config.run_id.find('/') != std::string::npos) invalid("run_id must be a plain name");

  const auto dir = output_root(config.out_dir) / config.run_id;
  prepare_output(dir, options.force);
  std::filesystem::create_directories(dir / "checkpoints");

  save_vocab(v, dir / "vocab.json");
  nlohmann::json cfg = config;
  cfg["vocab"] = {{"path", "vocab.json"}};
  write_text(dir / "config.json", cfg.dump(2) + "\n");

  nlohmann::ordered_json manifest;
  manifest["run_id"] = config.run_id;
  manifest["config"] = nlohmann::json(config.model);
  manifest["schedule"] = nlohmann::json(config.schedule);
  manifest["vocab_path"] = "vocab.json";
  manifest["git_describe"] = git_describe();
  manifest["started_at"] = utc_timestamp();
  manifest["cross_layers"] = config.model.cross_layers();
  manifest["strict_determinism"] = config.strict_determinism;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  std::ofstream train_log(dir / "train_log.csv", std::ios::binary);
  if (!metrics || !train_log) throw Error(ErrorKind::kIo, "cannot open output files in " + dir.string());
  train_log << "step,loss,lr\n";
  train_log << std::setprecision(9);

  TrainSinks sinks;
  sinks.metric = [&](const MetricsRecord& r) {
    metrics << metrics_line(r) << '\n';
    metrics.flush();
    if (!metrics) throw Error(ErrorKind::kIo, "metrics write failed");
    if (options.log && r.task_id < 0) {
      *options.log << "[" << config.run_id << "] step " << r.step << ' ' << r.task << " accuracy " << r.accuracy
                   << std::endl;
    }
  };
  sinks.checkpoint = [&](const Checkpoint& c) {
    std::ostringstream name;
    name << "step_" << std::setw(7) << std::setfill('0') << c.step << ".ckpt";
    save_checkpoint(dir / "checkpoints" / name.str(), c);
  };
  sinks.progress = [&](int step, double loss, double lr) {
    train_log << step << ',' << loss << ',' << lr << '\n';
    if (options.log && options.log_every > 0 && step % options.log_every == 0) {
      *options.log << "[" << config.run_id << "] step " << step << " loss " << loss << std::endl;
    }
  };

  TrainOptions topt;
  topt.run_id = config.run_id;
  topt.jobs = config.strict_determinism ? 1 : options.jobs;
  train(config.model, v, config.schedule, sinks, topt);
  train_log.flush();
  if (!train_log) throw Error(ErrorKind::kIo, "train log write failed");
  return dir;
}

}  // namespace charlab
