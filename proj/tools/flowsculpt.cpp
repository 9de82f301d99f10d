// flowsculpt command-line interface.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "flowsculpt/checkpoint.hpp"
#include "flowsculpt/config.hpp"
#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"
#include "flowsculpt/service.hpp"
#include "flowsculpt/solver.hpp"
#include "flowsculpt/trainer.hpp"

// After Eigen: <resolv.h> defines a macro named _res.
#include "httplib.h"

namespace fs = std::filesystem;
using namespace flowsculpt;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;

// Converts errors in flag values into usage errors.
template <typename F>
auto flag_value(const std::string& flag, F&& parse) -> decltype(parse()) {
  try {
    return parse();
  } catch (const Error& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_text_file(out, text);
  }
}

std::shared_ptr<const PillarLibrary> load_library(const std::string& path, const std::string& grid) {
  if (!path.empty()) return std::make_shared<const PillarLibrary>(parse_library(read_text_file(path)));
  const GridSpec g = flag_value("--grid", [&] { return GridSpec::parse(grid); });
  return std::make_shared<const PillarLibrary>(build_surrogate_library(g));
}

// "lo,hi" fractions or a ShapeDocument path.
FlowShape load_inlet(const std::string& spec, const GridSpec& grid) {
  if (spec.empty()) return make_inlet(grid);
  if (fs::exists(spec)) {
    FlowShape s = parse_shape(read_text_file(spec));
    if (s.grid() != grid) throw ShapeError("inlet grid " + s.grid().to_string() + " does not match library grid " + grid.to_string());
    return s;
  }
  return flag_value("--inlet", [&] {
    const auto comma = spec.find(',');
    if (comma == std::string::npos) throw ParameterError("expected 'lo,hi' or an existing shape file, got '" + spec + "'");
    std::size_t used_lo = 0, used_hi = 0;
    const std::string lo_text = spec.substr(0, comma), hi_text = spec.substr(comma + 1);
    double lo = 0, hi = 0;
    try {
      lo = std::stod(lo_text, &used_lo);
      hi = std::stod(hi_text, &used_hi);
    } catch (const std::exception&) {
      throw ParameterError("expected 'lo,hi' fractions, got '" + spec + "'");
    }
    if (used_lo != lo_text.size() || used_hi != hi_text.size()) throw ParameterError("expected 'lo,hi' fractions, got '" + spec + "'");
    return make_inlet(grid, lo, hi);
  });
}

FlowShape load_target(const std::string& path, const GridSpec& grid) {
  FlowShape t = parse_shape(read_text_file(path));
  if (t.grid() != grid) throw ShapeError("target grid " + t.grid().to_string() + " does not match library grid " + grid.to_string());
  return t;
}

LoadedRun load_run(const std::string& config_path, std::optional<std::uint64_t> seed) {
  const std::string text = read_text_file(config_path);
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + config_path + " is not valid JSON");
  return load_run_config(j, fs::path(config_path).parent_path(), seed);
}

void print_run_summary(const RunArtifacts& run, const fs::path& dir) {
  const auto& c = run.counters;
  std::cout << run.run_id << ": episodes " << run.episodes.size() << ", successes " << run.total_successes()
            << ", steps " << c.global_steps << ", gradient steps " << c.gradient_steps << ", target syncs "
            << c.target_syncs;
  if (!run.windows.empty()) std::cout << ", final window " << run.windows.back().frequency();
  std::cout << "\nartifacts: " << dir.string() << "\n";
}

void print_suggestions(const std::vector<Candidate>& candidates) {
  std::printf("%-8s %-28s %-10s %s\n", "rank", "sequence", "pmr", "success");
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    std::printf("%-8s %-28s %-10.6f %s\n", ("Best-" + std::to_string(k + 1)).c_str(),
                format_sequence(c.sequence).c_str(), c.pmr, c.success ? "yes" : "no");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowsculpt: pillar-sequence design for inertial flow shaping"};
  app.require_subcommand(1);

  std::string grid = "12x32", out, library, sequence, inlet, target, config, checkpoint, checkpoints_dir, host = "127.0.0.1";
  std::optional<std::uint64_t> seed;
  int k = 1, episodes = 1, port = 8080;
  std::optional<int> max_steps;
  std::optional<double> threshold;
  std::uint64_t solve_seed = 0;

  auto* gen = app.add_subcommand("gen-library", "write the 32 surrogate pillar maps as a library document");
  gen->add_option("--grid", grid, "grid as HxW")->capture_default_str();
  gen->add_option("--out", out, "output path (stdout when omitted)");

  auto* sim = app.add_subcommand("simulate", "replay a pillar sequence from the inlet");
  sim->add_option("--library", library, "library document (surrogate maps when omitted)");
  sim->add_option("--grid", grid, "grid of the surrogate library")->capture_default_str();
  sim->add_option("--sequence", sequence, "pillar ids, e.g. \"22, 11, 31\"")->required();
  sim->add_option("--inlet", inlet, "\"lo,hi\" stripe fractions or a shape document");
  sim->add_option("--target", target, "shape document scored at every step");
  sim->add_option("--out", out, "output path (stdout when omitted)");

  auto* tr = app.add_subcommand("train", "train an agent from a run config");
  tr->add_option("config", config, "run config")->required();
  tr->add_option("--seed", seed, "override the config seed");
  tr->add_option("--out", out, "artifact directory")->required();

  auto* ev = app.add_subcommand("eval", "greedy evaluation of a checkpoint on the config target");
  ev->add_option("config", config, "run config")->required();
  ev->add_option("--checkpoint", checkpoint, "checkpoint document")->required();
  ev->add_option("--episodes", episodes, "greedy rollouts")->capture_default_str();
  ev->add_option("--seed", seed, "override the config seed");
  ev->add_option("--out", out, "evaluation document path");

  auto* tf = app.add_subcommand("transfer", "train a curriculum, warm-starting each stage");
  tf->add_option("config", config, "run config with a curriculum")->required();
  tf->add_option("--seed", seed, "override the config seed");
  tf->add_option("--checkpoint", checkpoint, "warm start for the first stage");
  tf->add_option("--out", out, "artifact directory")->required();

  auto* sv = app.add_subcommand("solve", "ranked pillar sequences for a target shape");
  sv->add_option("--target", target, "target shape document")->required();
  sv->add_option("--checkpoint", checkpoint, "checkpoint document")->required();
  sv->add_option("--k", k, "number of candidates")->capture_default_str();
  sv->add_option("--library", library, "library document (surrogate maps when omitted)");
  sv->add_option("--inlet", inlet, "\"lo,hi\" or a shape document (checkpoint inlet when omitted)");
  sv->add_option("--max-steps", max_steps, "episode length limit");
  sv->add_option("--pmr-threshold", threshold, "success threshold");
  sv->add_option("--seed", solve_seed, "seed of the stochastic rollouts")->capture_default_str();
  sv->add_option("--out", out, "suggestion document path");

  auto* srv = app.add_subcommand("serve", "run the HTTP design service");
  srv->add_option("--library", library, "library document (surrogate maps when omitted)");
  srv->add_option("--grid", grid, "grid of the surrogate library")->capture_default_str();
  srv->add_option("--checkpoints", checkpoints_dir, std::string("checkpoint directory (default $") + kCheckpointDirEnv + ")");
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--port", port)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) {
      const GridSpec g = flag_value("--grid", [&] { return GridSpec::parse(grid); });
      emit(serialize_library(build_surrogate_library(g)), out);
    } else if (*sim) {
      const auto lib = load_library(library, grid);
      const auto seq = flag_value("--sequence", [&] { return parse_sequence(sequence, lib->action_count()); });
      const FlowShape in = load_inlet(inlet, lib->grid);
      std::optional<FlowShape> tgt;
      if (!target.empty()) tgt = load_target(target, lib->grid);
      emit(response_text(simulate_document(*lib, in, seq, tgt)), out);
    } else if (*tr) {
      const LoadedRun run = load_run(config, seed);
      if (!run.target) throw ConfigError("config has no target");
      StageOptions stage;
      stage.run_id = "train";
      const RunArtifacts artifacts = train(run.config, *run.target, stage);
      write_artifacts(artifacts, out);
      print_run_summary(artifacts, out);
    } else if (*ev) {
      const LoadedRun run = load_run(config, seed);
      if (!run.target) throw ConfigError("config has no target");
      if (episodes < 1) throw UsageError("--episodes must be at least 1");
      const Checkpoint ckpt = load_checkpoint(checkpoint);
      const auto summary = evaluate(ckpt, run.config.env, *run.target, episodes);
      nlohmann::ordered_json doc;
      doc["episodes"] = summary.episodes;
      doc["success_rate"] = summary.success_rate;
      doc["mean_pmr"] = summary.mean_pmr;
      doc["mean_length"] = summary.mean_length;
      doc["best_sequence"] = summary.best_sequence;
      doc["best_pmr"] = summary.best_pmr;
      doc["deterministic"] = summary.deterministic;
      std::cout << "success rate " << summary.success_rate << "\n"
                << "mean pmr " << summary.mean_pmr << "\n"
                << "greedy sequence " << format_sequence(summary.best_sequence) << "\n";
      if (!out.empty()) write_text_file(out, to_document_text(doc));
    } else if (*tf) {
      LoadedRun run = load_run(config, seed);
      if (run.curriculum.stages.empty()) throw ConfigError("config has no curriculum");
      if (!checkpoint.empty()) run.curriculum.initial = load_checkpoint(checkpoint, run.config.resolved_architecture());
      const auto stages = transfer_train(run.curriculum, run.config);
      for (const auto& s : stages) {
        const fs::path dir = fs::path(out) / s.run_id;
        write_artifacts(s, dir);
        print_run_summary(s, dir);
      }
    } else if (*sv) {
      const Checkpoint ckpt = load_checkpoint(checkpoint);
      EnvConfig env;
      env.library = library.empty() ? std::make_shared<const PillarLibrary>(build_surrogate_library(ckpt.metadata.grid))
                                    : std::make_shared<const PillarLibrary>(parse_library(read_text_file(library)));
      env.inlet = inlet.empty() ? ckpt.metadata.inlet : load_inlet(inlet, env.grid());
      if (max_steps) env.max_steps = *max_steps;
      if (threshold) env.pmr_threshold = *threshold;
      flag_value("--max-steps/--pmr-threshold", [&] { env.validate(); return 0; });
      if (k < 1 || k > 100) throw UsageError("--k must lie in [1, 100]");
      const FlowShape tgt = load_target(target, env.grid());
      SolveOptions opts;
      opts.k = k;
      opts.seed = solve_seed;
      const FrozenPolicy policy(ckpt);
      const auto candidates = suggest(policy, env, tgt, opts);
      print_suggestions(candidates);
      if (!out.empty()) write_text_file(out, response_text(suggestions_to_json(candidates)));
    } else if (*srv) {
      EnvConfig env;
      env.library = load_library(library, grid);
      env.inlet = make_inlet(env.grid());
      if (checkpoints_dir.empty()) {
        if (const char* dir = std::getenv(kCheckpointDirEnv)) checkpoints_dir = dir;
      }
      DesignService service(env, scan_checkpoints(checkpoints_dir, env.grid()));
      httplib::Server server;
      service.bind(server);
      std::cout << "listening on " << host << ":" << port << " (" << service.checkpoints()["checkpoints"].size()
                << " checkpoints)" << std::endl;
      if (!server.listen(host, port)) throw UsageError("could not listen on " + host + ":" + std::to_string(port));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return 0;
}
