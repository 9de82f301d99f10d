#pragma once

// Episode orchestration, metric capture and transfer learning.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "flowsculpt/agent.hpp"
#include "flowsculpt/checkpoint.hpp"
#include "flowsculpt/sculpt_env.hpp"

namespace flowsculpt {

struct TrainConfig {
  std::int64_t episodes = 50'000;
  /// Optional cap on environment steps; training stops at the end of the episode that reaches it.
  std::int64_t step_budget = 0;
  EnvConfig env;
  AgentConfig agent;
  EpsilonSchedule schedule;
  std::optional<NetworkArchitecture> architecture;  // defaults to NetworkArchitecture::dense(grid)
  std::int64_t eval_every = 0;                      // greedy evaluation cadence in episodes, 0 = off
  std::int64_t success_window = 1000;
  /// Divisor applied to full-scale episode/warm-up/decay/sync counts (1 = full scale).
  double scale = 1.0;
  /// Epsilon at the start of every warm-started stage; decay keeps the scratch slope.
  double transfer_epsilon_restart = 0.3;
  /// Keep replay contents across curriculum stages instead of clearing them.
  bool retain_replay = false;

  std::uint64_t seed() const { return agent.seed; }
  NetworkArchitecture resolved_architecture() const;
  void validate() const;
};

/// Full-scale counts divided by `scale`: 300K episodes, 10K warm-up steps,
/// 1M-step epsilon decay, target sync every 4000 gradient steps.
TrainConfig scaled_config(EnvConfig env, double scale, std::uint64_t seed);
/// scaled_config with scale 6 (50K episodes).
TrainConfig desk_config(EnvConfig env, std::uint64_t seed);

struct EpisodeLog {
  std::int64_t index = 0;
  double cumulative_reward = 0.0;
  int length = 0;
  bool success = false;
  double terminal_pmr = 0.0;
  PillarSequence actions;

  friend bool operator==(const EpisodeLog&, const EpisodeLog&) = default;
};

struct WindowStat {
  std::int64_t index = 0;
  std::int64_t first_episode = 0;
  std::int64_t episodes = 0;
  std::int64_t successes = 0;
  double frequency() const { return episodes > 0 ? static_cast<double>(successes) / static_cast<double>(episodes) : 0.0; }
};

/// Visit counts of successful action sequences.
class SolutionTable {
 public:
  struct Entry {
    PillarSequence sequence;
    std::int64_t frequency = 0;
    std::int64_t first_seen = 0;  // insertion order, breaks frequency ties
  };

  /// Throws UsageError for a failed episode.
  void record(const EpisodeLog& log);
  std::int64_t frequency(const PillarSequence& seq) const;
  std::size_t size() const { return entries_.size(); }
  /// Highest frequency first; equal frequencies keep first-seen order.
  std::vector<Entry> top(std::size_t k) const;

 private:
  std::map<PillarSequence, Entry> entries_;
};

SolutionTable& record_solution(SolutionTable& table, const EpisodeLog& log);

struct EvalPoint {
  std::int64_t episode = 0;
  bool success = false;
  double pmr = 0.0;
  PillarSequence sequence;
};

struct TrainCounters {
  std::int64_t global_steps = 0;       // environment steps taken in this run
  std::int64_t gradient_steps = 0;
  std::int64_t target_syncs = 0;
  std::int64_t first_gradient_at = -1;  // environment steps completed when the first gradient step ran
  std::int64_t start_global_step = 0;   // lineage offset carried in from a warm start
};

struct RunArtifacts {
  std::vector<EpisodeLog> episodes;
  std::vector<WindowStat> windows;
  std::vector<std::int64_t> unique_states;  // cumulative distinct shapes after each episode
  SolutionTable solutions;
  std::vector<EvalPoint> evaluations;
  TrainCounters counters;
  nlohmann::ordered_json resolved_config;
  Checkpoint checkpoint;  // final parameters (the initial ones when no episode ran)
  std::string run_id;

  std::int64_t total_successes() const;
  /// First episode count (1-based, end of window) at which a window reached `threshold`, or nullopt.
  std::optional<std::int64_t> episodes_to_window(double threshold) const;
};

struct StageOptions {
  const Checkpoint* init = nullptr;  // warm start
  bool warm_started_schedule = false;
  std::string run_id = "run";
};

RunArtifacts train(const TrainConfig& cfg, const FlowShape& target, const StageOptions& stage = {});

struct EvaluationSummary {
  int episodes = 0;
  double success_rate = 0.0;
  double mean_pmr = 0.0;
  double mean_length = 0.0;
  PillarSequence best_sequence;
  double best_pmr = 0.0;
  bool deterministic = true;  // greedy rollouts of a deterministic env repeat exactly
};

/// Greedy (epsilon = 0) rollouts with the checkpoint's parameters; never mutates the checkpoint.
EvaluationSummary evaluate(const Checkpoint& checkpoint, const EnvConfig& env, const FlowShape& target, int n_episodes);

/// Greedy policy of a checkpoint, evaluated at the precision it was trained with.
class FrozenPolicy {
 public:
  explicit FrozenPolicy(const Checkpoint& checkpoint);
  Vector<double> q_values(const FlowShape& obs) const;
  int greedy(const FlowShape& obs) const;
  int output_size() const { return arch_.output_units; }
  const NetworkArchitecture& architecture() const { return arch_; }

 private:
  NetworkArchitecture arch_;
  Precision precision_;
  QNetwork<double> net64_;
  QNetwork<float> net32_;
};

/// Cumulative distinct-state counts after each episode (inlet included).
std::vector<std::int64_t> unique_states(const std::vector<EpisodeLog>& logs, const PillarLibrary& library,
                                        const FlowShape& inlet);

std::vector<WindowStat> success_windows(const std::vector<EpisodeLog>& logs, std::int64_t window);

struct CurriculumStage {
  FlowShape target;
  std::int64_t episodes = 0;
};

struct CurriculumSpec {
  std::vector<CurriculumStage> stages;
  std::optional<Checkpoint> initial;
};

/// Trains the stages in order, warm-starting each from the previous final checkpoint.
std::vector<RunArtifacts> transfer_train(const CurriculumSpec& curriculum, const TrainConfig& cfg);

struct GeneratedTarget {
  PillarSequence sequence;
  FlowShape shape;
};

/// Random sequences of `length` applied to the inlet, deduplicated by shape hash.
/// Shapes without on-pixels are skipped; gives up after 1000 * count draws.
std::vector<GeneratedTarget> make_targets(const PillarLibrary& library, const FlowShape& inlet, Rng& rng, int count,
                                          int length);

/// Writes config.json, summary.json, episodes.tsv, windows.tsv, solutions.tsv,
/// unique_states.tsv, evaluations.tsv and checkpoint.json into `dir`.
void write_artifacts(const RunArtifacts& run, const std::filesystem::path& dir);

/// Exact text of each artifact file, keyed by file name.
std::map<std::string, std::string> render_artifacts(const RunArtifacts& run);

}  // namespace flowsculpt
