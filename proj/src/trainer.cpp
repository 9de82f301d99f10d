#include "flowsculpt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <unordered_set>

#include "flowsculpt/config.hpp"
#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::int64_t scaled(double full_value, double scale) {
  return std::max<std::int64_t>(1, std::llround(full_value / scale));
}

EpsilonSchedule restarted_schedule(const EpsilonSchedule& base, double restart) {
  EpsilonSchedule s = base;
  const double slope = (base.start - base.end) / static_cast<double>(base.decay_steps);
  s.start = std::max(restart, base.end);
  s.decay_steps = slope > 0.0 ? std::max<std::int64_t>(1, std::llround((s.start - base.end) / slope)) : 1;
  return s;
}

template <typename T>
RunArtifacts train_impl(const TrainConfig& cfg, const FlowShape& target, const StageOptions& stage,
                        ReplayBuffer* carried_replay) {
  cfg.validate();
  const EnvConfig& env = cfg.env;
  reset(env, target);  // validates the target against the environment
  const NetworkArchitecture arch = cfg.resolved_architecture();

  std::unique_ptr<DqnAgent<T>> agent;
  RunArtifacts run;
  run.run_id = stage.run_id;
  std::vector<std::string> lineage;
  std::int64_t prior_episodes = 0;
  if (stage.init) {
    const Checkpoint& init = *stage.init;
    if (!(init.architecture == arch)) throw CheckpointError("warm-start checkpoint architecture does not match config");
    agent = std::make_unique<DqnAgent<T>>(arch, cfg.agent, cast_params<T>(init.params),
                                          RmsPropState<T>{cast_params<T>(init.second_moments)});
    run.counters.start_global_step = init.metadata.global_step;
    prior_episodes = init.metadata.episodes;
    lineage = init.metadata.lineage;
    const auto id = init.metadata.extra.find("run_id");
    lineage.push_back(id != init.metadata.extra.end() && id->is_string() ? id->template get<std::string>()
                                                                         : std::string("unnamed"));
  } else {
    agent = std::make_unique<DqnAgent<T>>(arch, cfg.agent);
  }
  if (carried_replay) agent->replay() = std::move(*carried_replay);

  const EpsilonSchedule schedule =
      stage.warm_started_schedule ? restarted_schedule(cfg.schedule, cfg.transfer_epsilon_restart) : cfg.schedule;
  // Warm-started stages refill replay with their own policy instead of uniform actions.
  const bool uniform_warmup = !stage.warm_started_schedule;
  const std::int64_t warmup = cfg.agent.warmup_random_steps;

  auto& counters = run.counters;
  for (std::int64_t ep = 0; ep < cfg.episodes; ++ep) {
    if (cfg.step_budget > 0 && counters.global_steps >= cfg.step_budget) break;
    EnvState state = reset(env, target);
    EpisodeLog log;
    log.index = ep;
    while (!state.done) {
      FlowShape obs = state.current;
      const int action = (uniform_warmup && counters.global_steps < warmup)
                             ? agent->random_action()
                             : agent->act(obs, epsilon_at(schedule, counters.global_steps));
      const StepResult r = step(state, action, env);
      log.cumulative_reward += r.reward;
      log.terminal_pmr = r.pmr;
      agent->remember(Transition{std::move(obs), action, r.reward, r.observation, r.done});
      ++counters.global_steps;
      if (counters.global_steps >= warmup && agent->ready_to_learn()) {
        if (counters.first_gradient_at < 0) counters.first_gradient_at = counters.global_steps;
        agent->learn();
      }
    }
    log.length = state.steps_taken;
    log.success = state.success;
    log.actions = state.action_history;
    if (log.success) run.solutions.record(log);
    run.episodes.push_back(std::move(log));

    if (cfg.eval_every > 0 && (ep + 1) % cfg.eval_every == 0) {
      const auto res = rollout(env, target, [&](const FlowShape& o) { return agent->greedy_action(o); });
      run.evaluations.push_back({ep + 1, res.final_state.success, res.final_pmr, res.final_state.action_history});
    }
  }
  counters.gradient_steps = agent->gradient_steps();
  counters.target_syncs = agent->target_syncs();

  run.windows = success_windows(run.episodes, cfg.success_window);
  run.unique_states = unique_states(run.episodes, *env.library, env.inlet);

  CheckpointMetadata meta;
  meta.seed = cfg.seed();
  meta.global_step = counters.start_global_step + counters.global_steps;
  meta.episodes = prior_episodes + static_cast<std::int64_t>(run.episodes.size());
  meta.library_provenance = env.library->provenance;
  meta.inlet = env.inlet;
  meta.target = target;
  meta.lineage = lineage;
  meta.extra["run_id"] = run.run_id;
  run.checkpoint = make_checkpoint(*agent, std::move(meta));

  auto& rc = run.resolved_config;
  rc = train_config_to_json(cfg);
  rc["run_id"] = run.run_id;
  rc["target"] = shape_to_json(target);
  rc["target_hash"] = hash_to_hex(shape_hash(target));
  nlohmann::ordered_json st;
  st["warm_started"] = stage.init != nullptr;
  st["lineage"] = lineage;
  st["effective_schedule"] = {{"start", schedule.start}, {"end", schedule.end}, {"decay_steps", schedule.decay_steps}};
  st["uniform_warmup"] = uniform_warmup;
  st["replay_carried"] = carried_replay != nullptr;
  rc["stage"] = std::move(st);

  if (carried_replay) *carried_replay = std::move(agent->replay());
  return run;
}

RunArtifacts train_dispatch(const TrainConfig& cfg, const FlowShape& target, const StageOptions& stage,
                            ReplayBuffer* carried_replay) {
  if (cfg.agent.precision == Precision::kF32) return train_impl<float>(cfg, target, stage, carried_replay);
  return train_impl<double>(cfg, target, stage, carried_replay);
}

}  // namespace

NetworkArchitecture TrainConfig::resolved_architecture() const {
  return architecture ? *architecture : NetworkArchitecture::dense(env.grid(), env.action_count());
}

void TrainConfig::validate() const {
  env.validate();
  agent.validate();
  schedule.validate();
  if (episodes < 0) throw ConfigError("episodes must be non-negative");
  if (step_budget < 0) throw ConfigError("step_budget must be non-negative");
  if (success_window < 1) throw ConfigError("success_window must be positive");
  if (eval_every < 0) throw ConfigError("eval_every must be non-negative");
  if (!(scale > 0.0)) throw ConfigError("scale must be positive");
  if (!(transfer_epsilon_restart >= 0.0 && transfer_epsilon_restart <= 1.0)) {
    throw ConfigError("transfer epsilon restart must lie in [0, 1]");
  }
  const auto arch = resolved_architecture();
  arch.validate();
  if (arch.input != env.grid()) throw ConfigError("network input grid does not match the environment");
  if (arch.output_units != env.action_count()) throw ConfigError("network outputs do not match the action count");
}

TrainConfig scaled_config(EnvConfig env, double scale, std::uint64_t seed) {
  if (!(scale > 0.0)) throw ConfigError("scale must be positive");
  TrainConfig cfg;
  cfg.env = std::move(env);
  cfg.scale = scale;
  cfg.episodes = scaled(300'000, scale);
  cfg.agent.warmup_random_steps = scaled(10'000, scale);
  cfg.agent.target_update_interval = scaled(4000, scale);
  cfg.schedule.decay_steps = scaled(1'000'000, scale);
  cfg.agent.seed = seed;
  return cfg;
}

TrainConfig desk_config(EnvConfig env, std::uint64_t seed) { return scaled_config(std::move(env), 6.0, seed); }

void SolutionTable::record(const EpisodeLog& log) {
  if (!log.success) throw UsageError("only successful episodes enter the solution table");
  auto [it, inserted] = entries_.try_emplace(log.actions);
  if (inserted) {
    it->second.sequence = log.actions;
    it->second.first_seen = static_cast<std::int64_t>(entries_.size()) - 1;
  }
  ++it->second.frequency;
}

std::int64_t SolutionTable::frequency(const PillarSequence& seq) const {
  const auto it = entries_.find(seq);
  return it == entries_.end() ? 0 : it->second.frequency;
}

std::vector<SolutionTable::Entry> SolutionTable::top(std::size_t k) const {
  std::vector<Entry> all;
  all.reserve(entries_.size());
  for (const auto& [seq, e] : entries_) all.push_back(e);
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    return a.frequency != b.frequency ? a.frequency > b.frequency : a.first_seen < b.first_seen;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

SolutionTable& record_solution(SolutionTable& table, const EpisodeLog& log) {
  table.record(log);
  return table;
}

std::int64_t RunArtifacts::total_successes() const {
  return std::count_if(episodes.begin(), episodes.end(), [](const EpisodeLog& e) { return e.success; });
}

std::optional<std::int64_t> RunArtifacts::episodes_to_window(double threshold) const {
  if (windows.empty()) return std::nullopt;
  const std::int64_t full = windows.front().episodes;
  for (const auto& w : windows) {
    if (w.episodes == full && w.frequency() >= threshold) return w.first_episode + w.episodes;
  }
  return std::nullopt;
}

RunArtifacts train(const TrainConfig& cfg, const FlowShape& target, const StageOptions& stage) {
  return train_dispatch(cfg, target, stage, nullptr);
}

FrozenPolicy::FrozenPolicy(const Checkpoint& checkpoint)
    : arch_(checkpoint.architecture), precision_(checkpoint.precision) {
  if (precision_ == Precision::kF32) {
    net32_ = QNetwork<float>(arch_, cast_params<float>(checkpoint.params));
  } else {
    net64_ = QNetwork<double>(arch_, checkpoint.params);
  }
}

Vector<double> FrozenPolicy::q_values(const FlowShape& obs) const {
  if (precision_ == Precision::kF32) return net32_.q_values(obs).cast<double>();
  return net64_.q_values(obs);
}

int FrozenPolicy::greedy(const FlowShape& obs) const {
  if (precision_ == Precision::kF32) return argmax_lowest(net32_.q_values(obs));
  return argmax_lowest(net64_.q_values(obs));
}

EvaluationSummary evaluate(const Checkpoint& checkpoint, const EnvConfig& env, const FlowShape& target,
                           int n_episodes) {
  if (n_episodes < 1) throw ParameterError("evaluation needs at least one episode");
  if (checkpoint.architecture.input != env.grid()) {
    throw CheckpointError("checkpoint grid " + checkpoint.architecture.input.to_string() +
                          " does not match environment grid " + env.grid().to_string());
  }
  if (checkpoint.architecture.output_units != env.action_count()) {
    throw CheckpointError("checkpoint action count does not match the library");
  }
  const FrozenPolicy policy(checkpoint);
  EvaluationSummary s;
  s.episodes = n_episodes;
  std::optional<PillarSequence> first;
  for (int k = 0; k < n_episodes; ++k) {
    const auto r = rollout(env, target, [&](const FlowShape& o) { return policy.greedy(o); });
    s.success_rate += r.final_state.success ? 1.0 : 0.0;
    s.mean_pmr += r.final_pmr;
    s.mean_length += r.final_state.steps_taken;
    if (!first) first = r.final_state.action_history;
    if (*first != r.final_state.action_history) s.deterministic = false;
    if (k == 0 || r.final_pmr > s.best_pmr) {
      s.best_pmr = r.final_pmr;
      s.best_sequence = r.final_state.action_history;
    }
  }
  s.success_rate /= n_episodes;
  s.mean_pmr /= n_episodes;
  s.mean_length /= n_episodes;
  return s;
}

std::vector<std::int64_t> unique_states(const std::vector<EpisodeLog>& logs, const PillarLibrary& library,
                                        const FlowShape& inlet) {
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::int64_t> out;
  out.reserve(logs.size());
  seen.insert(shape_hash(inlet));
  for (const auto& log : logs) {
    FlowShape s = inlet;
    for (int a : log.actions) {
      s = apply_pillar(s, library.map(a));
      seen.insert(shape_hash(s));
    }
    out.push_back(static_cast<std::int64_t>(seen.size()));
  }
  return out;
}

std::vector<WindowStat> success_windows(const std::vector<EpisodeLog>& logs, std::int64_t window) {
  if (window < 1) throw ParameterError("window must be positive");
  std::vector<WindowStat> out;
  for (std::size_t k = 0; k < logs.size(); ++k) {
    const auto idx = static_cast<std::int64_t>(k) / window;
    if (static_cast<std::int64_t>(out.size()) <= idx) out.push_back({idx, idx * window, 0, 0});
    ++out.back().episodes;
    out.back().successes += logs[k].success ? 1 : 0;
  }
  return out;
}

std::vector<RunArtifacts> transfer_train(const CurriculumSpec& curriculum, const TrainConfig& cfg) {
  if (curriculum.stages.empty()) throw ConfigError("curriculum has no stages");
  for (const auto& s : curriculum.stages) {
    if (s.episodes < 1) throw ConfigError("curriculum stage budgets must be positive");
    if (s.target.grid() != cfg.env.grid()) throw ConfigError("curriculum targets must share the environment grid");
  }
  std::vector<RunArtifacts> runs;
  std::optional<Checkpoint> previous = curriculum.initial;
  ReplayBuffer carried(cfg.agent.replay_capacity);
  for (std::size_t k = 0; k < curriculum.stages.size(); ++k) {
    TrainConfig stage_cfg = cfg;
    stage_cfg.episodes = curriculum.stages[k].episodes;
    StageOptions opts;
    opts.run_id = "stage" + std::to_string(k);
    if (previous) {
      opts.init = &*previous;
      opts.warm_started_schedule = true;
    }
    runs.push_back(train_dispatch(stage_cfg, curriculum.stages[k].target, opts, cfg.retain_replay ? &carried : nullptr));
    previous = runs.back().checkpoint;
  }
  return runs;
}

std::vector<GeneratedTarget> make_targets(const PillarLibrary& library, const FlowShape& inlet, Rng& rng, int count,
                                          int length) {
  if (length < 1) throw ParameterError("target sequences need length >= 1");
  if (count < 0) throw ParameterError("target count must be non-negative");
  std::vector<GeneratedTarget> out;
  std::unordered_set<std::uint64_t> seen;
  const auto max_attempts = static_cast<std::int64_t>(count) * 1000;
  for (std::int64_t attempt = 0; static_cast<int>(out.size()) < count && attempt < max_attempts; ++attempt) {
    PillarSequence seq(static_cast<std::size_t>(length));
    for (auto& a : seq) a = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(library.action_count())));
    const auto shapes = apply_sequence(inlet, seq, library);
    const FlowShape& shape = shapes.back();
    if (shape.empty() || !seen.insert(shape_hash(shape)).second) continue;
    out.push_back({std::move(seq), shape});
  }
  return out;
}

std::map<std::string, std::string> render_artifacts(const RunArtifacts& run) {
  std::map<std::string, std::string> files;

  std::string episodes = "episode\treward\tlength\tsuccess\tpmr\tsequence\n";
  for (const auto& e : run.episodes) {
    episodes += std::to_string(e.index) + "\t" + format_double(e.cumulative_reward) + "\t" + std::to_string(e.length) +
                "\t" + (e.success ? "1" : "0") + "\t" + format_double(e.terminal_pmr) + "\t" +
                format_sequence(e.actions, ",") + "\n";
  }
  files["episodes.tsv"] = std::move(episodes);

  std::string windows = "window\tfirst_episode\tepisodes\tsuccesses\tsuccess_frequency\n";
  for (const auto& w : run.windows) {
    windows += std::to_string(w.index) + "\t" + std::to_string(w.first_episode) + "\t" + std::to_string(w.episodes) +
               "\t" + std::to_string(w.successes) + "\t" + format_double(w.frequency()) + "\n";
  }
  files["windows.tsv"] = std::move(windows);

  std::string solutions = "rank\tsequence\tfrequency\n";
  const auto top = run.solutions.top(run.solutions.size());
  for (std::size_t k = 0; k < top.size(); ++k) {
    solutions += "Best-" + std::to_string(k + 1) + "\t" + format_sequence(top[k].sequence) + "\t" +
                 std::to_string(top[k].frequency) + "\n";
  }
  files["solutions.tsv"] = std::move(solutions);

  std::string unique = "episode\tunique_states\n";
  for (std::size_t k = 0; k < run.unique_states.size(); ++k) {
    unique += std::to_string(k) + "\t" + std::to_string(run.unique_states[k]) + "\n";
  }
  files["unique_states.tsv"] = std::move(unique);

  std::string evals = "episode\tsuccess\tpmr\tsequence\n";
  for (const auto& e : run.evaluations) {
    evals += std::to_string(e.episode) + "\t" + (e.success ? "1" : "0") + "\t" + format_double(e.pmr) + "\t" +
             format_sequence(e.sequence, ",") + "\n";
  }
  files["evaluations.tsv"] = std::move(evals);

  files["config.json"] = to_document_text(run.resolved_config);

  nlohmann::ordered_json summary;
  summary["run_id"] = run.run_id;
  summary["episodes"] = run.episodes.size();
  summary["successes"] = run.total_successes();
  summary["global_steps"] = run.counters.global_steps;
  summary["gradient_steps"] = run.counters.gradient_steps;
  summary["target_syncs"] = run.counters.target_syncs;
  summary["first_gradient_at"] = run.counters.first_gradient_at;
  summary["start_global_step"] = run.counters.start_global_step;
  summary["unique_states"] = run.unique_states.empty() ? 1 : run.unique_states.back();
  summary["distinct_solutions"] = run.solutions.size();
  summary["final_window_success_frequency"] = run.windows.empty() ? 0.0 : run.windows.back().frequency();
  const auto reached = run.episodes_to_window(0.8);
  summary["episodes_to_0.8_window"] = reached ? nlohmann::ordered_json(*reached) : nlohmann::ordered_json(nullptr);
  summary["lineage"] = run.checkpoint.metadata.lineage;
  summary["checkpoint"] = "checkpoint.json";
  files["summary.json"] = to_document_text(summary);

  files["checkpoint.json"] = serialize_checkpoint(run.checkpoint);
  return files;
}

void write_artifacts(const RunArtifacts& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : render_artifacts(run)) write_text_file(dir / name, text);
}

}  // namespace flowsculpt
