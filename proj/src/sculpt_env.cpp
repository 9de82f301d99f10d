#include "flowsculpt/sculpt_env.hpp"

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

void EnvConfig::validate() const {
  if (!library) throw ConfigError("environment has no pillar library");
  library->validate();
  if (inlet.grid() != library->grid) throw ConfigError("inlet grid does not match library grid");
  if (max_steps < 1) throw ConfigError("max_steps must be at least 1");
  if (!(baseline_b > 0.0 && baseline_b < 1.0)) throw ConfigError("baseline_b must lie in (0, 1)");
  if (!(pmr_threshold > 0.0 && pmr_threshold <= 1.0)) throw ConfigError("pmr_threshold must lie in (0, 1]");
}

EnvConfig make_default_env(GridSpec grid) {
  EnvConfig env;
  env.library = std::make_shared<const PillarLibrary>(build_surrogate_library(grid));
  env.inlet = make_inlet(grid);
  return env;
}

double reward_fn(double p, double b, RewardScaling scaling) {
  const double scale = scaling == RewardScaling::kBaseline ? b : 1.0 - b;
  return -(1.0 - (p - b) / scale);
}

EnvState reset(const EnvConfig& env, const FlowShape& target) {
  if (!env.library) throw ConfigError("environment has no pillar library");
  if (target.grid() != env.grid()) {
    throw ConfigError("target grid " + target.grid().to_string() + " does not match library grid " +
                      env.grid().to_string());
  }
  if (target.empty()) throw ConfigError("target shape has no on-pixels");
  if (env.inlet.grid() != env.grid()) throw ConfigError("inlet grid does not match library grid");
  EnvState state;
  state.current = env.inlet;
  state.target = target;
  return state;
}

StepResult step(EnvState& state, int action, const EnvConfig& env) {
  if (state.done) throw UsageError("step called on a finished episode");
  const AdvectionMap& map = env.library->map(action);

  state.current = apply_pillar(state.current, map);
  state.action_history.push_back(action);
  ++state.steps_taken;

  StepResult result;
  result.pmr = pmr(state.current, state.target);
  result.reward = reward_fn(result.pmr, env.baseline_b, env.reward_scaling);
  result.success = result.pmr >= env.pmr_threshold;
  result.done = result.success || state.steps_taken >= env.max_steps;
  result.observation = state.current;

  state.success = result.success;
  state.done = result.done;
  return result;
}

RolloutResult rollout(const EnvConfig& env, const FlowShape& target, const Policy& policy) {
  RolloutResult out;
  out.final_state = reset(env, target);
  while (!out.final_state.done) {
    const StepResult r = step(out.final_state, policy(out.final_state.current), env);
    out.cumulative_reward += r.reward;
    out.final_pmr = r.pmr;
  }
  return out;
}

}  // namespace flowsculpt
