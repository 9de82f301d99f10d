#pragma once

// Episodic pillar-placement process over flow shapes.

#include <functional>
#include <memory>

#include "flowsculpt/flow_core.hpp"

namespace flowsculpt {

/// Which denominator the shaped reward uses. The printed formula divides by b;
/// the alternative divides by the PMR range left above the baseline, 1 - b.
enum class RewardScaling { kBaseline, kRemainder };

struct EnvConfig {
  std::shared_ptr<const PillarLibrary> library;
  FlowShape inlet;
  int max_steps = 7;
  double pmr_threshold = 0.90;
  double baseline_b = 0.5;
  RewardScaling reward_scaling = RewardScaling::kBaseline;

  const GridSpec& grid() const { return library->grid; }
  int action_count() const { return library->action_count(); }
  void validate() const;
};

/// Library of surrogate maps plus default inlet on `grid`.
EnvConfig make_default_env(GridSpec grid = {});

struct EnvState {
  FlowShape current;
  FlowShape target;
  int steps_taken = 0;
  PillarSequence action_history;
  bool done = false;
  bool success = false;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  FlowShape observation;
  double reward = 0.0;
  bool done = false;
  bool success = false;
  double pmr = 0.0;
};

/// -(1 - (p - b)/b), or with kRemainder -(1 - (p - b)/(1 - b)).
double reward_fn(double p, double b, RewardScaling scaling = RewardScaling::kBaseline);

EnvState reset(const EnvConfig& env, const FlowShape& target);

/// Advances `state` in place and reports the transition.
StepResult step(EnvState& state, int action, const EnvConfig& env);

using Policy = std::function<int(const FlowShape&)>;

struct RolloutResult {
  EnvState final_state;
  double cumulative_reward = 0.0;
  double final_pmr = 0.0;
};

RolloutResult rollout(const EnvConfig& env, const FlowShape& target, const Policy& policy);

}  // namespace flowsculpt
