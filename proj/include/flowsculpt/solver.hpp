#pragma once

// Ranked pillar-sequence suggestions from a trained policy.

#include <cstdint>
#include <vector>

#include "json.hpp"

#include "flowsculpt/sculpt_env.hpp"
#include "flowsculpt/trainer.hpp"

namespace flowsculpt {

struct Candidate {
  PillarSequence sequence;
  std::vector<FlowShape> shapes;  // shape after each pillar
  double pmr = 0.0;
  bool success = false;
};

struct SolveOptions {
  int k = 1;
  std::uint64_t seed = 0;
  double exploration = 0.25;  // epsilon of the stochastic rollouts
  int max_tie_branches = 64;  // cap on greedy-tie beam leaves
};

/// Greedy rollout (branching on exactly tied Q-values), then seeded
/// epsilon-greedy rollouts until k distinct sequences are found or 4(k-1)
/// attempts are spent. Each rollout is cut at its earliest best-PMR prefix and
/// re-simulated from the inlet before ranking: PMR descending, then shorter,
/// then lexicographically smaller.
std::vector<Candidate> suggest(const FrozenPolicy& policy, const EnvConfig& env, const FlowShape& target,
                               const SolveOptions& options);

/// Replays `seq` from the inlet and scores it against `target`.
Candidate verify_candidate(const EnvConfig& env, const FlowShape& target, const PillarSequence& seq);

/// {"candidates": [{"sequence", "shapes", "pmr", "success"}, ...]}
nlohmann::ordered_json suggestions_to_json(const std::vector<Candidate>& candidates);

}  // namespace flowsculpt
