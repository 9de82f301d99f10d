#pragma once

// JSON run configuration shared by the CLI, the artifact writer and the tests.
//
// {
//   "grid": "12x32",                      or {"h":12,"w":32}
//   "library": "surrogate" | "<path to library document>",
//   "inlet": {"lo": 0.375, "hi": 0.625}  | {"shape_file": "..."},
//   "target": {"sequence": [3, 17]} | {"shape_file": "..."} | {"random_length": 2, "seed": 5},
//   "scale": 6,                           divides full-scale counts; explicit fields below override
//   "episodes": 50000, "step_budget": 0, "eval_every": 0, "success_window": 1000,
//   "env":      {"max_steps", "pmr_threshold", "baseline_b", "reward_scaling": "baseline"|"remainder"},
//   "agent":    {"gamma", "learning_rate", "target_update_interval", "warmup_random_steps", "batch_size",
//                "loss", "huber_delta", "rmsprop_rho", "rmsprop_epsilon", "replay_capacity", "precision"},
//   "schedule": {"start", "end", "decay_steps"},
//   "architecture": "dense" | "convolutional" | {...architecture json...},
//   "transfer": {"epsilon_restart": 0.3, "retain_replay": false},
//   "curriculum": [{"target": {...}, "episodes": N}, ...],
//   "seed": 0
// }

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"

#include "flowsculpt/trainer.hpp"

namespace flowsculpt {

/// Full record of a resolved config (everything needed to rerun it).
nlohmann::ordered_json train_config_to_json(const TrainConfig& cfg);

struct LoadedRun {
  TrainConfig config;
  std::optional<FlowShape> target;
  std::optional<PillarSequence> target_sequence;
  CurriculumSpec curriculum;
};

/// Relative file references resolve against `base_dir`. `seed` overrides the file's seed.
LoadedRun load_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                          std::optional<std::uint64_t> seed = std::nullopt);

/// Resolves a target spec ({"sequence"}, {"shape_file"}, {"random_length", "seed"}) against an environment.
FlowShape resolve_target(const nlohmann::json& spec, const EnvConfig& env, const std::filesystem::path& base_dir,
                         PillarSequence* sequence_out = nullptr);

}  // namespace flowsculpt
