#include "flowsculpt/config.hpp"

#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

using ojson = nlohmann::ordered_json;

std::string to_string(RewardScaling s) { return s == RewardScaling::kBaseline ? "baseline" : "remainder"; }

RewardScaling reward_scaling_from_string(const std::string& text) {
  if (text == "baseline") return RewardScaling::kBaseline;
  if (text == "remainder") return RewardScaling::kRemainder;
  throw ConfigError("unknown reward_scaling '" + text + "' (expected baseline or remainder)");
}

std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

GridSpec grid_from_json(const nlohmann::json& j) {
  if (j.is_string()) return GridSpec::parse(j.get<std::string>());
  GridSpec g{j.at("h").get<int>(), j.at("w").get<int>()};
  g.validate();
  return g;
}

template <typename V>
void read_if(const nlohmann::json& j, const char* key, V& out) {
  if (j.is_object() && j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

ojson train_config_to_json(const TrainConfig& cfg) {
  ojson j;
  const auto& env = cfg.env;
  j["grid"] = env.grid().to_string();
  j["library"] = {{"provenance", to_string(env.library->provenance)},
                  {"actions", env.action_count()},
                  {"digest", hash_to_hex([&] {
                     // FNV-1a over the serialized library document.
                     std::uint64_t h = 0xcbf29ce484222325ULL;
                     for (unsigned char c : serialize_library(*env.library)) {
                       h ^= c;
                       h *= 0x100000001b3ULL;
                     }
                     return h;
                   }())}};
  j["inlet"] = shape_to_json(env.inlet);
  j["scale"] = cfg.scale;
  j["episodes"] = cfg.episodes;
  j["step_budget"] = cfg.step_budget;
  j["eval_every"] = cfg.eval_every;
  j["success_window"] = cfg.success_window;
  j["env"] = {{"max_steps", env.max_steps},
              {"pmr_threshold", env.pmr_threshold},
              {"baseline_b", env.baseline_b},
              {"reward_scaling", to_string(env.reward_scaling)}};
  const auto& a = cfg.agent;
  j["agent"] = {{"gamma", a.gamma},
                {"learning_rate", a.learning_rate},
                {"target_update_interval", a.target_update_interval},
                {"warmup_random_steps", a.warmup_random_steps},
                {"batch_size", a.batch_size},
                {"loss", to_string(a.loss)},
                {"huber_delta", a.huber_delta},
                {"rmsprop_rho", a.rmsprop_rho},
                {"rmsprop_epsilon", a.rmsprop_epsilon},
                {"replay_capacity", a.replay_capacity},
                {"precision", to_string(a.precision)}};
  j["schedule"] = {{"start", cfg.schedule.start}, {"end", cfg.schedule.end}, {"decay_steps", cfg.schedule.decay_steps}};
  j["architecture"] = architecture_to_json(cfg.resolved_architecture());
  j["transfer"] = {{"epsilon_restart", cfg.transfer_epsilon_restart}, {"retain_replay", cfg.retain_replay}};
  j["seed"] = a.seed;
  return j;
}

FlowShape resolve_target(const nlohmann::json& spec, const EnvConfig& env, const std::filesystem::path& base_dir,
                         PillarSequence* sequence_out) {
  if (spec.contains("sequence")) {
    const auto& s = spec.at("sequence");
    PillarSequence seq = s.is_string() ? parse_sequence(s.get<std::string>(), env.action_count())
                                       : s.get<PillarSequence>();
    if (seq.empty()) throw ConfigError("target sequence is empty");
    const auto shapes = apply_sequence(env.inlet, seq, *env.library);
    if (sequence_out) *sequence_out = seq;
    return shapes.back();
  }
  if (spec.contains("shape_file")) {
    return parse_shape(read_text_file(resolve_path(spec.at("shape_file").get<std::string>(), base_dir)));
  }
  if (spec.contains("random_length")) {
    const int length = spec.at("random_length").get<int>();
    Rng rng(spec.value("seed", std::uint64_t{0}));
    const auto targets = make_targets(*env.library, env.inlet, rng, 1, length);
    if (targets.empty()) throw ConfigError("could not generate a nonempty random target");
    if (sequence_out) *sequence_out = targets.front().sequence;
    return targets.front().shape;
  }
  throw ConfigError("target needs one of 'sequence', 'shape_file' or 'random_length'");
}

LoadedRun load_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                          std::optional<std::uint64_t> seed) {
  try {
    const GridSpec grid = j.contains("grid") ? grid_from_json(j.at("grid")) : GridSpec{};
    EnvConfig env;
    const std::string lib = j.value("library", std::string("surrogate"));
    if (lib == "surrogate") {
      env.library = std::make_shared<const PillarLibrary>(build_surrogate_library(grid));
    } else {
      auto loaded = parse_library(read_text_file(resolve_path(lib, base_dir)));
      if (j.contains("grid") && loaded.grid != grid) throw ConfigError("library grid does not match config grid");
      env.library = std::make_shared<const PillarLibrary>(std::move(loaded));
    }
    if (j.contains("inlet")) {
      const auto& in = j.at("inlet");
      env.inlet = in.contains("shape_file")
                      ? parse_shape(read_text_file(resolve_path(in.at("shape_file").get<std::string>(), base_dir)))
                      : make_inlet(env.grid(), in.value("lo", kDefaultInletLo), in.value("hi", kDefaultInletHi));
    } else {
      env.inlet = make_inlet(env.grid());
    }
    if (j.contains("env")) {
      const auto& e = j.at("env");
      read_if(e, "max_steps", env.max_steps);
      read_if(e, "pmr_threshold", env.pmr_threshold);
      read_if(e, "baseline_b", env.baseline_b);
      if (e.contains("reward_scaling")) env.reward_scaling = reward_scaling_from_string(e.at("reward_scaling").get<std::string>());
    }

    LoadedRun out;
    TrainConfig& cfg = out.config;
    cfg = scaled_config(std::move(env), j.value("scale", 6.0), j.value("seed", std::uint64_t{0}));
    if (seed) cfg.agent.seed = *seed;
    read_if(j, "episodes", cfg.episodes);
    read_if(j, "step_budget", cfg.step_budget);
    read_if(j, "eval_every", cfg.eval_every);
    read_if(j, "success_window", cfg.success_window);
    if (j.contains("agent")) {
      const auto& a = j.at("agent");
      auto& ac = cfg.agent;
      read_if(a, "gamma", ac.gamma);
      read_if(a, "learning_rate", ac.learning_rate);
      read_if(a, "target_update_interval", ac.target_update_interval);
      read_if(a, "warmup_random_steps", ac.warmup_random_steps);
      read_if(a, "batch_size", ac.batch_size);
      if (a.contains("loss")) ac.loss = loss_from_string(a.at("loss").get<std::string>());
      read_if(a, "huber_delta", ac.huber_delta);
      read_if(a, "rmsprop_rho", ac.rmsprop_rho);
      read_if(a, "rmsprop_epsilon", ac.rmsprop_epsilon);
      read_if(a, "replay_capacity", ac.replay_capacity);
      if (a.contains("precision")) ac.precision = precision_from_string(a.at("precision").get<std::string>());
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      read_if(s, "start", cfg.schedule.start);
      read_if(s, "end", cfg.schedule.end);
      read_if(s, "decay_steps", cfg.schedule.decay_steps);
    }
    if (j.contains("architecture")) {
      const auto& a = j.at("architecture");
      if (a.is_string()) {
        const auto name = a.get<std::string>();
        if (name == "dense") {
          cfg.architecture = NetworkArchitecture::dense(cfg.env.grid(), cfg.env.action_count());
        } else if (name == "convolutional") {
          cfg.architecture = NetworkArchitecture::convolutional(cfg.env.grid(), cfg.env.action_count(), true);
        } else {
          throw ConfigError("unknown architecture '" + name + "'");
        }
      } else {
        cfg.architecture = architecture_from_json(a);
      }
    }
    if (j.contains("transfer")) {
      read_if(j.at("transfer"), "epsilon_restart", cfg.transfer_epsilon_restart);
      read_if(j.at("transfer"), "retain_replay", cfg.retain_replay);
    }
    cfg.validate();

    if (j.contains("target")) {
      PillarSequence seq;
      out.target = resolve_target(j.at("target"), cfg.env, base_dir, &seq);
      if (!seq.empty()) out.target_sequence = seq;
    }
    if (j.contains("curriculum")) {
      for (const auto& stage : j.at("curriculum")) {
        out.curriculum.stages.push_back(
            {resolve_target(stage.at("target"), cfg.env, base_dir), stage.at("episodes").get<std::int64_t>()});
      }
    }
    return out;
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

}  // namespace flowsculpt
