#include <set>

#include "doctest.h"
#include "flowsculpt/config.hpp"
#include "flowsculpt/errors.hpp"
#include "flowsculpt/trainer.hpp"
#include "support.hpp"

using namespace flowsculpt;

namespace {

TrainConfig small_config(std::uint64_t seed, std::int64_t episodes = 300) {
  TrainConfig cfg = desk_config(make_default_env(), seed);
  cfg.episodes = episodes;
  cfg.agent.warmup_random_steps = 200;
  cfg.agent.batch_size = 8;
  cfg.agent.target_update_interval = 50;
  cfg.schedule.decay_steps = 1000;
  cfg.success_window = 100;
  return cfg;
}

FlowShape two_pillar_target(const EnvConfig& env) { return apply_sequence(env.inlet, {30, 11}, *env.library).back(); }

EnvConfig identity_env() {
  const GridSpec g{12, 32};
  PillarLibrary lib;
  lib.grid = g;
  for (int a = 0; a < 32; ++a) lib.maps.push_back(identity_map(g, a));
  EnvConfig env;
  env.library = std::make_shared<const PillarLibrary>(std::move(lib));
  env.inlet = make_inlet(g);
  return env;
}

}  // namespace

TEST_CASE("desk scaling divides full-scale counts by six") {
  const auto cfg = desk_config(make_default_env(), 0);
  CHECK(cfg.episodes == 50'000);
  CHECK(cfg.agent.warmup_random_steps == 1667);
  CHECK(cfg.schedule.decay_steps == 166'667);
  CHECK(cfg.agent.target_update_interval == 667);
  const auto full = scaled_config(make_default_env(), 1.0, 0);
  CHECK(full.episodes == 300'000);
  CHECK(full.agent.warmup_random_steps == 10'000);
  CHECK(full.schedule.decay_steps == 1'000'000);
  CHECK(full.agent.target_update_interval == 4000);
}

TEST_CASE("zero episodes give the initial checkpoint only") {
  auto cfg = small_config(1, 0);
  const auto run = train(cfg, two_pillar_target(cfg.env));
  CHECK(run.episodes.empty());
  CHECK(run.windows.empty());
  CHECK(run.counters.gradient_steps == 0);
  const DqnAgent<double> fresh(cfg.resolved_architecture(), cfg.agent);
  CHECK(params_digest(run.checkpoint.params) == params_digest(cast_params<double>(fresh.online().params())));
}

TEST_CASE("degenerate target under identity dynamics always succeeds") {
  TrainConfig cfg = small_config(2, 250);
  cfg.env = identity_env();
  const auto run = train(cfg, cfg.env.inlet);
  for (const auto& w : run.windows) CHECK(w.frequency() == 1.0);
  for (const auto& e : run.episodes) CHECK(e.length == 1);
}

TEST_CASE("bookkeeping invariants of a short run") {
  const auto cfg = small_config(3, 400);
  const auto target = two_pillar_target(cfg.env);
  const auto run = train(cfg, target);
  REQUIRE(run.episodes.size() == 400);

  std::int64_t window_total = 0, window_episodes = 0;
  for (const auto& w : run.windows) {
    window_total += w.successes;
    window_episodes += w.episodes;
  }
  CHECK(window_total == run.total_successes());
  CHECK(window_episodes == 400);
  CHECK(run.windows.size() == 4);

  std::int64_t steps = 0;
  std::set<std::uint64_t> visited{shape_hash(cfg.env.inlet)};
  for (std::size_t k = 0; k < run.episodes.size(); ++k) {
    const auto& e = run.episodes[k];
    CHECK(e.length <= cfg.env.max_steps);
    CHECK(e.actions.size() == static_cast<std::size_t>(e.length));
    steps += e.length;
    auto s = reset(cfg.env, target);
    double total = 0.0;
    for (int a : e.actions) {
      total += step(s, a, cfg.env).reward;
      visited.insert(shape_hash(s.current));
    }
    CHECK(total == e.cumulative_reward);
    CHECK(s.success == e.success);
    CHECK(run.unique_states[k] == static_cast<std::int64_t>(visited.size()));
  }
  CHECK(steps == run.counters.global_steps);

  // Warm-up contract and target sync cadence.
  CHECK(run.counters.first_gradient_at >= cfg.agent.warmup_random_steps);
  CHECK(run.counters.gradient_steps == run.counters.global_steps - cfg.agent.warmup_random_steps + 1);
  CHECK(run.counters.target_syncs == run.counters.gradient_steps / cfg.agent.target_update_interval);

  // Every recorded solution replays to success.
  for (const auto& entry : run.solutions.top(run.solutions.size())) {
    const auto shapes = apply_sequence(cfg.env.inlet, entry.sequence, *cfg.env.library);
    CHECK(pmr(shapes.back(), target) >= cfg.env.pmr_threshold);
  }
}

TEST_CASE("identical config and seed give byte-identical artifacts") {
  const auto cfg = small_config(4, 150);
  const auto target = two_pillar_target(cfg.env);
  const auto a = render_artifacts(train(cfg, target));
  const auto b = render_artifacts(train(cfg, target));
  CHECK(a == b);
  const auto c = render_artifacts(train(small_config(5, 150), target));
  CHECK(a.at("episodes.tsv") != c.at("episodes.tsv"));
  for (const char* name : {"config.json", "summary.json", "episodes.tsv", "windows.tsv", "solutions.tsv",
                           "unique_states.tsv", "evaluations.tsv", "checkpoint.json"}) {
    CHECK(a.count(name) == 1);
  }
}

TEST_CASE("single precision training runs and is deterministic") {
  auto cfg = small_config(6, 80);
  cfg.agent.precision = Precision::kF32;
  const auto target = two_pillar_target(cfg.env);
  const auto a = render_artifacts(train(cfg, target));
  CHECK(a == render_artifacts(train(cfg, target)));
  CHECK(a.at("config.json").find("\"f32\"") != std::string::npos);
}

TEST_CASE("solution table") {
  SolutionTable table;
  EpisodeLog ok;
  ok.success = true;
  ok.actions = {30, 30, 24};
  record_solution(table, ok);
  record_solution(table, ok);
  CHECK(table.frequency({30, 30, 24}) == 2);
  EpisodeLog other = ok;
  other.actions = {1, 2};
  record_solution(table, other);
  EpisodeLog third = ok;
  third.actions = {3};
  record_solution(table, third);
  const auto top = table.top(3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].sequence == PillarSequence{30, 30, 24});
  CHECK(top[1].sequence == PillarSequence{1, 2});
  CHECK(top[2].sequence == PillarSequence{3});
  EpisodeLog failed = ok;
  failed.success = false;
  CHECK_THROWS_AS(table.record(failed), UsageError);
}

TEST_CASE("unique state counting") {
  const auto env = make_default_env();
  EpisodeLog one;
  one.actions = {5};
  CHECK(unique_states({one}, *env.library, env.inlet) == std::vector<std::int64_t>{2});
  EpisodeLog two;
  two.actions = {5, 9};
  const auto counts = unique_states({two, two}, *env.library, env.inlet);
  CHECK(counts[0] == counts[1]);
  CHECK(counts[1] == static_cast<std::int64_t>(unique_states({two}, *env.library, env.inlet).back()));
}

TEST_CASE("target generation") {
  const auto env = make_default_env();
  Rng a(7), b(7);
  const auto t1 = make_targets(*env.library, env.inlet, a, 1, 1);
  const auto t2 = make_targets(*env.library, env.inlet, b, 1, 1);
  REQUIRE(t1.size() == 1);
  CHECK(t1[0].sequence == t2[0].sequence);
  CHECK(t1[0].shape == t2[0].shape);
  Rng many(8);
  const auto ts = make_targets(*env.library, env.inlet, many, 200, 3);
  std::set<std::uint64_t> hashes;
  for (const auto& t : ts) {
    CHECK(hashes.insert(shape_hash(t.shape)).second);
    CHECK_FALSE(t.shape.empty());
    CHECK(apply_sequence(env.inlet, t.sequence, *env.library).back() == t.shape);
  }
  CHECK_THROWS_AS(make_targets(*env.library, env.inlet, many, 1, 0), ParameterError);
}

TEST_CASE("evaluation") {
  auto cfg = small_config(9, 0);
  const auto target = two_pillar_target(cfg.env);
  SUBCASE("zero network picks action 0 every step") {
    AgentConfig ac = cfg.agent;
    DqnAgent<double> agent(cfg.resolved_architecture(), ac);
    auto params = agent.online().params().zeros_like();
    CheckpointMetadata meta;
    meta.grid = cfg.env.grid();
    meta.inlet = cfg.env.inlet;
    DqnAgent<double> zero(cfg.resolved_architecture(), ac, params, RmsPropState<double>{params.zeros_like()});
    const auto ckpt = make_checkpoint(zero, meta);
    const auto before = serialize_checkpoint(ckpt);
    const auto summary = evaluate(ckpt, cfg.env, target, 3);
    CHECK(summary.best_sequence == PillarSequence(static_cast<std::size_t>(summary.mean_length), 0));
    CHECK(summary.deterministic);
    CHECK(serialize_checkpoint(ckpt) == before);
  }
}

TEST_CASE("transfer curriculum") {
  auto cfg = small_config(10, 0);
  const auto first = two_pillar_target(cfg.env);
  const auto second = apply_sequence(cfg.env.inlet, {30, 7}, *cfg.env.library).back();
  SUBCASE("one stage equals plain training") {
    CurriculumSpec spec{{{first, 120}}, std::nullopt};
    const auto runs = transfer_train(spec, cfg);
    REQUIRE(runs.size() == 1);
    TrainConfig plain = cfg;
    plain.episodes = 120;
    StageOptions opts;
    opts.run_id = "stage0";
    CHECK(render_artifacts(runs[0]) == render_artifacts(train(plain, first, opts)));
  }
  SUBCASE("two stages chain checkpoints") {
    CurriculumSpec spec{{{first, 120}, {second, 100}}, std::nullopt};
    const auto runs = transfer_train(spec, cfg);
    REQUIRE(runs.size() == 2);
    CHECK(runs[1].checkpoint.metadata.lineage == std::vector<std::string>{"stage0"});
    CHECK(runs[1].counters.start_global_step == runs[0].counters.global_steps);
    CHECK(runs[1].checkpoint.metadata.global_step == runs[0].counters.global_steps + runs[1].counters.global_steps);
    CHECK(runs[1].checkpoint.metadata.episodes == 220);
    // Replay is cleared, so the warm stage waits for the warm-up count again.
    CHECK(runs[1].counters.first_gradient_at >= cfg.agent.warmup_random_steps);
    const auto& stage = runs[1].resolved_config.at("stage");
    CHECK(stage.at("effective_schedule").at("start").get<double>() == 0.3);
    CHECK(stage.at("uniform_warmup").get<bool>() == false);
  }
  SUBCASE("targets on another grid are rejected") {
    CurriculumSpec spec{{{make_inlet({4, 8}), 10}}, std::nullopt};
    CHECK_THROWS_AS(transfer_train(spec, cfg), ConfigError);
  }
}

TEST_CASE("run config loading") {
  const auto j = nlohmann::json::parse(R"({
    "grid": "12x32", "scale": 6, "episodes": 20, "seed": 3,
    "target": {"sequence": "30, 11"},
    "agent": {"batch_size": 16, "loss": "mse"},
    "env": {"pmr_threshold": 0.85, "reward_scaling": "remainder"},
    "curriculum": [{"target": {"sequence": [30, 11]}, "episodes": 5}, {"target": {"random_length": 2, "seed": 4}, "episodes": 6}]
  })");
  const auto run = load_run_config(j, ".");
  CHECK(run.config.episodes == 20);
  CHECK(run.config.seed() == 3);
  CHECK(run.config.agent.batch_size == 16);
  CHECK(run.config.agent.loss == LossKind::kMse);
  CHECK(run.config.agent.warmup_random_steps == 1667);
  CHECK(run.config.env.pmr_threshold == 0.85);
  CHECK(run.config.env.reward_scaling == RewardScaling::kRemainder);
  REQUIRE(run.target);
  CHECK(*run.target == two_pillar_target(run.config.env));
  CHECK(run.curriculum.stages.size() == 2);
  CHECK(load_run_config(j, ".", 11).config.seed() == 11);
  CHECK_THROWS_AS(load_run_config(nlohmann::json::parse(R"({"agent": {"loss": "l1"}})"), "."), ConfigError);
  CHECK_THROWS_AS(load_run_config(nlohmann::json::parse(R"({"episodes": "many"})"), "."), ConfigError);
  CHECK_THROWS_AS(load_run_config(nlohmann::json::parse(R"({"target": {"sequence": [40]}})"), "."), Error);
}
