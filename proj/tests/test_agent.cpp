#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "flowsculpt/agent.hpp"
#include "flowsculpt/checkpoint.hpp"
#include "flowsculpt/errors.hpp"
#include "oracles/gradient_check.hpp"

using namespace flowsculpt;

namespace {

// Single dense layer whose weights are zero, so Q(s) equals the bias vector for every s.
QNetwork<double> constant_q(const std::vector<double>& q, GridSpec g = {2, 2}) {
  NetworkArchitecture arch{g, {Flatten{}, FullyConnected{static_cast<int>(q.size())}}, static_cast<int>(q.size())};
  Rng rng(0);
  QNetwork<double> net(arch, rng, Initialization::kZero);
  auto& bias = net.params().find("layer1.bias").values;
  for (std::size_t k = 0; k < q.size(); ++k) bias(static_cast<Eigen::Index>(k)) = q[k];
  return net;
}

Transition transition(GridSpec g, int action, double reward, bool done) {
  Transition t;
  t.state = make_inlet(g, 0.0, 0.5);
  t.next_state = make_inlet(g, 0.5, 1.0);
  t.action = action;
  t.reward = reward;
  t.done = done;
  return t;
}

std::vector<const Transition*> ptrs(const std::vector<Transition>& v) {
  std::vector<const Transition*> out;
  for (const auto& t : v) out.push_back(&t);
  return out;
}

}  // namespace

TEST_CASE("dense architecture shapes") {
  const auto arch = NetworkArchitecture::dense({12, 32});
  Rng rng(1);
  const QNetwork<double> net(arch, rng);
  CHECK(net.output_size() == 32);
  CHECK(net.params().find("layer1.weight").shape == std::vector<int>{128, 384});
  CHECK(net.params().find("layer5.weight").shape == std::vector<int>{32, 64});
  CHECK(net.params().parameter_count() == 384 * 128 + 128 + 128 * 64 + 64 + 64 * 32 + 32);
  const auto q = net.q_values(make_inlet({12, 32}));
  CHECK(q.size() == 32);
  CHECK(q == net.q_values(make_inlet({12, 32})));
  CHECK_THROWS_AS(net.q_values(make_inlet({4, 8})), ShapeError);
}

TEST_CASE("glorot initialization bounds and zero biases") {
  Rng rng(3);
  const QNetwork<double> net(NetworkArchitecture::dense({12, 32}), rng);
  const auto& w = net.params().find("layer1.weight").values;
  const double limit = std::sqrt(6.0 / (384 + 128));
  CHECK(w.cwiseAbs().maxCoeff() <= limit);
  CHECK(w.cwiseAbs().maxCoeff() > 0.9 * limit);
  CHECK(std::abs(w.mean()) < 0.01 * limit * 10);
  CHECK(net.params().find("layer1.bias").values.isZero());
}

TEST_CASE("zero network outputs zeros") {
  Rng rng(0);
  const QNetwork<double> net(NetworkArchitecture::dense({12, 32}), rng, Initialization::kZero);
  CHECK(net.q_values(make_inlet({12, 32})).isZero());
}

TEST_CASE("convolutional architecture") {
  const auto arch = NetworkArchitecture::convolutional({12, 32}, 32, true);
  CHECK(arch.has_batch_norm());
  const auto shapes = arch.activation_shapes();
  CHECK(shapes.back().size() == 32);
  Rng rng(2);
  QNetwork<double> net(arch, rng);
  CHECK(net.q_values(make_inlet({12, 32})).size() == 32);
  CHECK_FALSE(NetworkArchitecture::convolutional({12, 32}, 32, false).has_batch_norm());
  CHECK_FALSE(NetworkArchitecture::dense({12, 32}).has_batch_norm());
}

TEST_CASE("parameter layout mismatch is rejected") {
  Rng rng(0);
  const QNetwork<double> small(NetworkArchitecture::dense({4, 8}), rng);
  CHECK_THROWS_AS(QNetwork<double>(NetworkArchitecture::dense({12, 32}), small.params()), ShapeError);
}

TEST_CASE("non-finite parameters raise a numeric error") {
  auto net = constant_q({0.0, 1.0});
  net.params().find("layer1.bias").values(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(net.q_values(make_inlet({2, 2}, 0.0, 1.0)), NumericError);
}

TEST_CASE("hand-differentiated squared error") {
  NetworkArchitecture arch{{2, 2}, {Flatten{}, FullyConnected{1}}, 1};
  Rng rng(0);
  QNetwork<double> net(arch, rng, Initialization::kZero);
  net.params().find("layer1.weight").values(0) = 1.0;
  Transition t;
  t.state = FlowShape({2, 2});
  t.state.set_flat(0, true);
  t.next_state = t.state;
  std::vector<Transition> batch{t};
  AgentConfig cfg;
  cfg.loss = LossKind::kMse;
  Vector<double> y(1);
  y << 0.0;
  const auto lg = loss_and_grads<double>(net, ptrs(batch), y, cfg);
  CHECK(lg.loss == 1.0);
  CHECK(lg.grads.find("layer1.weight").values(0) == 2.0);
  CHECK(lg.grads.find("layer1.weight").values(1) == 0.0);
  CHECK(lg.grads.find("layer1.bias").values(0) == 2.0);
}

TEST_CASE("loss vanishes when predictions equal targets") {
  Rng rng(8);
  const QNetwork<double> net(NetworkArchitecture::dense({4, 8}), rng);
  auto batch = oracle::random_batch({4, 8}, 32, 6, rng);
  Vector<double> y(6);
  for (int i = 0; i < 6; ++i) y(i) = net.q_values(batch[static_cast<std::size_t>(i)].state)(batch[static_cast<std::size_t>(i)].action);
  for (auto loss : {LossKind::kHuber, LossKind::kMse}) {
    AgentConfig cfg;
    cfg.loss = loss;
    const auto lg = loss_and_grads<double>(net, ptrs(batch), y, cfg);
    CHECK(lg.loss == doctest::Approx(0.0).epsilon(1e-12));
    for (const auto& g : lg.grads.tensors) CHECK(g.values.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("only the taken action receives gradient") {
  Rng rng(12);
  const QNetwork<double> net(NetworkArchitecture::dense({4, 8}), rng);
  auto batch = oracle::random_batch({4, 8}, 32, 5, rng);
  for (auto& t : batch) t.action = 7;
  const auto lg = loss_and_grads<double>(net, ptrs(batch), oracle::random_targets(5, rng), AgentConfig{});
  const auto& gb = lg.grads.find("layer5.bias").values;
  for (Eigen::Index a = 0; a < gb.size(); ++a) {
    if (a != 7) CHECK(gb(a) == 0.0);
  }
  CHECK(gb(7) != 0.0);
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(2024);
  SUBCASE("default dense network, huber") {
    const QNetwork<double> net(NetworkArchitecture::dense({12, 32}), rng);
    for (int probe = 0; probe < 3; ++probe) {
      const auto batch = oracle::random_batch({12, 32}, 32, 4, rng);
      const auto r = oracle::check_gradients(net, batch, oracle::random_targets(4, rng), AgentConfig{}, rng, 30);
      CHECK(r.max_relative_error < 1e-4);
      CHECK(r.non_smooth * 50 <= r.checked);
    }
  }
  SUBCASE("dense network, squared error") {
    AgentConfig cfg;
    cfg.loss = LossKind::kMse;
    const QNetwork<double> net(NetworkArchitecture::dense({4, 8}), rng);
    const auto batch = oracle::random_batch({4, 8}, 32, 5, rng);
    const auto r = oracle::check_gradients(net, batch, oracle::random_targets(5, rng), cfg, rng, 200);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.non_smooth * 50 <= r.checked);
  }
  SUBCASE("convolutional network with batch norm") {
    const QNetwork<double> net(NetworkArchitecture::convolutional({6, 8}, 32, true), rng);
    const auto batch = oracle::random_batch({6, 8}, 32, 6, rng);
    const auto r = oracle::check_gradients(net, batch, oracle::random_targets(6, rng), AgentConfig{}, rng, 40);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.non_smooth * 50 <= r.checked);
  }
  SUBCASE("convolutional network without batch norm") {
    const QNetwork<double> net(NetworkArchitecture::convolutional({6, 8}, 32, false), rng);
    const auto batch = oracle::random_batch({6, 8}, 32, 3, rng);
    const auto r = oracle::check_gradients(net, batch, oracle::random_targets(3, rng), AgentConfig{}, rng, 40);
    CHECK(r.max_relative_error < 1e-4);
    CHECK(r.non_smooth * 50 <= r.checked);
  }
}

TEST_CASE("epsilon schedule") {
  const EpsilonSchedule s;
  CHECK(epsilon_at(s, 0) == 1.0);
  CHECK(std::abs(epsilon_at(s, 500'000) - 0.55) <= 1e-12);
  CHECK(epsilon_at(s, 1'000'000) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(epsilon_at(s, 5'000'000) == doctest::Approx(0.1).epsilon(1e-15));
  EpsilonSchedule bad{0.1, 0.5, 10};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("action selection") {
  Rng rng(77);
  SUBCASE("epsilon 1 is uniform over 32 actions") {
    const auto net = constant_q(std::vector<double>(32, 0.0));
    std::vector<int> counts(32, 0);
    const int n = 10'000;
    for (int k = 0; k < n; ++k) ++counts[static_cast<std::size_t>(select_action(net, make_inlet({2, 2}, 0, 1), 1.0, rng))];
    double chi2 = 0.0;
    const double expected = n / 32.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < 61.1);  // 31 degrees of freedom, p = 0.001
  }
  SUBCASE("greedy picks the argmax") {
    std::vector<double> q(32, 0.2);
    q[0] = 0.1;
    q[1] = 0.9;
    q[2] = 0.3;
    CHECK(select_action(constant_q(q), make_inlet({2, 2}, 0, 1), 0.0, rng) == 1);
  }
  SUBCASE("ties go to the lowest id") {
    CHECK(select_action(constant_q(std::vector<double>(32, 0.4)), make_inlet({2, 2}, 0, 1), 0.0, rng) == 0);
    std::vector<double> q(32, 0.0);
    q[5] = q[9] = 1.0;
    CHECK(select_action(constant_q(q), make_inlet({2, 2}, 0, 1), 0.0, rng) == 5);
  }
  SUBCASE("adding a constant keeps the greedy action") {
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> q(32), shifted(32);
      const double c = rng.uniform(-10, 10);
      for (std::size_t k = 0; k < 32; ++k) {
        q[k] = std::round(rng.uniform(-4, 4) * 4) / 4;
        shifted[k] = q[k] + std::round(c);  // exact: quarter steps plus an integer
      }
      CHECK(select_action(constant_q(q), make_inlet({2, 2}, 0, 1), 0.0, rng) ==
            select_action(constant_q(shifted), make_inlet({2, 2}, 0, 1), 0.0, rng));
    }
  }
}

TEST_CASE("bootstrap targets") {
  const GridSpec g{2, 2};
  const auto online = constant_q({1, 3, 2});
  const auto target = constant_q({5, 4, 7});
  std::vector<Transition> batch{transition(g, 0, -0.5, false), transition(g, 2, -0.5, true)};
  const auto y = ddqn_targets<double>(ptrs(batch), online, target, 0.99);
  CHECK(std::abs(y(0) - 3.46) <= 1e-12);
  CHECK(y(1) == -0.5);
  const auto plain = dqn_targets<double>(ptrs(batch), target, 0.99);
  CHECK(std::abs(plain(0) - (-0.5 + 0.99 * 7)) <= 1e-12);
  CHECK(y(0) != plain(0));
  const auto same = ddqn_targets<double>(ptrs(batch), target, target, 0.99);
  CHECK(same(0) == plain(0));
  CHECK(same(1) == plain(1));
}

TEST_CASE("rmsprop update") {
  ParamSet<double> params;
  params.tensors.push_back({"w", {1}, true, Vector<double>::Constant(1, 1.0)});
  params.tensors.push_back({"stat", {1}, false, Vector<double>::Constant(1, 3.0)});
  auto grads = params.zeros_like();
  RmsPropState<double> state;
  AgentConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = params;
    rmsprop_step(p, grads, state, cfg);
    CHECK(p.tensors[0].values(0) == 1.0);
  }
  SUBCASE("scalar example") {
    grads.tensors[0].values(0) = 1.0;
    grads.tensors[1].values(0) = 1.0;
    auto p = params;
    rmsprop_step(p, grads, state, cfg);
    CHECK(std::abs(state.second_moments.tensors[0].values(0) - 0.05) <= 1e-15);
    CHECK(std::abs(p.tensors[0].values(0) - (1.0 - 0.001 / (std::sqrt(0.05) + 1e-6))) <= 1e-15);
    CHECK(std::abs(p.tensors[0].values(0) - 0.995528) < 1e-6);
    CHECK(p.tensors[1].values(0) == 3.0);
  }
  SUBCASE("non-finite update is refused without side effects") {
    grads.tensors[0].values(0) = std::numeric_limits<double>::infinity();
    auto p = params;
    CHECK_THROWS_AS(rmsprop_step(p, grads, state, cfg), NumericError);
    CHECK(p.tensors[0].values(0) == 1.0);
  }
}

TEST_CASE("target network synchronisation") {
  AgentConfig cfg;
  cfg.seed = 5;
  cfg.batch_size = 4;
  cfg.target_update_interval = 3;
  DqnAgent<double> agent(NetworkArchitecture::dense({4, 8}), cfg);
  const auto probe = make_inlet({4, 8});
  CHECK(agent.online().q_values(probe) == agent.target().q_values(probe));
  Rng rng(1);
  for (const auto& t : oracle::random_batch({4, 8}, 32, 8, rng)) agent.remember(t);
  agent.learn();
  CHECK(agent.online().q_values(probe) != agent.target().q_values(probe));
  agent.learn();
  agent.learn();
  CHECK(agent.target_syncs() == 1);
  CHECK(agent.online().q_values(probe) == agent.target().q_values(probe));
  auto online = agent.online();
  auto target = agent.target();
  sync_target(online, target);
  sync_target(online, target);
  CHECK(target.q_values(probe) == online.q_values(probe));
}

TEST_CASE("replay buffer") {
  const GridSpec g{2, 2};
  auto item = [&](int id) { return transition(g, id, -0.1 * id, false); };
  SUBCASE("fifo eviction") {
    ReplayBuffer buf(2);
    buf.push(item(0));
    buf.push(item(1));
    buf.push(item(2));
    const auto all = buf.ordered();
    REQUIRE(all.size() == 2);
    CHECK(all[0]->action == 1);
    CHECK(all[1]->action == 2);
  }
  SUBCASE("eviction keeps exactly the most recent items") {
    ReplayBuffer buf(7);
    for (int k = 0; k < 30; ++k) {
      buf.push(item(k));
      const auto all = buf.ordered();
      const int first = std::max(0, k - 6);
      REQUIRE(all.size() == static_cast<std::size_t>(k - first + 1));
      for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i]->action == first + static_cast<int>(i));
    }
  }
  SUBCASE("sampling") {
    ReplayBuffer buf(10);
    for (int k = 0; k < 10; ++k) buf.push(item(k));
    Rng rng(3);
    const auto s = buf.sample(5, rng);
    CHECK(s.size() == 5);
    for (const auto* t : s) CHECK((t->action >= 0 && t->action < 10));
    std::vector<int> counts(10, 0);
    const int n = 100'000;
    for (int k = 0; k < n / 10; ++k)
      for (const auto* t : buf.sample(10, rng)) ++counts[static_cast<std::size_t>(t->action)];
    const double sigma = std::sqrt(n * 0.1 * 0.9);
    for (int c : counts) CHECK(std::abs(c - n * 0.1) < 5 * sigma);
    CHECK_THROWS_AS(buf.sample(11, rng), UsageError);
  }
}

TEST_CASE("identical seeds give bit-identical learners") {
  auto run = [] {
    AgentConfig cfg;
    cfg.seed = 42;
    cfg.batch_size = 8;
    cfg.target_update_interval = 5;
    DqnAgent<double> agent(NetworkArchitecture::dense({4, 8}), cfg);
    Rng rng(9);
    auto batch = oracle::random_batch({4, 8}, 32, 40, rng);
    for (auto& t : batch) {
      t.reward = rng.uniform(-2, 0);
      agent.remember(t);
    }
    for (int k = 0; k < 20; ++k) agent.learn();
    return agent.online().params();
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t k = 0; k < a.tensors.size(); ++k) CHECK(a.tensors[k].values == b.tensors[k].values);
}

TEST_CASE("single precision learner") {
  AgentConfig cfg;
  cfg.seed = 1;
  cfg.batch_size = 4;
  cfg.precision = Precision::kF32;
  DqnAgent<float> agent(NetworkArchitecture::dense({4, 8}), cfg);
  Rng rng(2);
  for (const auto& t : oracle::random_batch({4, 8}, 32, 8, rng)) agent.remember(t);
  CHECK(std::isfinite(agent.learn()));
}

TEST_CASE("checkpoint round trip") {
  AgentConfig cfg;
  cfg.seed = 3;
  cfg.batch_size = 4;
  DqnAgent<double> agent(NetworkArchitecture::dense({4, 8}), cfg);
  Rng rng(5);
  for (const auto& t : oracle::random_batch({4, 8}, 32, 8, rng)) agent.remember(t);
  agent.learn();
  CheckpointMetadata meta;
  meta.grid = {4, 8};
  meta.seed = 3;
  meta.inlet = make_inlet({4, 8});
  meta.lineage = {"stage1"};
  const auto ckpt = make_checkpoint(agent, meta);
  const auto text = serialize_checkpoint(ckpt);
  const auto back = parse_checkpoint(text);
  CHECK(serialize_checkpoint(back) == text);
  CHECK(back.metadata.lineage == std::vector<std::string>{"stage1"});
  const QNetwork<double> restored(back.architecture, back.params);
  for (const auto& t : oracle::random_batch({4, 8}, 32, 10, rng)) {
    CHECK(restored.q_values(t.state) == agent.online().q_values(t.state));
  }
  CHECK(params_digest(back.params) == params_digest(ckpt.params));
  CHECK_THROWS_AS(parse_checkpoint(text, NetworkArchitecture::dense({12, 32})), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("{\"format\": \"other\"}"), CheckpointError);
  CHECK_THROWS_AS(parse_checkpoint("not json"), CheckpointError);
  std::string bumped = text;
  bumped.replace(bumped.find("\"version\": 1"), 12, "\"version\": 9");
  CHECK_THROWS_AS(parse_checkpoint(bumped), CheckpointError);
}

TEST_CASE("convolutional checkpoint keeps running statistics") {
  AgentConfig cfg;
  cfg.seed = 4;
  cfg.batch_size = 4;
  DqnAgent<double> agent(NetworkArchitecture::convolutional({6, 8}, 32, true), cfg);
  Rng rng(6);
  for (const auto& t : oracle::random_batch({6, 8}, 32, 8, rng)) agent.remember(t);
  agent.learn();
  CheckpointMetadata meta;
  meta.grid = {6, 8};
  meta.inlet = make_inlet({6, 8});
  const auto back = parse_checkpoint(serialize_checkpoint(make_checkpoint(agent, meta)));
  const QNetwork<double> restored(back.architecture, back.params);
  const auto probe = make_inlet({6, 8});
  CHECK(restored.q_values(probe) == agent.online().q_values(probe));
}
