#pragma once

// Double-DQN learner: exploration schedule, bootstrap targets, masked TD loss,
// RMSProp and target-network bookkeeping.

#include <cstdint>
#include <span>
#include <string>

#include "flowsculpt/network.hpp"
#include "flowsculpt/replay_buffer.hpp"

namespace flowsculpt {

struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.1;
  std::int64_t decay_steps = 1'000'000;

  void validate() const;
};

/// start + (end - start) * min(1, step / decay_steps).
double epsilon_at(const EpsilonSchedule& schedule, std::int64_t global_step);

enum class LossKind { kHuber, kMse };
enum class Precision { kF64, kF32 };

std::string to_string(LossKind loss);
LossKind loss_from_string(const std::string& text);
std::string to_string(Precision precision);
Precision precision_from_string(const std::string& text);

struct AgentConfig {
  double gamma = 0.99;
  double learning_rate = 0.001;
  std::int64_t target_update_interval = 4000;  // counted in gradient steps
  std::int64_t warmup_random_steps = 10'000;
  int batch_size = 32;
  LossKind loss = LossKind::kHuber;
  double huber_delta = 1.0;
  double rmsprop_rho = 0.95;
  double rmsprop_epsilon = 1e-6;
  std::size_t replay_capacity = 100'000;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF64;

  void validate() const;
};

/// Epsilon-greedy: with probability epsilon a uniform action, otherwise the
/// lowest-index argmax of the Q-values. Always consumes one uniform draw.
template <typename T>
int select_action(const QNetwork<T>& params, const FlowShape& obs, double epsilon, Rng& rng);

/// y = r for terminal transitions, else r + gamma * Q_target(s', argmax_a Q_online(s', a)).
template <typename T>
Vector<T> ddqn_targets(std::span<const Transition* const> batch, const QNetwork<T>& online,
                       const QNetwork<T>& target, double gamma);

/// Plain DQN target r + gamma * max_a Q_target(s', a), kept for comparison.
template <typename T>
Vector<T> dqn_targets(std::span<const Transition* const> batch, const QNetwork<T>& target, double gamma);

template <typename T>
struct LossAndGrads {
  T loss = 0;
  ParamSet<T> grads;
  Tape<T> tape;  // batch statistics, for the running-statistics update
};

/// Mean Huber (or squared) error between Q(s_i, a_i) and y_i. Only the taken
/// action's output receives gradient.
template <typename T>
LossAndGrads<T> loss_and_grads(const QNetwork<T>& online, std::span<const Transition* const> batch,
                               const Vector<T>& targets, const AgentConfig& cfg);

template <typename T>
struct RmsPropState {
  ParamSet<T> second_moments;
};

/// v <- rho v + (1 - rho) g^2;  w <- w - lr g / (sqrt(v) + eps). Non-trainable tensors are skipped.
/// Throws NumericError (leaving params and state untouched) if any updated value is non-finite.
template <typename T>
void rmsprop_step(ParamSet<T>& params, const ParamSet<T>& grads, RmsPropState<T>& state, const AgentConfig& cfg);

template <typename T>
void sync_target(const QNetwork<T>& online, QNetwork<T>& target) {
  target = online;
}

template <typename To, typename From>
ParamSet<To> cast_params(const ParamSet<From>& in) {
  ParamSet<To> out;
  out.tensors.reserve(in.tensors.size());
  for (const auto& t : in.tensors) out.tensors.push_back({t.name, t.shape, t.trainable, t.values.template cast<To>()});
  return out;
}

/// Online/target networks, optimizer state and replay memory owned by one training run.
template <typename T>
class DqnAgent {
 public:
  DqnAgent(NetworkArchitecture arch, AgentConfig cfg);
  /// Warm start from existing parameters (target network starts as a copy).
  DqnAgent(NetworkArchitecture arch, AgentConfig cfg, ParamSet<T> params, RmsPropState<T> opt_state);

  int act(const FlowShape& obs, double epsilon) { return select_action(online_, obs, epsilon, explore_rng_); }
  int random_action() { return static_cast<int>(explore_rng_.uniform_index(static_cast<std::uint64_t>(online_.output_size()))); }
  int greedy_action(const FlowShape& obs) const { return argmax_lowest(online_.q_values(obs)); }

  void remember(Transition t) { replay_.push(std::move(t)); }
  bool ready_to_learn() const { return replay_.size() >= static_cast<std::size_t>(cfg_.batch_size); }

  /// One gradient step on a sampled batch; syncs the target network every
  /// target_update_interval gradient steps. Returns the batch loss.
  double learn();

  const QNetwork<T>& online() const { return online_; }
  QNetwork<T>& online() { return online_; }
  const QNetwork<T>& target() const { return target_; }
  const RmsPropState<T>& optimizer_state() const { return opt_; }
  ReplayBuffer& replay() { return replay_; }
  const ReplayBuffer& replay() const { return replay_; }
  const AgentConfig& config() const { return cfg_; }

  std::int64_t gradient_steps() const { return gradient_steps_; }
  std::int64_t target_syncs() const { return target_syncs_; }

 private:
  AgentConfig cfg_;
  QNetwork<T> online_;
  QNetwork<T> target_;
  RmsPropState<T> opt_;
  ReplayBuffer replay_;
  Rng explore_rng_;
  Rng sample_rng_;
  std::int64_t gradient_steps_ = 0;
  std::int64_t target_syncs_ = 0;
};

extern template class DqnAgent<float>;
extern template class DqnAgent<double>;

}  // namespace flowsculpt
