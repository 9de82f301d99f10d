#include "flowsculpt/agent.hpp"

#include <algorithm>
#include <cmath>

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

void EpsilonSchedule::validate() const {
  if (!(start >= end && end >= 0.0 && start <= 1.0)) throw ConfigError("epsilon schedule needs 1 >= start >= end >= 0");
  if (decay_steps < 1) throw ConfigError("epsilon decay_steps must be positive");
}

double epsilon_at(const EpsilonSchedule& schedule, std::int64_t global_step) {
  const double frac =
      std::min(1.0, static_cast<double>(std::max<std::int64_t>(global_step, 0)) / static_cast<double>(schedule.decay_steps));
  return schedule.start + (schedule.end - schedule.start) * frac;
}

std::string to_string(LossKind loss) { return loss == LossKind::kHuber ? "huber" : "mse"; }

LossKind loss_from_string(const std::string& text) {
  if (text == "huber") return LossKind::kHuber;
  if (text == "mse") return LossKind::kMse;
  throw ConfigError("unknown loss '" + text + "' (expected huber or mse)");
}

std::string to_string(Precision precision) { return precision == Precision::kF64 ? "f64" : "f32"; }

Precision precision_from_string(const std::string& text) {
  if (text == "f64") return Precision::kF64;
  if (text == "f32") return Precision::kF32;
  throw ConfigError("unknown precision '" + text + "' (expected f64 or f32)");
}

void AgentConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (target_update_interval < 1) throw ConfigError("target_update_interval must be positive");
  if (warmup_random_steps < 0) throw ConfigError("warmup_random_steps must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(huber_delta > 0.0)) throw ConfigError("huber_delta must be positive");
  if (!(rmsprop_rho > 0.0 && rmsprop_rho < 1.0)) throw ConfigError("rmsprop_rho must lie in (0, 1)");
  if (!(rmsprop_epsilon > 0.0)) throw ConfigError("rmsprop_epsilon must be positive");
  if (replay_capacity < static_cast<std::size_t>(batch_size)) throw ConfigError("replay capacity below batch size");
}

template <typename T>
int select_action(const QNetwork<T>& params, const FlowShape& obs, double epsilon, Rng& rng) {
  if (rng.uniform01() < epsilon) {
    return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(params.output_size())));
  }
  return argmax_lowest(params.q_values(obs));
}

namespace {

template <typename T>
Matrix<T> encode_next_states(std::span<const Transition* const> batch) {
  std::vector<const FlowShape*> next;
  next.reserve(batch.size());
  for (const auto* t : batch) next.push_back(&t->next_state);
  return encode_shapes<T>(next);
}

}  // namespace

template <typename T>
Vector<T> ddqn_targets(std::span<const Transition* const> batch, const QNetwork<T>& online,
                       const QNetwork<T>& target, double gamma) {
  if (batch.empty()) throw UsageError("ddqn_targets needs a nonempty batch");
  const Matrix<T> next = encode_next_states<T>(batch);
  const Matrix<T> q_online = online.predict(next);
  const Matrix<T> q_target = target.predict(next);
  Vector<T> y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(i);
    y(n) = static_cast<T>(batch[i]->reward);
    if (!batch[i]->done) {
      const int best = argmax_lowest(q_online.col(n));
      y(n) += static_cast<T>(gamma) * q_target(best, n);
    }
  }
  return y;
}

template <typename T>
Vector<T> dqn_targets(std::span<const Transition* const> batch, const QNetwork<T>& target, double gamma) {
  if (batch.empty()) throw UsageError("dqn_targets needs a nonempty batch");
  const Matrix<T> q_target = target.predict(encode_next_states<T>(batch));
  Vector<T> y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(i);
    y(n) = static_cast<T>(batch[i]->reward);
    if (!batch[i]->done) y(n) += static_cast<T>(gamma) * q_target.col(n).maxCoeff();
  }
  return y;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const QNetwork<T>& online, std::span<const Transition* const> batch,
                               const Vector<T>& targets, const AgentConfig& cfg) {
  if (batch.empty() || static_cast<Eigen::Index>(batch.size()) != targets.size()) {
    throw ShapeError("batch of " + std::to_string(batch.size()) + " transitions with " +
                     std::to_string(targets.size()) + " targets");
  }
  std::vector<const FlowShape*> states;
  states.reserve(batch.size());
  for (const auto* t : batch) {
    if (t->action < 0 || t->action >= online.output_size()) throw ParameterError("transition action out of range");
    states.push_back(&t->state);
  }

  LossAndGrads<T> out;
  const Matrix<T> q = online.forward(encode_shapes<T>(states), out.tape);
  Matrix<T> dq = Matrix<T>::Zero(q.rows(), q.cols());
  const T n = static_cast<T>(batch.size());
  const T delta = static_cast<T>(cfg.huber_delta);
  T total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const int a = batch[i]->action;
    const T diff = q(a, col) - targets(col);
    if (cfg.loss == LossKind::kMse) {
      total += diff * diff;
      dq(a, col) = T(2) * diff / n;
    } else if (std::abs(diff) <= delta) {
      total += T(0.5) * diff * diff;
      dq(a, col) = diff / n;
    } else {
      total += delta * (std::abs(diff) - T(0.5) * delta);
      dq(a, col) = (diff > 0 ? delta : -delta) / n;
    }
  }
  out.loss = total / n;
  out.grads = online.backward(out.tape, dq);
  return out;
}

template <typename T>
void rmsprop_step(ParamSet<T>& params, const ParamSet<T>& grads, RmsPropState<T>& state, const AgentConfig& cfg) {
  if (!params.same_layout(grads)) throw ShapeError("gradient layout does not match parameters");
  if (state.second_moments.tensors.empty()) state.second_moments = params.zeros_like();
  if (!params.same_layout(state.second_moments)) throw ShapeError("optimizer state layout does not match parameters");

  const T rho = static_cast<T>(cfg.rmsprop_rho);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.rmsprop_epsilon);
  std::vector<Vector<T>> new_v(params.tensors.size());
  std::vector<Vector<T>> new_w(params.tensors.size());
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    if (!params.tensors[k].trainable) continue;
    const auto& g = grads.tensors[k].values;
    new_v[k] = rho * state.second_moments.tensors[k].values + (T(1) - rho) * g.cwiseProduct(g);
    new_w[k] = params.tensors[k].values.array() - lr * g.array() / (new_v[k].array().sqrt() + eps);
    if (!new_w[k].allFinite() || !new_v[k].allFinite()) {
      throw NumericError("non-finite RMSProp update in tensor " + params.tensors[k].name);
    }
  }
  for (std::size_t k = 0; k < params.tensors.size(); ++k) {
    if (!params.tensors[k].trainable) continue;
    state.second_moments.tensors[k].values = std::move(new_v[k]);
    params.tensors[k].values = std::move(new_w[k]);
  }
}

template <typename T>
DqnAgent<T>::DqnAgent(NetworkArchitecture arch, AgentConfig cfg)
    : cfg_(cfg),
      online_([&] {
        Rng init(mix_seed(cfg.seed, 1));
        return QNetwork<T>(std::move(arch), init);
      }()),
      target_(online_),
      opt_{online_.params().zeros_like()},
      replay_(cfg.replay_capacity),
      explore_rng_(mix_seed(cfg.seed, 2)),
      sample_rng_(mix_seed(cfg.seed, 3)) {
  cfg_.validate();
}

template <typename T>
DqnAgent<T>::DqnAgent(NetworkArchitecture arch, AgentConfig cfg, ParamSet<T> params, RmsPropState<T> opt_state)
    : cfg_(cfg),
      online_(std::move(arch), std::move(params)),
      target_(online_),
      opt_(std::move(opt_state)),
      replay_(cfg.replay_capacity),
      explore_rng_(mix_seed(cfg.seed, 2)),
      sample_rng_(mix_seed(cfg.seed, 3)) {
  cfg_.validate();
  if (opt_.second_moments.tensors.empty()) opt_.second_moments = online_.params().zeros_like();
  if (!online_.params().same_layout(opt_.second_moments)) {
    throw CheckpointError("optimizer state does not match the network parameters");
  }
}

template <typename T>
double DqnAgent<T>::learn() {
  const auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), sample_rng_);
  const Vector<T> y = ddqn_targets<T>(batch, online_, target_, cfg_.gamma);
  LossAndGrads<T> lg = loss_and_grads<T>(online_, batch, y, cfg_);
  rmsprop_step(online_.params(), lg.grads, opt_, cfg_);
  if (online_.architecture().has_batch_norm()) online_.update_running_statistics(lg.tape);
  ++gradient_steps_;
  if (gradient_steps_ % cfg_.target_update_interval == 0) {
    sync_target(online_, target_);
    ++target_syncs_;
  }
  return static_cast<double>(lg.loss);
}

#define FLOWSCULPT_INSTANTIATE(T)                                                                                  \
  template int select_action<T>(const QNetwork<T>&, const FlowShape&, double, Rng&);                               \
  template Vector<T> ddqn_targets<T>(std::span<const Transition* const>, const QNetwork<T>&, const QNetwork<T>&,   \
                                     double);                                                                      \
  template Vector<T> dqn_targets<T>(std::span<const Transition* const>, const QNetwork<T>&, double);              \
  template LossAndGrads<T> loss_and_grads<T>(const QNetwork<T>&, std::span<const Transition* const>,               \
                                             const Vector<T>&, const AgentConfig&);                                \
  template void rmsprop_step<T>(ParamSet<T>&, const ParamSet<T>&, RmsPropState<T>&, const AgentConfig&);           \
  template class DqnAgent<T>;

FLOWSCULPT_INSTANTIATE(float)
FLOWSCULPT_INSTANTIATE(double)

#undef FLOWSCULPT_INSTANTIATE

}  // namespace flowsculpt
