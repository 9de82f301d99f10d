#pragma once

#include <cstdint>
#include <vector>

#include "flowsculpt/flow_core.hpp"
#include "flowsculpt/random.hpp"

namespace flowsculpt {

struct Transition {
  FlowShape state;
  int action = 0;
  double reward = 0.0;
  FlowShape next_state;
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

/// Fixed-capacity FIFO ring of transitions with uniform sampling (with replacement).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100'000);

  void push(Transition t);
  /// Throws UsageError when fewer than n transitions are stored.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insertions() const { return insertions_; }
  void clear();

  /// Stored transitions from oldest to newest.
  std::vector<const Transition*> ordered() const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // next slot to overwrite once full
  std::uint64_t insertions_ = 0;
};

}  // namespace flowsculpt
