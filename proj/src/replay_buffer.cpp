#include "flowsculpt/replay_buffer.hpp"

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
  ++insertions_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (items_.size() < n || items_.empty()) {
    throw UsageError("cannot sample " + std::to_string(n) + " transitions from a buffer holding " +
                     std::to_string(items_.size()));
  }
  std::vector<const Transition*> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(&items_[rng.uniform_index(items_.size())]);
  return out;
}

void ReplayBuffer::clear() {
  items_.clear();
  head_ = 0;
}

std::vector<const Transition*> ReplayBuffer::ordered() const {
  std::vector<const Transition*> out;
  out.reserve(items_.size());
  for (std::size_t k = 0; k < items_.size(); ++k) out.push_back(&items_[(head_ + k) % items_.size()]);
  return out;
}

}  // namespace flowsculpt
