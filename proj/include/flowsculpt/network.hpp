#pragma once

// Q-function approximator with explicit forward and backward passes.
//
// Activations are feature-major matrices: one column per sample, features in
// (channel, row, column) order. Parameters live in a flat list of named
// tensors stored row-major, so the optimizer and the checkpoint code can walk
// them without knowing about layer types.

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "flowsculpt/flow_core.hpp"
#include "flowsculpt/random.hpp"

namespace flowsculpt {

struct Convolution {
  int filters = 32;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  friend bool operator==(const Convolution&, const Convolution&) = default;
};

/// Per-channel normalization. `momentum` is the weight of the newest batch in the running statistics.
struct BatchNorm {
  double momentum = 0.1;
  double epsilon = 1e-5;
  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

struct MaxPool {
  int window = 2;
  friend bool operator==(const MaxPool&, const MaxPool&) = default;
};

struct Flatten {
  friend bool operator==(const Flatten&, const Flatten&) = default;
};

struct FullyConnected {
  int units = 0;
  friend bool operator==(const FullyConnected&, const FullyConnected&) = default;
};

struct ReLU {
  friend bool operator==(const ReLU&, const ReLU&) = default;
};

using LayerSpec = std::variant<Convolution, BatchNorm, MaxPool, Flatten, FullyConnected, ReLU>;

std::string layer_name(const LayerSpec& layer);

/// Channels x rows x columns of one sample's activation.
struct ActivationShape {
  int channels = 1;
  int rows = 1;
  int cols = 1;
  int size() const { return channels * rows * cols; }
  friend bool operator==(const ActivationShape&, const ActivationShape&) = default;
};

struct NetworkArchitecture {
  GridSpec input;
  std::vector<LayerSpec> layers;
  int output_units = kDefaultActionCount;

  /// Flatten -> FC(128) -> ReLU -> FC(64) -> ReLU -> FC(actions).
  static NetworkArchitecture dense(GridSpec input, int actions = kDefaultActionCount);

  /// Conv(32) -> [BN] -> ReLU -> MaxPool -> Conv(64) -> [BN] -> ReLU -> MaxPool -> Flatten
  /// -> FC(128) -> [BN] -> ReLU -> FC(64) -> ReLU -> FC(actions).
  static NetworkArchitecture convolutional(GridSpec input, int actions = kDefaultActionCount,
                                           bool batch_norm = true);

  /// Activation shape after every layer; throws ConfigError if the stack is inconsistent.
  std::vector<ActivationShape> activation_shapes() const;
  void validate() const { activation_shapes(); }
  bool has_batch_norm() const;

  friend bool operator==(const NetworkArchitecture&, const NetworkArchitecture&) = default;
};

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  bool trainable = true;
  Vector<T> values;  // row-major flattening of `shape`
};

template <typename T>
struct ParamSet {
  std::vector<Tensor<T>> tensors;

  std::size_t parameter_count() const;
  bool all_finite() const;
  ParamSet zeros_like() const;
  /// Same names, shapes and trainable flags.
  bool same_layout(const ParamSet& other) const;
  Tensor<T>& find(const std::string& name);
  const Tensor<T>& find(const std::string& name) const;
};

/// Activations recorded by a training-mode forward pass.
template <typename T>
struct Tape {
  std::vector<Matrix<T>> inputs;  // input of every layer
  struct BatchNormRecord {
    Matrix<T> normalized;
    Vector<T> inv_std;
    Vector<T> mean;
    Vector<T> variance;  // biased batch variance
  };
  std::vector<BatchNormRecord> batch_norm;           // indexed by layer
  std::vector<std::vector<std::int32_t>> pool_argmax;  // indexed by layer
  Eigen::Index batch = 0;
};

enum class Initialization { kGlorotUniform, kZero };

template <typename T>
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(NetworkArchitecture arch, Rng& rng, Initialization init = Initialization::kGlorotUniform);
  /// Adopts existing parameters; throws ShapeError when they do not fit `arch`.
  QNetwork(NetworkArchitecture arch, ParamSet<T> params);

  const NetworkArchitecture& architecture() const { return arch_; }
  const ParamSet<T>& params() const { return params_; }
  ParamSet<T>& params() { return params_; }
  int input_size() const { return static_cast<int>(arch_.input.size()); }
  int output_size() const { return arch_.output_units; }

  /// Inference-mode forward pass (batch norm uses running statistics).
  Matrix<T> predict(const Matrix<T>& inputs) const;
  Vector<T> q_values(const FlowShape& obs) const;

  /// Training-mode forward pass (batch statistics), recording what backward() needs.
  Matrix<T> forward(const Matrix<T>& inputs, Tape<T>& tape) const;
  /// Parameter gradients of sum(grad_output .* output) for the pass recorded in `tape`.
  ParamSet<T> backward(const Tape<T>& tape, const Matrix<T>& grad_output) const;
  /// Folds the batch statistics recorded in `tape` into the running statistics.
  void update_running_statistics(const Tape<T>& tape);

 private:
  struct LayerPlan {
    ActivationShape in;
    ActivationShape out;
    int first_tensor = -1;  // index into params_.tensors, -1 for parameter-free layers
  };

  void plan_layers();
  Matrix<T> run(const Matrix<T>& inputs, Tape<T>* tape) const;

  NetworkArchitecture arch_;
  ParamSet<T> params_;
  std::vector<LayerPlan> plan_;
};

/// One column per shape, pixel values 0/1.
template <typename T>
Matrix<T> encode_shapes(std::span<const FlowShape* const> shapes);
template <typename T>
Matrix<T> encode_shape(const FlowShape& shape);

/// Lowest index among maximal entries.
template <typename Derived>
int argmax_lowest(const Eigen::MatrixBase<Derived>& values) {
  int best = 0;
  for (Eigen::Index k = 1; k < values.size(); ++k) {
    if (values(k) > values(best)) best = static_cast<int>(k);
  }
  return best;
}

extern template class QNetwork<float>;
extern template class QNetwork<double>;
extern template struct ParamSet<float>;
extern template struct ParamSet<double>;

}  // namespace flowsculpt
