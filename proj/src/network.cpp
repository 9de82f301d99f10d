#include "flowsculpt/network.hpp"

#include <cmath>
#include <type_traits>

#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

template <typename T>
using RowMajorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMajorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

int conv_extent(int size, const Convolution& c) { return (size + 2 * c.padding - c.kernel) / c.stride + 1; }

std::string tensor_name(std::size_t layer, const char* what) {
  return "layer" + std::to_string(layer) + "." + what;
}

// Unrolls one sample into (C*K*K) x (Ho*Wo) patches; rows ordered (channel, ki, kj).
template <typename T>
void im2col(const T* x, const ActivationShape& in, const ActivationShape& out, const Convolution& c,
            Matrix<T>& cols) {
  const int k = c.kernel;
  cols.resize(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(out.rows) * out.cols);
  for (int ch = 0; ch < in.channels; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Eigen::Index r = (static_cast<Eigen::Index>(ch) * k + ki) * k + kj;
        for (int oi = 0; oi < out.rows; ++oi) {
          const int ii = oi * c.stride - c.padding + ki;
          for (int oj = 0; oj < out.cols; ++oj) {
            const int jj = oj * c.stride - c.padding + kj;
            const bool inside = ii >= 0 && ii < in.rows && jj >= 0 && jj < in.cols;
            cols(r, static_cast<Eigen::Index>(oi) * out.cols + oj) =
                inside ? x[(static_cast<std::size_t>(ch) * in.rows + ii) * in.cols + jj] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Matrix<T>& cols, const ActivationShape& in, const ActivationShape& out, const Convolution& c,
                T* dx) {
  const int k = c.kernel;
  for (int ch = 0; ch < in.channels; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const Eigen::Index r = (static_cast<Eigen::Index>(ch) * k + ki) * k + kj;
        for (int oi = 0; oi < out.rows; ++oi) {
          const int ii = oi * c.stride - c.padding + ki;
          if (ii < 0 || ii >= in.rows) continue;
          for (int oj = 0; oj < out.cols; ++oj) {
            const int jj = oj * c.stride - c.padding + kj;
            if (jj < 0 || jj >= in.cols) continue;
            dx[(static_cast<std::size_t>(ch) * in.rows + ii) * in.cols + jj] +=
                cols(r, static_cast<Eigen::Index>(oi) * out.cols + oj);
          }
        }
      }
    }
  }
}

}  // namespace

std::string layer_name(const LayerSpec& layer) {
  return std::visit(Overloaded{
                        [](const Convolution&) { return std::string("conv"); },
                        [](const BatchNorm&) { return std::string("batchnorm"); },
                        [](const MaxPool&) { return std::string("maxpool"); },
                        [](const Flatten&) { return std::string("flatten"); },
                        [](const FullyConnected&) { return std::string("dense"); },
                        [](const ReLU&) { return std::string("relu"); },
                    },
                    layer);
}

NetworkArchitecture NetworkArchitecture::dense(GridSpec input, int actions) {
  return {input,
          {Flatten{}, FullyConnected{128}, ReLU{}, FullyConnected{64}, ReLU{}, FullyConnected{actions}},
          actions};
}

NetworkArchitecture NetworkArchitecture::convolutional(GridSpec input, int actions, bool batch_norm) {
  NetworkArchitecture arch{input, {}, actions};
  auto& l = arch.layers;
  for (int filters : {32, 64}) {
    l.push_back(Convolution{filters, 3, 1, 1});
    if (batch_norm) l.push_back(BatchNorm{});
    l.push_back(ReLU{});
    l.push_back(MaxPool{2});
  }
  l.push_back(Flatten{});
  l.push_back(FullyConnected{128});
  if (batch_norm) l.push_back(BatchNorm{});
  l.push_back(ReLU{});
  l.push_back(FullyConnected{64});
  l.push_back(ReLU{});
  l.push_back(FullyConnected{actions});
  return arch;
}

std::vector<ActivationShape> NetworkArchitecture::activation_shapes() const {
  input.validate();
  if (layers.empty()) throw ConfigError("network has no layers");
  std::vector<ActivationShape> shapes;
  ActivationShape s{1, input.height, input.width};
  for (const auto& layer : layers) {
    s = std::visit(Overloaded{
                       [&](const Convolution& c) {
                         if (c.filters < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0) {
                           throw ConfigError("invalid convolution parameters");
                         }
                         if (s.rows == 1 && s.cols == 1 && s.channels > 1) {
                           throw ConfigError("convolution after flatten/dense");
                         }
                         const ActivationShape o{c.filters, conv_extent(s.rows, c), conv_extent(s.cols, c)};
                         if (o.rows < 1 || o.cols < 1) throw ConfigError("convolution output is empty");
                         return o;
                       },
                       [&](const BatchNorm& b) {
                         if (!(b.momentum > 0.0 && b.momentum <= 1.0) || !(b.epsilon > 0.0)) {
                           throw ConfigError("invalid batch norm parameters");
                         }
                         return s;
                       },
                       [&](const MaxPool& p) {
                         if (p.window < 1) throw ConfigError("invalid pooling window");
                         const ActivationShape o{s.channels, s.rows / p.window, s.cols / p.window};
                         if (o.rows < 1 || o.cols < 1) throw ConfigError("pooling output is empty");
                         return o;
                       },
                       [&](const Flatten&) { return ActivationShape{s.size(), 1, 1}; },
                       [&](const FullyConnected& f) {
                         if (f.units < 1) throw ConfigError("dense layer needs at least one unit");
                         return ActivationShape{f.units, 1, 1};
                       },
                       [&](const ReLU&) { return s; },
                   },
                   layer);
    shapes.push_back(s);
  }
  if (s.size() != output_units) {
    throw ConfigError("network produces " + std::to_string(s.size()) + " outputs, expected " +
                      std::to_string(output_units));
  }
  return shapes;
}

bool NetworkArchitecture::has_batch_norm() const {
  for (const auto& l : layers) {
    if (std::holds_alternative<BatchNorm>(l)) return true;
  }
  return false;
}

template <typename T>
std::size_t ParamSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (t.trainable) n += static_cast<std::size_t>(t.values.size());
  }
  return n;
}

template <typename T>
bool ParamSet<T>::all_finite() const {
  for (const auto& t : tensors) {
    if (!t.values.allFinite()) return false;
  }
  return true;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out = *this;
  for (auto& t : out.tensors) t.values.setZero();
  return out;
}

template <typename T>
bool ParamSet<T>::same_layout(const ParamSet& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto& a = tensors[k];
    const auto& b = other.tensors[k];
    if (a.name != b.name || a.shape != b.shape || a.trainable != b.trainable || a.values.size() != b.values.size()) {
      return false;
    }
  }
  return true;
}

template <typename T>
Tensor<T>& ParamSet<T>::find(const std::string& name) {
  for (auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ShapeError("no tensor named '" + name + "'");
}

template <typename T>
const Tensor<T>& ParamSet<T>::find(const std::string& name) const {
  return const_cast<ParamSet*>(this)->find(name);
}

template <typename T>
QNetwork<T>::QNetwork(NetworkArchitecture arch, Rng& rng, Initialization init) : arch_(std::move(arch)) {
  const auto shapes = arch_.activation_shapes();
  ActivationShape in{1, arch_.input.height, arch_.input.width};
  auto add = [&](std::size_t layer, const char* what, std::vector<int> shape, bool trainable, double fill) {
    Eigen::Index n = 1;
    for (int d : shape) n *= d;
    params_.tensors.push_back({tensor_name(layer, what), std::move(shape), trainable, Vector<T>::Constant(n, T(fill))});
    return &params_.tensors.back();
  };
  auto glorot = [&](Tensor<T>& t, int fan_in, int fan_out) {
    if (init == Initialization::kZero) return;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Eigen::Index k = 0; k < t.values.size(); ++k) t.values(k) = static_cast<T>(rng.uniform(-limit, limit));
  };
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const ActivationShape out = shapes[i];
    std::visit(Overloaded{
                   [&](const Convolution& c) {
                     const int k2 = c.kernel * c.kernel;
                     auto* w = add(i, "weight", {c.filters, in.channels, c.kernel, c.kernel}, true, 0.0);
                     glorot(*w, in.channels * k2, c.filters * k2);
                     add(i, "bias", {c.filters}, true, 0.0);
                   },
                   [&](const BatchNorm&) {
                     add(i, "gamma", {in.channels}, true, init == Initialization::kZero ? 0.0 : 1.0);
                     add(i, "beta", {in.channels}, true, 0.0);
                     add(i, "running_mean", {in.channels}, false, 0.0);
                     add(i, "running_var", {in.channels}, false, 1.0);
                   },
                   [&](const FullyConnected& f) {
                     auto* w = add(i, "weight", {f.units, in.size()}, true, 0.0);
                     glorot(*w, in.size(), f.units);
                     add(i, "bias", {f.units}, true, 0.0);
                   },
                   [&](const auto&) {},
               },
               arch_.layers[i]);
    in = out;
  }
  plan_layers();
}

template <typename T>
QNetwork<T>::QNetwork(NetworkArchitecture arch, ParamSet<T> params) : arch_(std::move(arch)) {
  Rng unused(0);
  QNetwork reference(arch_, unused, Initialization::kZero);
  if (!reference.params_.same_layout(params)) {
    throw ShapeError("parameters do not match the network architecture");
  }
  params_ = std::move(params);
  plan_ = std::move(reference.plan_);
}

template <typename T>
void QNetwork<T>::plan_layers() {
  const auto shapes = arch_.activation_shapes();
  plan_.clear();
  ActivationShape in{1, arch_.input.height, arch_.input.width};
  int next_tensor = 0;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    LayerPlan p{in, shapes[i], -1};
    const int count = std::visit(Overloaded{
                                     [](const Convolution&) { return 2; },
                                     [](const BatchNorm&) { return 4; },
                                     [](const FullyConnected&) { return 2; },
                                     [](const auto&) { return 0; },
                                 },
                                 arch_.layers[i]);
    if (count > 0) {
      p.first_tensor = next_tensor;
      next_tensor += count;
    }
    plan_.push_back(p);
    in = shapes[i];
  }
}

template <typename T>
Matrix<T> QNetwork<T>::run(const Matrix<T>& inputs, Tape<T>* tape) const {
  if (inputs.rows() != input_size()) {
    throw ShapeError("network expects " + std::to_string(input_size()) + " inputs per sample, got " +
                     std::to_string(inputs.rows()));
  }
  const Eigen::Index batch = inputs.cols();
  const bool training = tape != nullptr;
  if (training) {
    tape->inputs.clear();
    tape->batch_norm.assign(plan_.size(), {});
    tape->pool_argmax.assign(plan_.size(), {});
    tape->batch = batch;
  }
  Matrix<T> x = inputs;
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const LayerPlan& p = plan_[i];
    const auto* tensors = p.first_tensor >= 0 ? &params_.tensors[static_cast<std::size_t>(p.first_tensor)] : nullptr;
    Matrix<T> y;
    std::visit(
        Overloaded{
            [&](const Convolution& c) {
              const auto& w = tensors[0];
              const auto& b = tensors[1];
              ConstRowMajorMap<T> wmat(w.values.data(), c.filters, static_cast<Eigen::Index>(w.values.size()) / c.filters);
              const Eigen::Index positions = static_cast<Eigen::Index>(p.out.rows) * p.out.cols;
              y.resize(p.out.size(), batch);
              Matrix<T> cols;
              for (Eigen::Index n = 0; n < batch; ++n) {
                im2col(x.col(n).data(), p.in, p.out, c, cols);
                RowMajorMap<T> yn(y.col(n).data(), c.filters, positions);
                yn.noalias() = wmat * cols;
                yn.colwise() += b.values;
              }
            },
            [&](const BatchNorm& bn) {
              const auto& gamma = tensors[0].values;
              const auto& beta = tensors[1].values;
              const int channels = p.in.channels;
              const Eigen::Index spatial = static_cast<Eigen::Index>(p.in.rows) * p.in.cols;
              y.resize(x.rows(), batch);
              if (!training) {
                const auto& mean = tensors[2].values;
                const auto& var = tensors[3].values;
                for (int ch = 0; ch < channels; ++ch) {
                  const T scale = gamma(ch) / std::sqrt(var(ch) + static_cast<T>(bn.epsilon));
                  y.middleRows(ch * spatial, spatial) =
                      ((x.middleRows(ch * spatial, spatial).array() - mean(ch)) * scale + beta(ch)).matrix();
                }
                return;
              }
              auto& rec = tape->batch_norm[i];
              rec.normalized.resize(x.rows(), batch);
              rec.inv_std.resize(channels);
              rec.mean.resize(channels);
              rec.variance.resize(channels);
              const T m = static_cast<T>(spatial * batch);
              for (int ch = 0; ch < channels; ++ch) {
                auto block = x.middleRows(ch * spatial, spatial).array();
                const T mean = block.sum() / m;
                const T var = (block - mean).square().sum() / m;
                const T inv_std = T(1) / std::sqrt(var + static_cast<T>(bn.epsilon));
                rec.mean(ch) = mean;
                rec.variance(ch) = var;
                rec.inv_std(ch) = inv_std;
                rec.normalized.middleRows(ch * spatial, spatial) = ((block - mean) * inv_std).matrix();
                y.middleRows(ch * spatial, spatial) =
                    (rec.normalized.middleRows(ch * spatial, spatial).array() * gamma(ch) + beta(ch)).matrix();
              }
            },
            [&](const MaxPool& pool) {
              y.resize(p.out.size(), batch);
              std::vector<std::int32_t>* argmax = nullptr;
              if (training) {
                argmax = &tape->pool_argmax[i];
                argmax->assign(static_cast<std::size_t>(p.out.size() * batch), 0);
              }
              for (Eigen::Index n = 0; n < batch; ++n) {
                const T* in = x.col(n).data();
                for (int ch = 0; ch < p.out.channels; ++ch) {
                  for (int oi = 0; oi < p.out.rows; ++oi) {
                    for (int oj = 0; oj < p.out.cols; ++oj) {
                      int best = (ch * p.in.rows + oi * pool.window) * p.in.cols + oj * pool.window;
                      for (int di = 0; di < pool.window; ++di) {
                        for (int dj = 0; dj < pool.window; ++dj) {
                          const int idx = (ch * p.in.rows + oi * pool.window + di) * p.in.cols + oj * pool.window + dj;
                          if (in[idx] > in[best]) best = idx;
                        }
                      }
                      const int o = (ch * p.out.rows + oi) * p.out.cols + oj;
                      y(o, n) = in[best];
                      if (argmax) (*argmax)[static_cast<std::size_t>(n * p.out.size() + o)] = best;
                    }
                  }
                }
              }
            },
            [&](const Flatten&) { y = x; },
            [&](const FullyConnected& f) {
              const auto& w = tensors[0];
              const auto& b = tensors[1];
              ConstRowMajorMap<T> wmat(w.values.data(), f.units, p.in.size());
              y.noalias() = wmat * x;
              y.colwise() += b.values;
            },
            [&](const ReLU&) {
              // NaN-preserving: a NaN stays NaN instead of being clipped to 0.
              y = x.unaryExpr([](T v) { return v < T(0) ? T(0) : v; });
            },
        },
        arch_.layers[i]);
    if (training) tape->inputs.push_back(std::move(x));
    x = std::move(y);
  }
  if (!x.allFinite()) throw NumericError("network produced non-finite Q-values");
  return x;
}

template <typename T>
Matrix<T> QNetwork<T>::predict(const Matrix<T>& inputs) const {
  return run(inputs, nullptr);
}

template <typename T>
Vector<T> QNetwork<T>::q_values(const FlowShape& obs) const {
  if (obs.grid() != arch_.input) {
    throw ShapeError("observation grid " + obs.grid().to_string() + " does not match network input " +
                     arch_.input.to_string());
  }
  return predict(encode_shape<T>(obs)).col(0);
}

template <typename T>
Matrix<T> QNetwork<T>::forward(const Matrix<T>& inputs, Tape<T>& tape) const {
  return run(inputs, &tape);
}

template <typename T>
ParamSet<T> QNetwork<T>::backward(const Tape<T>& tape, const Matrix<T>& grad_output) const {
  if (tape.inputs.size() != plan_.size() || grad_output.cols() != tape.batch ||
      grad_output.rows() != arch_.output_units) {
    throw ShapeError("backward pass does not match the recorded forward pass");
  }
  ParamSet<T> grads = params_.zeros_like();
  const Eigen::Index batch = tape.batch;
  Matrix<T> dy = grad_output;
  for (std::size_t i = plan_.size(); i-- > 0;) {
    const LayerPlan& p = plan_[i];
    const Matrix<T>& x = tape.inputs[i];
    const bool need_input_grad = i > 0;
    auto* g = p.first_tensor >= 0 ? &grads.tensors[static_cast<std::size_t>(p.first_tensor)] : nullptr;
    const auto* w = p.first_tensor >= 0 ? &params_.tensors[static_cast<std::size_t>(p.first_tensor)] : nullptr;
    Matrix<T> dx;
    std::visit(
        Overloaded{
            [&](const Convolution& c) {
              const Eigen::Index cols_per_filter = static_cast<Eigen::Index>(w[0].values.size()) / c.filters;
              const Eigen::Index positions = static_cast<Eigen::Index>(p.out.rows) * p.out.cols;
              ConstRowMajorMap<T> wmat(w[0].values.data(), c.filters, cols_per_filter);
              RowMajorMap<T> dw(g[0].values.data(), c.filters, cols_per_filter);
              if (need_input_grad) dx = Matrix<T>::Zero(x.rows(), batch);
              Matrix<T> cols;
              Matrix<T> dcols;
              for (Eigen::Index n = 0; n < batch; ++n) {
                im2col(x.col(n).data(), p.in, p.out, c, cols);
                ConstRowMajorMap<T> dyn(dy.col(n).data(), c.filters, positions);
                dw.noalias() += dyn * cols.transpose();
                g[1].values += dyn.rowwise().sum();
                if (need_input_grad) {
                  dcols.noalias() = wmat.transpose() * dyn;
                  col2im_add(dcols, p.in, p.out, c, dx.col(n).data());
                }
              }
            },
            [&](const BatchNorm&) {
              const auto& rec = tape.batch_norm[i];
              const auto& gamma = w[0].values;
              const int channels = p.in.channels;
              const Eigen::Index spatial = static_cast<Eigen::Index>(p.in.rows) * p.in.cols;
              const T m = static_cast<T>(spatial * batch);
              dx.resize(x.rows(), batch);
              for (int ch = 0; ch < channels; ++ch) {
                auto dyb = dy.middleRows(ch * spatial, spatial).array();
                auto xhat = rec.normalized.middleRows(ch * spatial, spatial).array();
                g[0].values(ch) = (dyb * xhat).sum();
                g[1].values(ch) = dyb.sum();
                const auto dxhat = dyb * gamma(ch);
                const T sum_dxhat = dxhat.sum();
                const T sum_dxhat_xhat = (dxhat * xhat).sum();
                dx.middleRows(ch * spatial, spatial) =
                    ((dxhat * m - sum_dxhat - xhat * sum_dxhat_xhat) * (rec.inv_std(ch) / m)).matrix();
              }
            },
            [&](const MaxPool&) {
              dx = Matrix<T>::Zero(x.rows(), batch);
              const auto& argmax = tape.pool_argmax[i];
              const int out_size = p.out.size();
              for (Eigen::Index n = 0; n < batch; ++n) {
                for (int o = 0; o < out_size; ++o) {
                  dx(argmax[static_cast<std::size_t>(n * out_size + o)], n) += dy(o, n);
                }
              }
            },
            [&](const Flatten&) { dx = dy; },
            [&](const FullyConnected& f) {
              ConstRowMajorMap<T> wmat(w[0].values.data(), f.units, p.in.size());
              RowMajorMap<T> dw(g[0].values.data(), f.units, p.in.size());
              dw.noalias() = dy * x.transpose();
              g[1].values = dy.rowwise().sum();
              if (need_input_grad) dx.noalias() = wmat.transpose() * dy;
            },
            [&](const ReLU&) { dx = (x.array() > T(0)).select(dy, T(0)); },
        },
        arch_.layers[i]);
    dy = std::move(dx);
  }
  return grads;
}

template <typename T>
void QNetwork<T>::update_running_statistics(const Tape<T>& tape) {
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto* bn = std::get_if<BatchNorm>(&arch_.layers[i]);
    if (!bn) continue;
    const auto& rec = tape.batch_norm[i];
    auto& mean = params_.tensors[static_cast<std::size_t>(plan_[i].first_tensor) + 2].values;
    auto& var = params_.tensors[static_cast<std::size_t>(plan_[i].first_tensor) + 3].values;
    const double m = static_cast<double>(plan_[i].in.rows) * plan_[i].in.cols * static_cast<double>(tape.batch);
    const T unbias = m > 1 ? static_cast<T>(m / (m - 1)) : T(1);
    const T mom = static_cast<T>(bn->momentum);
    mean = (T(1) - mom) * mean + mom * rec.mean;
    var = (T(1) - mom) * var + mom * unbias * rec.variance;
  }
}

template <typename T>
Matrix<T> encode_shapes(std::span<const FlowShape* const> shapes) {
  if (shapes.empty()) return {};
  const auto rows = static_cast<Eigen::Index>(shapes.front()->size());
  Matrix<T> out(rows, static_cast<Eigen::Index>(shapes.size()));
  for (std::size_t n = 0; n < shapes.size(); ++n) {
    const auto px = shapes[n]->pixels();
    if (static_cast<Eigen::Index>(px.size()) != rows) throw ShapeError("batch mixes grids");
    for (Eigen::Index k = 0; k < rows; ++k) out(k, static_cast<Eigen::Index>(n)) = static_cast<T>(px[static_cast<std::size_t>(k)]);
  }
  return out;
}

template <typename T>
Matrix<T> encode_shape(const FlowShape& shape) {
  const FlowShape* one[] = {&shape};
  return encode_shapes<T>(one);
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template class QNetwork<float>;
template class QNetwork<double>;
template Matrix<float> encode_shapes<float>(std::span<const FlowShape* const>);
template Matrix<double> encode_shapes<double>(std::span<const FlowShape* const>);
template Matrix<float> encode_shape<float>(const FlowShape&);
template Matrix<double> encode_shape<double>(const FlowShape&);

}  // namespace flowsculpt
