#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "sen4x/ops.hpp"

namespace sen4x::nn {

/// Named trainable tensors, kept sorted by name so iteration order (and thus
/// checkpoint layout and optimizer traversal) is deterministic.
template <typename T>
class ParamStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> init);
  const Var<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const std::map<std::string, Var<T>>& all() const { return params_; }

  void zero_grad();
  std::size_t count() const;
  /// Number of scalars in parameters whose name starts with `prefix`.
  std::size_t count(const std::string& prefix) const;

 private:
  std::map<std::string, Var<T>> params_;
};

/// Seeded weight initializer. Draws happen in double precision so that
/// float and double instantiations of a network get the same weights.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Normal(0, std) truncated to ±2·std.
  template <typename T>
  Tensor<T> trunc_normal(Shape shape, double std);
  /// Uniform(−bound, bound).
  template <typename T>
  Tensor<T> uniform(Shape shape, double bound);

 private:
  std::mt19937_64 rng_;
};

enum class Init { kDefault, kZero };

template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = -1;
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
struct Linear {
  Var<T> weight;
  Var<T> bias;
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;
  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta); }
};

/// Conv weights default to U(±1/√fan_in); biases start at zero.
template <typename T>
Conv2d<T> make_conv(ParamStore<T>& store, Initializer& init, const std::string& name, int cin, int cout, int k,
                    int stride = 1, Init mode = Init::kDefault);

/// Weights truncated-normal σ = 0.02, zero bias.
template <typename T>
Linear<T> make_linear(ParamStore<T>& store, Initializer& init, const std::string& name, int in, int out);

template <typename T>
LayerNorm<T> make_layer_norm(ParamStore<T>& store, const std::string& name, int dim);

/// Parameter scalars of a k×k conv / linear layer with bias.
inline std::size_t conv_params(int cin, int cout, int k) {
  return static_cast<std::size_t>(cout) * cin * k * k + cout;
}
inline std::size_t linear_params(int in, int out) { return static_cast<std::size_t>(in) * out + out; }

}  // namespace sen4x::nn
