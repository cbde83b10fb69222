#include "sen4x/nn.hpp"

#include <cmath>

#include "sen4x/error.hpp"

namespace sen4x::nn {

template <typename T>
Var<T> ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (params_.count(name)) fail(ErrorCode::kConfig, "duplicate parameter name " + name);
  Var<T> v(std::move(init), true);
  params_.emplace(name, v);
  return v;
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail(ErrorCode::kConfig, "unknown parameter " + name);
  return it->second;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, p] : params_) const_cast<Var<T>&>(p).zero_grad();
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  return count("");
}

template <typename T>
std::size_t ParamStore<T>::count(const std::string& prefix) const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_)
    if (name.compare(0, prefix.size(), prefix) == 0) n += p.value().numel();
  return n;
}

template <typename T>
Tensor<T> Initializer::trunc_normal(Shape shape, double std) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data) {
    double x;
    do {
      x = dist(rng_);
    } while (std::abs(x) > 2.0 * std);
    v = static_cast<T>(x);
  }
  return t;
}

template <typename T>
Tensor<T> Initializer::uniform(Shape shape, double bound) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = static_cast<T>(dist(rng_));
  return t;
}

template <typename T>
Conv2d<T> make_conv(ParamStore<T>& store, Initializer& init, const std::string& name, int cin, int cout, int k,
                    int stride, Init mode) {
  Conv2d<T> c;
  Shape ws{cout, cin, k, k};
  if (mode == Init::kZero) {
    c.weight = store.add(name + ".weight", Tensor<T>(ws));
  } else {
    c.weight = store.add(name + ".weight", init.uniform<T>(ws, 1.0 / std::sqrt(static_cast<double>(cin * k * k))));
  }
  c.bias = store.add(name + ".bias", Tensor<T>({cout}));
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

template <typename T>
Linear<T> make_linear(ParamStore<T>& store, Initializer& init, const std::string& name, int in, int out) {
  Linear<T> l;
  l.weight = store.add(name + ".weight", init.trunc_normal<T>({out, in}, 0.02));
  l.bias = store.add(name + ".bias", Tensor<T>({out}));
  return l;
}

template <typename T>
LayerNorm<T> make_layer_norm(ParamStore<T>& store, const std::string& name, int dim) {
  LayerNorm<T> n;
  n.gamma = store.add(name + ".weight", Tensor<T>({dim}, T{1}));
  n.beta = store.add(name + ".bias", Tensor<T>({dim}));
  return n;
}

#define SEN4X_INSTANTIATE_NN(T)                                                                               \
  template class ParamStore<T>;                                                                              \
  template Tensor<T> Initializer::trunc_normal<T>(Shape, double);                                            \
  template Tensor<T> Initializer::uniform<T>(Shape, double);                                                 \
  template Conv2d<T> make_conv(ParamStore<T>&, Initializer&, const std::string&, int, int, int, int, Init);   \
  template Linear<T> make_linear(ParamStore<T>&, Initializer&, const std::string&, int, int);                 \
  template LayerNorm<T> make_layer_norm(ParamStore<T>&, const std::string&, int);

SEN4X_INSTANTIATE_NN(float)
SEN4X_INSTANTIATE_NN(double)

}  // namespace sen4x::nn
