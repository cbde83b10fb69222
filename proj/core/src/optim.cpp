#include "sen4x/optim.hpp"

#include <cmath>

#include "sen4x/error.hpp"

namespace sen4x {

template <typename T>
Adam<T>::Adam(nn::ParamStore<T>& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params.all()) {
    m_.emplace(name, Tensor<T>(p.shape()));
    v_.emplace(name, Tensor<T>(p.shape()));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  for (const auto& [name, p] : params_->all()) {
    const Tensor<T>& g = p.grad();
    const bool has_grad = !g.empty();  // no gradient: treated as zero, moments still decay
    Tensor<T>& m = m_.at(name);
    Tensor<T>& v = v_.at(name);
    Tensor<T>& w = const_cast<Var<T>&>(p).mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const T gi = has_grad ? g.data[i] : T{0};
      m.data[i] = b1 * m.data[i] + (T{1} - b1) * gi;
      v.data[i] = b2 * v.data[i] + (T{1} - b2) * gi * gi;
      const double mhat = m.data[i] / c1;
      const double vhat = v.data[i] / c2;
      w.data[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template <typename T>
double Adam<T>::clip_grad_norm(double max_norm) {
  double sq = 0;
  for (const auto& [_, p] : params_->all())
    for (T g : p.grad().data) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T f = static_cast<T>(max_norm / norm);
    for (const auto& [_, p] : params_->all())
      if (!p.grad().empty())
        for (T& g : const_cast<Var<T>&>(p).mutable_grad().data) g *= f;
  }
  return norm;
}

template <typename T>
AdamState Adam<T>::state() const {
  AdamState s;
  s.t = t_;
  for (const auto& [name, m] : m_) s.m.emplace(name, m.template cast<float>());
  for (const auto& [name, v] : v_) s.v.emplace(name, v.template cast<float>());
  return s;
}

template <typename T>
void Adam<T>::load_state(const AdamState& s) {
  for (auto& [name, m] : m_) {
    auto it = s.m.find(name);
    auto jt = s.v.find(name);
    if (it == s.m.end() || jt == s.v.end() || it->second.shape != m.shape)
      fail(ErrorCode::kShapeMismatch, "optimizer state missing or mismatched for " + name);
    m = it->second.template cast<T>();
    v_.at(name) = jt->second.template cast<T>();
  }
  t_ = s.t;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace sen4x
