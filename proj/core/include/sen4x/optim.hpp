#pragma once

#include <map>
#include <string>

#include "sen4x/nn.hpp"

namespace sen4x {

struct AdamState {
  long long t = 0;
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
};

/// Adam with bias correction. Parameters without an accumulated gradient are
/// treated as having gradient zero.
template <typename T>
class Adam {
 public:
  explicit Adam(nn::ParamStore<T>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  /// Scales all gradients so their global L2 norm is at most `max_norm`.
  /// Returns the pre-clip norm.
  double clip_grad_norm(double max_norm);

  long long steps() const { return t_; }
  AdamState state() const;
  void load_state(const AdamState& s);

 private:
  nn::ParamStore<T>* params_;
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace sen4x
