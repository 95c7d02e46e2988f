#pragma once

#include <cstddef>

#include "adanec/network.hpp"

namespace adanec {

// Adam with a cosine-decayed step size. Parameters are re-quantized to
// float32 after every step so checkpoints round-trip exactly.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t total_steps = 1;
    bool cosine = true;
  };

  Adam(const nn::ParamSet& like, Options opt);

  double current_lr() const;
  std::size_t steps_taken() const { return t_; }

  void step(nn::ParamSet& params, const nn::ParamSet& grads);

 private:
  Options opt_;
  nn::ParamSet m_;
  nn::ParamSet v_;
  std::size_t t_ = 0;
};

}  // namespace adanec
