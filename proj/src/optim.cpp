#include "adanec/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace adanec {

Adam::Adam(const nn::ParamSet& like, Options opt) : opt_(opt), m_(like), v_(like) {
  m_.fill(0.0);
  v_.fill(0.0);
}

double Adam::current_lr() const {
  if (!opt_.cosine || opt_.total_steps == 0) return opt_.lr;
  const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(opt_.total_steps));
  return opt_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void Adam::step(nn::ParamSet& params, const nn::ParamSet& grads) {
  if (auto bad = params.first_layout_mismatch(grads)) throw std::invalid_argument("adam: layout mismatch at " + *bad);
  const double lr = current_lr();
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.at(i).values;
    const auto& g = grads.at(i).values;
    auto& m = m_.at(i).values;
    auto& v = v_.at(i).values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + opt_.eps);
    }
  }
  params.round_to_float();
}

}  // namespace adanec
