#pragma once

#include <span>

#include "adanec/image.hpp"
#include "adanec/prediction.hpp"

namespace adanec {

struct LossConfig {
  double lambda_fid = 1.0;
  double lambda_rec = 0.5;
  // Adds mean |grad T_hat - grad T| (forward differences) to the fidelity term.
  bool gradient_term = false;
};

// Re-applies the mixture to estimated layers: clip(t^g + r^g, 0, 1)^(1/g).
double remix(double t, double r, double gamma);
Image remix(const Image& t, const Image& r, double gamma);

// Reflection-removal loss
//   lambda_fid * (|T_hat - T|_1 + |R_hat - R|_1) + lambda_rec * |remix(T_hat, R_hat) - I|_1
// with mean-normalised l1 norms. Writes dL/dT_hat and dL/dR_hat into the
// grad spans when they are non-empty. Throws when lambda_rec > 0 and the
// sample carries no synthesis record.
double rr_loss(std::span<const double> t_hat, std::span<const double> r_hat, const TripletSample& sample,
               const LossConfig& config, std::span<double> grad_t = {}, std::span<double> grad_r = {});

double rr_loss(const Prediction& fused, const TripletSample& sample, const LossConfig& config);

// mean |T_hat - T| + mean |R_hat - R|
double fidelity_loss(const Prediction& pred, const TripletSample& sample);

}  // namespace adanec
