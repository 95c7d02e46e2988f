#include "adanec/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace adanec {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double remix(double t, double r, double gamma) {
  const double s = std::pow(std::clamp(t, 0.0, 1.0), gamma) + std::pow(std::clamp(r, 0.0, 1.0), gamma);
  return std::pow(std::clamp(s, 0.0, 1.0), 1.0 / gamma);
}

Image remix(const Image& t, const Image& r, double gamma) {
  require_same_shape(t, r, "remix");
  Image out(t.height(), t.width());
  for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = remix(t.data()[i], r.data()[i], gamma);
  return out;
}

double rr_loss(std::span<const double> t_hat, std::span<const double> r_hat, const TripletSample& sample,
               const LossConfig& config, std::span<double> grad_t, std::span<double> grad_r) {
  const auto t = sample.transmission.data();
  const auto r = sample.reflection.data();
  const auto in = sample.contaminated.data();
  if (t_hat.size() != t.size() || r_hat.size() != r.size() || in.size() != t.size()) {
    throw ShapeError("rr_loss: prediction and sample shapes differ");
  }
  const bool want_grad = !grad_t.empty();
  if (want_grad) {
    std::fill(grad_t.begin(), grad_t.end(), 0.0);
    std::fill(grad_r.begin(), grad_r.end(), 0.0);
  }
  const double n = static_cast<double>(t.size());
  double fid = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double dt = t_hat[i] - t[i];
    const double dr = r_hat[i] - r[i];
    fid += std::abs(dt) + std::abs(dr);
    if (want_grad) {
      grad_t[i] += config.lambda_fid * sign(dt) / n;
      grad_r[i] += config.lambda_fid * sign(dr) / n;
    }
  }
  fid /= n;

  if (config.gradient_term) {
    const int h = sample.transmission.height();
    const int w = sample.transmission.width();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const double nx = 3.0 * h * (w - 1);
    const double ny = 3.0 * (h - 1) * w;
    double gx = 0.0, gy = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = c * plane + static_cast<std::size_t>(y) * w + x;
          if (x + 1 < w) {
            const double d = (t_hat[i + 1] - t_hat[i]) - (t[i + 1] - t[i]);
            gx += std::abs(d);
            if (want_grad) {
              grad_t[i + 1] += config.lambda_fid * sign(d) / nx;
              grad_t[i] -= config.lambda_fid * sign(d) / nx;
            }
          }
          if (y + 1 < h) {
            const double d = (t_hat[i + w] - t_hat[i]) - (t[i + w] - t[i]);
            gy += std::abs(d);
            if (want_grad) {
              grad_t[i + w] += config.lambda_fid * sign(d) / ny;
              grad_t[i] -= config.lambda_fid * sign(d) / ny;
            }
          }
        }
      }
    }
    fid += gx / nx + gy / ny;
  }

  double rec = 0.0;
  if (config.lambda_rec > 0.0) {
    if (!sample.synthesis) throw std::invalid_argument("rr_loss: reconstruction term needs synthesis metadata");
    const double g = sample.synthesis->gamma;
    const double inv_g = 1.0 / g;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double tv = std::clamp(t_hat[i], 0.0, 1.0);
      const double rv = std::clamp(r_hat[i], 0.0, 1.0);
      const double s = std::pow(tv, g) + std::pow(rv, g);
      const double syn = std::pow(std::min(s, 1.0), inv_g);
      const double d = syn - in[i];
      rec += std::abs(d);
      if (want_grad && s < 1.0 && s > 1e-12) {
        const double outer = config.lambda_rec * sign(d) / n * std::pow(s, inv_g - 1.0);
        if (tv > 0.0) grad_t[i] += outer * std::pow(tv, g - 1.0);
        if (rv > 0.0) grad_r[i] += outer * std::pow(rv, g - 1.0);
      }
    }
    rec /= n;
  }
  return config.lambda_fid * fid + config.lambda_rec * rec;
}

double rr_loss(const Prediction& fused, const TripletSample& sample, const LossConfig& config) {
  require_same_shape(fused.transmission, sample.transmission, "rr_loss");
  require_same_shape(fused.reflection, sample.reflection, "rr_loss");
  return rr_loss(fused.transmission.data(), fused.reflection.data(), sample, config);
}

double fidelity_loss(const Prediction& pred, const TripletSample& sample) {
  LossConfig c;
  c.lambda_fid = 1.0;
  c.lambda_rec = 0.0;
  return rr_loss(pred, sample, c);
}

}  // namespace adanec
