#include <algorithm>

#include "adanec/kernels.hpp"

namespace adanec::kernels::reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  const int p = g.pad();
  for (int oc = 0; oc < g.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[oc];
        for (int ic = 0; ic < g.in_c; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - p + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - p + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              acc += weight[((oc * g.in_c + ic) * k + ky) * k + kx] * in[(ic * g.in_h + iy) * g.in_w + ix];
            }
          }
        }
        out[(oc * oh + oy) * ow + ox] = acc;
      }
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  const int p = g.pad();
  if (!grad_in.empty()) std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (int oc = 0; oc < g.out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double go = grad_out[(oc * oh + oy) * ow + ox];
        if (!grad_bias.empty()) grad_bias[oc] += go;
        for (int ic = 0; ic < g.in_c; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - p + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * g.stride - p + kx;
              if (ix < 0 || ix >= g.in_w) continue;
              const std::size_t wi = ((oc * g.in_c + ic) * k + ky) * k + kx;
              const std::size_t ii = (ic * g.in_h + iy) * g.in_w + ix;
              grad_weight[wi] += go * in[ii];
              if (!grad_in.empty()) grad_in[ii] += go * weight[wi];
            }
          }
        }
      }
    }
  }
}

void upsample2x_forward(int c, int h, int w, std::span<const double> in, std::span<double> out) {
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) out[(ch * 2 * h + y) * 2 * w + x] = in[(ch * h + y / 2) * w + x / 2];
}

void upsample2x_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x) grad_in[(ch * h + y / 2) * w + x / 2] += grad_out[(ch * 2 * h + y) * 2 * w + x];
}

}  // namespace adanec::kernels::reference
