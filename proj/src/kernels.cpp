#include "adanec/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace adanec::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using MapMat = Eigen::Map<RowMat, 0, Strided>;
using MapConstMat = Eigen::Map<const RowMat, 0, Strided>;

// Column block width for the GEMM split. Fixed so that the summation order
// never depends on the thread count.
constexpr int kColBlock = 512;

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1; }

void im2col(const ConvGeometry& g, const double* in, double* cols) {
  const int k = g.kernel;
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int p = g.pad();
  const int rows = g.in_c * k * k;
  const std::size_t cols_per_row = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ic = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    double* dst = cols + r * cols_per_row;
    const double* src = in + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
    for (int oy = 0; oy < oh; ++oy) {
      const int iy = oy * g.stride - p + ky;
      double* row = dst + static_cast<std::size_t>(oy) * ow;
      if (iy < 0 || iy >= g.in_h) {
        std::fill(row, row + ow, 0.0);
        continue;
      }
      const double* line = src + static_cast<std::size_t>(iy) * g.in_w;
      for (int ox = 0; ox < ow; ++ox) {
        const int ix = ox * g.stride - p + kx;
        row[ox] = (ix >= 0 && ix < g.in_w) ? line[ix] : 0.0;
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* grad_in) {
  const int k = g.kernel;
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int p = g.pad();
  const std::size_t cols_per_row = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < g.in_c; ++ic) {
    double* dst = grad_in + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
    std::fill(dst, dst + static_cast<std::size_t>(g.in_h) * g.in_w, 0.0);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* src = cols + ((ic * k + ky) * k + kx) * cols_per_row;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - p + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          double* line = dst + static_cast<std::size_t>(iy) * g.in_w;
          const double* row = src + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - p + kx;
            if (ix >= 0 && ix < g.in_w) line[ix] += row[ox];
          }
        }
      }
    }
  }
}

std::vector<double>& workspace(int slot) {
  thread_local std::vector<double> buffers[2];
  return buffers[slot];
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
  const int depth = g.in_c * g.kernel * g.kernel;
  const int pixels = g.out_h() * g.out_w();
  const double* cols = in.data();
  if (!is_pointwise(g)) {
    auto& ws = workspace(0);
    ws.resize(static_cast<std::size_t>(depth) * pixels);
    im2col(g, in.data(), ws.data());
    cols = ws.data();
  }
  const MapConstMat wmat(weight.data(), g.out_c, depth, Strided(depth));
  const int blocks = (pixels + kColBlock - 1) / kColBlock;
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    const int j0 = b * kColBlock;
    const int nb = std::min(kColBlock, pixels - j0);
    MapConstMat cblock(cols + j0, depth, nb, Strided(pixels));
    MapMat oblock(out.data() + j0, g.out_c, nb, Strided(pixels));
    oblock.noalias() = wmat * cblock;
    if (!bias.empty()) {
      for (int oc = 0; oc < g.out_c; ++oc) oblock.row(oc).array() += bias[oc];
    }
  }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const int depth = g.in_c * g.kernel * g.kernel;
  const int pixels = g.out_h() * g.out_w();
  const bool pointwise = is_pointwise(g);
  const double* cols = in.data();
  if (!pointwise) {
    auto& ws = workspace(0);
    ws.resize(static_cast<std::size_t>(depth) * pixels);
    im2col(g, in.data(), ws.data());
    cols = ws.data();
  }
  const int blocks = (pixels + kColBlock - 1) / kColBlock;

  if (!grad_bias.empty()) {
    for (int oc = 0; oc < g.out_c; ++oc) {
      const double* row = grad_out.data() + static_cast<std::size_t>(oc) * pixels;
      double acc = 0.0;
      for (int j = 0; j < pixels; ++j) acc += row[j];
      grad_bias[oc] += acc;
    }
  }

  // Weight gradient: per-block partial products, reduced in block order.
  {
    const std::size_t wsize = static_cast<std::size_t>(g.out_c) * depth;
    std::vector<double> partial(wsize * blocks);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < blocks; ++b) {
      const int j0 = b * kColBlock;
      const int nb = std::min(kColBlock, pixels - j0);
      MapConstMat gblock(grad_out.data() + j0, g.out_c, nb, Strided(pixels));
      MapConstMat cblock(cols + j0, depth, nb, Strided(pixels));
      MapMat pw(partial.data() + b * wsize, g.out_c, depth, Strided(depth));
      pw.noalias() = gblock * cblock.transpose();
    }
    for (int b = 0; b < blocks; ++b) {
      const double* src = partial.data() + b * wsize;
      for (std::size_t i = 0; i < wsize; ++i) grad_weight[i] += src[i];
    }
  }

  if (grad_in.empty()) return;
  const MapConstMat wmat(weight.data(), g.out_c, depth, Strided(depth));
  double* gcols = grad_in.data();
  if (!pointwise) {
    auto& ws = workspace(1);
    ws.resize(static_cast<std::size_t>(depth) * pixels);
    gcols = ws.data();
  }
#pragma omp parallel for schedule(static)
  for (int b = 0; b < blocks; ++b) {
    const int j0 = b * kColBlock;
    const int nb = std::min(kColBlock, pixels - j0);
    MapConstMat gblock(grad_out.data() + j0, g.out_c, nb, Strided(pixels));
    MapMat cblock(gcols + j0, depth, nb, Strided(pixels));
    cblock.noalias() = wmat.transpose() * gblock;
  }
  if (!pointwise) col2im(g, gcols, grad_in.data());
}

void upsample2x_forward(int c, int h, int w, std::span<const double> in, std::span<double> out) {
  const int ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      const double* src = in.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      double* r0 = out.data() + (static_cast<std::size_t>(ch) * 2 * h + 2 * y) * ow;
      double* r1 = r0 + ow;
      for (int x = 0; x < w; ++x) {
        r0[2 * x] = r0[2 * x + 1] = src[x];
        r1[2 * x] = r1[2 * x + 1] = src[x];
      }
    }
  }
}

void upsample2x_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in) {
  const int ow = 2 * w;
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      double* dst = grad_in.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      const double* r0 = grad_out.data() + (static_cast<std::size_t>(ch) * 2 * h + 2 * y) * ow;
      const double* r1 = r0 + ow;
      for (int x = 0; x < w; ++x) dst[x] = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
    }
  }
}

void leaky_relu_inplace(std::span<double> x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : kLeakySlope * x[i];
}

void leaky_relu_backward(std::span<const double> y, std::span<double> grad) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad[i] *= y[i] > 0.0 ? 1.0 : kLeakySlope;
}

void sigmoid_inplace(std::span<double> x) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) x[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_backward(std::span<const double> y, std::span<double> grad) {
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(y.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) grad[i] *= y[i] * (1.0 - y[i]);
}

void global_avg_pool_forward(int c, int h, int w, std::span<const double> in, std::span<double> out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const double* src = in.data() + ch * plane;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    out[ch] = acc / static_cast<double>(plane);
  }
}

void global_avg_pool_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const double g = grad_out[ch] / static_cast<double>(plane);
    std::fill(grad_in.begin() + ch * plane, grad_in.begin() + (ch + 1) * plane, g);
  }
}

}  // namespace adanec::kernels
