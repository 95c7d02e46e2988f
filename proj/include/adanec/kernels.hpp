#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace adanec::kernels {

// Channel-major activation block.
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t size() const { return data.size(); }
  double* channel(int k) { return data.data() + k * plane(); }
  const double* channel(int k) const { return data.data() + k * plane(); }
};

// "Same" padding convolution with square kernels.
struct ConvGeometry {
  int in_c = 0;
  int in_h = 0;
  int in_w = 0;
  int out_c = 0;
  int kernel = 3;
  int stride = 1;

  int pad() const { return kernel / 2; }
  int out_h() const { return (in_h + 2 * pad() - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad() - kernel) / stride + 1; }
  std::size_t weight_size() const { return static_cast<std::size_t>(out_c) * in_c * kernel * kernel; }
};

// Weight layout is [out_c][in_c][ky][kx]. Forward overwrites `out`.
// Backward overwrites `grad_in` (skipped when empty) and accumulates into
// `grad_weight` / `grad_bias`.
//
// Work is split into fixed-size blocks, so results are bitwise identical for
// any OpenMP thread count.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);

// Nearest-neighbour 2x upsampling of a (c, h, w) block into (c, 2h, 2w).
void upsample2x_forward(int c, int h, int w, std::span<const double> in, std::span<double> out);
void upsample2x_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in);

inline constexpr double kLeakySlope = 0.2;

void leaky_relu_inplace(std::span<double> x);
// grad *= f'(from output y)
void leaky_relu_backward(std::span<const double> y, std::span<double> grad);
void sigmoid_inplace(std::span<double> x);
void sigmoid_backward(std::span<const double> y, std::span<double> grad);

void global_avg_pool_forward(int c, int h, int w, std::span<const double> in, std::span<double> out);
void global_avg_pool_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in);

// Straight-line serial implementations kept as test oracles and benchmark baselines.
namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);
void conv2d_backward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> grad_out, std::span<double> grad_in, std::span<double> grad_weight,
                     std::span<double> grad_bias);
void upsample2x_forward(int c, int h, int w, std::span<const double> in, std::span<double> out);
void upsample2x_backward(int c, int h, int w, std::span<const double> grad_out, std::span<double> grad_in);

}  // namespace reference

}  // namespace adanec::kernels
