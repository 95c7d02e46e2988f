#include <doctest.h>

#include <omp.h>

#include <cmath>

#include "adanec/kernels.hpp"
#include "adanec/rng.hpp"

using namespace adanec;
using namespace adanec::kernels;

namespace {

std::vector<double> rand_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv fast path matches the serial reference") {
  const ConvGeometry cases[] = {
      {3, 16, 16, 8, 3, 1}, {5, 17, 13, 4, 3, 2}, {8, 9, 9, 6, 1, 1}, {4, 32, 32, 12, 3, 2},
      {2, 8, 8, 3, 5, 1},   {6, 40, 40, 5, 3, 1}, {7, 1, 1, 3, 1, 1},
  };
  std::uint64_t seed = 10;
  for (const auto& g : cases) {
    CAPTURE(g.in_c);
    CAPTURE(g.kernel);
    CAPTURE(g.stride);
    const auto in = rand_vec(static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w, ++seed);
    const auto w = rand_vec(g.weight_size(), ++seed);
    const auto b = rand_vec(g.out_c, ++seed);
    const std::size_t out_n = static_cast<std::size_t>(g.out_c) * g.out_h() * g.out_w();
    std::vector<double> fast(out_n), ref(out_n);
    conv2d_forward(g, in, w, b, fast);
    reference::conv2d_forward(g, in, w, b, ref);
    CHECK(max_diff(fast, ref) < 1e-12);

    const auto go = rand_vec(out_n, ++seed);
    std::vector<double> gi_f(in.size()), gi_r(in.size()), gw_f(w.size(), 0.1), gw_r(w.size(), 0.1), gb_f(b.size(), 0.2),
        gb_r(b.size(), 0.2);
    conv2d_backward(g, in, w, go, gi_f, gw_f, gb_f);
    reference::conv2d_backward(g, in, w, go, gi_r, gw_r, gb_r);
    CHECK(max_diff(gi_f, gi_r) < 1e-11);
    CHECK(max_diff(gw_f, gw_r) < 1e-10);
    CHECK(max_diff(gb_f, gb_r) < 1e-11);
  }
}

TEST_CASE("conv results are bitwise identical across thread counts") {
  const ConvGeometry g{6, 48, 48, 10, 3, 1};
  const auto in = rand_vec(static_cast<std::size_t>(g.in_c) * g.in_h * g.in_w, 1);
  const auto w = rand_vec(g.weight_size(), 2);
  const auto b = rand_vec(g.out_c, 3);
  const std::size_t out_n = static_cast<std::size_t>(g.out_c) * g.out_h() * g.out_w();
  const auto go = rand_vec(out_n, 4);
  std::vector<std::vector<double>> outs, gws;
  const int saved = omp_get_max_threads();
  for (int threads : {1, 2, 3}) {
    omp_set_num_threads(threads);
    std::vector<double> out(out_n), gi(in.size()), gw(w.size(), 0.0), gb(b.size(), 0.0);
    conv2d_forward(g, in, w, b, out);
    conv2d_backward(g, in, w, go, gi, gw, gb);
    outs.push_back(out);
    gws.push_back(gw);
  }
  omp_set_num_threads(saved);
  CHECK(outs[0] == outs[1]);
  CHECK(outs[0] == outs[2]);
  CHECK(gws[0] == gws[1]);
  CHECK(gws[0] == gws[2]);
}

TEST_CASE("upsample matches reference and is adjoint") {
  const int c = 3, h = 5, w = 7;
  const auto in = rand_vec(static_cast<std::size_t>(c) * h * w, 7);
  std::vector<double> a(4 * in.size()), r(4 * in.size());
  upsample2x_forward(c, h, w, in, a);
  reference::upsample2x_forward(c, h, w, in, r);
  CHECK(a == r);
  const auto go = rand_vec(a.size(), 8);
  std::vector<double> gi(in.size()), gr(in.size());
  upsample2x_backward(c, h, w, go, gi);
  reference::upsample2x_backward(c, h, w, go, gr);
  CHECK(max_diff(gi, gr) < 1e-14);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) lhs += a[i] * go[i];
  for (std::size_t i = 0; i < in.size(); ++i) rhs += in[i] * gi[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("activations and pooling") {
  std::vector<double> x{-2.0, 0.0, 3.0};
  leaky_relu_inplace(x);
  CHECK(x == std::vector<double>{-0.4, 0.0, 3.0});
  std::vector<double> s{0.0};
  sigmoid_inplace(s);
  CHECK(s[0] == 0.5);
  std::vector<double> g{1.0};
  sigmoid_backward(s, g);
  CHECK(g[0] == 0.25);
  std::vector<double> in{1, 2, 3, 4, 10, 20, 30, 40}, out(2);
  global_avg_pool_forward(2, 2, 2, in, out);
  CHECK(out == std::vector<double>{2.5, 25.0});
  std::vector<double> gin(8);
  global_avg_pool_backward(2, 2, 2, std::vector<double>{4.0, 8.0}, gin);
  CHECK(gin[0] == 1.0);
  CHECK(gin[7] == 2.0);
}
