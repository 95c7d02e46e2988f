// Fast (im2col + GEMM, OpenMP blocks) versus serial reference convolution.
#include <benchmark/benchmark.h>

#include <vector>

#include "adanec/kernels.hpp"
#include "adanec/rng.hpp"

using namespace adanec;
using namespace adanec::kernels;

namespace {

struct Problem {
  ConvGeometry g;
  std::vector<double> in, weight, bias, out, grad_out, grad_in, grad_w, grad_b;

  Problem(int c_in, int size, int c_out, int stride) : g{c_in, size, size, c_out, 3, stride} {
    Rng rng(1);
    auto fill = [&](std::vector<double>& v, std::size_t n) {
      v.resize(n);
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
    };
    const std::size_t n_out = static_cast<std::size_t>(c_out) * g.out_h() * g.out_w();
    fill(in, static_cast<std::size_t>(c_in) * size * size);
    fill(weight, g.weight_size());
    fill(bias, c_out);
    fill(grad_out, n_out);
    out.resize(n_out);
    grad_in.resize(in.size());
    grad_w.resize(weight.size());
    grad_b.resize(bias.size());
  }
};

void args(benchmark::internal::Benchmark* b) {
  b->Args({3, 64, 16, 1})->Args({16, 32, 32, 2})->Args({32, 32, 32, 1})->Args({64, 16, 64, 1});
}

void BM_ConvForwardFast(benchmark::State& st) {
  Problem p(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) {
    conv2d_forward(p.g, p.in, p.weight, p.bias, p.out);
    benchmark::DoNotOptimize(p.out.data());
  }
}

void BM_ConvForwardReference(benchmark::State& st) {
  Problem p(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) {
    reference::conv2d_forward(p.g, p.in, p.weight, p.bias, p.out);
    benchmark::DoNotOptimize(p.out.data());
  }
}

void BM_ConvBackwardFast(benchmark::State& st) {
  Problem p(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) {
    conv2d_backward(p.g, p.in, p.weight, p.grad_out, p.grad_in, p.grad_w, p.grad_b);
    benchmark::DoNotOptimize(p.grad_w.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& st) {
  Problem p(st.range(0), st.range(1), st.range(2), st.range(3));
  for (auto _ : st) {
    reference::conv2d_backward(p.g, p.in, p.weight, p.grad_out, p.grad_in, p.grad_w, p.grad_b);
    benchmark::DoNotOptimize(p.grad_w.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForwardFast)->Apply(args);
BENCHMARK(BM_ConvForwardReference)->Apply(args);
BENCHMARK(BM_ConvBackwardFast)->Apply(args);
BENCHMARK(BM_ConvBackwardReference)->Apply(args);

BENCHMARK_MAIN();
