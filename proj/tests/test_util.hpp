#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "adanec/image.hpp"
#include "adanec/rng.hpp"

namespace testutil {

inline adanec::Image random_image(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  adanec::Rng rng(seed);
  adanec::Image img(h, w);
  for (double& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

inline adanec::Image constant_image(int h, int w, double v) { return adanec::Image(h, w, v); }

inline double max_abs_diff(const adanec::Image& a, const adanec::Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("adanec_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace testutil

#include "adanec/backbone.hpp"
#include "adanec/synthesis.hpp"

namespace testutil {

// A synthetic triplet with recorded coefficients.
inline adanec::TripletSample random_sample(int size, std::uint64_t seed, int domain = 0) {
  adanec::SynthesisParams p{0.8, 0.35, 1.5, 2.2};
  return adanec::synthesis::synthesize_with(random_image(size, size, adanec::mix_seed(seed, 1)),
                                            random_image(size, size, adanec::mix_seed(seed, 2)), p, domain);
}

// conv(3->3, s2) -> upconv with input skip -> two sigmoid heads; < 500 parameters.
inline adanec::nn::Arch mini_backbone_arch() {
  using namespace adanec::nn;
  Arch a;
  a.family = "backbone";
  a.layers = {
      {"down", LayerKind::Conv, {"input"}, 3, 3, 2, Activation::LeakyRelu},
      {"up", LayerKind::UpConv, {"down", "input"}, 3, 3, 1, Activation::LeakyRelu},
      {"head_t", LayerKind::Conv, {"up", "input"}, 3, 1, 1, Activation::Sigmoid},
      {"head_r", LayerKind::Conv, {"up", "input"}, 3, 1, 1, Activation::Sigmoid},
  };
  a.outputs = {"head_t", "head_r"};
  a.validate();
  return a;
}

// Both heads are one linear 3x3 conv of the input: outputs are affine in the parameters.
inline adanec::nn::Arch affine_arch() {
  using namespace adanec::nn;
  Arch a;
  a.family = "affine";
  a.layers = {
      {"head_t", LayerKind::Conv, {"input"}, 3, 3, 1, Activation::None},
      {"head_r", LayerKind::Conv, {"input"}, 3, 3, 1, Activation::None},
  };
  a.outputs = {"head_t", "head_r"};
  a.validate();
  return a;
}

// Weights in +-scale and biases near 0.5 keep affine outputs inside [0,1] for inputs in [0,1].
inline adanec::backbone::ExpertModel affine_expert(std::uint64_t seed, double scale = 0.015) {
  adanec::backbone::ExpertModel e;
  e.arch = affine_arch();
  e.params = adanec::nn::ParamSet(e.arch.param_shapes());
  adanec::Rng rng(seed);
  for (auto& p : e.params.items()) {
    const bool bias = p.dims.size() == 1;
    for (double& v : p.values) v = bias ? rng.uniform(0.4, 0.6) : rng.uniform(-scale, scale);
  }
  return e;
}

}  // namespace testutil
