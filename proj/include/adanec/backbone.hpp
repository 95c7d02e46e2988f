#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adanec/dataset.hpp"
#include "adanec/losses.hpp"
#include "adanec/network.hpp"
#include "adanec/prediction.hpp"

namespace adanec::backbone {

inline constexpr int kJoint = -1;

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BackboneConfig {
  int width = 12;
  int depth = 6;

  int steps = 1000;
  int batch = 4;
  int crop = 32;  // training crops; 0 trains on full images
  double lr = 2e-3;
  LossConfig loss;
  std::uint64_t seed = 1;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int steps = 0;
  double lr = 0.0;
  // Set on models produced by parameter interpolation.
  std::vector<double> interpolation_weights;

  bool operator==(const TrainingMeta&) const = default;
};

struct ExpertModel {
  nn::Arch arch;
  nn::ParamSet params;
  int domain_id = kJoint;
  TrainingMeta meta;

  // Throws if params do not match the arch expansion or are non-finite.
  void validate() const;
};

// Encoder-decoder with (depth - 2) / 2 stride-2 levels, skip concatenations,
// and two sigmoid heads (transmission, reflection) that also see the input
// image. No normalisation layers: every parameter can be interpolated.
nn::Arch build_arch(int width, int depth);
inline nn::Arch build_arch(const BackboneConfig& c) { return build_arch(c.width, c.depth); }

ExpertModel init_expert(const nn::Arch& arch, std::uint64_t seed, int domain_id = kJoint);

nn::Tensor to_tensor(const Image& img);
Image to_image(const nn::Tensor& t);

// Head activations other than sigmoid are clamped to [0,1].
Prediction predict(const ExpertModel& expert, const Image& img);

// Loss of one sample and (optionally) its parameter gradient, accumulated into grads.
double sample_loss(const nn::Network& net, const nn::ParamSet& params, const TripletSample& sample,
                   const LossConfig& loss, nn::ParamSet* grads);

// Trains on `pool` (indices into data), restricted to `domain_id` unless it is kJoint.
ExpertModel train_expert(const Dataset& data, std::span<const std::size_t> pool, int domain_id,
                         const BackboneConfig& config, const std::function<void(int, double)>& progress = {});

// Axis-aligned crop of all three layers.
TripletSample crop_sample(const TripletSample& s, int y0, int x0, int size, bool flip);

void save_expert(const ExpertModel& expert, const std::filesystem::path& path);
ExpertModel load_expert(const std::filesystem::path& path);

}  // namespace adanec::backbone
