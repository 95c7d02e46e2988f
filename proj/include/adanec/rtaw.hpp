#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "adanec/backbone.hpp"
#include "adanec/dataset.hpp"
#include "adanec/losses.hpp"
#include "adanec/network.hpp"
#include "adanec/prediction.hpp"

namespace adanec::rtaw {

// A point on the simplex. In complement form `excluded_index` names the
// expert that has no entry, and entry k belongs to expert k (k < excluded)
// or k + 1 (k >= excluded).
struct WeightVector {
  std::vector<double> weights;
  std::optional<int> excluded_index;

  std::size_t size() const { return weights.size(); }
  double operator[](std::size_t k) const { return weights[k]; }
  int expert_of(std::size_t k) const;
  // Full-length view with 0 at the excluded expert.
  std::vector<double> expanded() const;
  // Entries in [0,1] summing to 1 within tol.
  bool on_simplex(double tol = 1e-6) const;
};

WeightVector uniform_weights(std::size_t n);
WeightVector one_hot(std::size_t n, std::size_t k);

// Max-subtracted softmax over the non-excluded entries.
WeightVector softmax_weights(std::span<const double> expertise, std::optional<int> exclude = std::nullopt);

// v_i = <W_k^T k_i, W_q^T q>; W_k and W_q are d x d' row-major.
std::vector<double> cdam_scores(std::span<const double> q, const std::vector<std::vector<double>>& keys,
                                std::span<const double> w_k, std::span<const double> w_q, int d, int d_proj);

// Pixel-wise convex combination of transmissions and of reflections.
Prediction fuse_outputs(std::span<const Prediction> predictions, const WeightVector& w);

// -log w_i over the full N-way softmax.
double ide_loss(const WeightVector& w, int in_domain);

struct RtawConfig {
  std::vector<int> extractor_channels{8, 16, 32};  // stride-2 convs before the final one
  int feature_dim = 128;
  int proj_dim = 64;
  double lambda = 0.1;
  LossConfig loss;
  int steps = 600;
  int batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct RTAWModule {
  nn::Arch extractor_arch;
  nn::ParamSet universal;                      // F
  std::vector<nn::ParamSet> expert_extractors;  // F_i
  nn::ParamSet cdam;                           // "w_k", "w_q": d x d'
  int feature_dim = 0;
  int proj_dim = 0;

  std::size_t num_experts() const { return expert_extractors.size(); }
  void validate() const;
  std::vector<nn::ParamSet*> parts();
};

// Stride-2 convs with lrelu, the last producing feature_dim channels, then global average pooling.
nn::Arch build_extractor_arch(const std::vector<int>& channels, int feature_dim);

RTAWModule init_rtaw(std::size_t num_experts, const RtawConfig& config, std::uint64_t seed);

struct Features {
  std::vector<double> q;
  std::vector<std::vector<double>> keys;
};

Features extract(const RTAWModule& m, const Image& img);
std::vector<double> expertise_scores(const RTAWModule& m, const Image& img);
// Full softmax of the expertise scores.
WeightVector predict_weights(const RTAWModule& m, const Image& img);

struct LodoLoss {
  double rr = 0.0;
  double ide = 0.0;
  double total = 0.0;
  std::vector<double> scores;
  std::vector<double> d_scores_rr;  // dL_RR/dv, zero at the in-domain entry
};

// Leave-one-domain-out objective of one sample whose domain is `sample.domain_id`:
// L_RR on the fusion of the other experts plus lambda * L_IDE on the full
// softmax. expert_outputs[j] is G_j(I). Gradients are accumulated into `grads`
// (same layout as the module) when non-null.
LodoLoss lodo_loss(const RTAWModule& m, const TripletSample& sample, std::span<const Prediction> expert_outputs,
                   double lambda, const LossConfig& loss, RTAWModule* grads);

// dL_RR/dv for given scores; the in-domain entry is structurally zero.
std::vector<double> rr_score_gradient(std::span<const double> scores, int in_domain,
                                      std::span<const Prediction> expert_outputs, const TripletSample& sample,
                                      const LossConfig& loss, double* rr_value = nullptr);

// expert_outputs[s][j] = G_j applied to data.samples[pool[s]].contaminated.
RTAWModule train_rtaw(const std::vector<std::vector<Prediction>>& expert_outputs, const Dataset& data,
                      std::span<const std::size_t> pool, const RtawConfig& config,
                      const std::function<void(int, const LodoLoss&)>& progress = {});

// Runs the frozen experts once over the pool, then trains.
RTAWModule train_rtaw(const std::vector<backbone::ExpertModel>& experts, const Dataset& data,
                      std::span<const std::size_t> pool, const RtawConfig& config,
                      const std::function<void(int, const LodoLoss&)>& progress = {});

void save_rtaw(const RTAWModule& m, const std::filesystem::path& path, double lambda);
RTAWModule load_rtaw(const std::filesystem::path& path);

}  // namespace adanec::rtaw
