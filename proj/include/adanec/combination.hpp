#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adanec/backbone.hpp"
#include "adanec/domaingap.hpp"
#include "adanec/rtaw.hpp"

namespace adanec::combine {

using backbone::ExpertModel;
using rtaw::WeightVector;

// Sum_i w_i G_i(I) over all N experts.
Prediction combine_of(std::span<const ExpertModel> experts, const Image& img, const WeightVector& w);
// Same fusion from already computed expert outputs.
Prediction combine_of(std::span<const Prediction> expert_outputs, const WeightVector& w);

// theta[name] = Sum_i w_i theta_i[name] for every parameter. The result keeps
// the shared arch and records w in meta.interpolation_weights.
ExpertModel interpolate_params(std::span<const ExpertModel> experts, const WeightVector& w);

// One forward pass through the interpolated model.
Prediction combine_ni(std::span<const ExpertModel> experts, const Image& img, const WeightVector& w);

// Arithmetic mean of simplex points.
WeightVector mean_weights(std::span<const WeightVector> ws);
// Mean full-softmax RTAW weights over a set of images.
WeightVector domain_weights(const rtaw::RTAWModule& m, std::span<const Image> images);

enum class Mode { OF, NI };
enum class Level { Image, Domain };
enum class Source { Rtaw, Uniform, Classifier };

struct CombinationPolicy {
  Mode mode = Mode::OF;
  Level level = Level::Image;
  Source source = Source::Rtaw;

  // "of:image:rtaw" style spec; parse accepts the same form.
  std::string to_text() const;
  static CombinationPolicy parse(std::string_view text);
  // Short report label: OF, NI, OF-domain, NI-uniform, ...
  std::string label() const;

  bool operator==(const CombinationPolicy&) const = default;
};

std::string to_string(Mode m);
std::string to_string(Level l);
std::string to_string(Source s);

struct PolicyInputs {
  std::span<const ExpertModel> experts;
  const rtaw::RTAWModule* rtaw = nullptr;
  const domaingap::DomainClassifier* classifier = nullptr;
  std::span<const Image> images;
  std::span<const std::string> ids;
  // Optional cache: expert_outputs[k][i] = G_i(images[k]). Used by OF when present.
  const std::vector<std::vector<Prediction>>* expert_outputs = nullptr;
};

struct PolicyRun {
  std::vector<Prediction> predictions;
  // One entry per image at IMAGE level, a single "DOMAIN" entry otherwise.
  std::vector<std::pair<std::string, WeightVector>> weight_log;

  // "<id>\tw_0,...,w_{N-1}" with 6 decimals, one line per decision.
  std::string weight_log_text() const;
};

PolicyRun run_policy(const CombinationPolicy& policy, const PolicyInputs& in);

}  // namespace adanec::combine
