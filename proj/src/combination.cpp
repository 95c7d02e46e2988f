#include "adanec/combination.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace adanec::combine {

namespace {

void check_weights(std::size_t n, const WeightVector& w, const char* what) {
  if (w.excluded_index) throw std::invalid_argument(std::string(what) + ": complement weights are not accepted here");
  if (w.size() != n) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(n) + " experts but " +
                                std::to_string(w.size()) + " weights");
  }
  if (!w.on_simplex()) throw std::invalid_argument(std::string(what) + ": weights are not on the simplex");
}

}  // namespace

Prediction combine_of(std::span<const Prediction> expert_outputs, const WeightVector& w) {
  check_weights(expert_outputs.size(), w, "combine_of");
  return rtaw::fuse_outputs(expert_outputs, w);
}

Prediction combine_of(std::span<const ExpertModel> experts, const Image& img, const WeightVector& w) {
  check_weights(experts.size(), w, "combine_of");
  std::vector<Prediction> outs;
  outs.reserve(experts.size());
  for (const auto& e : experts) outs.push_back(backbone::predict(e, img));
  return rtaw::fuse_outputs(outs, w);
}

ExpertModel interpolate_params(std::span<const ExpertModel> experts, const WeightVector& w) {
  if (experts.empty()) throw std::invalid_argument("interpolate_params: no experts");
  check_weights(experts.size(), w, "interpolate_params");
  const ExpertModel& base = experts.front();
  for (std::size_t i = 1; i < experts.size(); ++i) {
    if (auto bad = base.params.first_layout_mismatch(experts[i].params)) {
      throw std::invalid_argument("interpolate_params: expert " + std::to_string(i) + " differs at parameter " + *bad);
    }
    if (!(experts[i].arch == base.arch)) {
      throw std::invalid_argument("interpolate_params: expert " + std::to_string(i) + " has a different architecture");
    }
  }
  ExpertModel out;
  out.arch = base.arch;
  out.domain_id = backbone::kJoint;
  out.params = base.params;
  out.params.fill(0.0);
  // Summed in double and left unrounded so one-hot weights copy exactly.
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (w[i] != 0.0) out.params.axpy(w[i], experts[i].params);
  }
  out.meta.interpolation_weights = w.weights;
  return out;
}

Prediction combine_ni(std::span<const ExpertModel> experts, const Image& img, const WeightVector& w) {
  return backbone::predict(interpolate_params(experts, w), img);
}

WeightVector mean_weights(std::span<const WeightVector> ws) {
  if (ws.empty()) throw std::invalid_argument("mean_weights: empty list");
  WeightVector out{std::vector<double>(ws.front().size(), 0.0), std::nullopt};
  for (const auto& w : ws) {
    if (w.size() != out.size() || w.excluded_index) throw std::invalid_argument("mean_weights: inconsistent weights");
    for (std::size_t k = 0; k < w.size(); ++k) out.weights[k] += w[k];
  }
  for (double& x : out.weights) x /= static_cast<double>(ws.size());
  return out;
}

WeightVector domain_weights(const rtaw::RTAWModule& m, std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("domain_weights: empty image list");
  std::vector<WeightVector> ws(images.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(images.size()); ++k) {
    ws[k] = rtaw::predict_weights(m, images[k]);
  }
  return mean_weights(ws);
}

std::string to_string(Mode m) { return m == Mode::OF ? "of" : "ni"; }
std::string to_string(Level l) { return l == Level::Image ? "image" : "domain"; }
std::string to_string(Source s) {
  switch (s) {
    case Source::Rtaw: return "rtaw";
    case Source::Uniform: return "uniform";
    case Source::Classifier: return "classifier";
  }
  return "?";
}

std::string CombinationPolicy::to_text() const {
  return to_string(mode) + ":" + to_string(level) + ":" + to_string(source);
}

CombinationPolicy CombinationPolicy::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == ':') {
      parts.push_back(cur);
      cur.clear();
    } else if (ch != ' ' && ch != '\t') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3) throw std::invalid_argument("policy must look like of:image:rtaw, got '" + std::string(text) + "'");
  CombinationPolicy p;
  if (parts[0] == "of") p.mode = Mode::OF;
  else if (parts[0] == "ni") p.mode = Mode::NI;
  else throw std::invalid_argument("unknown policy mode '" + parts[0] + "'");
  if (parts[1] == "image") p.level = Level::Image;
  else if (parts[1] == "domain") p.level = Level::Domain;
  else throw std::invalid_argument("unknown policy level '" + parts[1] + "'");
  if (parts[2] == "rtaw") p.source = Source::Rtaw;
  else if (parts[2] == "uniform") p.source = Source::Uniform;
  else if (parts[2] == "classifier") p.source = Source::Classifier;
  else throw std::invalid_argument("unknown weight source '" + parts[2] + "'");
  return p;
}

std::string CombinationPolicy::label() const {
  std::string s = mode == Mode::OF ? "OF" : "NI";
  if (level == Level::Domain) s += "-domain";
  if (source == Source::Uniform) s += "-uniform";
  if (source == Source::Classifier) s += "-classifier";
  return s;
}

std::string PolicyRun::weight_log_text() const {
  std::string out;
  char buf[32];
  for (const auto& [id, w] : weight_log) {
    out += id;
    out += '\t';
    for (std::size_t k = 0; k < w.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s%.6f", k ? "," : "", w[k]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

PolicyRun run_policy(const CombinationPolicy& policy, const PolicyInputs& in) {
  const std::size_t n = in.experts.size();
  if (n == 0) throw std::invalid_argument("run_policy: no experts");
  if (in.ids.size() != in.images.size()) throw std::invalid_argument("run_policy: one id per image required");
  if (in.images.empty()) throw std::invalid_argument("run_policy: empty evaluation set");
  if (policy.source == Source::Rtaw && !in.rtaw) throw std::invalid_argument("run_policy: RTAW weights need an RTAW module");
  if (policy.source == Source::Classifier && !in.classifier) {
    throw std::invalid_argument("run_policy: classifier weights need a trained domain classifier");
  }
  if (in.rtaw && policy.source == Source::Rtaw && in.rtaw->num_experts() != n) {
    throw std::invalid_argument("run_policy: RTAW module and expert count differ");
  }
  if (in.classifier && policy.source == Source::Classifier && in.classifier->n_domains != static_cast<int>(n)) {
    throw std::invalid_argument("run_policy: classifier domains and expert count differ");
  }
  if (in.expert_outputs && in.expert_outputs->size() != in.images.size()) {
    throw std::invalid_argument("run_policy: cached expert outputs do not match the image list");
  }

  const std::size_t count = in.images.size();
  std::vector<WeightVector> per_image(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
    switch (policy.source) {
      case Source::Rtaw: per_image[k] = rtaw::predict_weights(*in.rtaw, in.images[k]); break;
      case Source::Uniform: per_image[k] = rtaw::uniform_weights(n); break;
      case Source::Classifier: per_image[k] = domaingap::classify(*in.classifier, in.images[k]); break;
    }
  }

  PolicyRun run;
  std::vector<const WeightVector*> used(count);
  WeightVector shared;
  if (policy.level == Level::Domain) {
    shared = mean_weights(per_image);
    run.weight_log.emplace_back("DOMAIN", shared);
    for (auto& u : used) u = &shared;
  } else {
    for (std::size_t k = 0; k < count; ++k) {
      run.weight_log.emplace_back(in.ids[k], per_image[k]);
      used[k] = &per_image[k];
    }
  }

  run.predictions.resize(count);
  if (policy.mode == Mode::NI && policy.level == Level::Domain) {
    const ExpertModel merged = interpolate_params(in.experts, shared);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
      run.predictions[k] = backbone::predict(merged, in.images[k]);
    }
    return run;
  }
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(count); ++k) {
    if (policy.mode == Mode::NI) {
      run.predictions[k] = combine_ni(in.experts, in.images[k], *used[k]);
    } else if (in.expert_outputs) {
      run.predictions[k] = combine_of((*in.expert_outputs)[k], *used[k]);
    } else {
      run.predictions[k] = combine_of(in.experts, in.images[k], *used[k]);
    }
  }
  return run;
}

}  // namespace adanec::combine
