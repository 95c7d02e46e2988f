#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adanec/backbone.hpp"
#include "adanec/combination.hpp"
#include "adanec/domaingap.hpp"
#include "adanec/rtaw.hpp"
#include "adanec/synthesis.hpp"

namespace adanec {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Line-oriented "key = value" configuration; '#' starts a comment. Keys:
//
//   seed, out_dir
//   data.samples_per_domain, data.target_samples, data.image_size, data.split
//   domain.<id> = <DomainSpec text>   (replaces the default sources when present)
//   target = <DomainSpec text>
//   backbone.width, .depth, .steps, .batch, .crop, .lr
//   loss.lambda_fid, .lambda_rec, .gradient_term
//   rtaw.channels (comma list), .feature_dim, .proj_dim, .lambda, .steps, .batch, .lr, .ide_form
//   classifier.channels, .input_size, .steps, .batch, .lr, .augment
//   eval.policies (comma list of mode:level:source), eval.noide, eval.grid_samples
struct ExperimentConfig {
  std::vector<synthesis::DomainSpec> sources = synthesis::default_source_specs();
  synthesis::DomainSpec target = synthesis::default_target_spec();
  int samples_per_domain = 300;
  int target_samples = 60;
  int image_size = 64;
  double split_ratio = 0.8;

  backbone::BackboneConfig backbone;
  rtaw::RtawConfig rtaw;
  domaingap::ClassifierConfig classifier;

  std::vector<combine::CombinationPolicy> policies = default_policies();
  bool noide_ablation = true;
  int grid_samples = 4;

  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "adanec_run";

  static std::vector<combine::CombinationPolicy> default_policies();

  // Throws ConfigError; does not reject an overlapping target (that is a report warning).
  void validate() const;

  // Canonical form: every key, fixed order, round-trippable numbers.
  std::string to_text() const;
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);

  // Canonical lines whose key equals one of `keys` or starts with a key ending in '.'.
  std::string select(const std::vector<std::string>& keys) const;
};

std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL);

// Content hashes of each pipeline stage: own config subsection plus upstream hashes.
struct StageHashes {
  std::uint64_t data = 0;
  std::uint64_t experts = 0;
  std::uint64_t rtaw = 0;
  std::uint64_t rtaw_noide = 0;
  std::uint64_t classifier = 0;
  std::uint64_t eval = 0;
};

StageHashes stage_hashes(const ExperimentConfig& c);

}  // namespace adanec
