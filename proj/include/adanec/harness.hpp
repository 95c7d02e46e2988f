#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adanec/config.hpp"

namespace adanec::harness {

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct MetricRow {
  std::string policy;  // joint, expert_i, OF, NI, ...
  std::string set;     // domain_i, source_avg, pseudo_target
  std::size_t count = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct StageInfo {
  std::string name;
  std::uint64_t hash = 0;
  bool skipped = false;
  double seconds = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  // Ordered scalar statistics: deltas, weight statistics, classifier accuracy.
  std::vector<std::pair<std::string, double>> stats;
  std::vector<std::string> warnings;
  std::vector<StageInfo> stages;  // runtime only; not part of the report files

  const MetricRow& row(const std::string& policy, const std::string& set) const;
  const MetricRow* find(const std::string& policy, const std::string& set) const;
  double stat(const std::string& key) const;
  std::vector<std::string> policies() const;
  std::vector<std::string> sets() const;

  // report.tsv: header, one row per (policy, set), then "stat" and "warning" lines.
  std::string to_tsv() const;
  static EvalReport from_tsv(std::string_view text);
  // Wide table: PSNR/SSIM per policy across sets, deltas and weight statistics.
  std::string to_text() const;
};

// Sample-weighted mean over the source sets, as stored in the source_avg rows.
MetricRow weighted_average(const std::vector<MetricRow>& rows, const std::string& policy, const std::string& label);

using Logger = std::function<void(const std::string&)>;

// Runs data -> experts (+ joint) -> rtaw (+ lambda = 0 ablation) -> classifier -> eval
// under config.out_dir, skipping stages whose stage.hash matches.
EvalReport run_pipeline(const ExperimentConfig& config, const Logger& log = {});

// The pseudo-target rows (and target statistics) of the pipeline report.
EvalReport pseudo_target_eval(const ExperimentConfig& config, const Logger& log = {});

inline constexpr const char* kTargetSet = "pseudo_target";
inline constexpr const char* kSourceAvg = "source_avg";

}  // namespace adanec::harness
