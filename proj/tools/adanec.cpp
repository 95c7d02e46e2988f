// Command-line front end: dataset synthesis, expert / RTAW / classifier
// training, policy evaluation and the full pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "adanec/combination.hpp"
#include "adanec/config.hpp"
#include "adanec/dataset.hpp"
#include "adanec/domaingap.hpp"
#include "adanec/harness.hpp"
#include "adanec/rng.hpp"

namespace {

using namespace adanec;

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
}

void log_line(const std::string& msg) { std::cerr << msg << '\n'; }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> v(d.samples.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

int cmd_synth(const std::string& config, const std::string& out, std::uint64_t seed, int count, bool target) {
  const auto c = config_or_default(config);
  auto specs = c.sources;
  if (target) {
    specs = {c.target};
    specs.front().domain_id = 0;
  }
  const auto m = synthesis::generate_dataset(specs, count, seed, out, c.image_size);
  std::cout << "wrote " << m.records.size() << " samples to " << out << "/manifest.tsv\n";
  return 0;
}

int cmd_train_expert(const std::string& config, const std::string& manifest, const std::string& domain,
                     const std::string& out, std::uint64_t seed) {
  auto cfg = config_or_default(config).backbone;
  cfg.seed = seed;
  const int id = domain == "joint" ? backbone::kJoint : std::stoi(domain);
  const Dataset data = load_dataset(synthesis::read_manifest(manifest));
  const auto pool = all_indices(data);
  const auto model = backbone::train_expert(data, pool, id, cfg, [](int step, double loss) {
    if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " loss " << loss << '\n';
  });
  backbone::save_expert(model, out);
  return 0;
}

int cmd_train_rtaw(const std::string& config, const std::vector<std::string>& expert_paths, const std::string& manifest,
                   const std::string& out, double lambda, std::uint64_t seed) {
  auto cfg = config_or_default(config).rtaw;
  cfg.lambda = lambda;
  cfg.seed = seed;
  std::vector<backbone::ExpertModel> experts;
  for (const auto& p : expert_paths) experts.push_back(backbone::load_expert(p));
  const Dataset data = load_dataset(synthesis::read_manifest(manifest));
  const auto pool = all_indices(data);
  const auto m = rtaw::train_rtaw(experts, data, pool, cfg, [](int step, const rtaw::LodoLoss& l) {
    if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " rr " << l.rr << " ide " << l.ide << '\n';
  });
  rtaw::save_rtaw(m, out, lambda);
  return 0;
}

int cmd_domain_classify(const std::string& config, const std::string& manifest, double split, std::uint64_t seed,
                        const std::string& report, const std::string& out) {
  auto cfg = config_or_default(config).classifier;
  cfg.seed = seed;
  const Dataset data = load_dataset(synthesis::read_manifest(manifest));
  const auto trained = domaingap::train_classifier(data, split, cfg);
  const auto acc = domaingap::accuracy_report(trained.classifier, data, trained.split);
  const std::string text = acc.to_text();
  if (!report.empty()) write_file(report, text);
  if (!out.empty()) domaingap::save_classifier(trained.classifier, out);
  std::cout << text;
  return 0;
}

int cmd_eval(const std::string& policy_text, const std::vector<std::string>& expert_paths, const std::string& rtaw_path,
             const std::string& classifier_path, const std::string& manifest, const std::string& report,
             std::string weights_path) {
  const auto policy = combine::CombinationPolicy::parse(policy_text);
  std::vector<backbone::ExpertModel> experts;
  for (const auto& p : expert_paths) experts.push_back(backbone::load_expert(p));
  std::optional<rtaw::RTAWModule> m;
  std::optional<domaingap::DomainClassifier> cls;
  if (!rtaw_path.empty()) m = rtaw::load_rtaw(rtaw_path);
  if (!classifier_path.empty()) cls = domaingap::load_classifier(classifier_path);

  const auto man = synthesis::read_manifest(manifest);
  const Dataset data = load_dataset(man);
  std::vector<harness::MetricRow> rows;
  std::string log;
  for (int d = 0; d < data.num_domains; ++d) {
    const auto idx = data.indices_of(d);
    if (idx.empty()) continue;
    std::vector<Image> images;
    std::vector<std::string> ids;
    for (auto i : idx) {
      images.push_back(data.samples[i].contaminated);
      ids.push_back(man.records[i].contaminated.generic_string());
    }
    combine::PolicyInputs in;
    in.experts = experts;
    in.rtaw = m ? &*m : nullptr;
    in.classifier = cls ? &*cls : nullptr;
    in.images = images;
    in.ids = ids;
    const auto run = combine::run_policy(policy, in);
    log += run.weight_log_text();
    harness::MetricRow r{policy.label(), "domain_" + std::to_string(d), idx.size(), 0.0, 0.0};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      r.psnr += psnr(run.predictions[k].transmission, data.samples[idx[k]].transmission) / idx.size();
      r.ssim += ssim(run.predictions[k].transmission, data.samples[idx[k]].transmission) / idx.size();
    }
    rows.push_back(r);
  }
  harness::EvalReport rep;
  rep.rows = rows;
  rep.rows.push_back(harness::weighted_average(rows, policy.label(), harness::kSourceAvg));
  write_file(report, rep.to_tsv());
  if (weights_path.empty()) weights_path = report + ".weights";
  write_file(weights_path, log);
  std::cout << rep.to_text();
  return 0;
}

int cmd_pipeline(const std::string& config, const std::string& out, std::int64_t seed) {
  auto c = config_or_default(config);
  if (!out.empty()) c.out_dir = out;
  if (seed >= 0) c.seed = static_cast<std::uint64_t>(seed);
  const auto rep = harness::run_pipeline(c, log_line);
  std::cout << rep.to_text();
  for (const auto& s : rep.stages) {
    std::cerr << "[" << s.name << "] " << (s.skipped ? "skipped" : "ran") << " in " << s.seconds << " s\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive combination of reflection-removal domain experts"};
  app.require_subcommand(1);

  std::string config, out, manifest, domain = "joint", report, rtaw_path, classifier_path, weights;
  std::string policy_mode = "of", policy_level = "image", policy_source = "rtaw";
  std::vector<std::string> experts;
  std::uint64_t seed = 1;
  std::int64_t pipeline_seed = -1;
  int count = 100;
  bool target = false;
  double lambda = 0.1, split = 0.8;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset");
  synth->add_option("--config", config, "Experiment config (domain specs)");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Seed");
  synth->add_option("--count", count, "Samples per domain");
  synth->add_flag("--target", target, "Generate the pseudo-target domain instead of the sources");

  auto* texp = app.add_subcommand("train-expert", "Train one domain expert or the joint baseline");
  texp->add_option("--config", config, "Experiment config (backbone settings)");
  texp->add_option("--manifest", manifest, "Dataset manifest")->required();
  texp->add_option("--domain", domain, "Domain id or 'joint'");
  texp->add_option("--out", out, "Checkpoint path")->required();
  texp->add_option("--seed", seed, "Seed");

  auto* trt = app.add_subcommand("train-rtaw", "Train the RTAW module with leave-one-domain-out");
  trt->add_option("--config", config, "Experiment config (rtaw settings)");
  trt->add_option("--experts", experts, "Expert checkpoints in domain order")->required();
  trt->add_option("--manifest", manifest, "Dataset manifest")->required();
  trt->add_option("--out", out, "Checkpoint path")->required();
  trt->add_option("--lambda", lambda, "IDE loss weight");
  trt->add_option("--seed", seed, "Seed");

  auto* dc = app.add_subcommand("domain-classify", "Train and score the dataset-origin classifier");
  dc->add_option("--config", config, "Experiment config (classifier settings)");
  dc->add_option("--manifest", manifest, "Dataset manifest")->required();
  dc->add_option("--split", split, "Training fraction");
  dc->add_option("--seed", seed, "Seed");
  dc->add_option("--report", report, "Accuracy table path");
  dc->add_option("--out", out, "Classifier checkpoint path");

  auto* ev = app.add_subcommand("eval", "Evaluate one combination policy");
  ev->add_option("--policy", policy_mode, "of | ni")->check(CLI::IsMember({"of", "ni"}));
  ev->add_option("--level", policy_level, "image | domain")->check(CLI::IsMember({"image", "domain"}));
  ev->add_option("--source", policy_source, "rtaw | uniform | classifier")
      ->check(CLI::IsMember({"rtaw", "uniform", "classifier"}));
  ev->add_option("--experts", experts, "Expert checkpoints in domain order")->required();
  ev->add_option("--rtaw", rtaw_path, "RTAW checkpoint");
  ev->add_option("--classifier", classifier_path, "Domain classifier checkpoint");
  ev->add_option("--manifest", manifest, "Evaluation manifest")->required();
  ev->add_option("--report", report, "Report path (TSV)")->required();
  ev->add_option("--weights", weights, "Weight log path (default <report>.weights)");

  auto* pipe = app.add_subcommand("pipeline", "Run every stage with caching and write the report");
  pipe->add_option("--config", config, "Experiment config");
  pipe->add_option("--out", out, "Output directory (overrides out_dir)");
  pipe->add_option("--seed", pipeline_seed, "Seed (overrides the config)");

  CLI11_PARSE(app, argc, argv);

  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (synth->parsed()) return cmd_synth(config, out, seed, count, target);
    if (texp->parsed()) return cmd_train_expert(config, manifest, domain, out, seed);
    if (trt->parsed()) return cmd_train_rtaw(config, experts, manifest, out, lambda, seed);
    if (dc->parsed()) return cmd_domain_classify(config, manifest, split, seed, report, out);
    if (ev->parsed()) {
      return cmd_eval(policy_mode + ":" + policy_level + ":" + policy_source, experts, rtaw_path, classifier_path,
                      manifest, report, weights);
    }
    if (pipe->parsed()) return cmd_pipeline(config, out, pipeline_seed);
  } catch (const harness::StageError& e) {
    std::cerr << "adanec: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "adanec: stage '" << stage << "' failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
