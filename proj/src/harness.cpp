#include "adanec/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "adanec/dataset.hpp"
#include "adanec/rng.hpp"

namespace adanec::harness {

namespace fs = std::filesystem;
using backbone::ExpertModel;

// ------------------------------------------------------------------ report

const MetricRow* EvalReport::find(const std::string& policy, const std::string& set) const {
  for (const auto& r : rows)
    if (r.policy == policy && r.set == set) return &r;
  return nullptr;
}

const MetricRow& EvalReport::row(const std::string& policy, const std::string& set) const {
  if (const auto* r = find(policy, set)) return *r;
  throw std::out_of_range("report has no row " + policy + " / " + set);
}

double EvalReport::stat(const std::string& key) const {
  for (const auto& [k, v] : stats)
    if (k == key) return v;
  throw std::out_of_range("report has no statistic " + key);
}

std::vector<std::string> EvalReport::policies() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.policy) == out.end()) out.push_back(r.policy);
  return out;
}

std::vector<std::string> EvalReport::sets() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.set) == out.end()) out.push_back(r.set);
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == '\t') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string EvalReport::to_tsv() const {
  std::string out = "# adanec-report v1\npolicy\tset\tcount\tpsnr\tssim\n";
  for (const auto& r : rows) {
    out += r.policy + '\t' + r.set + '\t' + std::to_string(r.count) + '\t' + fixed(r.psnr, 10) + '\t' +
           fixed(r.ssim, 10) + '\n';
  }
  for (const auto& [k, v] : stats) out += "stat\t" + k + '\t' + fixed(v, 10) + '\n';
  for (const auto& w : warnings) out += "warning\t" + w + '\n';
  return out;
}

EvalReport EvalReport::from_tsv(std::string_view text) {
  EvalReport r;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "# adanec-report v1") throw IoError("not an adanec report");
  if (!std::getline(in, line) || line != "policy\tset\tcount\tpsnr\tssim") throw IoError("malformed report header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f[0] == "stat" && f.size() == 3) {
      r.stats.emplace_back(f[1], std::stod(f[2]));
    } else if (f[0] == "warning" && f.size() == 2) {
      r.warnings.push_back(f[1]);
    } else if (f.size() == 5) {
      r.rows.push_back({f[0], f[1], std::stoul(f[2]), std::stod(f[3]), std::stod(f[4])});
    } else {
      throw IoError("malformed report line: " + line);
    }
  }
  return r;
}

std::string EvalReport::to_text() const {
  const auto ps = policies();
  const auto ss = sets();
  std::size_t w0 = 8;
  for (const auto& p : ps) w0 = std::max(w0, p.size() + 2);
  std::ostringstream os;
  auto table = [&](const char* title, auto get, int digits) {
    os << title << '\n';
    os << std::string(w0, ' ');
    for (const auto& s : ss) {
      std::string h = s;
      h.resize(std::max<std::size_t>(h.size(), 14), ' ');
      os << h;
    }
    os << '\n';
    for (const auto& p : ps) {
      std::string name = p;
      name.resize(w0, ' ');
      os << name;
      for (const auto& s : ss) {
        std::string cell = "-";
        if (const auto* r = find(p, s)) cell = fixed(get(*r), digits);
        cell.resize(std::max<std::size_t>(s.size(), 14), ' ');
        os << cell;
      }
      os << '\n';
    }
    os << '\n';
  };
  table("PSNR (dB)", [](const MetricRow& r) { return r.psnr; }, 2);
  table("SSIM", [](const MetricRow& r) { return r.ssim; }, 4);
  os << "Statistics\n";
  for (const auto& [k, v] : stats) os << "  " << k << " = " << fixed(v, 4) << '\n';
  if (!warnings.empty()) {
    os << "\nWarnings\n";
    for (const auto& w : warnings) os << "  " << w << '\n';
  }
  return os.str();
}

MetricRow weighted_average(const std::vector<MetricRow>& rows, const std::string& policy, const std::string& label) {
  MetricRow avg{policy, label, 0, 0.0, 0.0};
  for (const auto& r : rows) {
    if (r.policy != policy || r.set.rfind("domain_", 0) != 0) continue;
    avg.count += r.count;
    avg.psnr += r.psnr * static_cast<double>(r.count);
    avg.ssim += r.ssim * static_cast<double>(r.count);
  }
  if (avg.count == 0) throw std::invalid_argument("no source rows for policy " + policy);
  avg.psnr /= static_cast<double>(avg.count);
  avg.ssim /= static_cast<double>(avg.count);
  return avg;
}

// --------------------------------------------------------------- pipeline

namespace {

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

bool stage_current(const fs::path& dir, std::uint64_t hash, const std::vector<fs::path>& artifacts) {
  const fs::path marker = dir / "stage.hash";
  if (!fs::exists(marker)) return false;
  std::string text = read_text(marker);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  if (text != hex(hash)) return false;
  for (const auto& a : artifacts)
    if (!fs::exists(a)) return false;
  return true;
}

void begin_stage(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

void finish_stage(const fs::path& dir, std::uint64_t hash) { write_text(dir / "stage.hash", hex(hash) + "\n"); }

struct Loaded {
  synthesis::DatasetManifest source_manifest;
  synthesis::DatasetManifest target_manifest;
  Dataset source;
  Dataset target;
  Split split;
};

std::string sample_stem(const fs::path& contaminated) {
  std::string stem = contaminated.stem().string();
  if (stem.size() > 2 && stem.compare(stem.size() - 2, 2, "_I") == 0) stem.resize(stem.size() - 2);
  return (contaminated.parent_path() / stem).generic_string();
}

struct EvalSet {
  std::string name;
  std::vector<const TripletSample*> samples;
  std::vector<std::string> ids;
  int in_domain = -1;  // source domain of the set, -1 for the pseudo target
};

double score_ratio(const std::vector<std::vector<double>>& scores) {
  double mx = 0.0, mn = INFINITY;
  for (const auto& v : scores)
    for (double x : v) {
      mx = std::max(mx, std::abs(x));
      mn = std::min(mn, std::abs(x));
    }
  return mx / std::max(mn, 1e-12);
}

class Pipeline {
 public:
  Pipeline(const ExperimentConfig& c, const Logger& log) : c_(c), log_(log), h_(stage_hashes(c)), root_(c.out_dir) {}

  EvalReport run() {
    fs::create_directories(root_);
    write_text(root_ / "config.snapshot", c_.to_text());
    stage("data", [&] { data(); });
    stage("experts", [&] { experts(); });
    stage("rtaw", [&] { rtaw_stage(); });
    stage("classifier", [&] { classifier(); });
    stage("eval", [&] { eval(); });
    std::string timings = "stage\thash\tskipped\tseconds\n";
    for (const auto& s : stages_) {
      timings += s.name + '\t' + hex(s.hash) + '\t' + (s.skipped ? "yes" : "no") + '\t' + fixed(s.seconds, 3) + '\n';
    }
    write_text(root_ / "timings.tsv", timings);
    report_.stages = stages_;
    return report_;
  }

 private:
  const ExperimentConfig& c_;
  const Logger& log_;
  StageHashes h_;
  fs::path root_;
  std::vector<StageInfo> stages_;
  EvalReport report_;

  std::optional<Loaded> loaded_;
  std::vector<ExpertModel> experts_;
  std::optional<ExpertModel> joint_;
  std::optional<rtaw::RTAWModule> rtaw_;
  std::optional<rtaw::RTAWModule> noide_;
  std::optional<domaingap::DomainClassifier> classifier_;

  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  template <class F>
  void stage(const std::string& name, F&& body) {
    const auto t0 = std::chrono::steady_clock::now();
    current_skipped_ = false;
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stages_.push_back({name, current_hash_, current_skipped_, secs});
  }
  bool current_skipped_ = false;
  std::uint64_t current_hash_ = 0;

  fs::path source_manifest_path() const { return root_ / "data" / "sources" / "manifest.tsv"; }
  fs::path target_manifest_path() const { return root_ / "data" / "target" / "manifest.tsv"; }

  // -------------------------------------------------------------- data
  void data() {
    const fs::path dir = root_ / "data";
    current_hash_ = h_.data;
    if (stage_current(dir, h_.data, {source_manifest_path(), target_manifest_path()})) {
      current_skipped_ = true;
      say("[data] cached");
    } else {
      begin_stage(dir);
      say("[data] synthesizing " + std::to_string(c_.samples_per_domain) + " samples for each of " +
          std::to_string(c_.sources.size()) + " source domains and " + std::to_string(c_.target_samples) +
          " pseudo-target samples");
      synthesis::generate_dataset(c_.sources, c_.samples_per_domain, mix_seed(c_.seed, 0xda7a), dir / "sources",
                                  c_.image_size);
      auto target = c_.target;
      target.domain_id = 0;
      synthesis::generate_dataset({target}, c_.target_samples, mix_seed(c_.seed, 0x7a29e7), dir / "target",
                                  c_.image_size);
      finish_stage(dir, h_.data);
    }
    Loaded l;
    l.source_manifest = synthesis::read_manifest(source_manifest_path());
    l.target_manifest = synthesis::read_manifest(target_manifest_path());
    l.source = load_dataset(l.source_manifest);
    l.target = load_dataset(l.target_manifest);
    std::vector<int> domains;
    for (const auto& s : l.source.samples) domains.push_back(s.domain_id);
    l.split = stratified_split(domains, c_.split_ratio, mix_seed(c_.seed, 0x5717));
    loaded_ = std::move(l);
  }

  backbone::BackboneConfig backbone_config() const {
    auto b = c_.backbone;
    b.seed = mix_seed(c_.seed, 0xb4c4);
    return b;
  }

  // ----------------------------------------------------------- experts
  fs::path expert_path(std::size_t i) const { return root_ / "experts" / ("expert_" + std::to_string(i) + ".ckpt"); }
  fs::path joint_path() const { return root_ / "experts" / "joint.ckpt"; }

  void experts() {
    const fs::path dir = root_ / "experts";
    const std::size_t n = c_.sources.size();
    current_hash_ = h_.experts;
    std::vector<fs::path> files{joint_path()};
    for (std::size_t i = 0; i < n; ++i) files.push_back(expert_path(i));
    if (stage_current(dir, h_.experts, files)) {
      current_skipped_ = true;
      say("[experts] cached");
      for (std::size_t i = 0; i < n; ++i) experts_.push_back(backbone::load_expert(expert_path(i)));
      joint_ = backbone::load_expert(joint_path());
      return;
    }
    begin_stage(dir);
    const auto cfg = backbone_config();
    const auto& train = loaded_->split.train;
    for (int d = -1; d < static_cast<int>(n); ++d) {
      const std::string label = d < 0 ? "joint" : "expert_" + std::to_string(d);
      say("[experts] training " + label + " for " + std::to_string(cfg.steps) + " steps");
      auto progress = [&](int step, double loss) {
        if ((step + 1) % 250 == 0) say("[experts]   " + label + " step " + std::to_string(step + 1) + " loss " + fixed(loss, 4));
      };
      auto model = backbone::train_expert(loaded_->source, train, d < 0 ? backbone::kJoint : d, cfg, progress);
      if (d < 0) {
        backbone::save_expert(model, joint_path());
        joint_ = std::move(model);
      } else {
        backbone::save_expert(model, expert_path(d));
        experts_.push_back(std::move(model));
      }
    }
    finish_stage(dir, h_.experts);
  }

  // -------------------------------------------------------------- rtaw
  rtaw::RtawConfig rtaw_config(double lambda) const {
    auto r = c_.rtaw;
    r.lambda = lambda;
    r.loss = c_.backbone.loss;
    r.seed = mix_seed(c_.seed, 0x47a1);
    return r;
  }

  void rtaw_stage() {
    const fs::path dir = root_ / "rtaw";
    const fs::path dir0 = root_ / "rtaw_noide";
    current_hash_ = h_.rtaw;
    const bool have = stage_current(dir, h_.rtaw, {dir / "rtaw.ckpt"});
    const bool have0 = !c_.noide_ablation || stage_current(dir0, h_.rtaw_noide, {dir0 / "rtaw.ckpt"});
    if (have) rtaw_ = rtaw::load_rtaw(dir / "rtaw.ckpt");
    if (have0 && c_.noide_ablation) noide_ = rtaw::load_rtaw(dir0 / "rtaw.ckpt");
    if (have && have0) {
      current_skipped_ = true;
      say("[rtaw] cached");
      return;
    }
    const auto& pool = loaded_->split.train;
    say("[rtaw] running " + std::to_string(experts_.size()) + " frozen experts over " + std::to_string(pool.size()) +
        " training images");
    std::vector<std::vector<Prediction>> outputs(pool.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(pool.size()); ++s) {
      for (const auto& e : experts_) outputs[s].push_back(backbone::predict(e, loaded_->source.samples[pool[s]].contaminated));
    }
    auto train = [&](double lambda, const fs::path& d, std::uint64_t hash, const std::string& label) {
      begin_stage(d);
      const auto cfg = rtaw_config(lambda);
      say("[rtaw] training " + label + " (lambda " + fixed(lambda, 3) + ", " + std::to_string(cfg.steps) + " steps)");
      auto progress = [&](int step, const rtaw::LodoLoss& l) {
        if ((step + 1) % 200 == 0) {
          say("[rtaw]   " + label + " step " + std::to_string(step + 1) + " rr " + fixed(l.rr, 4) + " ide " + fixed(l.ide, 4));
        }
      };
      auto m = rtaw::train_rtaw(outputs, loaded_->source, pool, cfg, progress);
      rtaw::save_rtaw(m, d / "rtaw.ckpt", lambda);
      finish_stage(d, hash);
      return m;
    };
    if (!have) rtaw_ = train(c_.rtaw.lambda, dir, h_.rtaw, "rtaw");
    if (!have0) noide_ = train(0.0, dir0, h_.rtaw_noide, "rtaw without IDE loss");
  }

  // -------------------------------------------------------- classifier
  domaingap::ClassifierConfig classifier_config() const {
    auto k = c_.classifier;
    k.seed = mix_seed(c_.seed, 0xc1a55);
    return k;
  }

  void classifier() {
    const fs::path dir = root_ / "classifier";
    current_hash_ = h_.classifier;
    if (stage_current(dir, h_.classifier, {dir / "classifier.ckpt"})) {
      current_skipped_ = true;
      say("[classifier] cached");
      classifier_ = domaingap::load_classifier(dir / "classifier.ckpt");
      return;
    }
    begin_stage(dir);
    const auto cfg = classifier_config();
    say("[classifier] training the domain classifier for " + std::to_string(cfg.steps) + " steps");
    auto trained = domaingap::train_classifier(loaded_->source, loaded_->split, cfg);
    domaingap::save_classifier(trained.classifier, dir / "classifier.ckpt");
    const auto acc = domaingap::accuracy_report(trained.classifier, loaded_->source, loaded_->split);
    write_text(dir / "accuracy.txt", acc.to_text());
    say("[classifier] overall accuracy " + fixed(100.0 * acc.overall(), 1) + "%");
    classifier_ = std::move(trained.classifier);
    finish_stage(dir, h_.classifier);
  }

  // -------------------------------------------------------------- eval
  std::vector<EvalSet> eval_sets() const {
    std::vector<EvalSet> sets;
    const auto& l = *loaded_;
    for (std::size_t d = 0; d < c_.sources.size(); ++d) sets.push_back({"domain_" + std::to_string(d), {}, {}, static_cast<int>(d)});
    for (auto i : l.split.test) {
      auto& s = sets.at(l.source.samples[i].domain_id);
      s.samples.push_back(&l.source.samples[i]);
      s.ids.push_back(s.name + "/" + sample_stem(l.source_manifest.records[i].contaminated));
    }
    EvalSet t{kTargetSet, {}, {}, -1};
    for (std::size_t i = 0; i < l.target.samples.size(); ++i) {
      t.samples.push_back(&l.target.samples[i]);
      t.ids.push_back(t.name + "/" + sample_stem(l.target_manifest.records[i].contaminated));
    }
    sets.push_back(std::move(t));
    return sets;
  }

  static MetricRow metrics(const std::string& policy, const EvalSet& set, const std::vector<Prediction>& preds) {
    std::vector<double> p(preds.size()), s(preds.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(preds.size()); ++k) {
      p[k] = psnr(preds[k].transmission, set.samples[k]->transmission);
      s[k] = ssim(preds[k].transmission, set.samples[k]->transmission);
    }
    MetricRow r{policy, set.name, preds.size(), 0.0, 0.0};
    for (std::size_t k = 0; k < preds.size(); ++k) {
      r.psnr += p[k];
      r.ssim += s[k];
    }
    r.psnr /= static_cast<double>(preds.size());
    r.ssim /= static_cast<double>(preds.size());
    return r;
  }

  void weight_stats(const std::string& prefix, const rtaw::RTAWModule& m, const std::vector<EvalSet>& sets,
                    std::vector<std::pair<std::string, double>>& stats) const {
    std::vector<std::vector<double>> all_scores;
    for (const auto& set : sets) {
      if (set.in_domain < 0) continue;
      std::vector<std::vector<double>> scores(set.samples.size());
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(scores.size()); ++k) {
        scores[k] = rtaw::expertise_scores(m, set.samples[k]->contaminated);
      }
      double mean_w = 0.0;
      std::size_t argmax_hits = 0;
      for (const auto& v : scores) {
        const auto w = rtaw::softmax_weights(v);
        mean_w += w[set.in_domain];
        if (domaingap::predicted_domain(w) == set.in_domain) ++argmax_hits;
        all_scores.push_back(v);
      }
      const double n = static_cast<double>(scores.size());
      stats.emplace_back(prefix + ".in_domain_weight." + set.name, mean_w / n);
      stats.emplace_back(prefix + ".in_domain_argmax." + set.name, static_cast<double>(argmax_hits) / n);
    }
    double abs_max = 0.0, abs_sum = 0.0, cnt = 0.0;
    for (const auto& v : all_scores)
      for (double x : v) {
        abs_max = std::max(abs_max, std::abs(x));
        abs_sum += std::abs(x);
        cnt += 1.0;
      }
    stats.emplace_back(prefix + ".score_abs_max", abs_max);
    stats.emplace_back(prefix + ".score_abs_mean", abs_sum / cnt);
    stats.emplace_back(prefix + ".score_max_min_ratio", score_ratio(all_scores));
  }

  void save_grid(const EvalSet& set, const std::vector<std::vector<Prediction>>& outputs,
                 const std::vector<Prediction>& joint, const std::vector<Prediction>* of,
                 const std::vector<Prediction>* ni, const fs::path& path) const {
    const std::size_t rows = std::min<std::size_t>(c_.grid_samples, set.samples.size());
    if (rows == 0) return;
    std::vector<Image> lines;
    for (std::size_t k = 0; k < rows; ++k) {
      std::vector<Image> tiles{set.samples[k]->contaminated};
      for (const auto& p : outputs[k]) tiles.push_back(p.transmission);
      tiles.push_back(joint[k].transmission);
      if (of) tiles.push_back((*of)[k].transmission);
      if (ni) tiles.push_back((*ni)[k].transmission);
      tiles.push_back(set.samples[k]->transmission);
      for (auto& t : tiles) t.clamp01();
      lines.push_back(hconcat(tiles));
    }
    fs::create_directories(path.parent_path());
    save_png(vconcat(lines), path);
  }

  void eval() {
    const fs::path dir = root_ / "eval";
    current_hash_ = h_.eval;
    if (stage_current(dir, h_.eval, {dir / "report.tsv", dir / "report.txt"})) {
      current_skipped_ = true;
      say("[eval] cached");
      report_ = EvalReport::from_tsv(read_text(dir / "report.tsv"));
      return;
    }
    begin_stage(dir);
    const std::size_t n = experts_.size();
    EvalReport rep;
    if (!synthesis::ranges_disjoint(c_.target, c_.sources)) {
      for (const auto& s : c_.sources) {
        std::vector<std::string> hit;
        if (c_.target.omega.overlaps(s.omega)) hit.push_back("omega");
        if (c_.target.phi.overlaps(s.phi)) hit.push_back("phi");
        if (c_.target.blur_sigma.overlaps(s.blur_sigma)) hit.push_back("blur");
        if (hit.empty()) continue;
        std::string w = "pseudo-target ranges overlap source domain " + std::to_string(s.domain_id) + " in";
        for (const auto& h : hit) w += " " + h;
        rep.warnings.push_back(w);
      }
    }

    const auto sets = eval_sets();
    std::vector<std::string> labels{"joint"};
    for (std::size_t i = 0; i < n; ++i) labels.push_back("expert_" + std::to_string(i));
    std::map<std::string, std::vector<MetricRow>> by_policy;

    for (const auto& set : sets) {
      if (set.samples.empty()) continue;
      say("[eval] " + set.name + " (" + std::to_string(set.samples.size()) + " images)");
      std::vector<Image> images;
      for (const auto* s : set.samples) images.push_back(s->contaminated);
      const std::size_t m = images.size();
      std::vector<std::vector<Prediction>> outputs(m);
      std::vector<Prediction> joint(m);
#pragma omp parallel for schedule(dynamic)
      for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(m); ++k) {
        for (const auto& e : experts_) outputs[k].push_back(backbone::predict(e, images[k]));
        joint[k] = backbone::predict(*joint_, images[k]);
      }
      by_policy["joint"].push_back(metrics("joint", set, joint));
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<Prediction> single(m);
        for (std::size_t k = 0; k < m; ++k) single[k] = outputs[k][i];
        by_policy[labels[i + 1]].push_back(metrics(labels[i + 1], set, single));
      }

      combine::PolicyInputs in;
      in.experts = experts_;
      in.rtaw = &*rtaw_;
      in.classifier = &*classifier_;
      in.images = images;
      in.ids = set.ids;
      in.expert_outputs = &outputs;
      std::map<std::string, std::vector<Prediction>> kept;
      for (const auto& p : c_.policies) {
        const std::string label = p.label();
        auto run = combine::run_policy(p, in);
        write_text(dir / "weights" / (label + "__" + set.name + ".log"), run.weight_log_text());
        by_policy[label].push_back(metrics(label, set, run.predictions));
        if (label == "OF" || label == "NI") kept[label] = std::move(run.predictions);
      }
      if (noide_) {
        in.rtaw = &*noide_;
        auto run = combine::run_policy({combine::Mode::OF, combine::Level::Image, combine::Source::Rtaw}, in);
        write_text(dir / "weights" / ("OF-noIDE__" + set.name + ".log"), run.weight_log_text());
        by_policy["OF-noIDE"].push_back(metrics("OF-noIDE", set, run.predictions));
      }
      save_grid(set, outputs, joint, kept.count("OF") ? &kept["OF"] : nullptr, kept.count("NI") ? &kept["NI"] : nullptr,
                dir / "grids" / (set.name + ".png"));
    }

    std::vector<std::string> order = labels;
    for (const auto& p : c_.policies)
      if (std::find(order.begin(), order.end(), p.label()) == order.end()) order.push_back(p.label());
    if (noide_) order.push_back("OF-noIDE");
    for (const auto& label : order) {
      auto rows = by_policy.at(label);
      MetricRow target;
      bool has_target = false;
      for (auto& r : rows) {
        if (r.set == kTargetSet) {
          target = r;
          has_target = true;
        } else {
          rep.rows.push_back(r);
        }
      }
      rep.rows.push_back(weighted_average(rows, label, kSourceAvg));
      if (has_target) rep.rows.push_back(target);
    }

    std::vector<std::string> set_names;
    for (const auto& s : sets) set_names.push_back(s.name);
    set_names.insert(set_names.end() - 1, kSourceAvg);
    for (const char* combo : {"OF", "NI"}) {
      if (!rep.find(combo, kTargetSet)) continue;
      for (const auto& s : set_names) {
        rep.stats.emplace_back(std::string("delta.") + combo + "-joint." + s, rep.row(combo, s).psnr - rep.row("joint", s).psnr);
      }
    }
    {
      double best = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) best = std::max(best, rep.row(labels[i + 1], kTargetSet).psnr);
      rep.stats.emplace_back("target.best_expert_psnr", best);
      rep.stats.emplace_back("target.disjoint", synthesis::ranges_disjoint(c_.target, c_.sources) ? 1.0 : 0.0);
    }
    weight_stats("rtaw", *rtaw_, sets, rep.stats);
    if (noide_) weight_stats("noide", *noide_, sets, rep.stats);
    const auto acc = domaingap::accuracy_report(*classifier_, loaded_->source, loaded_->split);
    for (std::size_t d = 0; d < n; ++d) rep.stats.emplace_back("classifier.accuracy.domain_" + std::to_string(d), acc.accuracy(static_cast<int>(d)));
    rep.stats.emplace_back("classifier.accuracy.total", acc.overall());

    // Normalise through the file form so cached and fresh runs return the same values.
    const std::string tsv = rep.to_tsv();
    report_ = EvalReport::from_tsv(tsv);
    write_text(dir / "report.tsv", tsv);
    write_text(dir / "report.txt", report_.to_text() + "\nDomain classifier\n" + acc.to_text());
    finish_stage(dir, h_.eval);
  }
};

}  // namespace

EvalReport run_pipeline(const ExperimentConfig& config, const Logger& log) {
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  Pipeline p(config, log);
  return p.run();
}

EvalReport pseudo_target_eval(const ExperimentConfig& config, const Logger& log) {
  const EvalReport full = run_pipeline(config, log);
  EvalReport out;
  for (const auto& r : full.rows)
    if (r.set == kTargetSet) out.rows.push_back(r);
  const std::string suffix = std::string(".") + kTargetSet;
  for (const auto& [k, v] : full.stats) {
    if ((k.size() > suffix.size() && k.compare(k.size() - suffix.size(), suffix.size(), suffix) == 0) ||
        k.rfind("target.", 0) == 0) {
      out.stats.emplace_back(k, v);
    }
  }
  out.warnings = full.warnings;
  out.stages = full.stages;
  return out;
}

}  // namespace adanec::harness
