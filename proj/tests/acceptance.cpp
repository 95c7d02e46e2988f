// Acceptance run: one PASS/FAIL line per criterion; exit status 1 if any fails.
// Usage: adanec_acceptance <work_dir>; the summary is also written to <work_dir>/acceptance.txt.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "adanec/combination.hpp"
#include "adanec/harness.hpp"
#include "adanec/losses.hpp"
#include "adanec/rtaw.hpp"
#include "test_util.hpp"

using namespace adanec;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 1. Simplex suite.
Outcome simplex_suite() {
  const auto t0 = Clock::now();
  Rng rng(1);
  double worst_sum = 0, worst_shift = 0, worst_comp = 0;
  bool positive = true;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.below(9);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-50.0, 50.0);
    const auto w = rtaw::softmax_weights(v);
    double sum = 0;
    for (double x : w.weights) {
      sum += x;
      positive = positive && x > 0.0;
    }
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

    const double c = rng.uniform(-100.0, 100.0);
    std::vector<double> shifted = v;
    for (double& x : shifted) x += c;
    const auto ws = rtaw::softmax_weights(shifted);
    for (std::size_t k = 0; k < n; ++k) worst_shift = std::max(worst_shift, std::abs(ws[k] - w[k]));

    const int excl = static_cast<int>(rng.below(n));
    const auto comp = rtaw::softmax_weights(v, excl);
    std::vector<double> kept;
    for (std::size_t k = 0; k < n; ++k)
      if (static_cast<int>(k) != excl) kept.push_back(v[k]);
    const auto ref = rtaw::softmax_weights(kept);
    // compact entries follow the kept order; the expanded view has 0 at the excluded expert
    if (comp.size() != n - 1 || comp.excluded_index != excl) worst_comp = 1.0;
    for (std::size_t j = 0; j < kept.size() && j < comp.size(); ++j)
      worst_comp = std::max(worst_comp, std::abs(comp[j] - ref[j]));
    const auto full = comp.expanded();
    worst_comp = std::max(worst_comp, std::abs(full.at(excl)));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_sum <= 1e-6 && positive && worst_shift <= 1e-9 && worst_comp <= 1e-12 && secs < 5.0;
  o.detail = "sum err " + fmt("%.2e", worst_sum) + ", shift err " + fmt("%.2e", worst_shift) + ", complement err " +
             fmt("%.2e", worst_comp) + (positive ? ", positive" : ", NOT positive") + ", " + fmt("%.2f s", secs);
  return o;
}

// 2. One-hot degeneracy on the trained experts of a pipeline run.
Outcome one_hot_degeneracy(const fs::path& run) {
  std::vector<backbone::ExpertModel> experts;
  for (int i = 0; i < 3; ++i) experts.push_back(backbone::load_expert(run / "experts" / ("expert_" + std::to_string(i) + ".ckpt")));
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Image img = testutil::random_image(64, 64, mix_seed(2, t));
    for (std::size_t k = 0; k < 3; ++k) {
      const auto ref = backbone::predict(experts[k], img);
      const auto w = rtaw::one_hot(3, k);
      const auto of = combine::combine_of(experts, img, w);
      const auto ni = combine::combine_ni(experts, img, w);
      worst = std::max({worst, testutil::max_abs_diff(of.transmission, ref.transmission),
                        testutil::max_abs_diff(of.reflection, ref.reflection),
                        testutil::max_abs_diff(ni.transmission, ref.transmission),
                        testutil::max_abs_diff(ni.reflection, ref.reflection)});
    }
  }
  return {worst <= 1e-6, "max |combined - expert| " + fmt("%.2e", worst) + " over 20 images x 3 experts"};
}

// 3. Affine NI == OF.
Outcome affine_oracle() {
  const std::vector<backbone::ExpertModel> experts{testutil::affine_expert(31), testutil::affine_expert(32)};
  Rng rng(3);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const double a = rng.uniform();
    const rtaw::WeightVector w{{a, 1.0 - a}};
    const Image img = testutil::random_image(16, 16, mix_seed(3, t));
    const auto of = combine::combine_of(experts, img, w);
    const auto ni = combine::combine_ni(experts, img, w);
    worst = std::max({worst, testutil::max_abs_diff(of.transmission, ni.transmission),
                      testutil::max_abs_diff(of.reflection, ni.reflection)});
  }
  return {worst < 1e-5, "max |NI - OF| " + fmt("%.2e", worst) + " over 50 trials"};
}

// 4. Gradient checks on the miniature RTAW and backbone.
Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const double h = 1e-4;
  double worst_rtaw = 0.0, worst_bb = 0.0;

  rtaw::RtawConfig cfg;
  cfg.extractor_channels = {4};
  cfg.feature_dim = 8;
  cfg.proj_dim = 4;
  rtaw::RTAWModule m = rtaw::init_rtaw(3, cfg, 7);
  const TripletSample s = testutil::random_sample(16, 11, 1);
  std::vector<Prediction> outs;
  for (std::size_t i = 0; i < 3; ++i) {
    outs.push_back({testutil::random_image(16, 16, mix_seed(12, i, 1)),
                    testutil::random_image(16, 16, mix_seed(12, i, 2), 0.0, 0.5)});
  }
  rtaw::RTAWModule grads = m;
  for (auto* p : grads.parts()) p->fill(0.0);
  rtaw::lodo_loss(m, s, outs, 0.1, LossConfig{}, &grads);
  auto parts = m.parts();
  auto gparts = grads.parts();
  Rng rng(13);
  for (int k = 0; k < 20; ++k) {
    const std::size_t part = rng.below(parts.size());
    const std::size_t i = rng.below(parts[part]->total());
    double& x = parts[part]->flat(i);
    const double keep = x;
    x = keep + h;
    const double up = rtaw::lodo_loss(m, s, outs, 0.1, LossConfig{}, nullptr).total;
    x = keep - h;
    const double down = rtaw::lodo_loss(m, s, outs, 0.1, LossConfig{}, nullptr).total;
    x = keep;
    worst_rtaw = std::max(worst_rtaw, testutil::rel_err(gparts[part]->flat(i), (up - down) / (2 * h), 1e-8));
  }

  nn::Network net(testutil::mini_backbone_arch());
  nn::ParamSet params = net.init_params(21);
  const TripletSample bs = testutil::random_sample(8, 5);
  nn::ParamSet bgrads = net.make_params();
  bgrads.fill(0.0);
  backbone::sample_loss(net, params, bs, LossConfig{}, &bgrads);
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = rng.below(params.total());
    const double keep = params.flat(i);
    params.flat(i) = keep + h;
    const double up = backbone::sample_loss(net, params, bs, LossConfig{}, nullptr);
    params.flat(i) = keep - h;
    const double down = backbone::sample_loss(net, params, bs, LossConfig{}, nullptr);
    params.flat(i) = keep;
    worst_bb = std::max(worst_bb, testutil::rel_err(bgrads.flat(i), (up - down) / (2 * h), 1e-8));
  }
  const double secs = seconds_since(t0);
  return {worst_rtaw < 1e-4 && worst_bb < 1e-4 && secs < 60.0,
          "max rel err rtaw " + fmt("%.2e", worst_rtaw) + ", backbone " + fmt("%.2e", worst_bb) + ", " +
              fmt("%.2f s", secs)};
}

// 5. LODO structural zero.
Outcome lodo_structure() {
  rtaw::RtawConfig cfg;
  cfg.extractor_channels = {4};
  cfg.feature_dim = 8;
  cfg.proj_dim = 4;
  const auto m = rtaw::init_rtaw(3, cfg, 6);
  bool ok = true;
  double ide_grad = 0.0;
  for (int t = 0; t < 10; ++t) {
    const TripletSample s = testutil::random_sample(16, 50 + t, t % 3);
    std::vector<Prediction> outs;
    for (std::size_t i = 0; i < 3; ++i) {
      outs.push_back({testutil::random_image(16, 16, mix_seed(90 + t, i, 1)),
                      testutil::random_image(16, 16, mix_seed(90 + t, i, 2), 0.0, 0.5)});
    }
    const auto l = rtaw::lodo_loss(m, s, outs, 0.1, LossConfig{}, nullptr);
    ok = ok && l.d_scores_rr[s.domain_id] == 0.0;
    // the IDE term still reaches the in-domain score: d(-log w_k)/dv_k = w_k - 1
    ide_grad = std::max(ide_grad, std::abs(rtaw::softmax_weights(l.scores)[s.domain_id] - 1.0));
  }
  return {ok && ide_grad > 0.0, std::string(ok ? "dL_RR/dv_in == 0 exactly" : "nonzero dL_RR/dv_in") +
                                    " on 10 samples; IDE gradient magnitude up to " + fmt("%.3f", ide_grad)};
}

struct RunResult {
  harness::EvalReport report;
  double seconds = 0.0;
};

RunResult run_full(const fs::path& dir) {
  fs::remove_all(dir);
  ExperimentConfig cfg;
  cfg.out_dir = dir;
  const auto t0 = Clock::now();
  RunResult r;
  r.report = harness::run_pipeline(cfg, [](const std::string& line) { std::fprintf(stderr, "  %s\n", line.c_str()); });
  r.seconds = seconds_since(t0);
  return r;
}

double stage_seconds(const harness::EvalReport& r, const std::string& name) {
  for (const auto& s : r.stages)
    if (s.name == name) return s.seconds;
  return 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "adanec_acceptance";
  fs::create_directories(work);
  fs::remove(work / "acceptance.txt");
  std::vector<Outcome> out(10);
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what()};
    }
  };

  out[0] = guarded(simplex_suite);
  out[2] = guarded(affine_oracle);
  out[3] = guarded(gradient_checks);
  out[4] = guarded(lodo_structure);

  std::fprintf(stderr, "full pipeline run A\n");
  RunResult a, b;
  bool runs_ok = true;
  std::string run_error;
  try {
    a = run_full(work / "run_a");
    std::fprintf(stderr, "full pipeline run B\n");
    b = run_full(work / "run_b");
  } catch (const std::exception& e) {
    runs_ok = false;
    run_error = e.what();
  }

  if (!runs_ok) {
    for (int k : {1, 5, 6, 7, 8, 9}) out[k] = {false, "pipeline failed: " + run_error};
  } else {
    const auto& r = a.report;
    out[1] = guarded([&] { return one_hot_degeneracy(work / "run_a"); });

    out[5] = guarded([&] {
      const double acc = r.stat("classifier.accuracy.total");
      const double secs = stage_seconds(r, "data") + stage_seconds(r, "classifier");
      std::string per;
      for (int d = 0; d < 3; ++d) per += fmt(" %.1f%%", 100 * r.stat("classifier.accuracy.domain_" + std::to_string(d)));
      return Outcome{acc >= 0.70 && secs < 300.0,
                     "overall " + fmt("%.1f%%", 100 * acc) + " (per domain" + per + "), data+classifier " +
                         fmt("%.1f s", secs)};
    });

    out[6] = guarded([&] {
      Outcome o;
      for (int i = 0; i < 3; ++i) {
        const std::string e = "expert_" + std::to_string(i);
        const double in = r.row(e, "domain_" + std::to_string(i)).psnr;
        double cross = 0.0;
        for (int d = 0; d < 3; ++d)
          if (d != i) cross += r.row(e, "domain_" + std::to_string(d)).psnr / 2.0;
        o.pass = o.pass && in >= cross;
        o.detail += (i ? ", " : "") + e + " in " + fmt("%.2f", in) + " vs cross " + fmt("%.2f", cross);
      }
      return o;
    });

    out[7] = guarded([&] {
      Outcome o;
      for (int d = 0; d < 3; ++d) {
        const std::string k = "domain_" + std::to_string(d);
        const double w = r.stat("rtaw.in_domain_weight." + k);
        const double top = r.stat("rtaw.in_domain_argmax." + k);
        o.pass = o.pass && w > 1.0 / 3.0 && top >= 0.6;
        o.detail += (d ? ", " : "") + k + " weight " + fmt("%.3f", w) + " argmax " + fmt("%.0f%%", 100 * top);
      }
      return o;
    });

    out[8] = guarded([&] {
      const std::string t = harness::kTargetSet;
      const double of = r.row("OF", t).psnr;
      const double joint = r.row("joint", t).psnr;
      double best = -1e9;
      for (int i = 0; i < 3; ++i) best = std::max(best, r.row("expert_" + std::to_string(i), t).psnr);
      const double d_of = r.stat("delta.OF-joint." + t);
      const double d_ni = r.stat("delta.NI-joint." + t);
      return Outcome{of >= best && of >= joint - 0.1 && a.seconds < 1800.0,
                     "OF " + fmt("%.2f", of) + " dB, best expert " + fmt("%.2f", best) + ", joint " +
                         fmt("%.2f", joint) + ", deltas OF " + fmt("%+.2f", d_of) + " NI " + fmt("%+.2f", d_ni) +
                         ", pipeline " + fmt("%.0f s", a.seconds)};
    });

    out[9] = guarded([&] {
      const std::string ta = read_file(work / "run_a" / "eval" / "report.tsv");
      const std::string tb = read_file(work / "run_b" / "eval" / "report.tsv");
      const bool txt = read_file(work / "run_a" / "eval" / "report.txt") == read_file(work / "run_b" / "eval" / "report.txt");
      return Outcome{!ta.empty() && ta == tb && txt,
                     std::string(ta == tb ? "report.tsv identical" : "report.tsv differs") +
                         (txt ? ", report.txt identical" : ", report.txt differs") + " (" +
                         std::to_string(ta.size()) + " bytes)"};
    });
  }

  bool all = true;
  std::ostringstream summary;
  for (int k = 0; k < 10; ++k) {
    char head[32];
    std::snprintf(head, sizeof head, "criterion %2d: %s  ", k + 1, out[k].pass ? "PASS" : "FAIL");
    summary << head << out[k].detail << '\n';
    all = all && out[k].pass;
  }
  std::fputs(summary.str().c_str(), stdout);
  std::fflush(stdout);
  std::ofstream(work / "acceptance.txt") << summary.str();
  return all ? 0 : 1;
}
