#include <doctest.h>

#include <cmath>

#include "adanec/combination.hpp"
#include "test_util.hpp"

using namespace adanec;
using namespace adanec::combine;

namespace {

std::vector<ExpertModel> nonlinear_experts(std::size_t n) {
  std::vector<ExpertModel> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(backbone::init_expert(backbone::build_arch(8, 4), 30 + i, int(i)));
  return out;
}

WeightVector random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2, 2);
  return rtaw::softmax_weights(v);
}

}  // namespace

TEST_CASE("OF and NI collapse to the selected expert for one-hot weights") {
  const auto experts = nonlinear_experts(3);
  const Image img = testutil::random_image(16, 16, 1);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto ref = backbone::predict(experts[k], img);
    const auto of = combine_of(experts, img, rtaw::one_hot(3, k));
    const auto ni = combine_ni(experts, img, rtaw::one_hot(3, k));
    CHECK(of.transmission == ref.transmission);
    CHECK(ni.transmission == ref.transmission);
    CHECK(ni.reflection == ref.reflection);
    CHECK(interpolate_params(experts, rtaw::one_hot(3, k)).params == experts[k].params);
  }
}

TEST_CASE("identical experts make the weights irrelevant") {
  const auto base = nonlinear_experts(1).front();
  const std::vector<ExpertModel> same{base, base, base};
  const Image img = testutil::random_image(16, 16, 2);
  Rng rng(3);
  const auto ref = backbone::predict(base, img);
  const auto w = random_simplex(3, rng);
  CHECK(testutil::max_abs_diff(combine_of(same, img, w).transmission, ref.transmission) < 1e-12);
  CHECK(testutil::max_abs_diff(combine_ni(same, img, w).transmission, ref.transmission) < 1e-12);
}

TEST_CASE("OF equals a per-pixel weighted-sum oracle") {
  const auto experts = nonlinear_experts(3);
  const Image img = testutil::random_image(16, 16, 4);
  Rng rng(5);
  const auto w = random_simplex(3, rng);
  const auto of = combine_of(experts, img, w);
  std::vector<Prediction> p;
  for (const auto& e : experts) p.push_back(backbone::predict(e, img));
  for (std::size_t i = 0; i < of.transmission.size(); ++i) {
    const double t = w[0] * p[0].transmission.data()[i] + w[1] * p[1].transmission.data()[i] +
                     w[2] * p[2].transmission.data()[i];
    CHECK(of.transmission.data()[i] == doctest::Approx(t).epsilon(1e-13));
  }
  CHECK_THROWS(combine_of(experts, img, rtaw::uniform_weights(2)));
}

TEST_CASE("interpolation arithmetic, convexity and errors") {
  auto experts = nonlinear_experts(2);
  experts[0].params.flat(0) = 0.2;
  experts[1].params.flat(0) = 0.6;
  const auto mid = interpolate_params(experts, rtaw::uniform_weights(2));
  CHECK(mid.params.flat(0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(mid.meta.interpolation_weights == std::vector<double>{0.5, 0.5});
  Rng rng(6);
  auto three = nonlinear_experts(3);
  const auto w = random_simplex(3, rng);
  const auto m = interpolate_params(three, w);
  for (std::size_t i = 0; i < m.params.total(); ++i) {
    const double lo = std::min({three[0].params.flat(i), three[1].params.flat(i), three[2].params.flat(i)});
    const double hi = std::max({three[0].params.flat(i), three[1].params.flat(i), three[2].params.flat(i)});
    CHECK(m.params.flat(i) >= lo - 1e-15);
    CHECK(m.params.flat(i) <= hi + 1e-15);
  }
  CHECK_THROWS(interpolate_params(three, WeightVector{{0.5, 0.6, -0.1}, std::nullopt}));
  std::vector<ExpertModel> mixed{three[0], backbone::init_expert(backbone::build_arch(12, 4), 1)};
  try {
    interpolate_params(mixed, rtaw::uniform_weights(2));
    FAIL("expected an arch mismatch");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("enc0.weight") != std::string::npos);
  }
}

TEST_CASE("NI equals OF for an affine architecture") {
  const std::vector<ExpertModel> experts{testutil::affine_expert(1), testutil::affine_expert(2)};
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testutil::random_image(8, 8, 100 + trial);
    const auto w = random_simplex(2, rng);
    const auto of = combine_of(experts, img, w);
    const auto ni = combine_ni(experts, img, w);
    worst = std::max({worst, testutil::max_abs_diff(of.transmission, ni.transmission),
                      testutil::max_abs_diff(of.reflection, ni.reflection)});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("NI differs from OF for a nonlinear network (pinned regression value)") {
  const auto experts = nonlinear_experts(2);
  const Image img = synthesis::procedural_image(16, 16, 8);
  const WeightVector w{{0.3, 0.7}, std::nullopt};
  const double diff = testutil::max_abs_diff(combine_of(experts, img, w).transmission,
                                             combine_ni(experts, img, w).transmission);
  CHECK(diff > 1e-6);
  CHECK(diff == doctest::Approx(0.066288660672537969).epsilon(1e-9));
}

TEST_CASE("mean and domain-level weights") {
  const std::vector<WeightVector> ws{{{1.0, 0.0}, std::nullopt}, {{0.0, 1.0}, std::nullopt}};
  CHECK(mean_weights(ws).weights == std::vector<double>{0.5, 0.5});
  CHECK_THROWS(mean_weights(std::vector<WeightVector>{}));
  rtaw::RtawConfig cfg;
  cfg.extractor_channels = {4};
  cfg.feature_dim = 8;
  cfg.proj_dim = 4;
  const auto m = rtaw::init_rtaw(3, cfg, 2);
  std::vector<Image> imgs;
  for (int i = 0; i < 10; ++i) imgs.push_back(testutil::random_image(16, 16, 40 + i));
  const auto d = domain_weights(m, imgs);
  std::vector<double> oracle(3, 0.0);
  for (const auto& im : imgs) {
    const auto w = rtaw::predict_weights(m, im);
    for (int k = 0; k < 3; ++k) oracle[k] += w[k] / 10.0;
  }
  for (int k = 0; k < 3; ++k) CHECK(d[k] == doctest::Approx(oracle[k]).epsilon(1e-14));
  CHECK(d.on_simplex());
  CHECK(domain_weights(m, std::span<const Image>(imgs.data(), 1)).weights == rtaw::predict_weights(m, imgs[0]).weights);
  CHECK_THROWS(domain_weights(m, std::vector<Image>{}));
}

TEST_CASE("policy text round trip and labels") {
  for (const auto& p : {CombinationPolicy{Mode::OF, Level::Image, Source::Rtaw},
                        CombinationPolicy{Mode::NI, Level::Domain, Source::Classifier},
                        CombinationPolicy{Mode::OF, Level::Domain, Source::Uniform}}) {
    CHECK(CombinationPolicy::parse(p.to_text()) == p);
  }
  CHECK(CombinationPolicy::parse("ni:image:rtaw").label() == "NI");
  CHECK(CombinationPolicy::parse("of:domain:uniform").label() == "OF-domain-uniform");
  CHECK_THROWS(CombinationPolicy::parse("of:image"));
  CHECK_THROWS(CombinationPolicy::parse("xx:image:rtaw"));
}

TEST_CASE("run_policy: dispatch, weight logs and sources") {
  const auto experts = nonlinear_experts(3);
  std::vector<Image> imgs;
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) {
    imgs.push_back(testutil::random_image(16, 16, 60 + i));
    ids.push_back("img" + std::to_string(i));
  }
  rtaw::RtawConfig cfg;
  cfg.extractor_channels = {4};
  cfg.feature_dim = 8;
  cfg.proj_dim = 4;
  const auto m = rtaw::init_rtaw(3, cfg, 2);
  domaingap::ClassifierConfig ccfg;
  ccfg.channels = {4, 4};
  ccfg.input_size = 16;
  const auto cls = domaingap::init_classifier(3, ccfg, 5);

  PolicyInputs in;
  in.experts = experts;
  in.images = imgs;
  in.ids = ids;

  const auto uni = run_policy({Mode::OF, Level::Image, Source::Uniform}, in);
  REQUIRE(uni.weight_log.size() == 4);
  for (const auto& [id, w] : uni.weight_log)
    for (double x : w.weights) CHECK(x == 1.0 / 3.0);
  CHECK(uni.weight_log_text().substr(0, 31) == "img0\t0.333333,0.333333,0.333333");

  CHECK_THROWS(run_policy({Mode::OF, Level::Image, Source::Rtaw}, in));
  CHECK_THROWS(run_policy({Mode::OF, Level::Image, Source::Classifier}, in));
  in.rtaw = &m;
  in.classifier = &cls;

  const auto img_level = run_policy({Mode::NI, Level::Image, Source::Rtaw}, in);
  CHECK(img_level.weight_log.size() == 4);
  CHECK(img_level.weight_log[2].second.weights == rtaw::predict_weights(m, imgs[2]).weights);
  const auto dom = run_policy({Mode::NI, Level::Domain, Source::Rtaw}, in);
  REQUIRE(dom.weight_log.size() == 1);
  CHECK(dom.weight_log[0].first == "DOMAIN");
  CHECK(dom.weight_log[0].second.weights == domain_weights(m, imgs).weights);
  CHECK(dom.predictions.size() == 4);

  const auto post = run_policy({Mode::OF, Level::Image, Source::Classifier}, in);
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    CHECK(post.weight_log[k].second.weights == domaingap::classify(cls, imgs[k]).weights);
  }

  const auto base = experts.front();
  const std::vector<ExpertModel> same{base, base, base};
  in.experts = same;
  const auto u = run_policy({Mode::OF, Level::Image, Source::Uniform}, in);
  const auto single = backbone::predict(base, imgs[1]);
  CHECK(testutil::max_abs_diff(u.predictions[1].transmission, single.transmission) < 1e-12);
}
