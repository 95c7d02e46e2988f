#include <doctest.h>

#include <cmath>
#include <set>

#include "adanec/domaingap.hpp"
#include "test_util.hpp"

using namespace adanec;
using namespace adanec::domaingap;

namespace {

// Domain 0 dark noise, domain 1 bright noise: separable by mean intensity.
Dataset brightness_dataset(int per_domain, int size) {
  Dataset d;
  d.num_domains = 2;
  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < per_domain; ++i) {
      TripletSample s;
      s.contaminated = testutil::random_image(size, size, mix_seed(k, i), k == 0 ? 0.0 : 0.5, k == 0 ? 0.5 : 1.0);
      s.transmission = s.contaminated;
      s.reflection = Image(size, size, 0.0);
      s.domain_id = k;
      d.samples.push_back(std::move(s));
    }
  return d;
}

ClassifierConfig tiny_config() {
  ClassifierConfig c;
  c.channels = {4, 8};
  c.input_size = 16;
  c.steps = 200;
  c.batch = 4;
  c.lr = 1e-2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("classifier architecture has the closed-form parameter count") {
  const auto arch = build_classifier_arch({4, 8}, 3);
  // conv1 3->4 k3, conv2 4->8 k3, fc 8->3 k1
  CHECK(arch.param_count() == (3 * 4 * 9 + 4) + (4 * 8 * 9 + 8) + (8 * 3 + 3));
  CHECK(arch.outputs == std::vector<std::string>{"fc"});
  CHECK_THROWS_AS(build_classifier_arch({}, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_classifier_arch({4}, 1), std::invalid_argument);
}

TEST_CASE("zero-weight classifier gives the uniform posterior") {
  auto c = init_classifier(3, tiny_config(), 1);
  c.params.fill(0.0);
  const auto p = classify(c, testutil::random_image(16, 16, 2));
  for (std::size_t k = 0; k < 3; ++k) CHECK(p[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(predicted_domain(p) == 0);
}

TEST_CASE("single-conv classifier matches a hand-computed forward pass") {
  ClassifierConfig cfg = tiny_config();
  cfg.channels = {1};
  cfg.input_size = 4;
  auto c = init_classifier(2, cfg, 1);
  c.params.fill(0.0);
  // Centre tap on channel 0: with same padding and stride 2 the conv reads pixels (2y, 2x).
  auto& w = c.params.get("conv1.weight").values;
  w[0 * 9 + 4] = 2.0;
  c.params.get("conv1.bias").values[0] = -0.5;
  c.params.get("fc.weight").values = {1.5, -1.0};
  c.params.get("fc.bias").values = {0.25, 0.0};

  const Image img = testutil::random_image(4, 4, 11);
  double pooled = 0.0;
  for (int y = 0; y < 4; y += 2)
    for (int x = 0; x < 4; x += 2) {
      const double z = 2.0 * img.at(0, y, x) - 0.5;
      pooled += (z > 0 ? z : 0.2 * z) / 4.0;
    }
  const auto z = logits(c, img);
  REQUIRE(z.size() == 2);
  CHECK(z[0] == doctest::Approx(1.5 * pooled + 0.25).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(-pooled).epsilon(1e-12));
}

TEST_CASE("predicted domain resolves ties toward the lowest index") {
  CHECK(predicted_domain(rtaw::WeightVector{{0.2, 0.4, 0.4}}) == 1);
  CHECK(predicted_domain(rtaw::WeightVector{{0.5, 0.5}}) == 0);
}

TEST_CASE("cross-entropy gradient matches central differences") {
  const auto data = brightness_dataset(3, 8);
  ClassifierConfig cfg = tiny_config();
  cfg.input_size = 8;
  const auto c = init_classifier(2, cfg, 9);
  const std::vector<std::size_t> pool{0, 2, 4};
  const std::vector<int> transforms{0, 3, 6};
  nn::ParamSet grads = c.params;
  grads.fill(0.0);
  cross_entropy(c, data, pool, &grads, transforms);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const std::size_t i = rng.below(c.params.total());
    auto cp = c;
    const double h = 1e-5;
    cp.params.flat(i) = c.params.flat(i) + h;
    const double up = cross_entropy(cp, data, pool, nullptr, transforms);
    cp.params.flat(i) = c.params.flat(i) - h;
    const double dn = cross_entropy(cp, data, pool, nullptr, transforms);
    CHECK(testutil::rel_err(grads.flat(i), (up - dn) / (2 * h), 1e-6) < 1e-5);
  }
}

TEST_CASE("dihedral transforms form the eight distinct symmetries") {
  const Image img = testutil::random_image(5, 5, 4);
  CHECK(dihedral(img, 0) == img);
  std::vector<Image> all;
  for (int k = 0; k < 8; ++k) {
    const Image t = dihedral(img, k);
    for (const auto& prev : all) CHECK_FALSE(prev == t);
    double a = 0, b = 0;
    for (double v : img.data()) a += v;
    for (double v : t.data()) b += v;
    CHECK(a == doctest::Approx(b).epsilon(1e-14));
    all.push_back(t);
  }
  CHECK(dihedral(dihedral(img, 1), 1) == img);
  CHECK(dihedral(img, 1).at(0, 0, 0) == img.at(0, 0, 4));
  CHECK_THROWS_AS(dihedral(img, 8), std::invalid_argument);
  CHECK_THROWS_AS(dihedral(testutil::random_image(4, 5, 1), 2), std::invalid_argument);
}

TEST_CASE("accuracy table arithmetic") {
  const std::vector<int> truth{0, 0, 1, 1, 1, 2};
  const std::vector<std::size_t> train{8, 12, 4};

  const auto perfect = accuracy_from_predictions(truth, truth, train);
  CHECK(perfect.overall() == 1.0);
  CHECK(perfect.to_text().find("100.0%") != std::string::npos);

  std::vector<int> truth3;
  for (int d = 0; d < 3; ++d)
    for (int i = 0; i < 10; ++i) truth3.push_back(d);
  const auto constant = accuracy_from_predictions(truth3, std::vector<int>(30, 1), {40, 40, 40});
  CHECK(constant.overall() == doctest::Approx(1.0 / 3.0));
  CHECK(constant.accuracy(1) == 1.0);
  CHECK(constant.accuracy(0) == 0.0);

  const auto mixed = accuracy_from_predictions(truth, {0, 1, 1, 1, 0, 0}, train);
  CHECK(mixed.accuracy(0) == 0.5);
  CHECK(mixed.accuracy(1) == doctest::Approx(2.0 / 3.0));
  CHECK(mixed.accuracy(2) == 0.0);
  double weighted = 0.0;
  for (int d = 0; d < 3; ++d) weighted += mixed.accuracy(d) * double(mixed.test_counts[d]) / 6.0;
  CHECK(mixed.overall() == doctest::Approx(weighted).epsilon(1e-15));

  const std::string text = mixed.to_text();
  for (const char* s : {"Training", "Testing", "Accuracy", "domain_0", "domain_2", "Total"})
    CHECK(text.find(s) != std::string::npos);
  CHECK_THROWS(accuracy_from_predictions(truth, {0, 1}, train));
}

TEST_CASE("training rejects tiny or single-domain data") {
  auto few = brightness_dataset(4, 8);
  CHECK_THROWS_WITH_AS(train_classifier(few, 0.8, tiny_config()), doctest::Contains("at least 5"),
                       std::invalid_argument);
  auto one = brightness_dataset(6, 8);
  one.num_domains = 1;
  for (auto& s : one.samples) s.domain_id = 0;
  CHECK_THROWS_AS(train_classifier(one, 0.8, tiny_config()), std::invalid_argument);
  CHECK_THROWS_AS(train_classifier(brightness_dataset(6, 8), 1.0, tiny_config()), std::invalid_argument);
}

TEST_CASE("training separates an easy two-domain set and is deterministic") {
  const auto data = brightness_dataset(10, 16);
  const auto a = train_classifier(data, 0.8, tiny_config());
  const auto b = train_classifier(data, 0.8, tiny_config());
  CHECK(a.classifier.params == b.classifier.params);
  CHECK(a.split.train == b.split.train);
  CHECK(a.final_loss < a.initial_loss);

  std::set<std::size_t> seen(a.split.train.begin(), a.split.train.end());
  for (auto i : a.split.test) CHECK(seen.insert(i).second);
  CHECK(seen.size() == data.samples.size());
  CHECK(a.split.train.size() == 16);

  const auto acc = accuracy_report(a.classifier, data, a.split);
  CHECK(acc.train_counts == std::vector<std::size_t>{8, 8});
  CHECK(acc.overall() == 1.0);
}

TEST_CASE("classifier checkpoint round trip") {
  const auto dir = testutil::scratch_dir("classifier_ckpt");
  const auto c = init_classifier(3, tiny_config(), 17);
  save_classifier(c, dir / "c.ckpt");
  const auto back = load_classifier(dir / "c.ckpt");
  CHECK(back.arch == c.arch);
  CHECK(back.params == c.params);
  CHECK(back.n_domains == 3);
  CHECK(back.input_size == 16);
  const Image img = testutil::random_image(16, 16, 1);
  CHECK(logits(back, img) == logits(c, img));
}
