#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "adanec/dataset.hpp"
#include "adanec/synthesis.hpp"
#include "test_util.hpp"

using namespace adanec;
using namespace adanec::synthesis;

namespace {

DomainSpec point_spec(double omega, double phi, double blur, double gamma) {
  return DomainSpec{0, {omega, omega}, {phi, phi}, {blur, blur}, gamma, "procedural"};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Straight-line Eq.-1 style mixture with a full 2D Gaussian kernel.
TripletSample oracle_synthesis(const Image& t, const Image& r, double omega, double phi, double sigma, double gamma) {
  const int h = t.height(), w = t.width();
  const int rad = static_cast<int>(std::ceil(3 * sigma));
  double norm = 0.0;
  for (int dy = -rad; dy <= rad; ++dy)
    for (int dx = -rad; dx <= rad; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  TripletSample s;
  s.contaminated = Image(h, w);
  s.transmission = Image(h, w);
  s.reflection = Image(h, w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double blur = 0.0;
        for (int dy = -rad; dy <= rad; ++dy)
          for (int dx = -rad; dx <= rad; ++dx) {
            const int yy = std::min(std::max(y + dy, 0), h - 1);
            const int xx = std::min(std::max(x + dx, 0), w - 1);
            blur += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / norm * std::pow(r.at(c, yy, xx), gamma);
          }
        const double tl = omega * std::pow(t.at(c, y, x), gamma);
        const double rl = phi * blur;
        s.contaminated.at(c, y, x) = std::pow(std::min(1.0, tl + rl), 1.0 / gamma);
        s.transmission.at(c, y, x) = std::pow(std::min(1.0, tl), 1.0 / gamma);
        s.reflection.at(c, y, x) = std::pow(std::min(1.0, rl), 1.0 / gamma);
      }
  return s;
}

}  // namespace

TEST_CASE("degenerate mixtures") {
  const Image t = testutil::random_image(16, 16, 1);
  const Image r = testutil::random_image(16, 16, 2);
  const auto a = synthesize(t, r, point_spec(1.0, 0.0, 0.0, 1.0), 7);
  CHECK(a.contaminated == t);
  const auto b = synthesize(t, r, point_spec(0.0, 0.0, 1.0, 2.2), 7);
  for (double v : b.contaminated.data()) CHECK(v == 0.0);
}

TEST_CASE("synthesis matches the brute-force oracle") {
  const Image t = testutil::random_image(32, 32, 3);
  const Image r = testutil::random_image(32, 32, 4);
  const auto s = synthesize(t, r, point_spec(0.8, 0.4, 2.0, 2.2), 1);
  const auto o = oracle_synthesis(t, r, 0.8, 0.4, 2.0, 2.2);
  CHECK(testutil::max_abs_diff(s.contaminated, o.contaminated) < 1e-12);
  CHECK(testutil::max_abs_diff(s.transmission, o.transmission) < 1e-12);
  CHECK(testutil::max_abs_diff(s.reflection, o.reflection) < 1e-12);
  REQUIRE(s.synthesis.has_value());
  CHECK(s.synthesis->omega == 0.8);
  CHECK(s.synthesis->blur_sigma == 2.0);
}

TEST_CASE("determinism, range and additivity") {
  const Image t = testutil::random_image(16, 16, 5);
  const Image r = testutil::random_image(16, 16, 6);
  const DomainSpec spec{0, {0.5, 0.9}, {0.1, 0.4}, {0.0, 3.0}, 2.2, "procedural"};
  const auto a = synthesize(t, r, spec, 42);
  const auto b = synthesize(t, r, spec, 42);
  CHECK(a.contaminated == b.contaminated);
  CHECK(a.transmission == b.transmission);
  CHECK_NOTHROW(a.contaminated.validate());
  CHECK_NOTHROW(a.transmission.validate());
  CHECK_NOTHROW(a.reflection.validate());
  const auto lin = synthesize(testutil::random_image(16, 16, 7, 0.0, 0.5), testutil::random_image(16, 16, 8, 0.0, 0.5),
                              point_spec(0.9, 0.5, 1.2, 1.0), 3);
  for (std::size_t i = 0; i < lin.contaminated.size(); ++i) {
    CHECK(lin.contaminated.data()[i] == lin.transmission.data()[i] + lin.reflection.data()[i]);
  }
  CHECK_THROWS_AS(synthesize(t, testutil::random_image(16, 8, 1), spec, 1), ShapeError);
}

TEST_CASE("spec parsing and validation") {
  const auto s = DomainSpec::parse("id=2 omega=0.5,0.6 phi=0.1,0.2 blur=1,2 gamma=2.2 pool=procedural");
  CHECK(s.domain_id == 2);
  CHECK(s.phi.hi == 0.2);
  CHECK(DomainSpec::parse(s.to_text()) == s);
  CHECK_THROWS(DomainSpec::parse("id=0 omega=0.6,0.5 phi=0,0 blur=0,0 gamma=1 pool=procedural"));
  CHECK_THROWS(DomainSpec::parse("id=0 omega=0.5,0.6 phi=0,0 blur=0,9 gamma=1 pool=procedural"));
  auto dup = default_source_specs();
  dup[1].domain_id = 0;
  CHECK_THROWS(validate_specs(dup));
  auto same = default_source_specs();
  same[1] = same[0];
  same[1].domain_id = 1;
  CHECK_THROWS(validate_specs(same));
}

TEST_CASE("default domains are separated in blur and reflection strength") {
  const auto specs = default_source_specs();
  REQUIRE(specs.size() == 3);
  for (std::size_t i = 1; i < specs.size(); ++i) {
    const auto mid = [](const Interval& v) { return 0.5 * (v.lo + v.hi); };
    CHECK(mid(specs[i].blur_sigma) > mid(specs[i - 1].blur_sigma));
    CHECK(mid(specs[i].phi) > mid(specs[i - 1].phi));
  }
  CHECK(ranges_disjoint(default_target_spec(), specs));
  CHECK_FALSE(ranges_disjoint(specs[0], specs));
}

TEST_CASE("generate_dataset: empty, counts and byte-identical reruns") {
  const auto dir = testutil::scratch_dir("gen");
  const auto empty = generate_dataset(default_source_specs(), 0, 1, dir / "empty", 16);
  CHECK(empty.records.empty());
  std::size_t pngs = 0;
  for (auto& e : std::filesystem::recursive_directory_iterator(dir / "empty"))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 0);

  generate_dataset(default_source_specs(), 10, 9, dir / "a", 16);
  generate_dataset(default_source_specs(), 10, 9, dir / "b", 16);
  const auto m = read_manifest(dir / "a" / "manifest.tsv");
  CHECK(m.records.size() == 30);
  CHECK(m.domain_counts() == std::vector<int>{10, 10, 10});
  CHECK(m.seed == 9);
  CHECK(slurp(dir / "a" / "manifest.tsv").rfind("# adanec-manifest v1 seed=9\n", 0) == 0);
  for (const auto& rec : m.records) {
    for (const auto& p : {rec.contaminated, rec.transmission, rec.reflection}) {
      CHECK(slurp(dir / "a" / p) == slurp(dir / "b" / p));
    }
  }
  CHECK(slurp(dir / "a" / "manifest.tsv") == slurp(dir / "b" / "manifest.tsv"));

  const Dataset d = load_dataset(m);
  CHECK(d.samples.size() == 30);
  CHECK(d.num_domains == 3);
  REQUIRE(d.samples[0].synthesis.has_value());
  CHECK(d.samples[0].synthesis->gamma == 2.2);
}

TEST_CASE("manifest errors") {
  const auto dir = testutil::scratch_dir("manifest");
  auto specs = default_source_specs();
  specs[2].domain_id = 1;
  CHECK_THROWS(generate_dataset(specs, 2, 1, dir / "dup", 16));
  generate_dataset(default_source_specs(), 2, 1, dir / "ok", 16);
  std::filesystem::remove(dir / "ok" / "d1" / "00000_T.png");
  CHECK_THROWS(read_manifest(dir / "ok" / "manifest.tsv"));
  {
    std::ofstream out(dir / "gap.tsv");
    out << "# adanec-manifest v1 seed=1\n";
  }
  CHECK_NOTHROW(read_manifest(dir / "gap.tsv"));
  CHECK_THROWS(read_manifest(dir / "nonexistent.tsv"));
}

TEST_CASE("stratified split") {
  std::vector<int> domains;
  for (int d = 0; d < 3; ++d)
    for (int i = 0; i < 10; ++i) domains.push_back(d);
  const Split s = stratified_split(domains, 0.8, 5);
  CHECK(s.train.size() == 24);
  CHECK(s.test.size() == 6);
  const Split again = stratified_split(domains, 0.8, 5);
  CHECK(s.train == again.train);
  CHECK(s.test == again.test);
  for (auto i : s.test) CHECK_FALSE(std::binary_search(s.train.begin(), s.train.end(), i));
  std::vector<int> per(3, 0);
  for (auto i : s.test) ++per[domains[i]];
  CHECK(per == std::vector<int>{2, 2, 2});
}
