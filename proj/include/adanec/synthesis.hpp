#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adanec/image.hpp"

namespace adanec::synthesis {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
  bool operator==(const Interval&) const = default;
};

// Parameter ranges of one source domain. Text form:
//   id=0 omega=0.9,1 phi=0.2,0.3 blur=0,0.5 gamma=2.2 pool=procedural
struct DomainSpec {
  int domain_id = 0;
  Interval omega{1.0, 1.0};
  Interval phi{0.0, 0.0};
  Interval blur_sigma{0.0, 0.0};
  double gamma = 1.0;
  std::string base_pool = "procedural";

  void validate() const;
  std::string to_text() const;
  static DomainSpec parse(std::string_view text);

  bool operator==(const DomainSpec&) const = default;
};

// Throws on duplicate ids or two domains with identical ranges.
void validate_specs(const std::vector<DomainSpec>& specs);

// True when every range of `target` is disjoint from the same range of every source.
bool ranges_disjoint(const DomainSpec& target, const std::vector<DomainSpec>& sources);

// Separable normalised Gaussian, radius ceil(3 sigma), edge-replicated borders.
// sigma below 1e-6 is the identity.
Image gaussian_blur(const Image& img, double sigma);

// Forms I = tone(clip(omega * lin(T) + phi * blur(lin(R)))) with lin(x) = x^gamma
// and tone(x) = x^(1/gamma). Returned ground truths are the tone-mapped
// attenuated layers.
TripletSample synthesize_with(const Image& t_raw, const Image& r_raw, const SynthesisParams& params, int domain_id);

// Draws omega, phi and sigma uniformly from the spec ranges (deterministic in seed).
TripletSample synthesize(const Image& t_raw, const Image& r_raw, const DomainSpec& spec, std::uint64_t seed);

// Smooth gradients, shapes and lattice noise; deterministic in seed.
Image procedural_image(int height, int width, std::uint64_t seed);

// Source image #index of a pool: "procedural" / "procedural:<tag>" or "dir:<path>" with PNG files.
Image pool_image(const std::string& pool, int height, int width, std::uint64_t seed);

struct ManifestRecord {
  std::filesystem::path contaminated;
  std::filesystem::path transmission;
  std::filesystem::path reflection;
  int domain_id = 0;
  std::optional<SynthesisParams> synthesis;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::uint64_t seed = 0;
  std::vector<DomainSpec> specs;
  std::filesystem::path base_dir;  // relative record paths resolve against this

  int num_domains() const;
  std::vector<int> domain_counts() const;
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  const DomainSpec* spec_for(int domain_id) const;
};

// Header "# adanec-manifest v1 seed=<int>", one "# domain ..." line per spec,
// then "<I>\t<T>\t<R>\t<domain_id>" per record. Sampled coefficients go to a
// sidecar "<name>.params" file.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
// Checks that referenced files exist and that domain ids are contiguous from 0.
DatasetManifest read_manifest(const std::filesystem::path& path);

// Writes PNG triplets under out_dir/d<id>/ and out_dir/manifest.tsv.
DatasetManifest generate_dataset(const std::vector<DomainSpec>& specs, int count_per_domain, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, int image_size = 64);

// The three default source domains and the held-out pseudo target. The target
// lives in its own manifest, so it carries domain id 0 there.
std::vector<DomainSpec> default_source_specs();
DomainSpec default_target_spec();

}  // namespace adanec::synthesis
