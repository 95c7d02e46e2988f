#pragma once

#include <cstdint>
#include <vector>

#include "adanec/image.hpp"
#include "adanec/synthesis.hpp"

namespace adanec {

// A manifest with all triplets decoded into memory.
struct Dataset {
  std::vector<TripletSample> samples;
  std::vector<synthesis::DomainSpec> specs;
  int num_domains = 0;

  std::vector<std::size_t> indices_of(int domain_id) const;
  // gamma of each domain (1.0 where no spec is known)
  double gamma_of(int domain_id) const;
};

// Loads every record. Samples without recorded coefficients fall back to the
// domain's spec gamma for re-synthesis.
Dataset load_dataset(const synthesis::DatasetManifest& manifest);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per-domain stratified split; each domain keeps round(ratio * n) samples
// for training. Deterministic in seed; both lists are sorted.
Split stratified_split(const std::vector<int>& domain_of_sample, double ratio, std::uint64_t seed);

}  // namespace adanec
