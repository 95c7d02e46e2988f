#include "adanec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "adanec/rng.hpp"

namespace adanec {

std::vector<std::size_t> Dataset::indices_of(int domain_id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].domain_id == domain_id) out.push_back(i);
  return out;
}

double Dataset::gamma_of(int domain_id) const {
  for (const auto& s : specs)
    if (s.domain_id == domain_id) return s.gamma;
  return 1.0;
}

Dataset load_dataset(const synthesis::DatasetManifest& manifest) {
  Dataset d;
  d.specs = manifest.specs;
  d.num_domains = manifest.num_domains();
  d.samples.resize(manifest.records.size());
  std::vector<std::string> errors(manifest.records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(manifest.records.size()); ++i) {
    try {
      const auto& r = manifest.records[i];
      TripletSample s;
      s.contaminated = load_png(manifest.resolve(r.contaminated));
      s.transmission = load_png(manifest.resolve(r.transmission));
      s.reflection = load_png(manifest.resolve(r.reflection));
      require_same_shape(s.contaminated, s.transmission, "triplet");
      require_same_shape(s.contaminated, s.reflection, "triplet");
      s.domain_id = r.domain_id;
      s.synthesis = r.synthesis;
      if (!s.synthesis) {
        if (const auto* spec = manifest.spec_for(r.domain_id)) {
          SynthesisParams p;
          p.gamma = spec->gamma;
          s.synthesis = p;
        }
      }
      d.samples[i] = std::move(s);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError("load_dataset: " + e);
  return d;
}

Split stratified_split(const std::vector<int>& domain_of_sample, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0,1)");
  int n_domains = 0;
  for (int d : domain_of_sample) n_domains = std::max(n_domains, d + 1);
  Split split;
  for (int d = 0; d < n_domains; ++d) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < domain_of_sample.size(); ++i)
      if (domain_of_sample[i] == d) idx.push_back(i);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d)));
    rng.shuffle(idx.begin(), idx.end());
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + n_train);
    split.test.insert(split.test.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace adanec
