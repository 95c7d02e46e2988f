#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "adanec/dataset.hpp"
#include "adanec/network.hpp"
#include "adanec/rtaw.hpp"

namespace adanec::domaingap {

struct ClassifierConfig {
  std::vector<int> channels{16, 32, 64, 64};  // stride-2 convs
  int input_size = 64;
  int steps = 3200;
  int batch = 16;
  double lr = 2e-3;
  bool augment = true;  // random flips/rotations of each training pick
  std::uint64_t seed = 1;
};

// Stride-2 convs, global pooling and a fully-connected layer to n_domains logits.
struct DomainClassifier {
  nn::Arch arch;
  nn::ParamSet params;
  int n_domains = 0;
  int input_size = 64;

  void validate() const;
};

nn::Arch build_classifier_arch(const std::vector<int>& channels, int n_domains);
DomainClassifier init_classifier(int n_domains, const ClassifierConfig& config, std::uint64_t seed);

// Logits of one image (resized to the classifier input size when needed).
std::vector<double> logits(const DomainClassifier& c, const Image& img);

// Softmax posterior over domains.
rtaw::WeightVector classify(const DomainClassifier& c, const Image& img);
// Argmax with ties resolved toward the lowest index.
int predicted_domain(const rtaw::WeightVector& posterior);

// Mean cross-entropy over `pool` and, when grads is non-null, its gradient.
double cross_entropy(const DomainClassifier& c, const Dataset& data, std::span<const std::size_t> pool,
                     nn::ParamSet* grads = nullptr, std::span<const int> transforms = {});

struct TrainedClassifier {
  DomainClassifier classifier;
  Split split;
  double initial_loss = 0.0;  // training-set cross-entropy before and after training
  double final_loss = 0.0;
};

// Stratified split (train fraction split_ratio, rounded per domain), then
// cross-entropy training with Adam. Rejects fewer than two domains and any
// domain with fewer than five samples.
TrainedClassifier train_classifier(const Dataset& data, double split_ratio, const ClassifierConfig& config,
                                   const std::function<void(int, double)>& progress = {});
// Trains on an existing split (the pipeline shares one split across stages).
TrainedClassifier train_classifier(const Dataset& data, const Split& split, const ClassifierConfig& config,
                                   const std::function<void(int, double)>& progress = {});

struct AccuracyReport {
  std::vector<std::size_t> train_counts;
  std::vector<std::size_t> test_counts;
  std::vector<std::size_t> correct;

  double accuracy(int domain) const;
  double overall() const;
  // Rows Training / Testing / Accuracy, columns domain_i and Total.
  std::string to_text() const;
};

AccuracyReport accuracy_report(const DomainClassifier& c, const Dataset& data, const Split& split);
// Same table from explicit predictions; used by tests and the report builder.
AccuracyReport accuracy_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                         const std::vector<std::size_t>& train_counts);

void save_classifier(const DomainClassifier& c, const std::filesystem::path& path);
DomainClassifier load_classifier(const std::filesystem::path& path);

}  // namespace adanec::domaingap
