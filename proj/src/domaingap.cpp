#include "adanec/domaingap.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "adanec/archive.hpp"
#include "adanec/backbone.hpp"
#include "adanec/optim.hpp"
#include "adanec/rng.hpp"

namespace adanec::domaingap {

void DomainClassifier::validate() const {
  if (n_domains < 2) throw std::invalid_argument("domain classifier needs at least two domains");
  const auto counts = arch.output_channel_counts();
  if (counts.back() != n_domains) throw std::invalid_argument("domain classifier output size does not match n_domains");
  if (auto bad = params.first_layout_mismatch(nn::ParamSet(arch.param_shapes()))) {
    throw std::invalid_argument("domain classifier parameter mismatch at " + *bad);
  }
  if (!params.all_finite()) throw std::invalid_argument("domain classifier parameters are non-finite");
}

nn::Arch build_classifier_arch(const std::vector<int>& channels, int n_domains) {
  if (channels.empty()) throw std::invalid_argument("classifier needs at least one conv layer");
  if (n_domains < 2) throw std::invalid_argument("classifier needs at least two domains");
  nn::Arch a;
  a.family = "classifier";
  a.input_channels = 3;
  std::string prev = "input";
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string name = "conv" + std::to_string(i + 1);
    a.layers.push_back({name, nn::LayerKind::Conv, {prev}, channels[i], 3, 2, nn::Activation::LeakyRelu});
    prev = name;
  }
  a.layers.push_back({"pool", nn::LayerKind::GlobalPool, {prev}, 0, 1, 1, nn::Activation::None});
  a.layers.push_back({"fc", nn::LayerKind::Conv, {"pool"}, n_domains, 1, 1, nn::Activation::None});
  a.outputs = {"fc"};
  a.validate();
  return a;
}

DomainClassifier init_classifier(int n_domains, const ClassifierConfig& config, std::uint64_t seed) {
  DomainClassifier c;
  c.arch = build_classifier_arch(config.channels, n_domains);
  c.n_domains = n_domains;
  c.input_size = config.input_size;
  c.params = nn::Network(c.arch).init_params(seed);
  return c;
}

namespace {

nn::Tensor classifier_input(const DomainClassifier& c, const Image& img) {
  if (img.height() == c.input_size && img.width() == c.input_size) return backbone::to_tensor(img);
  return backbone::to_tensor(resize_bilinear(img, c.input_size, c.input_size));
}

std::vector<double> softmax(const std::vector<double>& z) {
  return rtaw::softmax_weights(z).weights;
}

}  // namespace

std::vector<double> logits(const DomainClassifier& c, const Image& img) {
  nn::Network net(c.arch);
  return net.forward(c.params, classifier_input(c, img)).front().data;
}

rtaw::WeightVector classify(const DomainClassifier& c, const Image& img) {
  return rtaw::softmax_weights(logits(c, img));
}

int predicted_domain(const rtaw::WeightVector& posterior) {
  int best = 0;
  for (std::size_t k = 1; k < posterior.size(); ++k)
    if (posterior[k] > posterior[best]) best = static_cast<int>(k);
  return best;
}

double cross_entropy(const DomainClassifier& c, const Dataset& data, std::span<const std::size_t> pool,
                     nn::ParamSet* grads, std::span<const int> transforms) {
  if (pool.empty()) throw std::invalid_argument("cross_entropy: empty pool");
  if (!transforms.empty() && transforms.size() != pool.size()) {
    throw std::invalid_argument("cross_entropy: one transform per sample required");
  }
  nn::Network net(c.arch);
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& s = data.samples.at(pool[i]);
    if (s.domain_id < 0 || s.domain_id >= c.n_domains) throw std::out_of_range("cross_entropy: domain out of range");
    nn::ForwardCache cache;
    const Image input = transforms.empty() ? s.contaminated : dihedral(s.contaminated, transforms[i]);
    const auto out = net.forward(c.params, classifier_input(c, input), grads ? &cache : nullptr);
    const auto p = softmax(out.front().data);
    total += -std::log(std::max(p[s.domain_id], 1e-300)) * scale;
    if (grads) {
      nn::Tensor g(c.n_domains, 1, 1);
      for (int k = 0; k < c.n_domains; ++k) g.data[k] = (p[k] - (k == s.domain_id ? 1.0 : 0.0)) * scale;
      const std::vector<nn::Tensor> gs{g};
      net.backward(c.params, cache, gs, *grads);
    }
  }
  return total;
}

namespace {

void check_domain_sizes(const Dataset& data) {
  if (data.num_domains < 2) throw std::invalid_argument("domain classifier needs at least two domains");
  for (int d = 0; d < data.num_domains; ++d) {
    const auto n = data.indices_of(d).size();
    if (n < 5) {
      throw std::invalid_argument("domain " + std::to_string(d) + " has " + std::to_string(n) +
                                  " samples; the classifier needs at least 5 per domain");
    }
  }
}

}  // namespace

TrainedClassifier train_classifier(const Dataset& data, double split_ratio, const ClassifierConfig& config,
                                   const std::function<void(int, double)>& progress) {
  check_domain_sizes(data);
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0,1)");
  std::vector<int> domains;
  for (const auto& s : data.samples) domains.push_back(s.domain_id);
  return train_classifier(data, stratified_split(domains, split_ratio, mix_seed(config.seed, 0x5b1)), config,
                          progress);
}

TrainedClassifier train_classifier(const Dataset& data, const Split& split, const ClassifierConfig& config,
                                   const std::function<void(int, double)>& progress) {
  check_domain_sizes(data);
  if (split.train.empty() || split.test.empty()) throw std::invalid_argument("split leaves an empty side");
  TrainedClassifier out;
  out.split = split;
  out.classifier = init_classifier(data.num_domains, config, mix_seed(config.seed, 0xc1a5));
  auto& c = out.classifier;
  out.initial_loss = cross_entropy(c, data, out.split.train);

  nn::ParamSet grads = c.params;
  Adam adam(c.params, {config.lr, 0.9, 0.999, 1e-8, static_cast<std::size_t>(std::max(config.steps, 1)), true});
  Rng rng(mix_seed(config.seed, 0xba7c));
  const int batch = std::min<int>(config.batch, static_cast<int>(out.split.train.size()));
  std::vector<std::size_t> picks(batch);
  std::vector<int> transforms(batch);
  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < batch; ++b) {
      picks[b] = out.split.train[rng.below(out.split.train.size())];
      transforms[b] = config.augment ? static_cast<int>(rng.below(8)) : 0;
    }
    grads.fill(0.0);
    const double loss = cross_entropy(c, data, picks, &grads, transforms);
    if (!std::isfinite(loss)) {
      throw backbone::TrainingDiverged("classifier loss became non-finite at step " + std::to_string(step));
    }
    adam.step(c.params, grads);
    if (progress) progress(step, loss);
  }
  out.final_loss = cross_entropy(c, data, out.split.train);
  return out;
}

double AccuracyReport::accuracy(int domain) const {
  const auto n = test_counts.at(domain);
  return n == 0 ? 0.0 : static_cast<double>(correct.at(domain)) / static_cast<double>(n);
}

double AccuracyReport::overall() const {
  std::size_t n = 0, k = 0;
  for (std::size_t d = 0; d < test_counts.size(); ++d) {
    n += test_counts[d];
    k += correct[d];
  }
  if (n == 0) throw std::invalid_argument("accuracy report over an empty test split");
  return static_cast<double>(k) / static_cast<double>(n);
}

std::string AccuracyReport::to_text() const {
  std::ostringstream os;
  const int cols = static_cast<int>(test_counts.size());
  os << std::left << std::setw(10) << "";
  for (int d = 0; d < cols; ++d) os << std::right << std::setw(11) << ("domain_" + std::to_string(d));
  os << std::setw(11) << "Total" << '\n';
  auto count_row = [&](const char* label, const std::vector<std::size_t>& v) {
    os << std::left << std::setw(10) << label << std::right;
    std::size_t sum = 0;
    for (auto x : v) {
      os << std::setw(11) << x;
      sum += x;
    }
    os << std::setw(11) << sum << '\n';
  };
  count_row("Training", train_counts);
  count_row("Testing", test_counts);
  os << std::left << std::setw(10) << "Accuracy" << std::right << std::fixed << std::setprecision(1);
  for (int d = 0; d < cols; ++d) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(1) << 100.0 * accuracy(d) << '%';
    os << std::setw(11) << cell.str();
  }
  std::ostringstream cell;
  cell << std::fixed << std::setprecision(1) << 100.0 * overall() << '%';
  os << std::setw(11) << cell.str() << '\n';
  return os.str();
}

AccuracyReport accuracy_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted,
                                         const std::vector<std::size_t>& train_counts) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("accuracy: prediction count mismatch");
  if (truth.empty()) throw std::invalid_argument("accuracy report over an empty test split");
  AccuracyReport r;
  const std::size_t n = train_counts.size();
  r.train_counts = train_counts;
  r.test_counts.assign(n, 0);
  r.correct.assign(n, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= static_cast<int>(n)) throw std::out_of_range("accuracy: domain out of range");
    ++r.test_counts[truth[i]];
    if (truth[i] == predicted[i]) ++r.correct[truth[i]];
  }
  return r;
}

AccuracyReport accuracy_report(const DomainClassifier& c, const Dataset& data, const Split& split) {
  if (split.test.empty()) throw std::invalid_argument("accuracy report over an empty test split");
  for (auto i : split.test)
    if (std::binary_search(split.train.begin(), split.train.end(), i))
      throw std::invalid_argument("train and test splits overlap at sample " + std::to_string(i));
  std::vector<int> truth(split.test.size()), predicted(split.test.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(split.test.size()); ++k) {
    const auto& s = data.samples.at(split.test[k]);
    truth[k] = s.domain_id;
    predicted[k] = predicted_domain(classify(c, s.contaminated));
  }
  std::vector<std::size_t> train_counts(c.n_domains, 0);
  for (auto i : split.train) ++train_counts.at(data.samples.at(i).domain_id);
  return accuracy_from_predictions(truth, predicted, train_counts);
}

void save_classifier(const DomainClassifier& c, const std::filesystem::path& path) {
  c.validate();
  Archive ar("classifier");
  ar.set_meta("n_domains", std::to_string(c.n_domains));
  ar.set_meta("input_size", std::to_string(c.input_size));
  ar.set_text("arch", c.arch.to_text());
  ar.add_params("", c.params);
  ar.save(path);
}

DomainClassifier load_classifier(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  if (ar.section() != "classifier") throw IoError(path.string() + " is not a classifier checkpoint");
  DomainClassifier c;
  c.arch = nn::Arch::from_text(ar.require_text("arch"));
  c.n_domains = std::stoi(ar.require_meta("n_domains"));
  c.input_size = std::stoi(ar.require_meta("input_size"));
  c.params = ar.extract_params("", c.arch.param_shapes());
  c.validate();
  return c;
}

}  // namespace adanec::domaingap
