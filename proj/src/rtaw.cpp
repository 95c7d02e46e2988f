#include "adanec/rtaw.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adanec/archive.hpp"
#include "adanec/optim.hpp"
#include "adanec/rng.hpp"

namespace adanec::rtaw {

// ------------------------------------------------------------ WeightVector

int WeightVector::expert_of(std::size_t k) const {
  if (excluded_index && static_cast<int>(k) >= *excluded_index) return static_cast<int>(k) + 1;
  return static_cast<int>(k);
}

std::vector<double> WeightVector::expanded() const {
  std::vector<double> out(weights.size() + (excluded_index ? 1 : 0), 0.0);
  for (std::size_t k = 0; k < weights.size(); ++k) out[expert_of(k)] = weights[k];
  return out;
}

bool WeightVector::on_simplex(double tol) const {
  if (weights.empty()) return false;
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0 || w > 1.0) return false;
    sum += w;
  }
  return std::abs(sum - 1.0) <= tol;
}

WeightVector uniform_weights(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_weights: n must be positive");
  return {std::vector<double>(n, 1.0 / static_cast<double>(n)), std::nullopt};
}

WeightVector one_hot(std::size_t n, std::size_t k) {
  if (k >= n) throw std::out_of_range("one_hot: index out of range");
  WeightVector w{std::vector<double>(n, 0.0), std::nullopt};
  w.weights[k] = 1.0;
  return w;
}

WeightVector softmax_weights(std::span<const double> v, std::optional<int> exclude) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument("softmax_weights: non-finite expertise score");
  if (exclude && (*exclude < 0 || *exclude >= static_cast<int>(v.size()))) {
    throw std::out_of_range("softmax_weights: excluded index out of range");
  }
  const std::size_t kept = v.size() - (exclude ? 1 : 0);
  if (kept == 0) throw std::invalid_argument("softmax_weights: every entry is excluded");
  WeightVector w;
  w.excluded_index = exclude;
  double mx = -INFINITY;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!exclude || static_cast<int>(i) != *exclude) mx = std::max(mx, v[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (exclude && static_cast<int>(i) == *exclude) continue;
    const double e = std::exp(v[i] - mx);
    w.weights.push_back(e);
    sum += e;
  }
  for (double& x : w.weights) x /= sum;
  return w;
}

std::vector<double> cdam_scores(std::span<const double> q, const std::vector<std::vector<double>>& keys,
                                std::span<const double> w_k, std::span<const double> w_q, int d, int d_proj) {
  if (static_cast<int>(q.size()) != d || w_k.size() != static_cast<std::size_t>(d) * d_proj ||
      w_q.size() != static_cast<std::size_t>(d) * d_proj) {
    throw std::invalid_argument("cdam_scores: dimension mismatch");
  }
  std::vector<double> b(d_proj, 0.0);
  for (int m = 0; m < d; ++m)
    for (int n = 0; n < d_proj; ++n) b[n] += w_q[m * d_proj + n] * q[m];
  std::vector<double> v;
  v.reserve(keys.size());
  for (const auto& k : keys) {
    if (static_cast<int>(k.size()) != d) throw std::invalid_argument("cdam_scores: key dimension mismatch");
    std::vector<double> a(d_proj, 0.0);
    for (int m = 0; m < d; ++m)
      for (int n = 0; n < d_proj; ++n) a[n] += w_k[m * d_proj + n] * k[m];
    double s = 0.0;
    for (int n = 0; n < d_proj; ++n) s += a[n] * b[n];
    v.push_back(s);
  }
  return v;
}

Prediction fuse_outputs(std::span<const Prediction> predictions, const WeightVector& w) {
  if (predictions.size() != w.size() || predictions.empty()) {
    throw std::invalid_argument("fuse_outputs: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(w.size()) + " weights");
  }
  const auto& first = predictions.front();
  Prediction out{Image(first.transmission.height(), first.transmission.width()),
                 Image(first.reflection.height(), first.reflection.width())};
  for (std::size_t k = 0; k < predictions.size(); ++k) {
    require_same_shape(predictions[k].transmission, first.transmission, "fuse_outputs");
    require_same_shape(predictions[k].reflection, first.reflection, "fuse_outputs");
    const double wk = w[k];
    auto t = predictions[k].transmission.data();
    auto r = predictions[k].reflection.data();
    auto ot = out.transmission.data();
    auto orr = out.reflection.data();
    for (std::size_t i = 0; i < ot.size(); ++i) ot[i] += wk * t[i];
    for (std::size_t i = 0; i < orr.size(); ++i) orr[i] += wk * r[i];
  }
  return out;
}

double ide_loss(const WeightVector& w, int in_domain) {
  if (w.excluded_index) throw std::invalid_argument("ide_loss needs the full softmax, not the complement form");
  if (in_domain < 0 || in_domain >= static_cast<int>(w.size())) throw std::out_of_range("ide_loss: bad domain");
  return -std::log(w[in_domain]);
}

// ------------------------------------------------------------- RTAWModule

void RTAWModule::validate() const {
  if (expert_extractors.size() < 2) throw std::invalid_argument("RTAW needs at least two expert extractors");
  const nn::ParamSet expected(extractor_arch.param_shapes());
  if (!universal.same_layout(expected)) throw std::invalid_argument("RTAW universal extractor layout mismatch");
  for (const auto& e : expert_extractors)
    if (!e.same_layout(expected)) throw std::invalid_argument("RTAW expert extractor layout mismatch");
  const auto& wk = cdam.get("w_k");
  const auto& wq = cdam.get("w_q");
  if (wk.dims != std::vector<int>{feature_dim, proj_dim} || wq.dims != std::vector<int>{feature_dim, proj_dim}) {
    throw std::invalid_argument("RTAW projection shapes do not match d x d'");
  }
  if (!universal.all_finite() || !cdam.all_finite()) throw std::invalid_argument("RTAW parameters non-finite");
  for (const auto& e : expert_extractors)
    if (!e.all_finite()) throw std::invalid_argument("RTAW parameters non-finite");
}

std::vector<nn::ParamSet*> RTAWModule::parts() {
  std::vector<nn::ParamSet*> p{&universal};
  for (auto& e : expert_extractors) p.push_back(&e);
  p.push_back(&cdam);
  return p;
}

nn::Arch build_extractor_arch(const std::vector<int>& channels, int feature_dim) {
  if (feature_dim <= 0) throw std::invalid_argument("extractor feature_dim must be positive");
  nn::Arch a;
  a.family = "extractor";
  a.input_channels = 3;
  std::string prev = "input";
  int idx = 0;
  for (int c : channels) {
    const std::string name = "conv" + std::to_string(++idx);
    a.layers.push_back({name, nn::LayerKind::Conv, {prev}, c, 3, 2, nn::Activation::LeakyRelu});
    prev = name;
  }
  const std::string last = "conv" + std::to_string(++idx);
  a.layers.push_back({last, nn::LayerKind::Conv, {prev}, feature_dim, 3, 2, nn::Activation::LeakyRelu});
  a.layers.push_back({"pool", nn::LayerKind::GlobalPool, {last}, 0, 1, 1, nn::Activation::None});
  a.outputs = {"pool"};
  a.validate();
  return a;
}

RTAWModule init_rtaw(std::size_t num_experts, const RtawConfig& config, std::uint64_t seed) {
  if (num_experts < 2) throw std::invalid_argument("RTAW needs N >= 2 experts");
  if (config.proj_dim <= 0) throw std::invalid_argument("RTAW proj_dim must be positive");
  RTAWModule m;
  m.extractor_arch = build_extractor_arch(config.extractor_channels, config.feature_dim);
  m.feature_dim = config.feature_dim;
  m.proj_dim = config.proj_dim;
  nn::Network net(m.extractor_arch);
  m.universal = net.init_params(mix_seed(seed, 100));
  for (std::size_t i = 0; i < num_experts; ++i) m.expert_extractors.push_back(net.init_params(mix_seed(seed, 200 + i)));
  const std::size_t n = static_cast<std::size_t>(config.feature_dim) * config.proj_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.feature_dim));
  m.cdam.add({"w_k", {config.feature_dim, config.proj_dim}, std::vector<double>(n)});
  m.cdam.add({"w_q", {config.feature_dim, config.proj_dim}, std::vector<double>(n)});
  Rng rng(mix_seed(seed, 300));
  for (auto& p : m.cdam.items())
    for (double& v : p.values) v = rng.uniform(-bound, bound);
  m.cdam.round_to_float();
  return m;
}

namespace {

std::vector<double> as_vector(const nn::Tensor& t) { return t.data; }

nn::Tensor as_feature_tensor(const std::vector<double>& g) {
  nn::Tensor t(static_cast<int>(g.size()), 1, 1);
  t.data = g;
  return t;
}

}  // namespace

Features extract(const RTAWModule& m, const Image& img) {
  img.validate();
  nn::Network net(m.extractor_arch);
  const auto x = backbone::to_tensor(img);
  Features f;
  f.q = as_vector(net.forward(m.universal, x).front());
  for (const auto& e : m.expert_extractors) f.keys.push_back(as_vector(net.forward(e, x).front()));
  return f;
}

std::vector<double> expertise_scores(const RTAWModule& m, const Image& img) {
  const Features f = extract(m, img);
  return cdam_scores(f.q, f.keys, m.cdam.get("w_k").values, m.cdam.get("w_q").values, m.feature_dim, m.proj_dim);
}

WeightVector predict_weights(const RTAWModule& m, const Image& img) { return softmax_weights(expertise_scores(m, img)); }

std::vector<double> rr_score_gradient(std::span<const double> scores, int in_domain,
                                      std::span<const Prediction> expert_outputs, const TripletSample& sample,
                                      const LossConfig& loss, double* rr_value) {
  const std::size_t n = scores.size();
  if (expert_outputs.size() != n) throw std::invalid_argument("rr_score_gradient: need one output per expert");
  const WeightVector wc = softmax_weights(scores, in_domain);
  std::vector<Prediction> others;
  for (std::size_t k = 0; k < wc.size(); ++k) others.push_back(expert_outputs[wc.expert_of(k)]);
  const Prediction fused = fuse_outputs(others, wc);

  std::vector<double> gt(fused.transmission.size()), gr(fused.reflection.size());
  const double value = rr_loss(fused.transmission.data(), fused.reflection.data(), sample, loss, gt, gr);
  if (rr_value) *rr_value = value;

  // dL/dwc_k = <dL/dT, G_k.T> + <dL/dR, G_k.R>
  std::vector<double> g(wc.size(), 0.0);
  for (std::size_t k = 0; k < wc.size(); ++k) {
    auto t = others[k].transmission.data();
    auto r = others[k].reflection.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) acc += gt[i] * t[i];
    for (std::size_t i = 0; i < gr.size(); ++i) acc += gr[i] * r[i];
    g[k] = acc;
  }
  double mean = 0.0;
  for (std::size_t k = 0; k < wc.size(); ++k) mean += wc[k] * g[k];
  std::vector<double> dv(n, 0.0);
  for (std::size_t k = 0; k < wc.size(); ++k) dv[wc.expert_of(k)] = wc[k] * (g[k] - mean);
  return dv;
}

LodoLoss lodo_loss(const RTAWModule& m, const TripletSample& sample, std::span<const Prediction> expert_outputs,
                   double lambda, const LossConfig& loss, RTAWModule* grads) {
  const std::size_t n = m.num_experts();
  const int in_domain = sample.domain_id;
  if (in_domain < 0 || in_domain >= static_cast<int>(n)) throw std::out_of_range("lodo_loss: sample domain has no expert");
  if (expert_outputs.size() != n) throw std::invalid_argument("lodo_loss: need one output per expert");

  nn::Network net(m.extractor_arch);
  const auto x = backbone::to_tensor(sample.contaminated);
  nn::ForwardCache q_cache;
  std::vector<nn::ForwardCache> k_cache(n);
  const std::vector<double> q = as_vector(net.forward(m.universal, x, grads ? &q_cache : nullptr).front());
  std::vector<std::vector<double>> keys;
  for (std::size_t j = 0; j < n; ++j) {
    keys.push_back(as_vector(net.forward(m.expert_extractors[j], x, grads ? &k_cache[j] : nullptr).front()));
  }
  const auto& w_k = m.cdam.get("w_k").values;
  const auto& w_q = m.cdam.get("w_q").values;
  const int d = m.feature_dim;
  const int dp = m.proj_dim;

  LodoLoss out;
  out.scores = cdam_scores(q, keys, w_k, w_q, d, dp);
  out.d_scores_rr = rr_score_gradient(out.scores, in_domain, expert_outputs, sample, loss, &out.rr);
  const WeightVector w = softmax_weights(out.scores);
  out.ide = ide_loss(w, in_domain);
  out.total = out.rr + lambda * out.ide;
  if (!grads) return out;

  std::vector<double> dv = out.d_scores_rr;
  for (std::size_t j = 0; j < n; ++j) dv[j] += lambda * (w[j] - (static_cast<int>(j) == in_domain ? 1.0 : 0.0));

  std::vector<double> b(dp, 0.0);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < dp; ++c) b[c] += w_q[r * dp + c] * q[r];
  std::vector<std::vector<double>> a(n, std::vector<double>(dp, 0.0));
  for (std::size_t j = 0; j < n; ++j)
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < dp; ++c) a[j][c] += w_k[r * dp + c] * keys[j][r];

  auto& g_wk = grads->cdam.get("w_k").values;
  auto& g_wq = grads->cdam.get("w_q").values;
  std::vector<double> db(dp, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> dk(d, 0.0);
    for (int r = 0; r < d; ++r) {
      double acc = 0.0;
      for (int c = 0; c < dp; ++c) {
        g_wk[r * dp + c] += dv[j] * keys[j][r] * b[c];
        acc += w_k[r * dp + c] * b[c];
      }
      dk[r] = dv[j] * acc;
    }
    for (int c = 0; c < dp; ++c) db[c] += dv[j] * a[j][c];
    const std::vector<nn::Tensor> gk{as_feature_tensor(dk)};
    net.backward(m.expert_extractors[j], k_cache[j], gk, grads->expert_extractors[j]);
  }
  std::vector<double> dq(d, 0.0);
  for (int r = 0; r < d; ++r) {
    double acc = 0.0;
    for (int c = 0; c < dp; ++c) {
      g_wq[r * dp + c] += q[r] * db[c];
      acc += w_q[r * dp + c] * db[c];
    }
    dq[r] = acc;
  }
  const std::vector<nn::Tensor> gq{as_feature_tensor(dq)};
  net.backward(m.universal, q_cache, gq, grads->universal);
  return out;
}

namespace {

RTAWModule zeros_like(const RTAWModule& m) {
  RTAWModule g = m;
  for (auto* p : g.parts()) p->fill(0.0);
  return g;
}

}  // namespace

RTAWModule train_rtaw(const std::vector<std::vector<Prediction>>& expert_outputs, const Dataset& data,
                      std::span<const std::size_t> pool, const RtawConfig& config,
                      const std::function<void(int, const LodoLoss&)>& progress) {
  if (expert_outputs.size() != pool.size()) throw std::invalid_argument("train_rtaw: expert outputs do not cover the pool");
  if (pool.empty()) throw std::invalid_argument("train_rtaw: empty training pool");
  const std::size_t n = expert_outputs.front().size();
  if (n < 2) throw std::invalid_argument("train_rtaw: need N >= 2 experts");
  std::vector<int> seen(n, 0);
  for (std::size_t s = 0; s < pool.size(); ++s) {
    if (expert_outputs[s].size() != n) throw std::invalid_argument("train_rtaw: ragged expert outputs");
    const int dom = data.samples.at(pool[s]).domain_id;
    if (dom < 0 || dom >= static_cast<int>(n)) throw std::invalid_argument("train_rtaw: sample domain has no expert");
    seen[dom] = 1;
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (!seen[j]) throw std::invalid_argument("train_rtaw: no training samples for domain " + std::to_string(j));
  }

  RTAWModule m = init_rtaw(n, config, mix_seed(config.seed, 0x47a));
  if (config.steps == 0) return m;
  RTAWModule grads = zeros_like(m);
  const Adam::Options opt{config.lr, 0.9, 0.999, 1e-8, static_cast<std::size_t>(config.steps), true};
  std::vector<Adam> optimizers;
  for (auto* p : m.parts()) optimizers.emplace_back(*p, opt);

  Rng rng(mix_seed(config.seed, 0xba7c4));
  for (int step = 0; step < config.steps; ++step) {
    for (auto* p : grads.parts()) p->fill(0.0);
    LodoLoss mean;
    for (int b = 0; b < config.batch; ++b) {
      const std::size_t s = rng.below(pool.size());
      const LodoLoss l = lodo_loss(m, data.samples[pool[s]], expert_outputs[s], config.lambda, config.loss, &grads);
      mean.rr += l.rr / config.batch;
      mean.ide += l.ide / config.batch;
      mean.total += l.total / config.batch;
      mean.scores = l.scores;
    }
    if (!std::isfinite(mean.total)) {
      throw backbone::TrainingDiverged("train_rtaw: loss became non-finite at step " + std::to_string(step));
    }
    auto params = m.parts();
    auto gparts = grads.parts();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (auto& p : gparts[k]->items())
        for (double& v : p.values) v /= config.batch;
      optimizers[k].step(*params[k], *gparts[k]);
    }
    if (progress) progress(step, mean);
  }
  m.validate();
  return m;
}

RTAWModule train_rtaw(const std::vector<backbone::ExpertModel>& experts, const Dataset& data,
                      std::span<const std::size_t> pool, const RtawConfig& config,
                      const std::function<void(int, const LodoLoss&)>& progress) {
  if (experts.size() < 2) throw std::invalid_argument("train_rtaw: need N >= 2 experts");
  for (const auto& e : experts) {
    if (!(e.arch == experts.front().arch)) throw std::invalid_argument("train_rtaw: experts have different architectures");
  }
  std::vector<std::vector<Prediction>> outputs(pool.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(pool.size()); ++s) {
    for (const auto& e : experts) outputs[s].push_back(backbone::predict(e, data.samples[pool[s]].contaminated));
  }
  return train_rtaw(outputs, data, pool, config, progress);
}

void save_rtaw(const RTAWModule& m, const std::filesystem::path& path, double lambda) {
  m.validate();
  Archive ar("rtaw");
  ar.set_meta("experts", std::to_string(m.num_experts()));
  ar.set_meta("feature_dim", std::to_string(m.feature_dim));
  ar.set_meta("proj_dim", std::to_string(m.proj_dim));
  std::ostringstream l;
  l.precision(17);
  l << lambda;
  ar.set_meta("lambda", l.str());
  ar.set_text("extractor_arch", m.extractor_arch.to_text());
  ar.add_params("universal/", m.universal);
  for (std::size_t i = 0; i < m.num_experts(); ++i) ar.add_params("expert" + std::to_string(i) + "/", m.expert_extractors[i]);
  ar.add_params("cdam/", m.cdam);
  ar.save(path);
}

RTAWModule load_rtaw(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  if (ar.section() != "rtaw") throw IoError(path.string() + " is not an RTAW checkpoint");
  RTAWModule m;
  m.extractor_arch = nn::Arch::from_text(ar.require_text("extractor_arch"));
  m.feature_dim = std::stoi(ar.require_meta("feature_dim"));
  m.proj_dim = std::stoi(ar.require_meta("proj_dim"));
  const int n = std::stoi(ar.require_meta("experts"));
  const auto shapes = m.extractor_arch.param_shapes();
  m.universal = ar.extract_params("universal/", shapes);
  for (int i = 0; i < n; ++i) m.expert_extractors.push_back(ar.extract_params("expert" + std::to_string(i) + "/", shapes));
  m.cdam = ar.extract_params("cdam/", {{"w_k", {m.feature_dim, m.proj_dim}}, {"w_q", {m.feature_dim, m.proj_dim}}});
  m.validate();
  return m;
}

}  // namespace adanec::rtaw
