#include "adanec/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adanec/archive.hpp"
#include "adanec/optim.hpp"
#include "adanec/rng.hpp"

namespace adanec::backbone {

using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;

void ExpertModel::validate() const {
  const nn::ParamSet expected(arch.param_shapes());
  if (auto bad = params.first_layout_mismatch(expected)) {
    throw std::invalid_argument("expert parameters do not match the architecture at '" + *bad + "'");
  }
  if (!params.all_finite()) throw std::invalid_argument("expert parameters contain non-finite values");
}

nn::Arch build_arch(int width, int depth) {
  if (depth < 2) throw std::invalid_argument("backbone depth must be at least 2");
  if (width < 8) throw std::invalid_argument("backbone width must be at least 8");
  const int levels = (depth - 2) / 2;
  const int refines = depth - 1 - 2 * levels;
  auto channels = [&](int level) { return width * std::min(1 << level, 4); };

  nn::Arch a;
  a.family = "backbone";
  a.input_channels = 3;
  a.layers.push_back({"enc0", LayerKind::Conv, {"input"}, width, 3, 1, Activation::LeakyRelu});
  std::vector<std::string> level_name{"enc0"};
  for (int l = 1; l <= levels; ++l) {
    const std::string name = "down" + std::to_string(l);
    a.layers.push_back({name, LayerKind::Conv, {level_name.back()}, channels(l), 3, 2, Activation::LeakyRelu});
    level_name.push_back(name);
  }
  std::string prev = level_name.back();
  for (int l = levels; l >= 1; --l) {
    const std::string name = "up" + std::to_string(l);
    a.layers.push_back({name, LayerKind::UpConv, {prev, level_name[l - 1]}, channels(l - 1), 3, 1, Activation::LeakyRelu});
    prev = name;
  }
  for (int r = 1; r <= refines; ++r) {
    const std::string name = "refine" + std::to_string(r);
    a.layers.push_back({name, LayerKind::Conv, {prev}, width, 3, 1, Activation::LeakyRelu});
    prev = name;
  }
  a.layers.push_back({"head_t", LayerKind::Conv, {prev, "input"}, 3, 3, 1, Activation::Sigmoid});
  a.layers.push_back({"head_r", LayerKind::Conv, {prev, "input"}, 3, 3, 1, Activation::Sigmoid});
  a.outputs = {"head_t", "head_r"};
  a.validate();
  return a;
}

ExpertModel init_expert(const nn::Arch& arch, std::uint64_t seed, int domain_id) {
  nn::Network net(arch);
  ExpertModel m;
  m.arch = arch;
  m.params = net.init_params(seed);
  m.domain_id = domain_id;
  m.meta.seed = seed;
  return m;
}

nn::Tensor to_tensor(const Image& img) {
  nn::Tensor t(3, img.height(), img.width());
  std::copy(img.data().begin(), img.data().end(), t.data.begin());
  return t;
}

Image to_image(const nn::Tensor& t) {
  if (t.c != 3) throw ShapeError("to_image: tensor must have 3 channels");
  Image img(t.h, t.w);
  std::copy(t.data.begin(), t.data.end(), img.data().begin());
  return img;
}

namespace {

void check_divisible(const nn::Arch& arch, int h, int w) {
  const int f = arch.downsample_factor();
  if (h % f != 0 || w % f != 0) {
    std::ostringstream os;
    os << "input " << h << "x" << w << " must have both sides divisible by " << f;
    throw ShapeError(os.str());
  }
}

// Heads without a squashing activation are clamped; the mask zeroes gradients outside.
void clamp_head(const nn::Arch& arch, std::size_t output, nn::Tensor& t, std::vector<char>* mask) {
  const auto& name = arch.outputs[output];
  for (const auto& l : arch.layers) {
    if (l.name != name || l.act == Activation::Sigmoid) continue;
    if (mask) mask->assign(t.size(), 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t.data[i] < 0.0 || t.data[i] > 1.0) {
        t.data[i] = std::clamp(t.data[i], 0.0, 1.0);
        if (mask) (*mask)[i] = 0;
      }
    }
  }
}

}  // namespace

Prediction predict(const ExpertModel& expert, const Image& img) {
  if (expert.arch.outputs.size() != 2) throw std::invalid_argument("backbone arch must have two outputs");
  check_divisible(expert.arch, img.height(), img.width());
  nn::Network net(expert.arch);
  auto outs = net.forward(expert.params, to_tensor(img));
  clamp_head(expert.arch, 0, outs[0], nullptr);
  clamp_head(expert.arch, 1, outs[1], nullptr);
  return {to_image(outs[0]), to_image(outs[1])};
}

double sample_loss(const nn::Network& net, const nn::ParamSet& params, const TripletSample& sample,
                   const LossConfig& loss, nn::ParamSet* grads) {
  check_divisible(net.arch(), sample.contaminated.height(), sample.contaminated.width());
  nn::ForwardCache cache;
  auto outs = net.forward(params, to_tensor(sample.contaminated), grads ? &cache : nullptr);
  std::vector<char> mask_t, mask_r;
  clamp_head(net.arch(), 0, outs[0], &mask_t);
  clamp_head(net.arch(), 1, outs[1], &mask_r);
  if (!grads) return rr_loss(outs[0].data, outs[1].data, sample, loss);

  std::vector<nn::Tensor> g{nn::Tensor(outs[0].c, outs[0].h, outs[0].w), nn::Tensor(outs[1].c, outs[1].h, outs[1].w)};
  const double value = rr_loss(outs[0].data, outs[1].data, sample, loss, g[0].data, g[1].data);
  for (std::size_t i = 0; i < mask_t.size(); ++i)
    if (!mask_t[i]) g[0].data[i] = 0.0;
  for (std::size_t i = 0; i < mask_r.size(); ++i)
    if (!mask_r[i]) g[1].data[i] = 0.0;
  net.backward(params, cache, g, *grads);
  return value;
}

TripletSample crop_sample(const TripletSample& s, int y0, int x0, int size, bool flip) {
  auto crop = [&](const Image& img) {
    Image out(size, size);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(c, y, x) = img.at(c, y0 + y, flip ? x0 + size - 1 - x : x0 + x);
    return out;
  };
  TripletSample out;
  out.contaminated = crop(s.contaminated);
  out.transmission = crop(s.transmission);
  out.reflection = crop(s.reflection);
  out.domain_id = s.domain_id;
  out.synthesis = s.synthesis;
  return out;
}

ExpertModel train_expert(const Dataset& data, std::span<const std::size_t> pool, int domain_id,
                         const BackboneConfig& config, const std::function<void(int, double)>& progress) {
  std::vector<std::size_t> usable;
  for (std::size_t i : pool) {
    if (i >= data.samples.size()) throw std::out_of_range("train_expert: sample index out of range");
    if (domain_id == kJoint || data.samples[i].domain_id == domain_id) usable.push_back(i);
  }
  if (usable.empty()) {
    throw std::invalid_argument("train_expert: no training samples for domain " +
                                (domain_id == kJoint ? std::string("joint") : std::to_string(domain_id)));
  }
  if (config.steps < 0 || config.batch <= 0) throw std::invalid_argument("train_expert: bad step/batch settings");

  const nn::Arch arch = build_arch(config);
  nn::Network net(arch);
  ExpertModel model = init_expert(arch, mix_seed(config.seed, 0x1417), domain_id);
  model.meta = {config.seed, config.steps, config.lr, {}};
  if (config.steps == 0) return model;

  const int factor = arch.downsample_factor();
  if (config.crop > 0 && config.crop % factor != 0) {
    throw std::invalid_argument("training crop must be divisible by " + std::to_string(factor));
  }

  Adam opt(model.params, {config.lr, 0.9, 0.999, 1e-8, static_cast<std::size_t>(config.steps), true});
  Rng rng(mix_seed(config.seed, 0x5eed, static_cast<std::uint64_t>(domain_id + 7)));
  nn::ParamSet grads = net.make_params();
  for (int step = 0; step < config.steps; ++step) {
    grads.fill(0.0);
    double total = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const TripletSample& full = data.samples[usable[rng.below(usable.size())]];
      const int h = full.contaminated.height();
      const int w = full.contaminated.width();
      const int size = config.crop > 0 ? std::min({config.crop, h, w}) : std::min(h, w);
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - size + 1)));
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - size + 1)));
      const bool flip = rng.uniform() < 0.5;
      const TripletSample s = crop_sample(full, y0, x0, size, flip);
      total += sample_loss(net, model.params, s, config.loss, &grads);
    }
    const double mean = total / config.batch;
    if (!std::isfinite(mean) || !grads.all_finite()) {
      throw TrainingDiverged("train_expert: loss became non-finite at step " + std::to_string(step));
    }
    for (auto& p : grads.items())
      for (double& v : p.values) v /= config.batch;
    opt.step(model.params, grads);
    if (progress) progress(step, mean);
  }
  if (!model.params.all_finite()) throw TrainingDiverged("train_expert: parameters became non-finite");
  return model;
}

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

}  // namespace

void save_expert(const ExpertModel& expert, const std::filesystem::path& path) {
  expert.validate();
  Archive ar("expert");
  ar.set_meta("domain", expert.domain_id == kJoint ? "joint" : std::to_string(expert.domain_id));
  ar.set_meta("seed", std::to_string(expert.meta.seed));
  ar.set_meta("steps", std::to_string(expert.meta.steps));
  std::ostringstream lr;
  lr.precision(17);
  lr << expert.meta.lr;
  ar.set_meta("lr", lr.str());
  if (!expert.meta.interpolation_weights.empty()) {
    ar.set_meta("interpolation_weights", join_doubles(expert.meta.interpolation_weights));
  }
  ar.set_text("arch", expert.arch.to_text());
  ar.add_params("", expert.params);
  ar.save(path);
}

ExpertModel load_expert(const std::filesystem::path& path) {
  const Archive ar = Archive::load(path);
  if (ar.section() != "expert") throw IoError(path.string() + " is not an expert checkpoint");
  ExpertModel m;
  m.arch = nn::Arch::from_text(ar.require_text("arch"));
  m.params = ar.extract_params("", m.arch.param_shapes());
  const std::string dom = ar.require_meta("domain");
  m.domain_id = dom == "joint" ? kJoint : std::stoi(dom);
  m.meta.seed = std::stoull(ar.require_meta("seed"));
  m.meta.steps = std::stoi(ar.require_meta("steps"));
  m.meta.lr = std::stod(ar.require_meta("lr"));
  if (auto w = ar.meta("interpolation_weights")) m.meta.interpolation_weights = split_doubles(*w);
  m.validate();
  return m;
}

}  // namespace adanec::backbone
