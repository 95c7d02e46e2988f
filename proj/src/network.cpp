#include "adanec/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "adanec/rng.hpp"

namespace adanec::nn {

std::size_t ParamShape::count() const {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::UpConv: return "upconv";
    case LayerKind::GlobalPool: return "gap";
  }
  return "?";
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::None: return "none";
    case Activation::LeakyRelu: return "lrelu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

namespace {

LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::Conv;
  if (s == "upconv") return LayerKind::UpConv;
  if (s == "gap") return LayerKind::GlobalPool;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

Activation parse_act(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "lrelu") return Activation::LeakyRelu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

constexpr const char* kInputName = "input";

}  // namespace

void Arch::validate() const {
  if (input_channels <= 0) throw std::invalid_argument("arch: input_channels must be positive");
  if (layers.empty()) throw std::invalid_argument("arch: no layers");
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.name.empty() || l.name == kInputName) throw std::invalid_argument("arch: bad layer name '" + l.name + "'");
    if (seen.count(l.name)) throw std::invalid_argument("arch: duplicate layer '" + l.name + "'");
    if (l.inputs.empty()) throw std::invalid_argument("arch: layer '" + l.name + "' has no inputs");
    for (const auto& in : l.inputs) {
      if (in != kInputName && !seen.count(in)) {
        throw std::invalid_argument("arch: layer '" + l.name + "' reads unknown or later layer '" + in + "'");
      }
    }
    if (l.kind != LayerKind::GlobalPool) {
      if (l.out_channels <= 0) throw std::invalid_argument("arch: layer '" + l.name + "' needs out channels");
      if (l.kernel <= 0 || l.kernel % 2 == 0) throw std::invalid_argument("arch: layer '" + l.name + "' needs an odd kernel");
      if (l.stride != 1 && l.stride != 2) throw std::invalid_argument("arch: layer '" + l.name + "' stride must be 1 or 2");
      if (l.kind == LayerKind::UpConv && l.stride != 1) throw std::invalid_argument("arch: upconv stride must be 1");
    }
    seen[l.name] = i;
  }
  if (outputs.empty()) throw std::invalid_argument("arch: no outputs");
  for (const auto& o : outputs) {
    if (!seen.count(o)) throw std::invalid_argument("arch: unknown output '" + o + "'");
  }
}

std::vector<int> Arch::input_channel_counts() const {
  std::map<std::string, int> ch{{kInputName, input_channels}};
  std::vector<int> in_counts;
  for (const auto& l : layers) {
    int c = 0;
    for (const auto& in : l.inputs) c += ch.at(in);
    in_counts.push_back(c);
    ch[l.name] = l.kind == LayerKind::GlobalPool ? c : l.out_channels;
  }
  return in_counts;
}

std::vector<int> Arch::output_channel_counts() const {
  const auto in_counts = input_channel_counts();
  std::vector<int> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back(layers[i].kind == LayerKind::GlobalPool ? in_counts[i] : layers[i].out_channels);
  }
  return out;
}

std::vector<ParamShape> Arch::param_shapes() const {
  validate();
  const auto in_counts = input_channel_counts();
  std::vector<ParamShape> shapes;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::GlobalPool) continue;
    shapes.push_back({l.name + ".weight", {l.out_channels, in_counts[i], l.kernel, l.kernel}});
    shapes.push_back({l.name + ".bias", {l.out_channels}});
  }
  return shapes;
}

std::size_t Arch::param_count() const {
  std::size_t n = 0;
  for (const auto& s : param_shapes()) n += s.count();
  return n;
}

int Arch::downsample_factor() const {
  std::map<std::string, int> scale{{kInputName, 0}};
  int worst = 0;
  for (const auto& l : layers) {
    int s = scale.at(l.inputs.front());
    if (l.kind == LayerKind::Conv && l.stride == 2) s += 1;
    if (l.kind == LayerKind::UpConv) s -= 1;
    worst = std::max(worst, s);
    scale[l.name] = s;
  }
  return 1 << worst;
}

std::string Arch::to_text() const {
  std::ostringstream os;
  os << "arch " << (family.empty() ? "custom" : family) << " input=" << input_channels << '\n';
  for (const auto& l : layers) {
    os << "layer " << l.name << ' ' << to_string(l.kind) << " in=";
    for (std::size_t i = 0; i < l.inputs.size(); ++i) os << (i ? "," : "") << l.inputs[i];
    if (l.kind != LayerKind::GlobalPool) {
      os << " out=" << l.out_channels << " k=" << l.kernel << " s=" << l.stride;
    }
    os << " act=" << to_string(l.act) << '\n';
  }
  os << "output";
  for (const auto& o : outputs) os << ' ' << o;
  os << '\n';
  return os.str();
}

Arch Arch::from_text(std::string_view text) {
  Arch a;
  std::istringstream is{std::string(text)};
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "arch") {
      std::string kv;
      ls >> a.family >> kv;
      if (kv.rfind("input=", 0) != 0) throw std::invalid_argument("arch text: malformed header");
      a.input_channels = std::stoi(kv.substr(6));
      header = true;
    } else if (tag == "layer") {
      LayerSpec l;
      std::string kind;
      ls >> l.name >> kind;
      l.kind = parse_kind(kind);
      std::string kv;
      while (ls >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("arch text: bad field '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "in") l.inputs = split(val, ',');
        else if (key == "out") l.out_channels = std::stoi(val);
        else if (key == "k") l.kernel = std::stoi(val);
        else if (key == "s") l.stride = std::stoi(val);
        else if (key == "act") l.act = parse_act(val);
        else throw std::invalid_argument("arch text: unknown field '" + key + "'");
      }
      if (l.kind == LayerKind::GlobalPool) {
        l.out_channels = 0;
        l.kernel = 1;
        l.stride = 1;
      }
      a.layers.push_back(std::move(l));
    } else if (tag == "output") {
      std::string o;
      while (ls >> o) a.outputs.push_back(o);
    } else {
      throw std::invalid_argument("arch text: unknown line '" + line + "'");
    }
  }
  if (!header) throw std::invalid_argument("arch text: missing header");
  a.validate();
  return a;
}

// ---------------------------------------------------------------- ParamSet

ParamSet::ParamSet(const std::vector<ParamShape>& shapes) {
  for (const auto& s : shapes) items_.push_back({s.name, s.dims, std::vector<double>(s.count(), 0.0)});
}

Param* ParamSet::find(std::string_view name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

const Param* ParamSet::find(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

Param& ParamSet::get(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Param& ParamSet::get(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

void ParamSet::add(Param p) {
  if (find(p.name)) throw std::invalid_argument("duplicate parameter '" + p.name + "'");
  items_.push_back(std::move(p));
}

std::size_t ParamSet::total() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.values.size();
  return n;
}

double& ParamSet::flat(std::size_t index) {
  for (auto& p : items_) {
    if (index < p.values.size()) return p.values[index];
    index -= p.values.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

double ParamSet::flat(std::size_t index) const { return const_cast<ParamSet*>(this)->flat(index); }

std::optional<std::string> ParamSet::first_layout_mismatch(const ParamSet& other) const {
  const std::size_t n = std::min(items_.size(), other.items_.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (items_[i].name != other.items_[i].name || items_[i].dims != other.items_[i].dims) return items_[i].name;
  }
  if (items_.size() > n) return items_[n].name;
  if (other.items_.size() > n) return other.items_[n].name;
  return std::nullopt;
}

void ParamSet::fill(double v) {
  for (auto& p : items_) std::fill(p.values.begin(), p.values.end(), v);
}

void ParamSet::axpy(double a, const ParamSet& x) {
  if (auto bad = first_layout_mismatch(x)) throw std::invalid_argument("axpy: layout mismatch at '" + *bad + "'");
  for (std::size_t i = 0; i < items_.size(); ++i) {
    auto& dst = items_[i].values;
    const auto& src = x.items_[i].values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += a * src[j];
  }
}

bool ParamSet::all_finite() const {
  for (const auto& p : items_)
    for (double v : p.values)
      if (!std::isfinite(v)) return false;
  return true;
}

void ParamSet::round_to_float() {
  for (auto& p : items_)
    for (double& v : p.values) v = static_cast<double>(static_cast<float>(v));
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < items_.size(); ++i)
    if (items_[i].values != other.items_[i].values) return false;
  return true;
}

// ----------------------------------------------------------------- Network

Network::Network(Arch arch) : arch_(std::move(arch)) {
  arch_.validate();
  const auto in_counts = arch_.input_channel_counts();
  std::map<std::string, int> index{{kInputName, -1}};
  int param_cursor = 0;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const auto& l = arch_.layers[i];
    Node n;
    for (const auto& in : l.inputs) n.sources.push_back(index.at(in));
    n.in_channels = in_counts[i];
    if (l.kind != LayerKind::GlobalPool) {
      n.weight = param_cursor++;
      n.bias = param_cursor++;
    }
    nodes_.push_back(std::move(n));
    index[l.name] = static_cast<int>(i);
  }
  for (const auto& o : arch_.outputs) output_nodes_.push_back(index.at(o));
}

ParamSet Network::init_params(std::uint64_t seed) const {
  ParamSet p = make_params();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.weight < 0) continue;
    const auto& l = arch_.layers[i];
    const double fan_in = static_cast<double>(n.in_channels * l.kernel * l.kernel);
    // Kaiming-uniform for leaky layers keeps activation scale through deep stacks.
    const bool leaky = l.act == Activation::LeakyRelu;
    const double bound = leaky ? std::sqrt(6.0 / ((1.0 + 0.04) * fan_in)) : 1.0 / std::sqrt(fan_in);
    Rng rng(mix_seed(seed, i));
    for (double& v : p.at(n.weight).values) v = rng.uniform(-bound, bound);
    for (double& v : p.at(n.bias).values) v = leaky ? 0.0 : rng.uniform(-bound, bound);
  }
  p.round_to_float();
  return p;
}

namespace {

kernels::ConvGeometry geometry_for(const Tensor& in, const LayerSpec& l) {
  return {in.c, in.h, in.w, l.out_channels, l.kernel, l.stride};
}

void apply_activation(Activation act, std::span<double> x) {
  if (act == Activation::LeakyRelu) kernels::leaky_relu_inplace(x);
  else if (act == Activation::Sigmoid) kernels::sigmoid_inplace(x);
}

void activation_backward(Activation act, std::span<const double> y, std::span<double> g) {
  if (act == Activation::LeakyRelu) kernels::leaky_relu_backward(y, g);
  else if (act == Activation::Sigmoid) kernels::sigmoid_backward(y, g);
}

}  // namespace

std::vector<Tensor> Network::forward(const ParamSet& params, const Tensor& input, ForwardCache* cache) const {
  if (input.c != arch_.input_channels) {
    throw std::invalid_argument("network input has " + std::to_string(input.c) + " channels, arch expects " +
                                std::to_string(arch_.input_channels));
  }
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.inputs.assign(nodes_.size(), Tensor{});
  fc.outputs.assign(nodes_.size(), Tensor{});

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    const auto& l = arch_.layers[i];
    auto src = [&](int s) -> const Tensor& { return s < 0 ? input : fc.outputs[s]; };

    const Tensor& first = src(n.sources.front());
    const int h = l.kind == LayerKind::UpConv ? first.h * 2 : first.h;
    const int w = l.kind == LayerKind::UpConv ? first.w * 2 : first.w;
    Tensor cat(n.in_channels, h, w);
    int offset = 0;
    for (std::size_t k = 0; k < n.sources.size(); ++k) {
      const Tensor& s = src(n.sources[k]);
      double* dst = cat.channel(offset);
      if (k == 0 && l.kind == LayerKind::UpConv) {
        kernels::upsample2x_forward(s.c, s.h, s.w, s.data, std::span<double>(dst, s.size() * 4));
      } else {
        if (s.h != h || s.w != w) {
          throw std::invalid_argument("layer '" + l.name + "': input '" + l.inputs[k] + "' has mismatched spatial size");
        }
        std::copy(s.data.begin(), s.data.end(), dst);
      }
      offset += s.c;
    }

    Tensor out;
    if (l.kind == LayerKind::GlobalPool) {
      out = Tensor(cat.c, 1, 1);
      kernels::global_avg_pool_forward(cat.c, cat.h, cat.w, cat.data, out.data);
    } else {
      const auto g = geometry_for(cat, l);
      out = Tensor(g.out_c, g.out_h(), g.out_w());
      kernels::conv2d_forward(g, cat.data, params.at(n.weight).values, params.at(n.bias).values, out.data);
    }
    apply_activation(l.act, out.data);
    fc.inputs[i] = std::move(cat);
    fc.outputs[i] = std::move(out);
  }

  std::vector<Tensor> result;
  for (int o : output_nodes_) result.push_back(fc.outputs[o]);
  return result;
}

void Network::backward(const ParamSet& params, const ForwardCache& cache, std::span<const Tensor> grad_outputs,
                       ParamSet& grads, Tensor* grad_input) const {
  if (grad_outputs.size() != output_nodes_.size()) throw std::invalid_argument("backward: wrong number of output grads");
  std::vector<Tensor> gout(nodes_.size());
  auto accumulate = [](Tensor& dst, const Tensor& src) {
    if (dst.data.empty()) {
      dst = src;
      return;
    }
    for (std::size_t j = 0; j < dst.data.size(); ++j) dst.data[j] += src.data[j];
  };
  for (std::size_t k = 0; k < output_nodes_.size(); ++k) {
    if (!grad_outputs[k].data.empty()) accumulate(gout[output_nodes_[k]], grad_outputs[k]);
  }
  if (grad_input) *grad_input = Tensor{};

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    if (gout[i].data.empty()) continue;
    const auto& n = nodes_[i];
    const auto& l = arch_.layers[i];
    Tensor& g = gout[i];
    activation_backward(l.act, cache.outputs[i].data, g.data);

    const Tensor& cat = cache.inputs[i];
    bool need_input_grad = grad_input != nullptr;
    for (int s : n.sources) need_input_grad = need_input_grad || s >= 0;

    Tensor gcat;
    if (l.kind == LayerKind::GlobalPool) {
      gcat = Tensor(cat.c, cat.h, cat.w);
      kernels::global_avg_pool_backward(cat.c, cat.h, cat.w, g.data, gcat.data);
    } else {
      const auto geo = geometry_for(cat, l);
      if (need_input_grad) gcat = Tensor(cat.c, cat.h, cat.w);
      kernels::conv2d_backward(geo, cat.data, params.at(n.weight).values, g.data, gcat.data,
                               grads.at(n.weight).values, grads.at(n.bias).values);
    }
    g = Tensor{};  // release
    if (!need_input_grad) continue;

    int offset = 0;
    for (std::size_t k = 0; k < n.sources.size(); ++k) {
      const int s = n.sources[k];
      const int sc = s < 0 ? arch_.input_channels : cache.outputs[s].c;
      const bool up = k == 0 && l.kind == LayerKind::UpConv;
      const int sh = up ? cat.h / 2 : cat.h;
      const int sw = up ? cat.w / 2 : cat.w;
      if (s < 0 && !grad_input) {
        offset += sc;
        continue;
      }
      Tensor piece(sc, sh, sw);
      const double* from = gcat.channel(offset);
      if (up) {
        kernels::upsample2x_backward(sc, sh, sw, std::span<const double>(from, piece.size() * 4), piece.data);
      } else {
        std::copy(from, from + piece.size(), piece.data.begin());
      }
      accumulate(s < 0 ? *grad_input : gout[s], piece);
      offset += sc;
    }
  }
}

}  // namespace adanec::nn
