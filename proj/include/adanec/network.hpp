#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adanec/kernels.hpp"

namespace adanec::nn {

using kernels::Tensor;

enum class LayerKind { Conv, UpConv, GlobalPool };
enum class Activation { None, LeakyRelu, Sigmoid };

// One node of a feed-forward graph. `inputs` name earlier layers (or
// "input") and are concatenated along channels. UpConv upsamples its first
// input 2x before the concatenation; the other inputs must already be at the
// upsampled resolution.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::vector<std::string> inputs;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  Activation act = Activation::LeakyRelu;

  bool operator==(const LayerSpec&) const = default;
};

struct ParamShape {
  std::string name;
  std::vector<int> dims;

  std::size_t count() const;
  bool operator==(const ParamShape&) const = default;
};

struct Arch {
  std::string family;
  int input_channels = 3;
  std::vector<LayerSpec> layers;
  std::vector<std::string> outputs;

  // Throws std::invalid_argument on dangling references, duplicate names,
  // bad kernels/strides or empty outputs.
  void validate() const;

  // Channel count of each layer's concatenated input.
  std::vector<int> input_channel_counts() const;
  std::vector<int> output_channel_counts() const;

  // Parameters in layer order: "<layer>.weight" [out, in, k, k] then "<layer>.bias" [out].
  std::vector<ParamShape> param_shapes() const;
  std::size_t param_count() const;

  // Spatial dimensions must be divisible by this.
  int downsample_factor() const;

  std::string to_text() const;
  static Arch from_text(std::string_view text);

  bool operator==(const Arch&) const = default;
};

struct Param {
  std::string name;
  std::vector<int> dims;
  std::vector<double> values;
};

class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const std::vector<ParamShape>& shapes);

  std::vector<Param>& items() { return items_; }
  const std::vector<Param>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  Param& at(std::size_t i) { return items_[i]; }
  const Param& at(std::size_t i) const { return items_[i]; }

  Param* find(std::string_view name);
  const Param* find(std::string_view name) const;
  Param& get(std::string_view name);
  const Param& get(std::string_view name) const;
  void add(Param p);

  std::size_t total() const;
  // Flat view across all parameters, in order.
  double& flat(std::size_t index);
  double flat(std::size_t index) const;

  // Name of the first parameter whose name or shape differs, if any.
  std::optional<std::string> first_layout_mismatch(const ParamSet& other) const;
  bool same_layout(const ParamSet& other) const { return !first_layout_mismatch(other).has_value(); }

  void fill(double v);
  void axpy(double a, const ParamSet& x);
  bool all_finite() const;
  // Quantize to the float32 storage precision used by checkpoints.
  void round_to_float();

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Param> items_;
};

struct ForwardCache {
  std::vector<Tensor> inputs;   // concatenated (and upsampled) input of each layer
  std::vector<Tensor> outputs;  // post-activation output of each layer
};

class Network {
 public:
  explicit Network(Arch arch);

  const Arch& arch() const { return arch_; }

  ParamSet make_params() const { return ParamSet(arch_.param_shapes()); }
  // Fan-in scaled uniform initialisation, float32-valued: Kaiming bound
  // sqrt(6 / (1.04 fan_in)) with zero bias for leaky layers, 1/sqrt(fan_in) otherwise.
  ParamSet init_params(std::uint64_t seed) const;

  // Outputs in arch().outputs order.
  std::vector<Tensor> forward(const ParamSet& params, const Tensor& input, ForwardCache* cache = nullptr) const;

  // Accumulates parameter gradients into `grads`. grad_outputs aligns with
  // arch().outputs; empty tensors mean "no gradient".
  void backward(const ParamSet& params, const ForwardCache& cache, std::span<const Tensor> grad_outputs,
                ParamSet& grads, Tensor* grad_input = nullptr) const;

 private:
  struct Node {
    std::vector<int> sources;  // -1 is the network input
    int in_channels = 0;
    int weight = -1;
    int bias = -1;
  };

  Arch arch_;
  std::vector<Node> nodes_;
  std::vector<int> output_nodes_;
};

std::string to_string(LayerKind kind);
std::string to_string(Activation act);

}  // namespace adanec::nn
