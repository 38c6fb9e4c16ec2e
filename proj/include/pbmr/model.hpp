#pragma once

// Residual convolutional regressor: stem conv, a stack of residual blocks,
// adaptive concat pooling ([avg || max] per channel), and a two-layer fully
// connected head that emits one scalar per sample.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pbmr/ops.hpp"
#include "pbmr/rng.hpp"

namespace pbmr {

enum class ArchKind { tiny, small, resmini };

inline std::string to_string(ArchKind kind) {
  switch (kind) {
  case ArchKind::tiny: return "tiny";
  case ArchKind::small: return "small";
  case ArchKind::resmini: return "resmini";
  }
  return "?";
}

inline ArchKind parse_arch(const std::string& name) {
  if (name == "tiny") return ArchKind::tiny;
  if (name == "small") return ArchKind::small;
  if (name == "resmini") return ArchKind::resmini;
  throw ValidationError("unknown architecture '" + name + "' (expected tiny, small or resmini)");
}

struct BlockSpec {
  int channels = 0;
  int stride = 1;
  bool operator==(const BlockSpec&) const = default;
};

struct ArchConfig {
  ArchKind arch = ArchKind::tiny;
  int stem_channels = 8;
  /// Stem stride as (rows, time). Sensor grids are far wider than tall, so
  /// the presets downsample time in the stem.
  Window2 stem_stride{1, 2};
  std::vector<BlockSpec> blocks;
  int head_hidden = 128;
  int channels_in = 1;

  static ArchConfig preset(ArchKind kind, int channels_in = 1, int head_hidden = 128) {
    ArchConfig c;
    c.arch = kind;
    c.channels_in = channels_in;
    c.head_hidden = head_hidden;
    switch (kind) {
    case ArchKind::tiny:
      c.stem_channels = 8;
      c.stem_stride = {2, 2};
      c.blocks = {{8, 2}, {16, 2}};
      break;
    case ArchKind::small:
      c.stem_channels = 16;
      c.blocks = {{16, 1}, {32, 2}, {32, 1}, {64, 2}};
      break;
    case ArchKind::resmini:
      c.stem_channels = 16;
      c.blocks = {{16, 1}, {16, 1}, {32, 2}, {32, 1}, {64, 2}, {64, 1}, {64, 1}, {64, 1}};
      break;
    }
    return c;
  }

  void validate() const {
    if (blocks.empty()) throw ValidationError("arch: at least one residual block is required");
    if (stem_channels <= 0 || head_hidden <= 0 || channels_in <= 0)
      throw ValidationError("arch: channel counts must be positive");
    if (stem_stride.h <= 0 || stem_stride.w <= 0) throw ValidationError("arch: stem stride must be positive");
    for (const auto& b : blocks) {
      if (b.channels <= 0) throw ValidationError("arch: block channel counts must be positive");
      if (b.stride <= 0) throw ValidationError("arch: block strides must be positive");
    }
  }

  /// Smallest accepted input height and width: the product of block strides.
  std::size_t min_spatial() const {
    std::size_t m = 1;
    for (const auto& b : blocks) m *= static_cast<std::size_t>(b.stride);
    return m;
  }

  int final_channels() const { return blocks.back().channels; }

  bool operator==(const ArchConfig& o) const {
    return arch == o.arch && stem_channels == o.stem_channels && stem_stride.h == o.stem_stride.h &&
           stem_stride.w == o.stem_stride.w && blocks == o.blocks && head_hidden == o.head_hidden &&
           channels_in == o.channels_in;
  }
};

inline nlohmann::json to_json(const ArchConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.blocks) blocks.push_back({{"channels", b.channels}, {"stride", b.stride}});
  return {{"arch", to_string(c.arch)},
          {"stem_channels", c.stem_channels},
          {"stem_stride", {c.stem_stride.h, c.stem_stride.w}},
          {"blocks", blocks},
          {"head_hidden", c.head_hidden},
          {"channels_in", c.channels_in}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  try {
    ArchConfig c;
    c.arch = parse_arch(j.at("arch").get<std::string>());
    c.stem_channels = j.at("stem_channels").get<int>();
    c.stem_stride = {j.at("stem_stride").at(0).get<int>(), j.at("stem_stride").at(1).get<int>()};
    for (const auto& b : j.at("blocks")) c.blocks.push_back({b.at("channels").get<int>(), b.at("stride").get<int>()});
    c.head_hidden = j.at("head_hidden").get<int>();
    c.channels_in = j.at("channels_in").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("arch config: ") + e.what());
  }
}

/// [N,C,H,W] -> [N,2C]: global average pool followed by global max pool.
template <typename T>
Tensor<T> adaptive_concat_pool(const Tensor<T>& features) {
  return concat_cols(flatten(adaptive_avg_pool(features)), flatten(adaptive_max_pool(features)));
}

template <typename T>
class RegressionNet {
public:
  using Param = NamedTensor<T>;

  /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases. Each
  /// parameter draws from its own seed-derived stream, so values do not
  /// depend on the scalar type.
  static RegressionNet build(const ArchConfig& config, std::uint64_t seed) {
    config.validate();
    RegressionNet net;
    net.config_ = config;
    int in = config.channels_in;
    net.stem_ = net.add_conv("stem", config.stem_channels, in, 3, seed);
    in = config.stem_channels;
    for (std::size_t b = 0; b < config.blocks.size(); ++b) {
      const auto& spec = config.blocks[b];
      const std::string prefix = "block" + std::to_string(b);
      Block blk;
      blk.stride = spec.stride;
      blk.conv1 = net.add_conv(prefix + ".conv1", spec.channels, in, 3, seed);
      blk.conv2 = net.add_conv(prefix + ".conv2", spec.channels, spec.channels, 3, seed);
      if (spec.stride != 1 || spec.channels != in) {
        blk.proj = net.add_conv(prefix + ".proj", spec.channels, in, 1, seed);
        blk.has_proj = true;
      }
      net.blocks_.push_back(blk);
      in = spec.channels;
    }
    net.fc1_ = net.add_linear("head.fc1", config.head_hidden, 2 * in, seed);
    net.fc2_ = net.add_linear("head.fc2", 1, config.head_hidden, seed);
    return net;
  }

  /// [N,C,H,W] -> [N,1].
  Tensor<T> forward(const Tensor<T>& batch) const {
    if (batch.rank() != 4) throw ValidationError("forward: batch must be NCHW, got " + shape_str(batch.shape()));
    if (batch.dim(1) != static_cast<std::size_t>(config_.channels_in)) {
      throw ValidationError("forward: network expects " + std::to_string(config_.channels_in) +
                            " input channels, batch has " + std::to_string(batch.dim(1)));
    }
    const std::size_t min = config_.min_spatial();
    if (batch.dim(2) < min || batch.dim(3) < min) {
      throw ValidationError("forward: input " + std::to_string(batch.dim(2)) + "x" + std::to_string(batch.dim(3)) +
                            " is below the minimum " + std::to_string(min) + "x" + std::to_string(min) + " for arch " +
                            to_string(config_.arch));
    }
    Tensor<T> x = relu(conv(stem_, batch, config_.stem_stride, {1, 1}));
    for (const auto& blk : blocks_) {
      const Window2 s{blk.stride, blk.stride};
      Tensor<T> y = relu(conv(blk.conv1, x, s, {1, 1}));
      y = conv(blk.conv2, y, {1, 1}, {1, 1});
      Tensor<T> shortcut = blk.has_proj ? conv(blk.proj, x, s, {0, 0}) : x;
      x = relu(add(y, shortcut));
    }
    Tensor<T> pooled = adaptive_concat_pool(x);
    Tensor<T> h = relu(linear(pooled, params_[fc1_].value, params_[fc1_ + 1].value));
    return linear(h, params_[fc2_].value, params_[fc2_ + 1].value);
  }

  std::vector<Param>& parameters() { return params_; }
  const std::vector<Param>& parameters() const { return params_; }
  const ArchConfig& config() const { return config_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  Tensor<T>& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p.value;
    throw ValidationError("no parameter named '" + name + "'");
  }

  const Tensor<T>& parameter(const std::string& name) const {
    return const_cast<RegressionNet*>(this)->parameter(name);
  }

  /// Independent deep copy (parameters and gradients).
  RegressionNet clone() const {
    RegressionNet copy = *this;
    for (auto& p : copy.params_) {
      Tensor<T> t = p.value.detach_copy();
      t.set_requires_grad(true);
      if (p.value.has_grad()) t.impl()->grad = p.value.impl()->grad;
      p.value = t;
    }
    return copy;
  }

  /// Same architecture and parameter values in another scalar type.
  template <typename U>
  RegressionNet<U> cast() const {
    RegressionNet<U> out = RegressionNet<U>::build(config_, 0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i].value.data();
      auto dst = out.parameters()[i].value.data();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

private:
  struct Block {
    std::size_t conv1 = 0, conv2 = 0, proj = 0;
    bool has_proj = false;
    int stride = 1;
  };

  // Weight at index i, bias at i + 1.
  std::size_t add_conv(const std::string& name, int out, int in, int k, std::uint64_t seed) {
    const auto fan_in = static_cast<std::size_t>(in * k * k);
    return add_pair(name, {static_cast<std::size_t>(out), static_cast<std::size_t>(in), static_cast<std::size_t>(k),
                           static_cast<std::size_t>(k)},
                    static_cast<std::size_t>(out), fan_in, seed);
  }

  std::size_t add_linear(const std::string& name, int out, int in, std::uint64_t seed) {
    return add_pair(name, {static_cast<std::size_t>(out), static_cast<std::size_t>(in)}, static_cast<std::size_t>(out),
                    static_cast<std::size_t>(in), seed);
  }

  std::size_t add_pair(const std::string& name, Shape wshape, std::size_t bias_len, std::size_t fan_in,
                       std::uint64_t seed) {
    const std::size_t index = params_.size();
    Rng rng(derive_seed(seed, {index}));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<T> w(shape_numel(wshape));
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    params_.push_back({name + ".weight", Tensor<T>::from(std::move(wshape), std::move(w), true)});
    params_.push_back({name + ".bias", Tensor<T>::zeros({bias_len}, true)});
    return index;
  }

  Tensor<T> conv(std::size_t index, const Tensor<T>& x, Window2 stride, Window2 pad) const {
    return conv2d(x, params_[index].value, params_[index + 1].value, stride, pad);
  }

  ArchConfig config_;
  std::vector<Param> params_;
  std::size_t stem_ = 0, fc1_ = 0, fc2_ = 0;
  std::vector<Block> blocks_;
};

} // namespace pbmr
