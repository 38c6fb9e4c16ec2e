#pragma once

// SGD with momentum, Adam, and LARS behind one step() interface.

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbmr/tensor.hpp"

namespace pbmr {

enum class OptimizerKind { sgd, adam, lars };

inline std::string to_string(OptimizerKind kind) {
  switch (kind) {
  case OptimizerKind::sgd: return "sgd";
  case OptimizerKind::adam: return "adam";
  case OptimizerKind::lars: return "lars";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  if (name == "lars") return OptimizerKind::lars;
  throw ValidationError("unknown optimizer '" + name + "' (expected sgd, adam or lars)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 1e-3;
  double momentum = 0.9; ///< sgd
  double beta1 = 0.9;    ///< adam
  double beta2 = 0.999;  ///< adam
  double eps = 1e-8;     ///< adam
  double trust_coefficient = 1e-3; ///< lars
  double weight_decay = 0.0;

  void validate() const {
    auto check = [](bool ok, const char* what) {
      if (!ok) throw ValidationError(std::string("optimizer: ") + what);
    };
    check(lr > 0 && std::isfinite(lr), "lr must be > 0");
    check(momentum >= 0 && momentum < 1, "momentum must be in [0, 1)");
    check(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, "betas must be in (0, 1)");
    check(eps > 0, "eps must be > 0");
    check(trust_coefficient > 0, "trust coefficient must be > 0");
    check(weight_decay >= 0, "weight decay must be >= 0");
  }
};

inline nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"kind", to_string(c.kind)},   {"lr", c.lr},   {"momentum", c.momentum},
          {"betas", {c.beta1, c.beta2}}, {"eps", c.eps}, {"trust_coefficient", c.trust_coefficient},
          {"weight_decay", c.weight_decay}};
}

template <typename T>
class Optimizer {
public:
  explicit Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

  /// Updates every parameter in place. Gradients are validated first; a
  /// missing or non-finite gradient aborts the step before any update.
  void step(std::span<NamedTensor<T>> params) {
    for (const auto& p : params) {
      if (!p.value.has_grad()) throw ValidationError("optimizer: parameter '" + p.name + "' has no gradient");
      for (T g : p.value.grad()) {
        if (!std::isfinite(static_cast<double>(g)))
          throw RuntimeFailure("optimizer: non-finite gradient in '" + p.name + "'");
      }
    }
    ++steps_;
    for (auto& p : params) {
      switch (config_.kind) {
      case OptimizerKind::sgd: sgd(p); break;
      case OptimizerKind::adam: adam(p); break;
      case OptimizerKind::lars: lars(p); break;
      }
    }
  }

private:
  struct Slot {
    std::vector<T> first;
    std::vector<T> second;
  };

  Slot& slot(const NamedTensor<T>& p) {
    auto& s = state_[p.name];
    if (s.first.size() != p.value.numel()) {
      s.first.assign(p.value.numel(), T(0));
      if (config_.kind == OptimizerKind::adam) s.second.assign(p.value.numel(), T(0));
    }
    return s;
  }

  void sgd(NamedTensor<T>& p) {
    auto w = p.value.data();
    auto g = p.value.grad();
    const T lr = static_cast<T>(config_.lr), mu = static_cast<T>(config_.momentum),
            wd = static_cast<T>(config_.weight_decay);
    auto& v = slot(p).first;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = wd != T(0) ? g[i] + wd * w[i] : g[i];
      v[i] = mu * v[i] + gi;
      w[i] -= lr * v[i];
    }
  }

  // Bias-corrected moments: w -= lr * m_hat / (sqrt(v_hat) + eps).
  void adam(NamedTensor<T>& p) {
    auto w = p.value.data();
    auto g = p.value.grad();
    auto& s = slot(p);
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const T wd = static_cast<T>(config_.weight_decay);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = wd != T(0) ? g[i] + wd * w[i] : g[i];
      s.first[i] = static_cast<T>(b1) * s.first[i] + static_cast<T>(1.0 - b1) * gi;
      s.second[i] = static_cast<T>(b2) * s.second[i] + static_cast<T>(1.0 - b2) * gi * gi;
      const T m_hat = s.first[i] / static_cast<T>(c1);
      const T v_hat = s.second[i] / static_cast<T>(c2);
      w[i] -= static_cast<T>(config_.lr) * m_hat / (std::sqrt(v_hat) + static_cast<T>(config_.eps));
    }
  }

  // One trust ratio per named tensor:
  //   local = trust * |w| / (|g| + wd * |w|),  w -= lr * local * (g + wd * w)
  // with local = 1 when either norm is zero.
  void lars(NamedTensor<T>& p) {
    auto w = p.value.data();
    auto g = p.value.grad();
    double wn = 0, gn = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      wn += static_cast<double>(w[i]) * static_cast<double>(w[i]);
      gn += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    }
    wn = std::sqrt(wn);
    gn = std::sqrt(gn);
    const double wd = config_.weight_decay;
    double local = 1.0;
    if (wn > 0 && gn > 0) local = config_.trust_coefficient * wn / (gn + wd * wn);
    const T scale = static_cast<T>(config_.lr * local);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= scale * (g[i] + static_cast<T>(wd) * w[i]);
  }

  OptimizerConfig config_;
  long steps_ = 0;
  std::map<std::string, Slot> state_;
};

} // namespace pbmr
