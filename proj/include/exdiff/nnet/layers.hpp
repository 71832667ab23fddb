#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "exdiff/error.hpp"
#include "exdiff/nnet/ops.hpp"
#include "exdiff/rng.hpp"

namespace exdiff::nnet {

/// Owns parameters with stable addresses, in creation order.
template <typename Real>
class ParameterStore {
 public:
  Parameter<Real>& create(const std::string& name, Shape shape) {
    for (const auto& p : params_) {
      if (p.name == name) throw InvalidArgument("duplicate parameter name: " + name);
    }
    auto& p = params_.emplace_back();
    p.name = name;
    p.value = Tensor<Real>(shape);
    p.grad = Tensor<Real>(std::move(shape));
    return p;
  }

  std::vector<Parameter<Real>*> parameters() {
    std::vector<Parameter<Real>*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

  Parameter<Real>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(Real(0));
  }

 private:
  std::deque<Parameter<Real>> params_;
};

/// U(-b, b) with b = scale * sqrt(6 / fan_in). Drawn in double so float and
/// double models built from one seed agree up to rounding.
template <typename Real>
void kaiming_uniform(Tensor<Real>& t, std::size_t fan_in, Rng& rng, double scale = 1.0) {
  const double bound = scale * std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
}

template <typename Real>
struct Conv2d {
  Parameter<Real>* weight = nullptr;
  Parameter<Real>* bias = nullptr;

  Conv2d() = default;
  Conv2d(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, Rng& rng, double init_scale = 1.0) {
    weight = &store.create(name + ".weight", {out, in, kernel, kernel});
    bias = &store.create(name + ".bias", {out});
    kaiming_uniform(weight->value, in * kernel * kernel, rng, init_scale);
  }

  Var<Real> operator()(const Var<Real>& x) const { return conv2d(x, leaf(*weight), leaf(*bias)); }
};

template <typename Real>
struct Linear {
  Parameter<Real>* weight = nullptr;
  Parameter<Real>* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double init_scale = 1.0, bool with_bias = true) {
    weight = &store.create(name + ".weight", {out, in});
    if (with_bias) bias = &store.create(name + ".bias", {out});
    kaiming_uniform(weight->value, in, rng, init_scale);
  }

  Var<Real> operator()(const Var<Real>& x) const {
    return linear(x, leaf(*weight), bias ? leaf(*bias) : Var<Real>{});
  }

  void zero() {
    weight->value.fill(Real(0));
    if (bias) bias->value.fill(Real(0));
  }
};

template <typename Real>
struct GroupNorm {
  Parameter<Real>* gamma = nullptr;
  Parameter<Real>* beta = nullptr;
  std::size_t groups = 1;

  GroupNorm() = default;
  GroupNorm(ParameterStore<Real>& store, const std::string& name, std::size_t channels) {
    groups = default_groups(channels);
    gamma = &store.create(name + ".gamma", {channels});
    beta = &store.create(name + ".beta", {channels});
    gamma->value.fill(Real(1));
  }

  /// min(C/4, 32) groups, falling back to 1 for narrow layers.
  static std::size_t default_groups(std::size_t channels) {
    std::size_t g = std::min<std::size_t>(32, std::max<std::size_t>(1, channels / 4));
    while (channels % g != 0) --g;
    return g;
  }

  Var<Real> operator()(const Var<Real>& x) const {
    return group_normalize(x, groups, leaf(*gamma), leaf(*beta));
  }
};

template <typename Real>
struct LayerNorm {
  Parameter<Real>* gamma = nullptr;
  Parameter<Real>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore<Real>& store, const std::string& name, std::size_t width) {
    gamma = &store.create(name + ".gamma", {width});
    beta = &store.create(name + ".beta", {width});
    gamma->value.fill(Real(1));
  }

  Var<Real> operator()(const Var<Real>& x) const { return layer_normalize(x, leaf(*gamma), leaf(*beta)); }
};

}  // namespace exdiff::nnet
