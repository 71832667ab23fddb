#include "exdiff/nnet/optim.hpp"

#include <cmath>

#include "exdiff/error.hpp"

namespace exdiff::nnet {

template <typename Real>
StepReport adam_step(const std::vector<Parameter<Real>*>& params, const AdamConfig& cfg, AdamState<Real>& state) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].numel() != params[i]->value.numel() || params[i]->grad.numel() != params[i]->value.numel()) {
      throw ShapeError("adam_step: state shape mismatch for " + params[i]->name);
    }
    if (!params[i]->grad.all_finite()) {
      return StepReport{false, "non-finite gradient in " + params[i]->name};
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i]->value;
    const auto& grad = params[i]->grad;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.numel(); ++j) {
      const double g = grad[j];
      const double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      const double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      value[j] = static_cast<Real>(value[j] - cfg.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps));
    }
  }
  return {};
}

template <typename Real>
void ema_update(std::vector<Tensor<Real>>& shadow, const std::vector<Parameter<Real>*>& params, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw InvalidArgument("ema_update: decay must lie in [0, 1)");
  if (shadow.size() != params.size()) throw ShapeError("ema_update: shadow/parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& s = shadow[i];
    const auto& p = params[i]->value;
    if (s.numel() != p.numel()) throw ShapeError("ema_update: shape mismatch for " + params[i]->name);
    for (std::size_t j = 0; j < s.numel(); ++j) {
      s[j] = static_cast<Real>(decay * s[j] + (1.0 - decay) * p[j]);
    }
  }
}

template <typename Real>
std::vector<Tensor<Real>> snapshot(const std::vector<Parameter<Real>*>& params) {
  std::vector<Tensor<Real>> out;
  out.reserve(params.size());
  for (auto* p : params) out.push_back(p->value);
  return out;
}

template StepReport adam_step<float>(const std::vector<Parameter<float>*>&, const AdamConfig&, AdamState<float>&);
template StepReport adam_step<double>(const std::vector<Parameter<double>*>&, const AdamConfig&, AdamState<double>&);
template void ema_update<float>(std::vector<Tensor<float>>&, const std::vector<Parameter<float>*>&, double);
template void ema_update<double>(std::vector<Tensor<double>>&, const std::vector<Parameter<double>*>&, double);
template std::vector<Tensor<float>> snapshot<float>(const std::vector<Parameter<float>*>&);
template std::vector<Tensor<double>> snapshot<double>(const std::vector<Parameter<double>*>&);

}  // namespace exdiff::nnet
