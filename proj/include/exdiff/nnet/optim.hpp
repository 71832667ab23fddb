#pragma once

#include <string>
#include <vector>

#include "exdiff/nnet/autograd.hpp"

namespace exdiff::nnet {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Real>
struct AdamState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::size_t step = 0;
};

struct StepReport {
  bool applied = true;
  std::string reason;
};

/// Bias-corrected Adam on params[i].grad. A non-finite gradient anywhere skips
/// the whole step (state untouched) and is reported.
template <typename Real>
StepReport adam_step(const std::vector<Parameter<Real>*>& params, const AdamConfig& cfg, AdamState<Real>& state);

/// shadow <- decay * shadow + (1 - decay) * params.
template <typename Real>
void ema_update(std::vector<Tensor<Real>>& shadow, const std::vector<Parameter<Real>*>& params, double decay);

template <typename Real>
std::vector<Tensor<Real>> snapshot(const std::vector<Parameter<Real>*>& params);

}  // namespace exdiff::nnet
