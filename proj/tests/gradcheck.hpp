#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "exdiff/nnet/ops.hpp"
#include "exdiff/rng.hpp"

namespace exdiff::testing {

inline nnet::Tensor<double> random_tensor(nnet::Shape shape, Rng& rng, double scale = 1.0) {
  nnet::Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline nnet::Parameter<double> random_param(const char* name, nnet::Shape shape, Rng& rng, double scale = 1.0) {
  nnet::Parameter<double> p{name, random_tensor(std::move(shape), rng, scale), {}};
  p.zero_grad();
  return p;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // parameter holding the largest error
};

/// Central finite differences on `samples_per_param` random entries of every
/// parameter, against reverse-mode gradients of the same scalar loss.
inline GradCheck check_gradients(const std::vector<nnet::Parameter<double>*>& params,
                                 const std::function<nnet::Var<double>()>& loss_fn, std::size_t samples_per_param,
                                 Rng& rng, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  nnet::backward(loss_fn());
  GradCheck out;
  for (auto* p : params) {
    const std::size_t n = p->value.numel();
    for (std::size_t s = 0; s < std::min(samples_per_param, n); ++s) {
      const std::size_t i = samples_per_param >= n ? s : rng.index(n);
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = loss_fn().value()[0];
      p->value[i] = orig - h;
      const double down = loss_fn().value()[0];
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-7});
      const double rel = std::abs(numeric - analytic) / denom;
      if (rel > out.max_rel_error) out.max_rel_error = rel, out.worst = p->name;
      ++out.checked;
    }
  }
  return out;
}

/// Scalar probe sum(f .* R) with a fixed random R, so every output element
/// contributes a distinct weight to the gradient.
inline nnet::Var<double> probe(const nnet::Var<double>& f, std::uint64_t seed = 99) {
  Rng rng(seed);
  return nnet::sum(nnet::mul(f, nnet::constant(random_tensor(f.shape(), rng))));
}

}  // namespace exdiff::testing
