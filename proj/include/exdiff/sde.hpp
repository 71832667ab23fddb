#pragma once

#include <cstdint>

#include "exdiff/grid.hpp"
#include "exdiff/rng.hpp"

namespace exdiff {

/// Ornstein-Uhlenbeck drift towards the condition y with a variance-exploding
/// noise schedule:  dx = gamma (y - x) dt + g(t) dw.
struct OuveSchedule {
  double gamma = 1.5;
  double sigma_min = 0.05;
  double sigma_max = 0.5;
  double t_max = 1.0;
  double t_eps = 0.03;

  /// gamma > 0, 0 < sigma_min <= sigma_max, 0 < t_eps < t_max.
  /// sigma_min == sigma_max is accepted as the noiseless (ODE) limit.
  void validate() const;

  double log_ratio() const;
};

/// gamma (y - x), elementwise.
ComplexGrid drift(const ComplexGrid& x, const ComplexGrid& y, const OuveSchedule& s);

/// g(t) = sigma_min (sigma_max/sigma_min)^t sqrt(2 log(sigma_max/sigma_min)).
double diffusion_coeff(double t, const OuveSchedule& s);

/// e^{-gamma t} x0 + (1 - e^{-gamma t}) y.
ComplexGrid kernel_mean(const ComplexGrid& x0, const ComplexGrid& y, double t, const OuveSchedule& s);

/// Closed-form marginal variance of the forward process started at a point.
double kernel_var(double t, const OuveSchedule& s);
double kernel_std(double t, const OuveSchedule& s);

/// mu(x0, y, t) + sigma(t) z.
ComplexGrid sample_xt(const ComplexGrid& x0, const ComplexGrid& y, double t, const ComplexGrid& z,
                      const OuveSchedule& s);

/// -(x_t - mu) / sigma(t)^2, the score of the perturbation kernel.
/// Throws InvalidArgument for t below the schedule's t_eps.
ComplexGrid kernel_score(const ComplexGrid& xt, const ComplexGrid& x0, const ComplexGrid& y,
                         double t, const OuveSchedule& s);

/// Grid of i.i.d. circularly-symmetric complex normals (E|z|^2 = 1).
ComplexGrid complex_normal_grid(std::size_t rows, std::size_t cols, Rng& rng);

struct ForwardSimulation {
  ComplexGrid empirical_mean;
  double empirical_var = 0.0;        // pooled E|x - mean|^2 over bins and paths
  double mean_standard_error = 0.0;  // sqrt(empirical_var / n_paths)
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
};

/// Euler-Maruyama simulation of the forward SDE from the point x0. Path p uses
/// the random stream (seed, p), so results do not depend on `threads`.
ForwardSimulation simulate_forward(const ComplexGrid& x0, const ComplexGrid& y, double t_end,
                                   std::size_t n_steps, std::size_t n_paths, std::uint64_t seed,
                                   const OuveSchedule& s, std::size_t threads = 0);

}  // namespace exdiff
