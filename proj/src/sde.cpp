#include "exdiff/sde.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "exdiff/error.hpp"
#include "exdiff/parallel.hpp"

namespace exdiff {

void OuveSchedule::validate() const {
  if (!(gamma > 0.0)) throw InvalidArgument("schedule: gamma must be positive");
  if (!(sigma_min > 0.0)) throw InvalidArgument("schedule: sigma_min must be positive");
  if (sigma_max < sigma_min) throw InvalidArgument("schedule: sigma_max must not be below sigma_min");
  if (!(t_eps > 0.0) || !(t_eps < t_max)) throw InvalidArgument("schedule: need 0 < t_eps < t_max");
  if (!std::isfinite(diffusion_coeff(t_max, *this))) throw InvalidArgument("schedule: g(t_max) not finite");
}

double OuveSchedule::log_ratio() const { return std::log(sigma_max / sigma_min); }

ComplexGrid drift(const ComplexGrid& x, const ComplexGrid& y, const OuveSchedule& s) {
  require_same_shape(x, y, "drift");
  ComplexGrid out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = s.gamma * (y.data[i] - x.data[i]);
  return out;
}

double diffusion_coeff(double t, const OuveSchedule& s) {
  if (t < 0.0 || t > s.t_max) {
    throw InvalidArgument("diffusion_coeff: t=" + std::to_string(t) + " outside [0, t_max]");
  }
  const double lr = s.log_ratio();
  return s.sigma_min * std::exp(t * lr) * std::sqrt(2.0 * lr);
}

ComplexGrid kernel_mean(const ComplexGrid& x0, const ComplexGrid& y, double t, const OuveSchedule& s) {
  require_same_shape(x0, y, "kernel_mean");
  if (t < 0.0) throw InvalidArgument("kernel_mean: negative time");
  const double keep = std::exp(-s.gamma * t);
  ComplexGrid out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < x0.size(); ++i) out.data[i] = keep * x0.data[i] + (1.0 - keep) * y.data[i];
  return out;
}

double kernel_var(double t, const OuveSchedule& s) {
  if (t < 0.0) throw InvalidArgument("kernel_var: negative time");
  const double lr = s.log_ratio();
  // r^{2t} - e^{-2 gamma t} written as e^{-2 gamma t} expm1(2t(lr + gamma)) to stay accurate near t = 0.
  const double bracket = std::exp(-2.0 * s.gamma * t) * std::expm1(2.0 * t * (lr + s.gamma));
  return s.sigma_min * s.sigma_min * bracket * lr / (s.gamma + lr);
}

double kernel_std(double t, const OuveSchedule& s) { return std::sqrt(kernel_var(t, s)); }

ComplexGrid sample_xt(const ComplexGrid& x0, const ComplexGrid& y, double t, const ComplexGrid& z,
                      const OuveSchedule& s) {
  require_same_shape(x0, z, "sample_xt");
  ComplexGrid out = kernel_mean(x0, y, t, s);
  const double sigma = kernel_std(t, s);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += sigma * z.data[i];
  return out;
}

ComplexGrid kernel_score(const ComplexGrid& xt, const ComplexGrid& x0, const ComplexGrid& y,
                         double t, const OuveSchedule& s) {
  require_same_shape(xt, x0, "kernel_score");
  if (t < s.t_eps) {
    throw InvalidArgument("kernel_score: t=" + std::to_string(t) + " below t_eps (sigma -> 0)");
  }
  const double var = kernel_var(t, s);
  if (!(var > 0.0)) throw InvalidArgument("kernel_score: zero kernel variance");
  ComplexGrid out = kernel_mean(x0, y, t, s);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = -(xt.data[i] - out.data[i]) / var;
  return out;
}

ComplexGrid complex_normal_grid(std::size_t rows, std::size_t cols, Rng& rng) {
  ComplexGrid g(rows, cols);
  for (auto& v : g.data) v = rng.complex_normal();
  return g;
}

ForwardSimulation simulate_forward(const ComplexGrid& x0, const ComplexGrid& y, double t_end,
                                   std::size_t n_steps, std::size_t n_paths, std::uint64_t seed,
                                   const OuveSchedule& s, std::size_t threads) {
  require_same_shape(x0, y, "simulate_forward");
  if (n_steps == 0) throw InvalidArgument("simulate_forward: n_steps must be positive");
  if (n_paths < 2) throw InvalidArgument("simulate_forward: need at least two paths");
  if (t_end < 0.0 || t_end > s.t_max) throw InvalidArgument("simulate_forward: t_end outside [0, t_max]");

  const std::size_t bins = x0.size();
  const double dt = t_end / static_cast<double>(n_steps);
  const double sqrt_dt = std::sqrt(dt);
  std::vector<double> g(n_steps);
  for (std::size_t k = 0; k < n_steps; ++k) g[k] = diffusion_coeff(static_cast<double>(k) * dt, s);

  std::vector<Complex> finals(n_paths * bins);
  parallel_for(
      n_paths,
      [&](std::size_t p) {
        Rng rng(seed, p);
        Complex* x = finals.data() + p * bins;
        for (std::size_t i = 0; i < bins; ++i) x[i] = x0.data[i];
        if (dt == 0.0) return;
        for (std::size_t k = 0; k < n_steps; ++k) {
          const double noise = g[k] * sqrt_dt;
          for (std::size_t i = 0; i < bins; ++i) {
            x[i] += s.gamma * (y.data[i] - x[i]) * dt + noise * rng.complex_normal();
          }
        }
      },
      threads);

  ForwardSimulation out;
  out.n_paths = n_paths;
  out.n_steps = n_steps;
  out.empirical_mean = ComplexGrid(x0.rows, x0.cols);
  for (std::size_t p = 0; p < n_paths; ++p) {
    for (std::size_t i = 0; i < bins; ++i) out.empirical_mean.data[i] += finals[p * bins + i];
  }
  for (auto& m : out.empirical_mean.data) m /= static_cast<double>(n_paths);
  double ss = 0.0;
  for (std::size_t p = 0; p < n_paths; ++p) {
    for (std::size_t i = 0; i < bins; ++i) ss += std::norm(finals[p * bins + i] - out.empirical_mean.data[i]);
  }
  out.empirical_var = ss / (static_cast<double>(bins) * static_cast<double>(n_paths - 1));
  out.mean_standard_error = std::sqrt(out.empirical_var / static_cast<double>(n_paths));
  return out;
}

}  // namespace exdiff
