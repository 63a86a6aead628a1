#pragma once

// Test-only Monte Carlo oracles. These deliberately avoid the library's
// tensor/KL code paths: plain double arithmetic over raw parameter vectors,
// so they stay an independent check on the closed forms.

#include <cmath>
#include <cstddef>
#include <vector>

#include "vmtl/rng.hpp"

namespace oracle {

struct Gaussian {
  std::vector<double> mean;
  std::vector<double> log_var;
};

struct McEstimate {
  double value;
  double std_error;
};

inline double log_pdf(const Gaussian& g, const std::vector<double>& x) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  double acc = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - g.mean[j];
    acc += -0.5 * (kLog2Pi + g.log_var[j] + d * d * std::exp(-g.log_var[j]));
  }
  return acc;
}

// E_q[log q - log p] by sampling from q
inline McEstimate mc_kl(const Gaussian& q, const Gaussian& p, std::size_t n,
                        vmtl::Rng& rng) {
  double s = 0.0, s2 = 0.0;
  std::vector<double> z(q.mean.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < z.size(); ++j)
      z[j] = q.mean[j] + std::exp(0.5 * q.log_var[j]) * rng.normal();
    const double v = log_pdf(q, z) - log_pdf(p, z);
    s += v;
    s2 += v * v;
  }
  const double mean = s / static_cast<double>(n);
  const double var = s2 / static_cast<double>(n) - mean * mean;
  return {mean, std::sqrt(std::max(0.0, var) / static_cast<double>(n))};
}

// E_q[log q - log(sum_i w_i p_i)] by sampling from q
inline McEstimate mc_kl_mixture(const Gaussian& q,
                                const std::vector<Gaussian>& comps,
                                const std::vector<double>& weights,
                                std::size_t n, vmtl::Rng& rng) {
  double s = 0.0, s2 = 0.0;
  std::vector<double> z(q.mean.size());
  std::vector<double> lp(comps.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < z.size(); ++j)
      z[j] = q.mean[j] + std::exp(0.5 * q.log_var[j]) * rng.normal();
    for (std::size_t k = 0; k < comps.size(); ++k)
      lp[k] = std::log(weights[k]) + log_pdf(comps[k], z);
    double mx = lp[0];
    for (double v : lp) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : lp) acc += std::exp(v - mx);
    const double log_mix = mx + std::log(acc);
    const double v = log_pdf(q, z) - log_mix;
    s += v;
    s2 += v * v;
  }
  const double mean = s / static_cast<double>(n);
  const double var = s2 / static_cast<double>(n) - mean * mean;
  return {mean, std::sqrt(std::max(0.0, var) / static_cast<double>(n))};
}

inline Gaussian random_gaussian(vmtl::Rng& rng, std::size_t dim,
                                double mean_scale = 1.5,
                                double log_var_scale = 1.0) {
  Gaussian g;
  g.mean.resize(dim);
  g.log_var.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    g.mean[j] = mean_scale * rng.normal();
    g.log_var[j] = log_var_scale * rng.normal();
  }
  return g;
}

}  // namespace oracle
