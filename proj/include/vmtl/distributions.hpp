#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vmtl/rng.hpp"
#include "vmtl/tensor.hpp"

namespace vmtl {

// Diagonal Gaussian parameterized by mean and log-variance tensors of equal
// shape. Log-variance keeps the variance positive with no constraint; 1-D for
// a single distribution, 2-D when rows hold independent distributions.
struct DiagGaussian {
  Tensor mean;
  Tensor log_var;

  DiagGaussian() = default;
  DiagGaussian(Tensor mean, Tensor log_var);

  std::size_t dim() const { return mean.size(); }
  static DiagGaussian standard(const Shape& shape);
  DiagGaussian detach() const { return {mean.detach(), log_var.detach()}; }
};

// mean + exp(0.5 log_var) * noise; differentiable in mean and log_var
Tensor rsample(const DiagGaussian& q, const Tensor& noise);

// g = -log(-log(u)) for u in the open unit interval
double sample_gumbel(double u);
std::vector<double> sample_gumbel_row(Rng& rng, std::size_t n);

// softmax((logits + g) / tau); logits exclude the self-task entry
Tensor gumbel_weights(const Tensor& logit_row, double tau,
                      std::span<const double> g_row);

// closed-form KL(q || p) between diagonal Gaussians, summed over all entries
Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);
// per-row KL for 2-D Gaussians: [m x n] parameters -> [m]
Tensor kl_diag_rowwise(const DiagGaussian& q, const DiagGaussian& p);

// Mixture of diagonal Gaussians with graph-carrying weights. Weights must sum
// to one (checked to 1e-9).
struct MixturePrior {
  std::vector<DiagGaussian> components;
  Tensor weights;

  MixturePrior(std::vector<DiagGaussian> components, Tensor weights);
  std::size_t size() const { return components.size(); }
};

// sum_i w_i KL(q || component_i): the closed-form upper bound on the mixture
// KL; gradients reach q, the weights, and any component that carries them
Tensor kl_mixture_upper(const DiagGaussian& q, const MixturePrior& prior);

// Learnable pairwise task-relatedness logits (stored in the log domain) plus
// a softmax temperature. The diagonal never contributes: weight rows are
// built from the off-diagonal entries only. Two independent instances exist
// in the full model, one for classifier priors and one for representation
// priors; a config flag can tie them.
class GumbelMixing {
 public:
  explicit GumbelMixing(std::size_t num_tasks, double temperature = 1.0);

  std::size_t num_tasks() const { return num_tasks_; }
  Tensor& logits() { return logits_; }
  const Tensor& logits() const { return logits_; }
  double temperature() const { return temperature_; }
  void set_temperature(double tau);

  // relaxed mixing weights for row t given per-iteration Gumbel noise
  Tensor weights_row(std::size_t t, std::span<const double> g_row) const;
  Tensor weights_row(std::size_t t, double tau,
                     std::span<const double> g_row) const;
  // noise-free expectation softmax(log pi) of row t, temperature-free
  std::vector<double> expected_row(std::size_t t) const;
  // column index -> position in row t (skipping the diagonal)
  std::vector<std::size_t> other_tasks(std::size_t t) const;

 private:
  std::size_t num_tasks_;
  double temperature_;
  Tensor logits_;  // [T x T], diagonal unused
};

}  // namespace vmtl
