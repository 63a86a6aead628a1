#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "vmtl/model.hpp"
#include "vmtl/tensor.hpp"

namespace vmtl {

struct MCConfig {
  std::size_t num_z_samples = 10;  // L
  std::size_t num_w_samples = 10;  // M
};

// Temperature decay and KL warm-up over the iteration counter eta:
//   tau(eta)       = max(tau_min, tau0 * exp(-decay_rate * eta))
//   kl_weight(eta) = min(1, eta / warmup_iters)
struct AnnealState {
  double tau0 = 1.0;
  double tau_min = 0.5;
  double decay_rate = 1e-4;
  std::size_t warmup_iters = 1;
  std::size_t iter = 0;
};

double tau_at(std::size_t eta, const AnnealState& anneal);
double kl_weight_at(std::size_t eta, const AnnealState& anneal);

struct LossBreakdown {
  double nll = 0.0;
  double kl_z = 0.0;
  double kl_w = 0.0;
  double total = 0.0;
  Tensor total_node;  // graph root for backward
};

// mean cross-entropy of logit rows against integer labels (stable, exact)
Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<std::size_t>& labels);

// (1/(L*M)) sum over draws of -log softmax(<z_l, w_m>)_y for one sample
Tensor nll_classification(const Tensor& z_samples,
                          const std::vector<Tensor>& w_samples, std::size_t y);
// (1/(L*M)) sum over draws of 0.5 (<z_l, w_m> - y)^2 for one sample
Tensor nll_regression(const Tensor& z_samples,
                      const std::vector<Tensor>& w_samples, double y);

// The training objective over one balanced batch: per task the mean sample
// NLL plus (warm-up weighted) per-sample representation KL and per-task
// classifier KL against the snapshot mixture priors; averaged over tasks.
// Gradients reach the live encoder, classifier and mixing parameters only;
// snapshot components receive none.
LossBreakdown empirical_loss(Model& model, const Batch& batch,
                             const SnapshotPriors& snapshot,
                             const NoiseBundle& noise, const MCConfig& mc,
                             const AnnealState& anneal);

// Monte Carlo predictive distribution: probability-space average of
// softmax(<z,w>) over L x M posterior draws (classification), or the mean of
// <z,w> (regression, in scaled target space). Rows of x are test inputs.
struct Prediction {
  std::vector<std::vector<double>> probs;  // [N x C] classification
  std::vector<double> values;              // [N] regression
};

Prediction predict_rows(const Model& model, std::size_t task, const Tensor& x,
                        const MCConfig& mc, Rng rng);
// single-input convenience: class probabilities or one regression value
std::vector<double> predict(const Model& model, std::size_t task,
                            const std::vector<double>& x, const MCConfig& mc,
                            Rng rng);

}  // namespace vmtl
