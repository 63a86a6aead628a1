#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmtl/adam.hpp"
#include "vmtl/distributions.hpp"
#include "vmtl/rng.hpp"
#include "vmtl/tensor.hpp"

namespace vmtl {

struct EncoderConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 512;
  std::size_t z_dim = 512;
  double dropout_p = 0.7;
  bool variational = true;      // false removes the variance head
  double lv_bias_init = 0.0;    // initial variance-head bias
};

// Shared amortized inference network:
//   dropout(p) -> fc(in -> hidden) + ELU -> fc(hidden -> hidden) + ELU
//   -> heads emitting mu and log-variance (clamped to +-30).
// The same architecture serves the representation encoder and the amortized
// classifier; deterministic baselines drop the variance head.
class EncoderNet {
 public:
  EncoderNet(EncoderConfig cfg, Rng init_rng, std::string name_prefix);

  const EncoderConfig& config() const { return cfg_; }

  // rows: [B x in_dim]; mask: dropout keep-mask of the same shape, required
  // when training and dropout_p > 0
  DiagGaussian forward(const Tensor& rows, bool training,
                       const Tensor* mask = nullptr) const;
  // deterministic head: the mean only
  Tensor forward_point(const Tensor& rows, bool training,
                       const Tensor* mask = nullptr) const;

  std::vector<NamedParam> params();
  // value copy with gradients disconnected, for snapshot evaluation
  EncoderNet detached_copy() const;

 private:
  Tensor trunk(const Tensor& rows, bool training, const Tensor* mask) const;

  EncoderConfig cfg_;
  std::string prefix_;
  Tensor w1_, b1_, w2_, b2_;
  Tensor w_mu_, b_mu_;
  Tensor w_lv_, b_lv_;  // absent when deterministic
};

// scaled dot-product attention readout: softmax(x D^T / sqrt(d)) D
// x: [d] or [k x d]; context: [r x d], nonempty
Tensor attend(const Tensor& x, const Tensor& context);

// Per-(task, class) matrices of raw feature rows used as attention context.
class ContextBank {
 public:
  ContextBank(std::size_t num_tasks, std::size_t num_classes,
              std::size_t feat_dim);

  void add(std::size_t task, std::size_t cls, std::span<const double> row);
  bool has(std::size_t task, std::size_t cls) const;
  // rows of class `cls` from `task`; throws if absent
  const Tensor& cell(std::size_t task, std::size_t cls) const;
  // concatenation of every class of `task` (fallback context)
  Tensor task_all(std::size_t task) const;

  std::size_t num_tasks() const { return num_tasks_; }
  std::size_t num_classes() const { return num_classes_; }

 private:
  struct Cell {
    std::vector<double> data;
    std::size_t rows = 0;
    mutable std::optional<Tensor> tensor;
  };
  const Cell& cell_ref(std::size_t task, std::size_t cls) const;

  std::size_t num_tasks_, num_classes_, feat_dim_;
  std::vector<Cell> cells_;
};

// One mixture component of the representation prior: attention over the
// stored rows of (task, cls), then the encoder. Falls back to attending over
// all of the task's rows when the class cell is empty.
DiagGaussian encode_conditioned(const EncoderNet& net, const Tensor& x,
                                std::size_t task, std::size_t cls,
                                const ContextBank& bank, bool training,
                                const Tensor* mask = nullptr);

// Per-task per-class classifier posteriors. Variational stores hold learnable
// (mu, log sigma^2) rows initialized at mu = 0 and a configurable sigma
// (default 0.1); deterministic stores hold zero-initialized point weights.
// Regression uses one row per task.
class ClassifierPosteriorStore {
 public:
  ClassifierPosteriorStore(std::size_t num_tasks, std::size_t num_classes,
                           std::size_t z_dim, bool variational,
                           double init_sigma = 0.1);

  std::size_t num_tasks() const { return num_tasks_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t z_dim() const { return z_dim_; }
  bool variational() const { return variational_; }

  Tensor& mu(std::size_t task);              // [C x z]
  Tensor& log_var(std::size_t task);         // [C x z], variational only
  const Tensor& mu(std::size_t task) const;
  const Tensor& log_var(std::size_t task) const;
  DiagGaussian gaussian(std::size_t task) const;  // 2-D view of a task

  // per-class view: C one-dimensional Gaussians, graph-connected
  std::vector<DiagGaussian> posterior(std::size_t task) const;

  std::vector<NamedParam> params();

 private:
  std::size_t num_tasks_, num_classes_, z_dim_;
  bool variational_;
  std::vector<Tensor> mu_, log_var_;
};

// Amortized classifier inference: one shared network maps a per-class mean
// feature vector to that class's posterior. Parameter count is independent of
// the number of classes.
class AmortizedClassifierNet {
 public:
  AmortizedClassifierNet(EncoderConfig cfg, Rng init_rng,
                         std::string name_prefix);

  const EncoderConfig& config() const { return net_.config(); }
  // class_means: [C x d] -> per-class posteriors stacked in rows [C x z]
  DiagGaussian forward(const Tensor& class_means, bool training,
                       const Tensor* mask = nullptr) const;
  std::vector<NamedParam> params() { return net_.params(); }

 private:
  EncoderNet net_;
};

// per-class DiagGaussian views of an amortized forward pass
std::vector<DiagGaussian> amortized_classifier(const AmortizedClassifierNet& net,
                                               const Tensor& class_means);

}  // namespace vmtl
