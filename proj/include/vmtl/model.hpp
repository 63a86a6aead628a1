#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vmtl/adam.hpp"
#include "vmtl/distributions.hpp"
#include "vmtl/inference.hpp"
#include "vmtl/rng.hpp"
#include "vmtl/tensor.hpp"

namespace vmtl {

enum class MethodKind { Stl, Vstl, Bmtl, Vbmtl, Vmtl, VmtlAc };

MethodKind method_from_string(const std::string& name);
std::string method_name(MethodKind m);
const std::vector<std::string>& method_names();

// How a method is assembled: encoder sharing, which latent variables are
// probabilistic, and which priors regularize them.
struct ModelWiring {
  enum class Prior { None, StandardNormal, GumbelMixture };
  bool shared_encoder = true;
  bool variational_z = true;
  bool variational_w = true;
  Prior z_prior = Prior::GumbelMixture;
  Prior w_prior = Prior::GumbelMixture;
  bool amortized_classifier = false;

  static ModelWiring for_method(MethodKind m);
  bool needs_alpha() const {
    return variational_w && w_prior == Prior::GumbelMixture;
  }
  bool needs_beta() const {
    return variational_z && z_prior == Prior::GumbelMixture;
  }
  bool needs_snapshot() const { return needs_alpha() || needs_beta(); }
};

struct ModelConfig {
  MethodKind method = MethodKind::Vmtl;
  ModelWiring wiring = ModelWiring::for_method(MethodKind::Vmtl);
  std::size_t num_tasks = 0;
  std::size_t num_classes = 0;  // strata count for regression batching
  std::size_t in_dim = 0;
  std::size_t hidden = 512;
  std::size_t z_dim = 512;
  double dropout_p = 0.7;
  double classifier_init_sigma = 0.1;
  double encoder_init_sigma = 1.0;
  bool regression = false;
  bool tie_mixing = false;

  // classifier rows: one per class, or a single regressor
  std::size_t classifier_rows() const { return regression ? 1 : num_classes; }
};

// One balanced batch, rows grouped by task and, within a task, contiguous by
// class so attention contexts can be formed per class group.
struct TaskBatch {
  std::size_t task = 0;
  Tensor x;                            // [B_t x d]
  std::vector<std::size_t> labels;     // class / stratum per row
  std::vector<double> targets;         // scaled targets (regression)
  std::vector<std::size_t> class_offsets;  // C+1 row offsets of class groups
  std::size_t rows() const { return labels.size(); }
};

struct Batch {
  std::vector<TaskBatch> tasks;
  std::size_t per_class = 0;
  std::size_t num_classes = 0;
  std::vector<std::size_t> train_counts;  // N_t of the source train split
  std::size_t total_rows() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.rows();
    return n;
  }
  std::size_t train_count_for(std::size_t task) const {
    return task < train_counts.size() ? train_counts[task] : 0;
  }
};

// Frozen posterior copies from the previous iteration. Until the first
// optimizer step every mixture component is standard normal. None of these
// tensors require gradients.
struct SnapshotPriors {
  bool bootstrap = true;
  std::vector<Tensor> w_mu, w_log_var;   // per task [C x z]
  std::optional<EncoderNet> encoder;     // detached copy for z-prior components
};

// All stochastic draws of one training iteration, pre-drawn so a loss
// evaluation is a pure function of the parameters (finite-difference checks
// re-evaluate with the same bundle).
struct TaskNoise {
  Tensor dropout_mask;             // [B_t x d]
  Tensor amortized_mask;           // [C x d]
  std::vector<Tensor> z_eps;       // L of [B_t x z]
  std::vector<Tensor> w_eps;       // M of [C x z]
  std::vector<double> g_alpha, g_beta;  // T-1 Gumbel draws each
};

struct NoiseBundle {
  std::vector<TaskNoise> tasks;
};

struct Model {
  ModelConfig cfg;
  std::vector<EncoderNet> encoders;  // one if shared, else per task
  std::optional<ClassifierPosteriorStore> classifiers;
  std::optional<AmortizedClassifierNet> amortized;
  std::optional<GumbelMixing> alpha_mix;  // classifier-prior weights
  std::optional<GumbelMixing> beta_mix;   // representation-prior weights

  // per-task class mean features used by the amortized classifier outside a
  // training batch (set from the train split before evaluation)
  std::vector<Tensor> eval_class_means;

  static Model init(const ModelConfig& cfg, Rng init_rng);

  const EncoderNet& encoder_for(std::size_t task) const;
  EncoderNet& encoder_for(std::size_t task);
  GumbelMixing* alpha();  // null when the wiring has no classifier mixing
  GumbelMixing* beta();   // alias of alpha when mixing weights are tied
  const GumbelMixing* alpha() const;
  const GumbelMixing* beta() const;

  std::vector<NamedParam> params();
};

// Gumbel-mask dropout noise and MC draws for one iteration, keyed by task so
// per-task streams do not depend on which other tasks exist.
NoiseBundle draw_noise(const ModelConfig& cfg, const Batch& batch,
                       std::size_t num_z_samples, std::size_t num_w_samples,
                       const Rng& iter_rng);

}  // namespace vmtl
