#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vmtl/adam.hpp"
#include "vmtl/data.hpp"
#include "vmtl/model.hpp"
#include "vmtl/objective.hpp"

namespace vmtl {

struct RunConfig {
  MethodKind method = MethodKind::Vmtl;
  // ablation hooks: override which latent variables are probabilistic
  std::optional<bool> variational_z;
  std::optional<bool> variational_w;

  std::string dataset_path;                // mutually exclusive with synthetic
  std::optional<SyntheticSpec> synthetic;

  double split_fraction = 0.05;
  std::uint64_t seed = 0;
  std::size_t iterations = 3000;
  double lr = 1e-4;
  std::size_t lr_halve_every = 3000;
  std::size_t batch_per_class = 4;  // k samples per class per task
  MCConfig mc;

  double tau0 = 1.0;
  double tau_min = 0.5;
  double tau_decay = 1e-4;
  double kl_warmup_frac = 1.0 / 3.0;  // fraction of iterations to reach 1
  bool tie_mixing = false;

  std::size_t hidden = 512;
  std::size_t z_dim = 512;
  double dropout_p = 0.7;
  double classifier_init_sigma = 0.1;
  double encoder_init_sigma = 1.0;  // initial posterior scale of the encoder

  std::string out_dir;  // empty: keep everything in memory
  std::size_t checkpoint_every = 1000;

  ModelWiring wiring() const;
  std::size_t kl_warmup_iters() const;
};

struct HistoryRow {
  std::size_t iter = 0;
  double total = 0, nll = 0, kl_z = 0, kl_w = 0;
  double lr = 0, tau = 0, kl_weight = 0;
};

struct TrainState {
  RunConfig cfg;
  ModelConfig model_cfg;
  Model model;
  AdamState adam;
  SnapshotPriors snapshot;
  std::size_t eta = 0;
  Rng base;  // seed-derivation root for every random draw of the run
  FeatureDataset train_data, test_data;
  double target_lo = 0.0, target_hi = 1.0;  // regression scaling
  std::vector<HistoryRow> history;

  TrainState() : model{}, base(0) {}
};

struct RunResult {
  MethodKind method;
  bool regression = false;
  std::size_t num_tasks = 0;
  std::vector<double> per_task_metric;  // accuracy, or NMSE on raw targets
  double average_metric = 0.0;
  std::optional<double> entropy_ratio;
  std::optional<std::vector<std::vector<double>>> alpha;  // expected weights
  std::optional<std::vector<std::vector<double>>> beta;
  std::vector<HistoryRow> history;
};

double lr_at(std::size_t eta, const RunConfig& cfg);

// Exactly k rows per (task, class), drawn without replacement when the cell
// has at least k records and with replacement otherwise. Rows are grouped by
// task and contiguous by class. Regression targets are scaled by the train
// min/max map.
Batch make_batch(const FeatureDataset& train, std::size_t k, const Rng& rng,
                 double target_lo, double target_hi);

// Detached posterior copies that become the next iteration's mixture
// components; never receives gradients.
SnapshotPriors snapshot_posteriors(const TrainState& state);

// Builds train/test splits, the model and the bootstrap snapshot.
TrainState init_run(const RunConfig& cfg);

// One loss evaluation, backward pass and Adam update, then the snapshot
// refresh; eta advances and the loss history grows by one row.
void train_step(TrainState& state, const Batch& batch);

// Full training plus held-out evaluation.
RunResult run(const RunConfig& cfg);
RunResult evaluate(TrainState& state);

// expected (noise-free) mixing weight matrices, diagonal entries NaN
std::vector<std::vector<double>> expected_mixing_matrix(const GumbelMixing& mix);

// "VMTL" magic, format version, named parameter manifest, little-endian
// 64-bit floats
void save_checkpoint(Model& model, const std::string& path);
void load_checkpoint(Model& model, const std::string& path);

}  // namespace vmtl
