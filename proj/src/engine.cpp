#include "vmtl/engine.hpp"

#include "vmtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace vmtl {

ModelWiring RunConfig::wiring() const {
  ModelWiring w = ModelWiring::for_method(method);
  if (variational_z) {
    w.variational_z = *variational_z;
    if (!w.variational_z) w.z_prior = ModelWiring::Prior::None;
  }
  if (variational_w) {
    w.variational_w = *variational_w;
    if (!w.variational_w) {
      w.w_prior = ModelWiring::Prior::None;
      w.amortized_classifier = false;
    }
  }
  return w;
}

std::size_t RunConfig::kl_warmup_iters() const {
  const double w = kl_warmup_frac * static_cast<double>(iterations);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(w)));
}

double lr_at(std::size_t eta, const RunConfig& cfg) {
  const std::size_t halvings =
      cfg.lr_halve_every == 0 ? 0 : eta / cfg.lr_halve_every;
  return cfg.lr * std::pow(0.5, static_cast<double>(halvings));
}

Batch make_batch(const FeatureDataset& train, std::size_t k, const Rng& rng,
                 double target_lo, double target_hi) {
  if (k == 0) throw std::invalid_argument("make_batch: k must be positive");
  Batch batch;
  batch.per_class = k;
  batch.num_classes = train.num_classes;
  batch.train_counts.assign(train.num_tasks, 0);
  for (const auto& r : train.records) batch.train_counts[r.task] += 1;
  const double span = target_hi - target_lo;

  for (std::size_t t = 0; t < train.num_tasks; ++t) {
    TaskBatch tb;
    tb.task = t;
    std::vector<double> rows;
    tb.class_offsets.push_back(0);
    for (std::size_t c = 0; c < train.num_classes; ++c) {
      auto cell = train.cell(t, c);
      if (cell.empty())
        throw std::runtime_error("make_batch: task " + std::to_string(t) +
                                 " class " + std::to_string(c) +
                                 " has no training samples");
      Rng cell_rng = rng.derive("cell", t, c);
      std::vector<std::size_t> chosen;
      if (cell.size() >= k) {
        // partial Fisher-Yates: k distinct records
        for (std::size_t i = 0; i < k; ++i) {
          const std::size_t j = i + cell_rng.next_u64() % (cell.size() - i);
          std::swap(cell[i], cell[j]);
          chosen.push_back(cell[i]);
        }
      } else {
        for (std::size_t i = 0; i < k; ++i)
          chosen.push_back(cell[cell_rng.next_u64() % cell.size()]);
      }
      for (std::size_t idx : chosen) {
        const auto& r = train.records[idx];
        rows.insert(rows.end(), r.x.begin(), r.x.end());
        tb.labels.push_back(r.label);
        if (train.regression)
          tb.targets.push_back(span == 0.0 ? 0.0
                                           : (r.target - target_lo) / span);
      }
      tb.class_offsets.push_back(tb.labels.size());
    }
    tb.x = Tensor::from({tb.labels.size(), train.feat_dim}, std::move(rows));
    batch.tasks.push_back(std::move(tb));
  }
  return batch;
}

SnapshotPriors snapshot_posteriors(const TrainState& state) {
  SnapshotPriors snap;
  snap.bootstrap = false;
  const Model& model = state.model;
  const ModelConfig& cfg = model.cfg;

  if (cfg.wiring.amortized_classifier) {
    // posterior parameters produced by the current network on the train-split
    // class means, detached
    for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
      DiagGaussian g = model.amortized->forward(model.eval_class_means.at(t),
                                                /*training=*/false);
      snap.w_mu.push_back(g.mean.detach());
      snap.w_log_var.push_back(g.log_var.detach());
    }
  } else if (cfg.wiring.variational_w) {
    for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
      snap.w_mu.push_back(model.classifiers->mu(t).detach());
      snap.w_log_var.push_back(model.classifiers->log_var(t).detach());
    }
  }
  if (cfg.wiring.needs_beta())
    snap.encoder = model.encoder_for(0).detached_copy();
  return snap;
}

namespace {

void set_eval_class_means(TrainState& state) {
  Model& model = state.model;
  if (!model.cfg.wiring.amortized_classifier) return;
  const FeatureDataset& train = state.train_data;
  const std::size_t d = train.feat_dim;
  const std::size_t crows = model.cfg.classifier_rows();
  model.eval_class_means.clear();
  for (std::size_t t = 0; t < train.num_tasks; ++t) {
    std::vector<double> means(crows * d, 0.0);
    std::vector<double> counts(crows, 0.0);
    for (const auto& r : train.records) {
      if (r.task != t) continue;
      const std::size_t c = model.cfg.regression ? 0 : r.label;
      counts[c] += 1.0;
      for (std::size_t j = 0; j < d; ++j) means[c * d + j] += r.x[j];
    }
    for (std::size_t c = 0; c < crows; ++c) {
      if (counts[c] == 0.0)
        throw std::runtime_error("amortized classifier: task " +
                                 std::to_string(t) + " class " +
                                 std::to_string(c) + " has no train samples");
      for (std::size_t j = 0; j < d; ++j) means[c * d + j] /= counts[c];
    }
    model.eval_class_means.push_back(Tensor::from({crows, d}, std::move(means)));
  }
}

}  // namespace

TrainState init_run(const RunConfig& cfg) {
  TrainState state;
  state.cfg = cfg;
  state.base = Rng(cfg.seed);

  // data and split seeds depend only on the run seed, never on the method, so
  // every method compares on identical splits
  FeatureDataset full;
  if (cfg.synthetic && !cfg.dataset_path.empty())
    throw std::invalid_argument("run: give a dataset path or a synthetic spec, not both");
  if (cfg.synthetic)
    full = gen_synthetic(*cfg.synthetic, state.base.derive("data").seed());
  else if (!cfg.dataset_path.empty())
    full = load_dataset(cfg.dataset_path);
  else
    throw std::invalid_argument("run: no dataset given");

  SplitSpec split_spec{cfg.split_fraction, state.base.derive("split").seed()};
  auto [train, test] = split(full, split_spec);
  state.train_data = std::move(train);
  state.test_data = std::move(test);

  if (state.train_data.regression) {
    // standardize targets from the train split; the unit-variance likelihood
    // is then properly conditioned
    double mean = 0.0, var = 0.0;
    const double n = static_cast<double>(state.train_data.records.size());
    for (const auto& r : state.train_data.records) mean += r.target;
    mean /= n;
    for (const auto& r : state.train_data.records)
      var += (r.target - mean) * (r.target - mean);
    var /= n;
    if (!(var > 0.0))
      throw std::runtime_error("run: degenerate regression target range");
    state.target_lo = mean;
    state.target_hi = mean + std::sqrt(var);
  }

  ModelConfig mc;
  mc.method = cfg.method;
  mc.wiring = cfg.wiring();
  mc.num_tasks = state.train_data.num_tasks;
  mc.num_classes = state.train_data.num_classes;
  mc.in_dim = state.train_data.feat_dim;
  mc.hidden = cfg.hidden;
  mc.z_dim = cfg.z_dim;
  mc.dropout_p = cfg.dropout_p;
  mc.classifier_init_sigma = cfg.classifier_init_sigma;
  mc.encoder_init_sigma = cfg.encoder_init_sigma;
  mc.regression = state.train_data.regression;
  mc.tie_mixing = cfg.tie_mixing;
  state.model_cfg = mc;
  state.model = Model::init(mc, state.base.derive("init"));
  set_eval_class_means(state);

  state.snapshot.bootstrap = true;  // standard-normal components at eta = 0
  return state;
}

void train_step(TrainState& state, const Batch& batch) {
  const RunConfig& cfg = state.cfg;
  AnnealState anneal{cfg.tau0, cfg.tau_min, cfg.tau_decay,
                     cfg.kl_warmup_iters(), state.eta};

  NoiseBundle noise =
      draw_noise(state.model_cfg, batch, cfg.mc.num_z_samples,
                 cfg.mc.num_w_samples, state.base.derive("noise", state.eta));

  LossBreakdown loss;
  try {
    loss = empirical_loss(state.model, batch, state.snapshot, noise, cfg.mc,
                          anneal);
  } catch (const std::exception& e) {
    throw std::runtime_error("train_step: aborting at iteration " +
                             std::to_string(state.eta) + ": " + e.what());
  }

  auto params = state.model.params();
  zero_grads(params);
  backward(loss.total_node);
  state.adam.step(params, lr_at(state.eta, cfg));

  if (state.model_cfg.wiring.needs_snapshot())
    state.snapshot = snapshot_posteriors(state);

  state.history.push_back({state.eta, loss.total, loss.nll, loss.kl_z,
                           loss.kl_w, lr_at(state.eta, cfg),
                           tau_at(state.eta, anneal),
                           kl_weight_at(state.eta, anneal)});
  ++state.eta;
}

std::vector<std::vector<double>> expected_mixing_matrix(
    const GumbelMixing& mix) {
  const std::size_t T = mix.num_tasks();
  std::vector<std::vector<double>> m(
      T, std::vector<double>(T, std::nan("")));
  for (std::size_t t = 0; t < T; ++t) {
    auto row = mix.expected_row(t);
    auto others = mix.other_tasks(t);
    for (std::size_t j = 0; j < others.size(); ++j) m[t][others[j]] = row[j];
  }
  return m;
}

RunResult evaluate(TrainState& state) {
  Model& model = state.model;
  const FeatureDataset& test = state.test_data;
  const std::size_t T = test.num_tasks;
  RunResult res;
  res.method = state.cfg.method;
  res.regression = test.regression;
  res.num_tasks = T;
  res.history = state.history;

  std::vector<std::vector<double>> all_probs;
  std::vector<std::size_t> all_labels;

  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> rows;
    std::vector<std::size_t> labels;
    std::vector<double> raw_targets;
    for (const auto& r : test.records) {
      if (r.task != t) continue;
      rows.insert(rows.end(), r.x.begin(), r.x.end());
      labels.push_back(r.label);
      raw_targets.push_back(r.target);
    }
    const std::size_t n = labels.size();
    if (n == 0)
      throw std::runtime_error("evaluate: task " + std::to_string(t) +
                               " has no test samples");
    Tensor x = Tensor::from({n, test.feat_dim}, std::move(rows));
    Prediction pred = predict_rows(model, t, x, state.cfg.mc,
                                   state.base.derive("eval", t));
    if (test.regression) {
      const double span = state.target_hi - state.target_lo;
      double mse = 0.0, mean_y = 0.0, var_y = 0.0;
      for (double y : raw_targets) mean_y += y;
      mean_y /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double yhat = state.target_lo + pred.values[i] * span;
        mse += (yhat - raw_targets[i]) * (yhat - raw_targets[i]);
        var_y += (raw_targets[i] - mean_y) * (raw_targets[i] - mean_y);
      }
      mse /= static_cast<double>(n);
      var_y /= static_cast<double>(n);
      if (var_y == 0.0)
        throw std::runtime_error("evaluate: zero target variance in task " +
                                 std::to_string(t));
      res.per_task_metric.push_back(mse / var_y);
    } else {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& p = pred.probs[i];
        const std::size_t arg = static_cast<std::size_t>(
            std::max_element(p.begin(), p.end()) - p.begin());
        if (arg == labels[i]) ++correct;
        all_probs.push_back(p);
        all_labels.push_back(labels[i]);
      }
      res.per_task_metric.push_back(static_cast<double>(correct) /
                                    static_cast<double>(n));
    }
  }

  double avg = 0.0;
  for (double v : res.per_task_metric) avg += v;
  res.average_metric = avg / static_cast<double>(T);

  if (!test.regression) res.entropy_ratio = entropy_ratio(all_probs, all_labels);

  if (model.alpha()) res.alpha = expected_mixing_matrix(*model.alpha());
  if (model.beta()) res.beta = expected_mixing_matrix(*model.beta());
  return res;
}

RunResult run(const RunConfig& cfg) {
  TrainState state = init_run(cfg);
  const bool persist = !cfg.out_dir.empty();
  if (persist) std::filesystem::create_directories(cfg.out_dir);

  for (std::size_t eta = 0; eta < cfg.iterations; ++eta) {
    Batch batch =
        make_batch(state.train_data, cfg.batch_per_class,
                   state.base.derive("batch", eta), state.target_lo,
                   state.target_hi);
    train_step(state, batch);
    if (persist && cfg.checkpoint_every > 0 &&
        (eta + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(state.model,
                      cfg.out_dir + "/checkpoint_" + std::to_string(eta + 1) +
                          ".bin");
    }
  }
  if (persist) save_checkpoint(state.model, cfg.out_dir + "/checkpoint_final.bin");
  return evaluate(state);
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  auto params = model.params();
  out.write("VMTL", 4);
  write_pod<std::uint32_t>(out, 1);  // format version
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& p : params) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.tensor.shape();
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) write_pod<std::uint64_t>(out, d);
  }
  for (const auto& p : params) {
    const auto vals = p.tensor.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
}

void load_checkpoint(Model& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VMTL", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  auto params = model.params();
  const auto count = read_pod<std::uint64_t>(in);
  if (count != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& p : params) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p.name)
      throw std::runtime_error("checkpoint: expected parameter '" + p.name +
                               "', found '" + name + "'");
    const auto ndim = read_pod<std::uint32_t>(in);
    Shape shape(ndim);
    for (auto& d : shape)
      d = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
    if (shape != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + p.name +
                               "'");
  }
  for (auto& p : params) {
    auto vals = p.tensor.mutable_values();
    in.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated data section");
  }
}

}  // namespace vmtl
