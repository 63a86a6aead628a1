#include "vmtl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vmtl {

double tau_at(std::size_t eta, const AnnealState& anneal) {
  const double tau =
      anneal.tau0 * std::exp(-anneal.decay_rate * static_cast<double>(eta));
  return std::max(anneal.tau_min, tau);
}

double kl_weight_at(std::size_t eta, const AnnealState& anneal) {
  if (anneal.warmup_iters == 0) return 1.0;
  return std::min(1.0, static_cast<double>(eta) /
                           static_cast<double>(anneal.warmup_iters));
}

Tensor cross_entropy_rows(const Tensor& logits,
                          const std::vector<std::size_t>& labels) {
  const std::size_t rows = logits.shape().at(0);
  const std::size_t cols = logits.shape().at(1);
  if (labels.size() != rows)
    throw ShapeMismatchError("cross_entropy", logits.shape(), {labels.size()});
  std::vector<std::size_t> picked(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= cols)
      throw std::invalid_argument("cross_entropy: label " +
                                  std::to_string(labels[i]) +
                                  " out of range for " +
                                  std::to_string(cols) + " classes");
    picked[i] = i * cols + labels[i];
  }
  Tensor mx = rowwise_max_const(logits);
  Tensor lse = add(log(rowwise_sum(exp(sub_colvec(logits, mx)))), mx);
  return mean(sub(lse, gather(logits, std::move(picked))));
}

Tensor nll_classification(const Tensor& z_samples,
                          const std::vector<Tensor>& w_samples,
                          std::size_t y) {
  if (w_samples.empty())
    throw std::invalid_argument("nll: no classifier samples");
  const std::size_t num_classes = w_samples.front().shape().at(0);
  if (y >= num_classes)
    throw std::invalid_argument("nll: label " + std::to_string(y) +
                                " out of range for " +
                                std::to_string(num_classes) + " classes");
  const std::size_t L = z_samples.shape().at(0);
  std::vector<std::size_t> labels(L, y);
  Tensor acc;
  for (const auto& w : w_samples) {
    Tensor ce = cross_entropy_rows(matmul(z_samples, transpose(w)), labels);
    acc = acc.defined() ? add(acc, ce) : ce;
  }
  return scale(acc, 1.0 / static_cast<double>(w_samples.size()));
}

Tensor nll_regression(const Tensor& z_samples,
                      const std::vector<Tensor>& w_samples, double y) {
  if (w_samples.empty())
    throw std::invalid_argument("nll: no regressor samples");
  const std::size_t L = z_samples.shape().at(0);
  Tensor acc;
  for (const auto& w : w_samples) {
    Tensor pred = reshape(matmul(z_samples, transpose(w)), {L});
    Tensor resid = add_const(pred, -y);
    Tensor term = scale(mean(mul(resid, resid)), 0.5);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / static_cast<double>(w_samples.size()));
}

namespace {

// Conditioned representation components keep at least unit variance. The
// encoder can emit arbitrarily sharp outputs as training tightens the
// posterior; carried into the prior, the exp(-lv_p) factor makes the KL
// arbitrarily stiff and the optimization diverges. Flooring the component
// variance keeps the mean-transfer signal and caps the stiffness at one.
constexpr double kPriorLogVarFloor = 0.0;

DiagGaussian floor_component(const DiagGaussian& comp) {
  std::vector<double> lv(comp.log_var.values().begin(),
                         comp.log_var.values().end());
  bool changed = false;
  for (auto& v : lv)
    if (v < kPriorLogVarFloor) {
      v = kPriorLogVarFloor;
      changed = true;
    }
  if (!changed) return comp;
  return {comp.mean, Tensor::from(comp.log_var.shape(), std::move(lv))};
}

Tensor constant_rows(const TaskBatch& tb, std::size_t row0, std::size_t row1,
                     std::size_t dim) {
  std::vector<double> vals(tb.x.values().begin() + row0 * dim,
                           tb.x.values().begin() + row1 * dim);
  return Tensor::from({row1 - row0, dim}, std::move(vals));
}

// Per-class attention over another task's stored rows, stacked back in batch
// order; evaluated with the snapshot encoder, so no gradients flow here. The
// pass shares the posterior's dropout mask: prior and posterior then see the
// same input projection and their KL measures content, not mask noise.
DiagGaussian conditioned_component(const EncoderNet& snapshot_encoder,
                                   const TaskBatch& tb,
                                   const ContextBank& bank,
                                   std::size_t other_task,
                                   const Tensor* dropout_mask) {
  const std::size_t d = tb.x.shape().at(1);
  std::vector<Tensor> agg_parts;
  const std::size_t num_classes = tb.class_offsets.size() - 1;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t r0 = tb.class_offsets[c], r1 = tb.class_offsets[c + 1];
    if (r0 == r1) continue;
    Tensor rows = constant_rows(tb, r0, r1, d);
    const Tensor context = bank.has(other_task, c)
                               ? bank.cell(other_task, c)
                               : bank.task_all(other_task);
    agg_parts.push_back(attend(rows, context));
  }
  Tensor agg = agg_parts.size() == 1 ? agg_parts.front()
                                     : concat_rows(agg_parts);
  return snapshot_encoder.forward(agg, /*training=*/dropout_mask != nullptr,
                                  dropout_mask);
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("empirical_loss: non-finite ") +
                             term);
}

}  // namespace

LossBreakdown empirical_loss(Model& model, const Batch& batch,
                             const SnapshotPriors& snapshot,
                             const NoiseBundle& noise, const MCConfig& mc,
                             const AnnealState& anneal) {
  const ModelConfig& cfg = model.cfg;
  const ModelWiring& wiring = cfg.wiring;
  if (wiring.needs_snapshot() && cfg.num_tasks < 2)
    throw std::invalid_argument(
        "empirical_loss: mixture priors are undefined for a single task");
  if (batch.tasks.empty())
    throw std::invalid_argument("empirical_loss: empty batch");

  const double tau = tau_at(anneal.iter, anneal);
  const double kl_weight = kl_weight_at(anneal.iter, anneal);
  if (model.alpha()) model.alpha()->set_temperature(tau);
  if (model.beta()) model.beta()->set_temperature(tau);

  const std::size_t L = wiring.variational_z ? mc.num_z_samples : 1;
  const std::size_t M = wiring.variational_w ? mc.num_w_samples : 1;

  // attention context: the balanced batch itself, per (task, class)
  std::optional<ContextBank> bank;
  if (wiring.needs_beta() && !snapshot.bootstrap) {
    bank.emplace(cfg.num_tasks, batch.num_classes, cfg.in_dim);
    for (const auto& tb : batch.tasks) {
      const std::size_t d = tb.x.shape().at(1);
      for (std::size_t r = 0; r < tb.rows(); ++r)
        bank->add(tb.task, tb.labels[r],
                  std::span<const double>(tb.x.values().data() + r * d, d));
    }
  }

  Tensor nll_sum, klz_sum, klw_sum;
  auto accumulate = [](Tensor& acc, const Tensor& term) {
    acc = acc.defined() ? add(acc, term) : term;
  };

  for (const auto& tb : batch.tasks) {
    const std::size_t t = tb.task;
    const TaskNoise& tn = noise.tasks.at(t);
    const EncoderNet& enc = model.encoder_for(t);
    const bool training_dropout = cfg.dropout_p > 0.0;

    // representation posterior and draws
    DiagGaussian q_z;
    std::vector<Tensor> z_draws;
    if (wiring.variational_z) {
      q_z = enc.forward(tb.x, /*training=*/true,
                        training_dropout ? &tn.dropout_mask : nullptr);
      if (tn.z_eps.size() < L)
        throw std::invalid_argument("empirical_loss: missing z noise");
      for (std::size_t l = 0; l < L; ++l)
        z_draws.push_back(rsample(q_z, tn.z_eps[l]));
    } else {
      z_draws.push_back(enc.forward_point(
          tb.x, /*training=*/true,
          training_dropout ? &tn.dropout_mask : nullptr));
    }
    Tensor z_stack =
        z_draws.size() == 1 ? z_draws.front() : concat_rows(z_draws);

    // classifier posterior and draws
    DiagGaussian q_w;
    std::vector<Tensor> w_draws;
    if (wiring.amortized_classifier) {
      // per-class means of the current batch rows
      const std::size_t d = cfg.in_dim;
      const std::size_t crows = cfg.classifier_rows();
      std::vector<double> means(crows * d, 0.0);
      std::vector<double> counts(crows, 0.0);
      for (std::size_t r = 0; r < tb.rows(); ++r) {
        const std::size_t c = cfg.regression ? 0 : tb.labels[r];
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j)
          means[c * d + j] += tb.x.values()[r * d + j];
      }
      for (std::size_t c = 0; c < crows; ++c) {
        if (counts[c] == 0.0)
          throw std::runtime_error(
              "empirical_loss: class " + std::to_string(c) +
              " has no samples in the conditioning batch for task " +
              std::to_string(t));
        for (std::size_t j = 0; j < d; ++j) means[c * d + j] /= counts[c];
      }
      Tensor mean_rows = Tensor::from({crows, d}, std::move(means));
      q_w = model.amortized->forward(
          mean_rows, /*training=*/true,
          training_dropout ? &tn.amortized_mask : nullptr);
    } else if (wiring.variational_w) {
      q_w = model.classifiers->gaussian(t);
    }
    if (wiring.variational_w) {
      if (tn.w_eps.size() < M)
        throw std::invalid_argument("empirical_loss: missing w noise");
      for (std::size_t m = 0; m < M; ++m)
        w_draws.push_back(rsample(q_w, tn.w_eps[m]));
    } else {
      w_draws.push_back(model.classifiers->mu(t));
    }

    // likelihood
    Tensor nll_t;
    if (cfg.regression) {
      std::vector<double> y_tiled;
      y_tiled.reserve(L * tb.rows());
      for (std::size_t l = 0; l < L; ++l)
        y_tiled.insert(y_tiled.end(), tb.targets.begin(), tb.targets.end());
      for (const auto& w : w_draws) {
        Tensor pred = reshape(matmul(z_stack, transpose(w)), {L * tb.rows()});
        Tensor resid = sub(pred, Tensor::vector(y_tiled));
        Tensor term = scale(mean(mul(resid, resid)), 0.5);
        accumulate(nll_t, term);
      }
    } else {
      std::vector<std::size_t> labels_tiled;
      labels_tiled.reserve(L * tb.rows());
      for (std::size_t l = 0; l < L; ++l)
        labels_tiled.insert(labels_tiled.end(), tb.labels.begin(),
                            tb.labels.end());
      for (const auto& w : w_draws)
        accumulate(nll_t, cross_entropy_rows(matmul(z_stack, transpose(w)),
                                             labels_tiled));
    }
    nll_t = scale(nll_t, 1.0 / static_cast<double>(w_draws.size()));
    accumulate(nll_sum, nll_t);

    // representation KL, averaged per sample like the likelihood term
    if (wiring.variational_z && wiring.z_prior != ModelWiring::Prior::None) {
      if (wiring.z_prior == ModelWiring::Prior::StandardNormal) {
        DiagGaussian std_prior = DiagGaussian::standard(q_z.mean.shape());
        accumulate(klz_sum, mean(kl_diag_rowwise(q_z, std_prior)));
      } else {
        Tensor beta_row = model.beta()->weights_row(t, tau, tn.g_beta);
        std::vector<Tensor> comps;
        for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
          if (i == t) continue;
          DiagGaussian comp;
          if (snapshot.bootstrap) {
            comp = DiagGaussian::standard(q_z.mean.shape());
          } else {
            comp = floor_component(conditioned_component(
                *snapshot.encoder, tb, *bank, i,
                training_dropout ? &tn.dropout_mask : nullptr));
          }
          comps.push_back(mean(kl_diag_rowwise(q_z, comp)));
        }
        accumulate(klz_sum, sum(mul(beta_row, concat_rows(comps))));
      }
    }

    // Classifier KL: one whole-posterior term per task against a sum of
    // per-sample likelihoods, so the mean-based batch estimator carries it
    // at 1/N_t of a per-sample term.
    if (wiring.variational_w && wiring.w_prior != ModelWiring::Prior::None) {
      const double per_task_scale =
          1.0 / static_cast<double>(std::max<std::size_t>(
                    1, batch.train_count_for(t)));
      Tensor klw_t;
      if (wiring.w_prior == ModelWiring::Prior::StandardNormal) {
        DiagGaussian std_prior = DiagGaussian::standard(q_w.mean.shape());
        klw_t = sum(kl_diag_rowwise(q_w, std_prior));
      } else {
        Tensor alpha_row = model.alpha()->weights_row(t, tau, tn.g_alpha);
        std::vector<Tensor> comps;
        for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
          if (i == t) continue;
          DiagGaussian comp =
              snapshot.bootstrap
                  ? DiagGaussian::standard(q_w.mean.shape())
                  : DiagGaussian{snapshot.w_mu.at(i), snapshot.w_log_var.at(i)};
          // amortized posteriors can sharpen without bound like the encoder;
          // their snapshot components get the same variance floor
          if (wiring.amortized_classifier) comp = floor_component(comp);
          comps.push_back(sum(kl_diag_rowwise(q_w, comp)));
        }
        klw_t = sum(mul(alpha_row, concat_rows(comps)));
      }
      accumulate(klw_sum, scale(klw_t, per_task_scale));
    }
  }

  const double task_norm = 1.0 / static_cast<double>(batch.tasks.size());
  LossBreakdown out;
  Tensor nll_mean = scale(nll_sum, task_norm);
  out.nll = nll_mean.value();
  check_finite(out.nll, "nll");

  Tensor total = nll_mean;
  Tensor kl_total;
  if (klz_sum.defined()) {
    Tensor klz = scale(klz_sum, task_norm);
    out.kl_z = klz.value();
    check_finite(out.kl_z, "kl_z");
    kl_total = klz;
  }
  if (klw_sum.defined()) {
    Tensor klw = scale(klw_sum, task_norm);
    out.kl_w = klw.value();
    check_finite(out.kl_w, "kl_w");
    kl_total = kl_total.defined() ? add(kl_total, klw) : klw;
  }
  if (kl_total.defined()) total = add(total, scale(kl_total, kl_weight));
  out.total = total.value();
  check_finite(out.total, "total");
  out.total_node = total;
  return out;
}

namespace {

DiagGaussian eval_classifier_posterior(const Model& model, std::size_t task) {
  if (model.cfg.wiring.amortized_classifier) {
    if (model.eval_class_means.size() <= task ||
        !model.eval_class_means[task].defined())
      throw std::logic_error(
          "predict: amortized classifier needs eval class means");
    return model.amortized->forward(model.eval_class_means[task],
                                    /*training=*/false);
  }
  return model.classifiers->gaussian(task);
}

}  // namespace

Prediction predict_rows(const Model& model, std::size_t task, const Tensor& x,
                        const MCConfig& mc, Rng rng) {
  const ModelConfig& cfg = model.cfg;
  const ModelWiring& wiring = cfg.wiring;
  const std::size_t n = x.shape().at(0);
  const std::size_t crows = cfg.classifier_rows();
  const std::size_t L = wiring.variational_z ? mc.num_z_samples : 1;
  const std::size_t M = wiring.variational_w ? mc.num_w_samples : 1;
  const EncoderNet& enc = model.encoder_for(task);

  // z draws
  std::vector<Tensor> z_draws;
  if (wiring.variational_z) {
    DiagGaussian q_z = enc.forward(x, /*training=*/false);
    Rng z_rng = rng.derive("z");
    for (std::size_t l = 0; l < L; ++l) {
      std::vector<double> eps(n * cfg.z_dim);
      for (auto& v : eps) v = z_rng.normal();
      z_draws.push_back(
          rsample(q_z, Tensor::from({n, cfg.z_dim}, std::move(eps))));
    }
  } else {
    z_draws.push_back(enc.forward_point(x, /*training=*/false));
  }

  // w draws
  std::vector<Tensor> w_draws;
  if (wiring.variational_w) {
    DiagGaussian q_w = eval_classifier_posterior(model, task);
    Rng w_rng = rng.derive("w");
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<double> eps(crows * cfg.z_dim);
      for (auto& v : eps) v = w_rng.normal();
      w_draws.push_back(
          rsample(q_w, Tensor::from({crows, cfg.z_dim}, std::move(eps))));
    }
  } else {
    w_draws.push_back(model.classifiers->mu(task));
  }

  Prediction out;
  const double norm =
      1.0 / static_cast<double>(z_draws.size() * w_draws.size());
  if (cfg.regression) {
    out.values.assign(n, 0.0);
    for (const auto& z : z_draws)
      for (const auto& w : w_draws) {
        Tensor pred = matmul(z, transpose(w));
        for (std::size_t i = 0; i < n; ++i)
          out.values[i] += norm * pred.values()[i];
      }
  } else {
    out.probs.assign(n, std::vector<double>(crows, 0.0));
    for (const auto& z : z_draws)
      for (const auto& w : w_draws) {
        Tensor probs = softmax(matmul(z, transpose(w)));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < crows; ++c)
            out.probs[i][c] += norm * probs.values()[i * crows + c];
      }
  }
  return out;
}

std::vector<double> predict(const Model& model, std::size_t task,
                            const std::vector<double>& x, const MCConfig& mc,
                            Rng rng) {
  Tensor rows = Tensor::from({1, x.size()}, x);
  Prediction p = predict_rows(model, task, rows, mc, std::move(rng));
  if (model.cfg.regression) return {p.values.front()};
  return p.probs.front();
}

}  // namespace vmtl
