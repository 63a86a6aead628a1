#include "vmtl/model.hpp"

#include <cmath>
#include <stdexcept>

namespace vmtl {

namespace {
const std::vector<std::string> kMethodNames = {"stl",   "vstl", "bmtl",
                                               "vbmtl", "vmtl", "vmtl-ac"};
}

MethodKind method_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i)
    if (kMethodNames[i] == name) return static_cast<MethodKind>(i);
  std::string all;
  for (const auto& n : kMethodNames) all += (all.empty() ? "" : ", ") + n;
  throw std::invalid_argument("unknown method '" + name + "' (valid: " + all +
                              ")");
}

std::string method_name(MethodKind m) {
  return kMethodNames.at(static_cast<std::size_t>(m));
}

const std::vector<std::string>& method_names() { return kMethodNames; }

ModelWiring ModelWiring::for_method(MethodKind m) {
  ModelWiring w;
  switch (m) {
    case MethodKind::Stl:
      w = {false, false, false, Prior::None, Prior::None, false};
      break;
    case MethodKind::Vstl:
      w = {false, true, true, Prior::StandardNormal, Prior::StandardNormal,
           false};
      break;
    case MethodKind::Bmtl:
      w = {true, false, false, Prior::None, Prior::None, false};
      break;
    case MethodKind::Vbmtl:
      w = {true, true, true, Prior::StandardNormal, Prior::StandardNormal,
           false};
      break;
    case MethodKind::Vmtl:
      w = {true, true, true, Prior::GumbelMixture, Prior::GumbelMixture,
           false};
      break;
    case MethodKind::VmtlAc:
      w = {true, true, true, Prior::GumbelMixture, Prior::GumbelMixture,
           true};
      break;
  }
  return w;
}

Model Model::init(const ModelConfig& cfg, Rng init_rng) {
  if (cfg.num_tasks == 0 || cfg.num_classes == 0 || cfg.in_dim == 0)
    throw std::invalid_argument("model: empty dimensions");
  Model m;
  m.cfg = cfg;

  EncoderConfig enc_cfg{cfg.in_dim, cfg.hidden, cfg.z_dim, cfg.dropout_p,
                        cfg.wiring.variational_z,
                        2.0 * std::log(cfg.encoder_init_sigma)};
  if (cfg.wiring.shared_encoder) {
    m.encoders.emplace_back(enc_cfg, init_rng.derive("init-enc"), "enc");
  } else {
    for (std::size_t t = 0; t < cfg.num_tasks; ++t)
      m.encoders.emplace_back(enc_cfg, init_rng.derive("init-enc", t),
                              "enc/t" + std::to_string(t));
  }

  if (cfg.wiring.amortized_classifier) {
    if (!cfg.wiring.variational_w)
      throw std::invalid_argument("amortized classifier requires variational w");
    EncoderConfig am_cfg{cfg.in_dim, cfg.hidden, cfg.z_dim, cfg.dropout_p,
                         true, 2.0 * std::log(cfg.classifier_init_sigma)};
    m.amortized.emplace(am_cfg, init_rng.derive("init-amort"), "amort");
  } else {
    m.classifiers.emplace(cfg.num_tasks, cfg.classifier_rows(), cfg.z_dim,
                          cfg.wiring.variational_w, cfg.classifier_init_sigma);
  }

  const bool want_alpha = cfg.wiring.needs_alpha();
  const bool want_beta = cfg.wiring.needs_beta();
  if ((want_alpha || want_beta) && cfg.num_tasks < 2)
    throw std::invalid_argument(
        "gumbel mixture priors need at least 2 tasks; use a single-task "
        "method instead");
  if (want_alpha || (cfg.tie_mixing && want_beta))
    m.alpha_mix.emplace(cfg.num_tasks);
  if (want_beta && !cfg.tie_mixing) m.beta_mix.emplace(cfg.num_tasks);
  return m;
}

const EncoderNet& Model::encoder_for(std::size_t task) const {
  return cfg.wiring.shared_encoder ? encoders.front() : encoders.at(task);
}

EncoderNet& Model::encoder_for(std::size_t task) {
  return cfg.wiring.shared_encoder ? encoders.front() : encoders.at(task);
}

GumbelMixing* Model::alpha() { return alpha_mix ? &*alpha_mix : nullptr; }

GumbelMixing* Model::beta() {
  if (cfg.tie_mixing) return alpha_mix ? &*alpha_mix : nullptr;
  return beta_mix ? &*beta_mix : nullptr;
}

const GumbelMixing* Model::alpha() const {
  return alpha_mix ? &*alpha_mix : nullptr;
}

const GumbelMixing* Model::beta() const {
  if (cfg.tie_mixing) return alpha_mix ? &*alpha_mix : nullptr;
  return beta_mix ? &*beta_mix : nullptr;
}

std::vector<NamedParam> Model::params() {
  std::vector<NamedParam> out;
  for (auto& e : encoders) {
    auto p = e.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (classifiers) {
    auto p = classifiers->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (amortized) {
    auto p = amortized->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (alpha_mix)
    out.push_back({cfg.tie_mixing ? "mix/logits" : "alpha/logits",
                   alpha_mix->logits()});
  if (beta_mix) out.push_back({"beta/logits", beta_mix->logits()});
  return out;
}

NoiseBundle draw_noise(const ModelConfig& cfg, const Batch& batch,
                       std::size_t num_z_samples, std::size_t num_w_samples,
                       const Rng& iter_rng) {
  NoiseBundle bundle;
  bundle.tasks.resize(cfg.num_tasks);
  const std::size_t L = cfg.wiring.variational_z ? num_z_samples : 1;
  const std::size_t M = cfg.wiring.variational_w ? num_w_samples : 1;
  const std::size_t crows = cfg.classifier_rows();

  for (const auto& tb : batch.tasks) {
    TaskNoise& tn = bundle.tasks.at(tb.task);
    Rng rng = iter_rng.derive("task", tb.task);
    const std::size_t b = tb.rows();

    if (cfg.dropout_p > 0.0) {
      Rng mask_rng = rng.derive("dropout");
      std::vector<double> mask(b * cfg.in_dim);
      for (auto& v : mask)
        v = mask_rng.uniform() < cfg.dropout_p ? 0.0 : 1.0;
      tn.dropout_mask = Tensor::from({b, cfg.in_dim}, std::move(mask));
      if (cfg.wiring.amortized_classifier) {
        std::vector<double> am(crows * cfg.in_dim);
        for (auto& v : am)
          v = mask_rng.uniform() < cfg.dropout_p ? 0.0 : 1.0;
        tn.amortized_mask = Tensor::from({crows, cfg.in_dim}, std::move(am));
      }
    }

    if (cfg.wiring.variational_z) {
      Rng z_rng = rng.derive("z-eps");
      for (std::size_t l = 0; l < L; ++l) {
        std::vector<double> eps(b * cfg.z_dim);
        for (auto& v : eps) v = z_rng.normal();
        tn.z_eps.push_back(Tensor::from({b, cfg.z_dim}, std::move(eps)));
      }
    }
    if (cfg.wiring.variational_w) {
      Rng w_rng = rng.derive("w-eps");
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<double> eps(crows * cfg.z_dim);
        for (auto& v : eps) v = w_rng.normal();
        tn.w_eps.push_back(Tensor::from({crows, cfg.z_dim}, std::move(eps)));
      }
    }

    if (cfg.num_tasks >= 2) {
      Rng g_rng = rng.derive("gumbel");
      if (cfg.wiring.needs_alpha())
        tn.g_alpha = sample_gumbel_row(g_rng, cfg.num_tasks - 1);
      if (cfg.wiring.needs_beta()) {
        // tied weights reuse the classifier-prior draw
        tn.g_beta = cfg.tie_mixing && cfg.wiring.needs_alpha()
                        ? tn.g_alpha
                        : sample_gumbel_row(g_rng, cfg.num_tasks - 1);
      }
    }
  }
  return bundle;
}

}  // namespace vmtl
