#include "vmtl/distributions.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vmtl {

DiagGaussian::DiagGaussian(Tensor mean_in, Tensor log_var_in)
    : mean(std::move(mean_in)), log_var(std::move(log_var_in)) {
  if (mean.shape() != log_var.shape())
    throw ShapeMismatchError("diag_gaussian", mean.shape(), log_var.shape());
  for (double v : log_var.values())
    if (!std::isfinite(v))
      throw std::invalid_argument("diag_gaussian: non-finite log-variance");
}

DiagGaussian DiagGaussian::standard(const Shape& shape) {
  return {Tensor::zeros(shape), Tensor::zeros(shape)};
}

Tensor rsample(const DiagGaussian& q, const Tensor& noise) {
  if (noise.shape() != q.mean.shape())
    throw ShapeMismatchError("rsample", q.mean.shape(), noise.shape());
  return add(q.mean, mul(exp(scale(q.log_var, 0.5)), noise));
}

double sample_gumbel(double u) {
  if (!(u > 0.0) || !(u < 1.0))
    throw std::invalid_argument("sample_gumbel: u must lie in (0,1), got " +
                                std::to_string(u));
  return -std::log(-std::log(u));
}

std::vector<double> sample_gumbel_row(Rng& rng, std::size_t n) {
  std::vector<double> g(n);
  for (auto& x : g) x = sample_gumbel(rng.uniform_open());
  return g;
}

Tensor gumbel_weights(const Tensor& logit_row, double tau,
                      std::span<const double> g_row) {
  if (tau <= 0.0)
    throw std::invalid_argument("gumbel_weights: temperature must be > 0, got " +
                                std::to_string(tau));
  if (g_row.size() != logit_row.size())
    throw ShapeMismatchError("gumbel_weights", logit_row.shape(),
                             {g_row.size()});
  Tensor g = Tensor::vector({g_row.begin(), g_row.end()});
  return softmax(scale(add(logit_row, g), 1.0 / tau));
}

namespace {

// 0.5 * (lv_p - lv_q + (var_q + (mu_q - mu_p)^2) / var_p - 1) per entry
Tensor kl_terms(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.shape() != p.mean.shape())
    throw ShapeMismatchError("kl_diag", q.mean.shape(), p.mean.shape());
  Tensor diff = sub(q.mean, p.mean);
  Tensor inv_var_p = exp(neg(p.log_var));
  Tensor ratio = mul(add(exp(q.log_var), mul(diff, diff)), inv_var_p);
  Tensor terms = add(sub(p.log_var, q.log_var), add_const(ratio, -1.0));
  return scale(terms, 0.5);
}

}  // namespace

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  return sum(kl_terms(q, p));
}

Tensor kl_diag_rowwise(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mean.ndim() != 2)
    throw ShapeMismatchError("kl_diag_rowwise", q.mean.shape(), p.mean.shape());
  return rowwise_sum(kl_terms(q, p));
}

MixturePrior::MixturePrior(std::vector<DiagGaussian> components_in,
                           Tensor weights_in)
    : components(std::move(components_in)), weights(std::move(weights_in)) {
  if (weights.size() != components.size())
    throw std::invalid_argument(
        "mixture_prior: " + std::to_string(components.size()) +
        " components but " + std::to_string(weights.size()) + " weights");
  double s = 0.0;
  for (double w : weights.values()) {
    if (w < 0.0)
      throw std::invalid_argument("mixture_prior: negative weight");
    s += w;
  }
  if (std::fabs(s - 1.0) > 1e-9)
    throw std::invalid_argument("mixture_prior: weights sum to " +
                                std::to_string(s));
}

Tensor kl_mixture_upper(const DiagGaussian& q, const MixturePrior& prior) {
  std::vector<Tensor> kls;
  kls.reserve(prior.size());
  for (const auto& comp : prior.components) kls.push_back(kl_diag(q, comp));
  return sum(mul(prior.weights, concat_rows(kls)));
}

GumbelMixing::GumbelMixing(std::size_t num_tasks, double temperature)
    : num_tasks_(num_tasks), temperature_(temperature) {
  if (num_tasks < 2)
    throw std::invalid_argument("gumbel_mixing: needs at least 2 tasks");
  set_temperature(temperature);
  logits_ = Tensor::zeros({num_tasks, num_tasks}, /*requires_grad=*/true);
}

void GumbelMixing::set_temperature(double tau) {
  if (tau <= 0.0)
    throw std::invalid_argument("gumbel_mixing: temperature must be > 0");
  temperature_ = tau;
}

std::vector<std::size_t> GumbelMixing::other_tasks(std::size_t t) const {
  std::vector<std::size_t> idx;
  idx.reserve(num_tasks_ - 1);
  for (std::size_t i = 0; i < num_tasks_; ++i)
    if (i != t) idx.push_back(i);
  return idx;
}

Tensor GumbelMixing::weights_row(std::size_t t,
                                 std::span<const double> g_row) const {
  return weights_row(t, temperature_, g_row);
}

Tensor GumbelMixing::weights_row(std::size_t t, double tau,
                                 std::span<const double> g_row) const {
  std::vector<std::size_t> flat;
  flat.reserve(num_tasks_ - 1);
  for (std::size_t i : other_tasks(t)) flat.push_back(t * num_tasks_ + i);
  return gumbel_weights(gather(logits_, std::move(flat)), tau, g_row);
}

std::vector<double> GumbelMixing::expected_row(std::size_t t) const {
  std::vector<double> row;
  row.reserve(num_tasks_ - 1);
  double mx = -1e300;
  for (std::size_t i : other_tasks(t)) {
    row.push_back(logits_.at(t, i));
    mx = std::max(mx, row.back());
  }
  double denom = 0.0;
  for (auto& v : row) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (auto& v : row) v /= denom;
  return row;
}

}  // namespace vmtl
