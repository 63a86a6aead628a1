#include "vmtl/inference.hpp"

#include <cmath>
#include <stdexcept>

namespace vmtl {

namespace {

constexpr double kLogVarClamp = 30.0;

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out,
              double gain = 1.0) {
  const double limit =
      gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * limit;
  return Tensor::from({fan_in, fan_out}, std::move(w), /*requires_grad=*/true);
}

}  // namespace

EncoderNet::EncoderNet(EncoderConfig cfg, Rng init_rng, std::string name_prefix)
    : cfg_(cfg), prefix_(std::move(name_prefix)) {
  if (cfg.in_dim == 0 || cfg.hidden == 0 || cfg.z_dim == 0)
    throw std::invalid_argument("encoder: dimensions must be positive");
  w1_ = glorot(init_rng, cfg.in_dim, cfg.hidden);
  b1_ = Tensor::zeros({cfg.hidden}, true);
  w2_ = glorot(init_rng, cfg.hidden, cfg.hidden);
  b2_ = Tensor::zeros({cfg.hidden}, true);
  w_mu_ = glorot(init_rng, cfg.hidden, cfg.z_dim);
  b_mu_ = Tensor::zeros({cfg.z_dim}, true);
  if (cfg.variational) {
    // small variance-head weights: the initial posterior scale is set by the
    // bias alone
    w_lv_ = glorot(init_rng, cfg.hidden, cfg.z_dim, 0.01);
    b_lv_ = Tensor::full({cfg.z_dim}, cfg.lv_bias_init, true);
  }
}

Tensor EncoderNet::trunk(const Tensor& rows, bool training,
                         const Tensor* mask) const {
  if (rows.ndim() != 2 || rows.shape()[1] != cfg_.in_dim)
    throw ShapeMismatchError("encode", rows.shape(), {rows.rows(), cfg_.in_dim});
  Tensor h = rows;
  if (training && cfg_.dropout_p > 0.0) {
    if (mask == nullptr)
      throw std::invalid_argument(
          "encode: training pass needs a dropout mask");
    h = dropout(h, *mask, cfg_.dropout_p);
  }
  h = elu(add(matmul(h, w1_), b1_));
  h = elu(add(matmul(h, w2_), b2_));
  return h;
}

DiagGaussian EncoderNet::forward(const Tensor& rows, bool training,
                                 const Tensor* mask) const {
  if (!cfg_.variational)
    throw std::logic_error("encode: deterministic encoder has no posterior");
  Tensor h = trunk(rows, training, mask);
  Tensor mu = add(matmul(h, w_mu_), b_mu_);
  Tensor lv = clamp(add(matmul(h, w_lv_), b_lv_), -kLogVarClamp, kLogVarClamp);
  return {mu, lv};
}

Tensor EncoderNet::forward_point(const Tensor& rows, bool training,
                                 const Tensor* mask) const {
  Tensor h = trunk(rows, training, mask);
  return add(matmul(h, w_mu_), b_mu_);
}

std::vector<NamedParam> EncoderNet::params() {
  std::vector<NamedParam> p{{prefix_ + "/W1", w1_}, {prefix_ + "/b1", b1_},
                            {prefix_ + "/W2", w2_}, {prefix_ + "/b2", b2_},
                            {prefix_ + "/Wmu", w_mu_},
                            {prefix_ + "/bmu", b_mu_}};
  if (cfg_.variational) {
    p.push_back({prefix_ + "/Wlv", w_lv_});
    p.push_back({prefix_ + "/blv", b_lv_});
  }
  return p;
}

EncoderNet EncoderNet::detached_copy() const {
  EncoderNet copy = *this;
  copy.w1_ = w1_.detach();
  copy.b1_ = b1_.detach();
  copy.w2_ = w2_.detach();
  copy.b2_ = b2_.detach();
  copy.w_mu_ = w_mu_.detach();
  copy.b_mu_ = b_mu_.detach();
  if (cfg_.variational) {
    copy.w_lv_ = w_lv_.detach();
    copy.b_lv_ = b_lv_.detach();
  }
  return copy;
}

Tensor attend(const Tensor& x, const Tensor& context) {
  if (context.ndim() != 2 || context.shape()[0] == 0)
    throw std::invalid_argument("attend: empty context");
  const std::size_t d = context.shape()[1];
  const bool was_vec = x.ndim() == 1;
  if ((was_vec ? x.shape()[0] : x.shape()[1]) != d)
    throw ShapeMismatchError("attend", x.shape(), context.shape());
  Tensor q = was_vec ? reshape(x, {1, d}) : x;
  Tensor scores = scale(matmul(q, transpose(context)),
                        1.0 / std::sqrt(static_cast<double>(d)));
  Tensor out = matmul(softmax(scores), context);
  return was_vec ? reshape(out, {d}) : out;
}

ContextBank::ContextBank(std::size_t num_tasks, std::size_t num_classes,
                         std::size_t feat_dim)
    : num_tasks_(num_tasks),
      num_classes_(num_classes),
      feat_dim_(feat_dim),
      cells_(num_tasks * num_classes) {}

void ContextBank::add(std::size_t task, std::size_t cls,
                      std::span<const double> row) {
  if (row.size() != feat_dim_)
    throw ShapeMismatchError("context_bank", {row.size()}, {feat_dim_});
  auto& cell = cells_.at(task * num_classes_ + cls);
  cell.data.insert(cell.data.end(), row.begin(), row.end());
  cell.rows += 1;
  cell.tensor.reset();
}

const ContextBank::Cell& ContextBank::cell_ref(std::size_t task,
                                               std::size_t cls) const {
  return cells_.at(task * num_classes_ + cls);
}

bool ContextBank::has(std::size_t task, std::size_t cls) const {
  return cell_ref(task, cls).rows > 0;
}

const Tensor& ContextBank::cell(std::size_t task, std::size_t cls) const {
  const auto& c = cell_ref(task, cls);
  if (c.rows == 0)
    throw std::invalid_argument("context_bank: empty cell (task " +
                                std::to_string(task) + ", class " +
                                std::to_string(cls) + ")");
  if (!c.tensor)
    c.tensor = Tensor::from({c.rows, feat_dim_}, c.data);
  return *c.tensor;
}

Tensor ContextBank::task_all(std::size_t task) const {
  std::vector<double> all;
  std::size_t rows = 0;
  for (std::size_t cls = 0; cls < num_classes_; ++cls) {
    const auto& c = cell_ref(task, cls);
    all.insert(all.end(), c.data.begin(), c.data.end());
    rows += c.rows;
  }
  if (rows == 0)
    throw std::invalid_argument("context_bank: task " + std::to_string(task) +
                                " has no stored rows");
  return Tensor::from({rows, feat_dim_}, std::move(all));
}

DiagGaussian encode_conditioned(const EncoderNet& net, const Tensor& x,
                                std::size_t task, std::size_t cls,
                                const ContextBank& bank, bool training,
                                const Tensor* mask) {
  const Tensor context =
      bank.has(task, cls) ? bank.cell(task, cls) : bank.task_all(task);
  Tensor agg = attend(x, context);
  if (agg.ndim() == 1) agg = reshape(agg, {1, agg.size()});
  DiagGaussian out = net.forward(agg, training, mask);
  if (x.ndim() == 1)
    return {reshape(out.mean, {out.mean.size()}),
            reshape(out.log_var, {out.log_var.size()})};
  return out;
}

ClassifierPosteriorStore::ClassifierPosteriorStore(std::size_t num_tasks,
                                                   std::size_t num_classes,
                                                   std::size_t z_dim,
                                                   bool variational,
                                                   double init_sigma)
    : num_tasks_(num_tasks),
      num_classes_(num_classes),
      z_dim_(z_dim),
      variational_(variational) {
  if (!(init_sigma > 0.0))
    throw std::invalid_argument("classifier store: init sigma must be > 0");
  const double init_lv = 2.0 * std::log(init_sigma);
  for (std::size_t t = 0; t < num_tasks; ++t) {
    mu_.push_back(Tensor::zeros({num_classes, z_dim}, true));
    if (variational)
      log_var_.push_back(Tensor::full({num_classes, z_dim}, init_lv, true));
  }
}

Tensor& ClassifierPosteriorStore::mu(std::size_t task) { return mu_.at(task); }

Tensor& ClassifierPosteriorStore::log_var(std::size_t task) {
  if (!variational_)
    throw std::logic_error("classifier store: deterministic store has no variance");
  return log_var_.at(task);
}

const Tensor& ClassifierPosteriorStore::mu(std::size_t task) const {
  return mu_.at(task);
}

const Tensor& ClassifierPosteriorStore::log_var(std::size_t task) const {
  if (!variational_)
    throw std::logic_error("classifier store: deterministic store has no variance");
  return log_var_.at(task);
}

DiagGaussian ClassifierPosteriorStore::gaussian(std::size_t task) const {
  return {mu_.at(task), log_var(task)};
}

std::vector<DiagGaussian> ClassifierPosteriorStore::posterior(
    std::size_t task) const {
  std::vector<DiagGaussian> out;
  out.reserve(num_classes_);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    std::vector<std::size_t> idx(z_dim_);
    for (std::size_t j = 0; j < z_dim_; ++j) idx[j] = c * z_dim_ + j;
    out.push_back(
        {gather(mu_.at(task), idx), gather(log_var(task), std::move(idx))});
  }
  return out;
}

std::vector<NamedParam> ClassifierPosteriorStore::params() {
  std::vector<NamedParam> p;
  for (std::size_t t = 0; t < num_tasks_; ++t) {
    p.push_back({"cls/t" + std::to_string(t) + "/mu", mu_[t]});
    if (variational_)
      p.push_back({"cls/t" + std::to_string(t) + "/logvar", log_var_[t]});
  }
  return p;
}

AmortizedClassifierNet::AmortizedClassifierNet(EncoderConfig cfg, Rng init_rng,
                                               std::string name_prefix)
    : net_(cfg, init_rng, std::move(name_prefix)) {
  if (!cfg.variational)
    throw std::invalid_argument("amortized classifier must be variational");
}

DiagGaussian AmortizedClassifierNet::forward(const Tensor& class_means,
                                             bool training,
                                             const Tensor* mask) const {
  return net_.forward(class_means, training, mask);
}

std::vector<DiagGaussian> amortized_classifier(const AmortizedClassifierNet& net,
                                               const Tensor& class_means) {
  DiagGaussian rows = net.forward(class_means, /*training=*/false);
  const std::size_t c_count = class_means.shape()[0];
  const std::size_t z = rows.mean.size() / c_count;
  std::vector<DiagGaussian> out;
  out.reserve(c_count);
  for (std::size_t c = 0; c < c_count; ++c) {
    std::vector<std::size_t> idx(z);
    for (std::size_t j = 0; j < z; ++j) idx[j] = c * z + j;
    out.push_back({gather(rows.mean, idx), gather(rows.log_var, std::move(idx))});
  }
  return out;
}

}  // namespace vmtl
