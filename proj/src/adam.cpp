#include "vmtl/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace vmtl {

void zero_grads(std::vector<NamedParam>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void AdamState::step(std::vector<NamedParam>& params, double lr) {
  ++step_count_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (auto& p : params) {
    auto vals = p.tensor.mutable_values();
    auto g = p.tensor.grad();
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m.assign(vals.size(), 0.0);
      mom.v.assign(vals.size(), 0.0);
    } else if (mom.m.size() != vals.size()) {
      throw std::runtime_error("adam: moment size mismatch for parameter '" +
                               p.name + "'");
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double gi = i < g.size() ? g[i] : 0.0;
      if (!std::isfinite(gi))
        throw std::runtime_error("adam: non-finite gradient in parameter '" +
                                 p.name + "'");
      mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      vals[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

const std::vector<double>* AdamState::first_moment(
    const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.m;
}

const std::vector<double>* AdamState::second_moment(
    const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? nullptr : &it->second.v;
}

}  // namespace vmtl
