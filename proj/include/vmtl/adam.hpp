#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vmtl/tensor.hpp"

namespace vmtl {

// A learnable tensor with a stable name used for optimizer-state lookup and
// checkpoint manifests.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

void zero_grads(std::vector<NamedParam>& params);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter name and
// created on first use.
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update over all parameters; reads gradients accumulated by backward.
  // Throws if any gradient entry is non-finite, naming the parameter.
  void step(std::vector<NamedParam>& params, double lr);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

  // moment access for tests and checkpointing
  const std::vector<double>* first_moment(const std::string& name) const;
  const std::vector<double>* second_moment(const std::string& name) const;

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  std::int64_t step_count_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace vmtl
