#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vmtl/engine.hpp"

namespace vmtl {

struct Aggregate {
  double mean = 0.0;
  double ci_half_width = 0.0;  // t-based 95% half width
};

// mean and t-distribution confidence half-width t_{0.975,n-1} * s / sqrt(n);
// needs at least two values
Aggregate aggregate(const std::vector<double>& values);

// mean predictive entropy of misclassified samples over that of correctly
// classified ones; nullopt when either side is empty
std::optional<double> entropy_ratio(
    const std::vector<std::vector<double>>& probs,
    const std::vector<std::size_t>& labels);

// mean squared error divided by the population variance of the targets
double nmse(const std::vector<double>& preds,
            const std::vector<double>& targets);

// Aggregated multi-seed report. Fields missing for a method are null in the
// JSON, never absent, so the schema is stable across methods.
struct ExperimentReport {
  std::string method;
  bool regression = false;
  std::size_t num_tasks = 0;
  std::vector<std::uint64_t> seeds;
  double split_fraction = 0.0;
  std::vector<RunResult> runs;  // one per seed, in seed order

  std::vector<Aggregate> per_task() const;
  Aggregate average() const;
  std::optional<Aggregate> entropy() const;
};

std::string metrics_json(const ExperimentReport& report,
                         const std::string& config_echo_json);
std::string report_text(const ExperimentReport& report);
// header seed,iteration,total,nll,kl_z,kl_w,lr,tau,kl_weight
std::string loss_history_csv(const ExperimentReport& report);
// per-seed alpha and beta matrices, expected weights, diagonal blank;
// throws for methods without mixing weights
std::string mixing_weights_csv(const ExperimentReport& report);

void write_file(const std::string& path, const std::string& content);

}  // namespace vmtl
