#include "vmtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vmtl {

namespace {

// two-sided 97.5% Student-t quantiles, df 1..30; normal beyond
constexpr double kT975[] = {
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};

double t_quantile_975(std::size_t df) {
  if (df == 0) throw std::invalid_argument("t quantile: zero df");
  if (df <= 30) return kT975[df - 1];
  return 1.96;
}

// single formatting path shared by the JSON and text reports so that numbers
// in report.txt equal metrics.json exactly
std::string num(double v) { return nlohmann::json(v).dump(); }

}  // namespace

Aggregate aggregate(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2)
    throw std::invalid_argument("aggregate: need at least 2 values, got " +
                                std::to_string(n));
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  const double hw =
      t_quantile_975(n - 1) * s / std::sqrt(static_cast<double>(n));
  return {mean, hw};
}

std::optional<double> entropy_ratio(
    const std::vector<std::vector<double>>& probs,
    const std::vector<std::size_t>& labels) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("entropy_ratio: size mismatch");
  double h_fail = 0.0, h_ok = 0.0;
  std::size_t n_fail = 0, n_ok = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    double h = 0.0;
    for (double v : p) h -= v * std::log(v + 1e-12);
    const std::size_t arg = static_cast<std::size_t>(
        std::max_element(p.begin(), p.end()) - p.begin());
    if (arg == labels[i]) {
      h_ok += h;
      ++n_ok;
    } else {
      h_fail += h;
      ++n_fail;
    }
  }
  if (n_fail == 0 || n_ok == 0) return std::nullopt;
  // one-hot rows smooth to a marginally negative entropy; floor both means
  const double mean_fail =
      std::max(1e-12, h_fail / static_cast<double>(n_fail));
  const double mean_ok = std::max(1e-12, h_ok / static_cast<double>(n_ok));
  return mean_fail / mean_ok;
}

double nmse(const std::vector<double>& preds,
            const std::vector<double>& targets) {
  if (preds.size() != targets.size())
    throw std::invalid_argument("nmse: size mismatch");
  if (targets.size() < 2)
    throw std::invalid_argument("nmse: need at least 2 targets");
  const double n = static_cast<double>(targets.size());
  double mean = 0.0;
  for (double y : targets) mean += y;
  mean /= n;
  double var = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    var += (targets[i] - mean) * (targets[i] - mean);
    mse += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  }
  var /= n;
  mse /= n;
  if (var == 0.0)
    throw std::invalid_argument("nmse: zero target variance");
  return mse / var;
}

std::vector<Aggregate> ExperimentReport::per_task() const {
  std::vector<Aggregate> out;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    std::vector<double> vals;
    for (const auto& r : runs) vals.push_back(r.per_task_metric.at(t));
    out.push_back(aggregate(vals));
  }
  return out;
}

Aggregate ExperimentReport::average() const {
  std::vector<double> vals;
  for (const auto& r : runs) vals.push_back(r.average_metric);
  return aggregate(vals);
}

std::optional<Aggregate> ExperimentReport::entropy() const {
  std::vector<double> vals;
  for (const auto& r : runs)
    if (r.entropy_ratio) vals.push_back(*r.entropy_ratio);
  if (vals.size() < 2) return std::nullopt;
  return aggregate(vals);
}

std::string metrics_json(const ExperimentReport& report,
                         const std::string& config_echo_json) {
  nlohmann::json j;
  j["method"] = report.method;
  j["task_kind"] = report.regression ? "regression" : "classification";
  j["metric"] = report.regression ? "nmse" : "accuracy";
  j["num_tasks"] = report.num_tasks;
  j["split_fraction"] = report.split_fraction;
  j["seeds"] = report.seeds;

  const bool can_aggregate = report.runs.size() >= 2;
  auto agg_json = [&](const std::optional<Aggregate>& a) {
    nlohmann::json out;
    out["mean"] = a ? nlohmann::json(a->mean) : nlohmann::json(nullptr);
    out["ci95"] = a ? nlohmann::json(a->ci_half_width)
                    : nlohmann::json(nullptr);
    return out;
  };

  nlohmann::json per_task = nlohmann::json::array();
  for (std::size_t t = 0; t < report.num_tasks; ++t) {
    if (can_aggregate) {
      std::vector<double> vals;
      for (const auto& r : report.runs) vals.push_back(r.per_task_metric[t]);
      per_task.push_back(agg_json(aggregate(vals)));
    } else {
      nlohmann::json one;
      one["mean"] = report.runs.at(0).per_task_metric[t];
      one["ci95"] = nullptr;
      per_task.push_back(one);
    }
  }
  j["per_task"] = per_task;
  if (can_aggregate) {
    j["average"] = agg_json(report.average());
  } else {
    j["average"] = {{"mean", report.runs.at(0).average_metric},
                    {"ci95", nullptr}};
  }
  j["entropy_ratio"] = agg_json(report.entropy());

  nlohmann::json per_seed;
  {
    nlohmann::json avgs = nlohmann::json::array();
    nlohmann::json ents = nlohmann::json::array();
    for (const auto& r : report.runs) {
      avgs.push_back(r.average_metric);
      ents.push_back(r.entropy_ratio ? nlohmann::json(*r.entropy_ratio)
                                     : nlohmann::json(nullptr));
    }
    per_seed["average"] = avgs;
    per_seed["entropy_ratio"] = ents;
  }
  j["per_seed"] = per_seed;

  // final expected mixing weights of the last seed, or null
  auto matrix_json = [](const std::optional<std::vector<std::vector<double>>>&
                            m) -> nlohmann::json {
    if (!m) return nullptr;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : *m) {
      nlohmann::json r = nlohmann::json::array();
      for (double v : row)
        r.push_back(std::isnan(v) ? nlohmann::json(nullptr)
                                  : nlohmann::json(v));
      rows.push_back(r);
    }
    return rows;
  };
  const RunResult& last = report.runs.back();
  j["alpha"] = matrix_json(last.alpha);
  j["beta"] = matrix_json(last.beta);

  j["config"] = nlohmann::json::parse(config_echo_json.empty()
                                          ? std::string("{}")
                                          : config_echo_json);
  return j.dump(2) + "\n";
}

std::string report_text(const ExperimentReport& report) {
  std::ostringstream os;
  const char* metric = report.regression ? "nmse" : "accuracy";
  os << "method: " << report.method << "\n";
  os << "metric: " << metric << "\n";
  os << "seeds: " << report.runs.size() << "\n";
  os << "split_fraction: " << num(report.split_fraction) << "\n\n";
  const bool can_aggregate = report.runs.size() >= 2;
  for (std::size_t t = 0; t < report.num_tasks; ++t) {
    os << "task " << t << " " << metric << ": ";
    if (can_aggregate) {
      std::vector<double> vals;
      for (const auto& r : report.runs) vals.push_back(r.per_task_metric[t]);
      Aggregate a = aggregate(vals);
      os << num(a.mean) << " +- " << num(a.ci_half_width) << "\n";
    } else {
      os << num(report.runs.at(0).per_task_metric[t]) << "\n";
    }
  }
  os << "average " << metric << ": ";
  if (can_aggregate) {
    Aggregate a = report.average();
    os << num(a.mean) << " +- " << num(a.ci_half_width) << "\n";
  } else {
    os << num(report.runs.at(0).average_metric) << "\n";
  }
  os << "entropy_ratio: ";
  auto ent = report.entropy();
  if (ent)
    os << num(ent->mean) << " +- " << num(ent->ci_half_width) << "\n";
  else
    os << "null\n";
  return os.str();
}

std::string loss_history_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "seed,iteration,total,nll,kl_z,kl_w,lr,tau,kl_weight\n";
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
  };
  for (std::size_t s = 0; s < report.runs.size(); ++s) {
    for (const auto& row : report.runs[s].history) {
      os << report.seeds.at(s) << ',' << row.iter << ',';
      emit(row.total);
      os << ',';
      emit(row.nll);
      os << ',';
      emit(row.kl_z);
      os << ',';
      emit(row.kl_w);
      os << ',';
      emit(row.lr);
      os << ',';
      emit(row.tau);
      os << ',';
      emit(row.kl_weight);
      os << '\n';
    }
  }
  return os.str();
}

std::string mixing_weights_csv(const ExperimentReport& report) {
  for (const auto& r : report.runs)
    if (!r.alpha || !r.beta)
      throw std::invalid_argument("mixing weights: method '" + report.method +
                                  "' has no mixing weights");
  std::ostringstream os;
  char buf[64];
  for (std::size_t s = 0; s < report.runs.size(); ++s) {
    const auto& run = report.runs[s];
    for (const char* kind : {"alpha", "beta"}) {
      const auto& m = std::string(kind) == "alpha" ? *run.alpha : *run.beta;
      os << "# " << kind << " seed=" << report.seeds.at(s) << "\n";
      for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) {
          if (j) os << ',';
          if (!std::isnan(row[j])) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
            os << buf;
          }
        }
        os << '\n';
      }
    }
  }
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace vmtl
