#include "vmtl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vmtl {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line,
                             const std::string& msg) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + msg);
}

void fisher_yates(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.next_u64() % i]);
}

// orthonormal basis of R^d from seeded Gaussian draws (Gram-Schmidt)
std::vector<std::vector<double>> random_basis(Rng& rng, std::size_t d) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    for (const auto& b : basis) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

void FeatureDataset::validate() const {
  if (num_tasks == 0 || num_classes == 0 || feat_dim == 0)
    throw std::invalid_argument("dataset: empty dimensions");
  if (regression && strata_values.size() != num_classes)
    throw std::invalid_argument("dataset: stratum count does not match C");
  for (const auto& r : records) {
    if (r.task >= num_tasks)
      throw std::invalid_argument("dataset: task id " + std::to_string(r.task) +
                                  " out of range");
    if (r.label >= num_classes)
      throw std::invalid_argument("dataset: label " + std::to_string(r.label) +
                                  " out of range");
    if (r.x.size() != feat_dim)
      throw std::invalid_argument("dataset: feature length mismatch");
  }
}

std::vector<std::size_t> FeatureDataset::cell(std::size_t task,
                                              std::size_t cls) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].task == task && records[i].label == cls) idx.push_back(i);
  return idx;
}

SyntheticSpec named_synthetic_spec(const std::string& name) {
  SyntheticSpec s;
  if (name == "default") return s;
  if (name == "planted") {
    s.kind = SyntheticKind::PlantedTwin;
    s.num_tasks = 3;
    s.num_classes = 4;
    return s;
  }
  if (name == "rotation") {
    s.kind = SyntheticKind::RotatedRegression;
    s.num_tasks = 5;
    s.feat_dim = 16;
    s.samples_per_class = 30;
    s.noise = 0.7;
    return s;
  }
  throw std::invalid_argument("unknown synthetic spec '" + name +
                              "' (expected default, planted or rotation)");
}

FeatureDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path);

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) parse_fail(path, 1, "missing header");
  ++line_no;

  FeatureDataset ds;
  {
    std::size_t t = 0, c = 0, d = 0;
    if (std::sscanf(line.c_str(), "vmtl-features v1, T=%zu, C=%zu, d=%zu", &t,
                    &c, &d) != 3)
      parse_fail(path, 1, "malformed header (expected 'vmtl-features v1, T=, C=, d=')");
    ds.num_tasks = t;
    ds.num_classes = c;
    ds.feat_dim = d;
  }

  std::vector<double> raw_labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> fields;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t pos = 0;
        fields.push_back(std::stod(tok, &pos));
        if (pos != tok.size() &&
            tok.find_first_not_of(" \t", pos) != std::string::npos)
          parse_fail(path, line_no, "bad number '" + tok + "'");
      } catch (const std::invalid_argument&) {
        parse_fail(path, line_no, "bad number '" + tok + "'");
      }
    }
    if (fields.size() != ds.feat_dim + 2)
      parse_fail(path, line_no,
                 "expected " + std::to_string(ds.feat_dim) + " features, got " +
                     std::to_string(fields.size() >= 2 ? fields.size() - 2
                                                       : 0));
    FeatureRecord r;
    if (fields[0] < 0 || fields[0] != std::floor(fields[0]) ||
        fields[0] >= static_cast<double>(ds.num_tasks))
      parse_fail(path, line_no, "task id out of range");
    r.task = static_cast<std::size_t>(fields[0]);
    raw_labels.push_back(fields[1]);
    r.x.assign(fields.begin() + 2, fields.end());
    ds.records.push_back(std::move(r));
  }

  // integer labels within [0,C) mean classification; anything else is a
  // regression target and the distinct values define the strata
  bool classification = true;
  for (double v : raw_labels)
    if (v != std::floor(v) || v < 0.0 ||
        v >= static_cast<double>(ds.num_classes)) {
      classification = false;
      break;
    }
  if (classification) {
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      ds.records[i].label = static_cast<std::size_t>(raw_labels[i]);
  } else {
    ds.regression = true;
    std::vector<double> distinct = raw_labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()),
                   distinct.end());
    if (distinct.size() != ds.num_classes)
      throw std::runtime_error(
          path + ": header declares C=" + std::to_string(ds.num_classes) +
          " but found " + std::to_string(distinct.size()) +
          " distinct regression targets");
    ds.strata_values = distinct;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      const auto it =
          std::lower_bound(distinct.begin(), distinct.end(), raw_labels[i]);
      ds.records[i].label = static_cast<std::size_t>(it - distinct.begin());
      ds.records[i].target = raw_labels[i];
    }
  }
  ds.validate();
  return ds;
}

void save_dataset(const FeatureDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset file: " + path);
  out << "vmtl-features v1, T=" << ds.num_tasks << ", C=" << ds.num_classes
      << ", d=" << ds.feat_dim << "\n";
  for (const auto& r : ds.records) {
    out << r.task << ',';
    if (ds.regression)
      out << fmt_double(r.target);
    else
      out << r.label;
    for (double v : r.x) out << ',' << fmt_double(v);
    out << "\n";
  }
}

std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& ds,
                                                const SplitSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction < 1.0))
    throw std::invalid_argument("split: fraction must lie in (0,1)");
  FeatureDataset train = ds, test = ds;
  train.records.clear();
  test.records.clear();
  Rng base(spec.seed);
  for (std::size_t t = 0; t < ds.num_tasks; ++t)
    for (std::size_t c = 0; c < ds.num_classes; ++c) {
      auto idx = ds.cell(t, c);
      if (idx.empty())
        throw std::runtime_error("split: task " + std::to_string(t) +
                                 " class " + std::to_string(c) +
                                 " has no samples");
      Rng cell_rng = base.derive("split", t, c);
      fisher_yates(idx, cell_rng);
      const auto n_train = static_cast<std::size_t>(
          std::ceil(spec.fraction * static_cast<double>(idx.size())));
      for (std::size_t i = 0; i < idx.size(); ++i)
        (i < n_train ? train : test).records.push_back(ds.records[idx[i]]);
    }
  return {std::move(train), std::move(test)};
}

FeatureDataset gen_synthetic_classification(const SyntheticSpec& spec,
                                            std::uint64_t seed) {
  const std::size_t T = spec.num_tasks, C = spec.num_classes, d = spec.feat_dim;
  Rng root = Rng(seed).derive("gen-cls");

  // Class means live in a cluster on the unit sphere, so classes overlap the
  // way few-shot features do instead of sitting near-orthogonal.
  Rng mean_rng = root.derive("means");
  std::vector<double> anchor = unit_vector(mean_rng, d);
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < C; ++c) {
    auto dir = unit_vector(mean_rng, d);
    std::vector<double> m(d);
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      m[j] = anchor[j] + spec.cluster_spread * dir[j];
      norm += m[j] * m[j];
    }
    norm = std::sqrt(norm);
    for (auto& v : m) v /= norm;
    means.push_back(std::move(m));
  }

  // rotation planes from one orthonormal basis plus a shift direction
  Rng geom_rng = root.derive("geometry");
  auto basis = random_basis(geom_rng, d);
  auto shift_dir = unit_vector(geom_rng, d);
  const std::size_t planes = std::min<std::size_t>(3, d / 2);

  const bool planted = spec.kind == SyntheticKind::PlantedTwin;
  std::vector<std::vector<std::vector<double>>> task_means(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (planted && t >= 2) {
      // unrelated task: fresh class means, no shared geometry
      Rng own(root.derive("planted-means", t));
      for (std::size_t c = 0; c < C; ++c)
        task_means[t].push_back(unit_vector(own, d));
      continue;
    }
    const double magnitude = planted ? 0.0 : spec.shift * static_cast<double>(t);
    const double angle = 0.1 * magnitude;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> m = means[c];
      for (std::size_t p = 0; p < planes; ++p) {
        const auto& q1 = basis[2 * p];
        const auto& q2 = basis[2 * p + 1];
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          a += m[j] * q1[j];
          b += m[j] * q2[j];
        }
        const double ca = std::cos(angle), sa = std::sin(angle);
        const double na = a * ca - b * sa;
        const double nb = a * sa + b * ca;
        for (std::size_t j = 0; j < d; ++j)
          m[j] += (na - a) * q1[j] + (nb - b) * q2[j];
      }
      for (std::size_t j = 0; j < d; ++j)
        m[j] += 0.05 * magnitude * shift_dir[j];
      task_means[t].push_back(std::move(m));
    }
  }

  // High-variance class-irrelevant directions shared by the related tasks:
  // single-task learners confuse them for signal at three samples per class,
  // while pooled training identifies and discards them. An unrelated planted
  // task gets its own directions.
  const std::size_t n_nuisance = std::min(spec.nuisance_count, d / 2);
  std::vector<std::vector<std::vector<double>>> nuisance(T);
  const double nuisance_scale = spec.nuisance * spec.noise;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t key = (planted && t >= 2) ? t : 0;
    Rng nrng = root.derive("nuisance", key);
    for (std::size_t p = 0; p < n_nuisance; ++p)
      nuisance[t].push_back(unit_vector(nrng, d));
  }

  FeatureDataset ds;
  ds.num_tasks = T;
  ds.num_classes = C;
  ds.feat_dim = d;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      Rng cell_rng = root.derive("samples", t, c);
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        FeatureRecord r;
        r.task = t;
        r.label = c;
        r.x.resize(d);
        for (std::size_t j = 0; j < d; ++j)
          r.x[j] = task_means[t][c][j] + spec.noise * cell_rng.normal();
        for (const auto& dir : nuisance[t]) {
          const double g = nuisance_scale * cell_rng.normal();
          for (std::size_t j = 0; j < d; ++j) r.x[j] += g * dir[j];
        }
        ds.records.push_back(std::move(r));
      }
    }
  ds.validate();
  return ds;
}

std::vector<double> rotate_shape(const std::vector<double>& flat,
                                 double degrees) {
  if (flat.size() % 2 != 0)
    throw std::invalid_argument("rotate_shape: odd length");
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  std::vector<double> out(flat.size());
  for (std::size_t p = 0; p < flat.size() / 2; ++p) {
    const double x = flat[2 * p], y = flat[2 * p + 1];
    out[2 * p] = c * x - s * y;
    out[2 * p + 1] = s * x + c * y;
  }
  return out;
}

FeatureDataset gen_rotated_regression(const SyntheticSpec& spec,
                                      std::uint64_t seed) {
  const std::size_t T = spec.num_tasks, d = spec.feat_dim;
  if (d % 2 != 0)
    throw std::invalid_argument("rotated regression needs an even dimension");
  Rng root = Rng(seed).derive("gen-reg");

  constexpr std::size_t kAngles = 10;  // 0..90 in steps of 10
  FeatureDataset ds;
  ds.num_tasks = T;
  ds.num_classes = kAngles;
  ds.feat_dim = d;
  ds.regression = true;
  for (std::size_t a = 0; a < kAngles; ++a)
    ds.strata_values.push_back(10.0 * static_cast<double>(a));

  // tasks are related: each base shape perturbs one shared template
  Rng template_rng = root.derive("template");
  std::vector<double> shared_base(d);
  for (auto& v : shared_base) v = template_rng.normal();

  for (std::size_t t = 0; t < T; ++t) {
    Rng shape_rng = root.derive("shape", t);
    std::vector<double> base(d);
    double rms = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      base[j] = shared_base[j] + 0.35 * shape_rng.normal();
      rms += base[j] * base[j];
    }
    rms = std::sqrt(rms / static_cast<double>(d));
    for (auto& v : base) v /= rms;

    for (std::size_t a = 0; a < kAngles; ++a) {
      const double angle = ds.strata_values[a];
      auto rotated = rotate_shape(base, angle);
      Rng cell_rng = root.derive("samples", t, a);
      for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
        FeatureRecord r;
        r.task = t;
        r.label = a;
        r.target = angle;
        r.x.resize(d);
        for (std::size_t j = 0; j < d; ++j)
          r.x[j] = rotated[j] + spec.noise * cell_rng.normal();
        ds.records.push_back(std::move(r));
      }
    }
  }
  ds.validate();
  return ds;
}

FeatureDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  return spec.kind == SyntheticKind::RotatedRegression
             ? gen_rotated_regression(spec, seed)
             : gen_synthetic_classification(spec, seed);
}

}  // namespace vmtl
