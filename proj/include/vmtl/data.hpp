#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vmtl/rng.hpp"

namespace vmtl {

struct FeatureRecord {
  std::size_t task = 0;
  std::size_t label = 0;   // class id, or stratum index for regression
  double target = 0.0;     // raw regression target; unused for classification
  std::vector<double> x;
};

// Multi-task dataset of pre-extracted feature vectors sharing one label (or
// target) space. For regression, records carry a real target and `label`
// indexes the stratum of records with the same target value.
struct FeatureDataset {
  std::size_t num_tasks = 0;
  std::size_t num_classes = 0;  // class count, or distinct target levels
  std::size_t feat_dim = 0;
  bool regression = false;
  std::vector<double> strata_values;  // sorted distinct targets (regression)
  std::vector<FeatureRecord> records;

  void validate() const;
  // record indices of one (task, class) cell
  std::vector<std::size_t> cell(std::size_t task, std::size_t cls) const;
};

struct SplitSpec {
  double fraction = 0.05;
  std::uint64_t seed = 0;
};

enum class SyntheticKind { Classification, PlantedTwin, RotatedRegression };

// Desk-scale synthetic benchmark description. Classification draws class
// means once on the unit sphere and gives task t a rotation-plus-shift of
// magnitude shift*t; PlantedTwin makes tasks 0 and 1 identically distributed
// and every later task unrelated; RotatedRegression rotates a per-task base
// shape by 0..90 degrees in steps of 10 and regresses the angle.
struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::Classification;
  std::size_t num_tasks = 4;
  std::size_t num_classes = 5;   // ignored for regression (10 angle levels)
  std::size_t feat_dim = 16;     // regression needs an even dimension
  std::size_t samples_per_class = 60;  // per task; per angle for regression
  double shift = 1.0;
  double noise = 0.2;
  // classification-only geometry: the spread of the class-mean cluster on
  // the sphere, and shared class-irrelevant directions whose scale is a
  // multiple of the noise
  double cluster_spread = 1.0;
  double nuisance = 6.0;
  std::size_t nuisance_count = 3;
};

SyntheticSpec named_synthetic_spec(const std::string& name);

// `vmtl-features v1` text format:
//   header  vmtl-features v1, T=<int>, C=<int>, d=<int>
//   rows    task,label,f1,...,fd
// Integer labels inside [0,C) load as classification; otherwise rows are
// regression targets and the distinct values (exactly C of them) define the
// strata.
FeatureDataset load_dataset(const std::string& path);
void save_dataset(const FeatureDataset& ds, const std::string& path);

// Stratified per task per class: ceil(fraction * cell) records of every cell
// go to train, the rest to test. Deterministic in spec.seed.
std::pair<FeatureDataset, FeatureDataset> split(const FeatureDataset& ds,
                                                const SplitSpec& spec);

FeatureDataset gen_synthetic_classification(const SyntheticSpec& spec,
                                            std::uint64_t seed);
FeatureDataset gen_rotated_regression(const SyntheticSpec& spec,
                                      std::uint64_t seed);
FeatureDataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// rotate a flattened set of 2-D points about the origin
std::vector<double> rotate_shape(const std::vector<double>& flat,
                                 double degrees);

}  // namespace vmtl
