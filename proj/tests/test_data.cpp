#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "vmtl/data.hpp"

using namespace vmtl;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& content) {
    static int counter = 0;
    path = (std::filesystem::temp_directory_path() /
            ("vmtl_test_" + std::to_string(counter++) + ".txt"))
               .string();
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("load parses a well-formed classification file") {
  TempFile f(
      "vmtl-features v1, T=2, C=3, d=4\n"
      "0,0,1.0,2.0,3.0,4.0\n"
      "0,1,0.1,0.2,0.3,0.4\n"
      "0,2,1,1,1,1\n"
      "1,0,2,2,2,2\n"
      "1,1,3,3,3,3\n"
      "1,2,4,4,4,4\n");
  FeatureDataset ds = load_dataset(f.path);
  CHECK(ds.num_tasks == 2);
  CHECK(ds.num_classes == 3);
  CHECK(ds.feat_dim == 4);
  CHECK(!ds.regression);
  CHECK(ds.records.size() == 6);
  CHECK(ds.records[1].label == 1);
  CHECK(ds.records[1].x[3] == doctest::Approx(0.4));
}

TEST_CASE("load reports the offending line for a short row") {
  TempFile f(
      "vmtl-features v1, T=1, C=1, d=4\n"
      "0,0,1.0,2.0,3.0,4.0\n"
      "0,0,1.0,2.0,3.0\n");
  try {
    load_dataset(f.path);
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":3:") != std::string::npos);
    CHECK(msg.find("expected 4 features") != std::string::npos);
  }
}

TEST_CASE("load rejects an empty file") {
  TempFile f("");
  try {
    load_dataset(f.path);
    FAIL("expected parse error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("missing header") != std::string::npos);
  }
}

TEST_CASE("load rejects a malformed header") {
  TempFile f("features v0, T=1\n");
  CHECK_THROWS_AS(load_dataset(f.path), std::runtime_error);
}

TEST_CASE("regression files are recognized by their targets") {
  TempFile f(
      "vmtl-features v1, T=1, C=2, d=2\n"
      "0,0,1.0,2.0\n"
      "0,90,0.5,0.5\n"
      "0,90,0.25,0.5\n");
  FeatureDataset ds = load_dataset(f.path);
  CHECK(ds.regression);
  REQUIRE(ds.strata_values.size() == 2);
  CHECK(ds.strata_values[0] == 0.0);
  CHECK(ds.strata_values[1] == 90.0);
  CHECK(ds.records[0].label == 0);
  CHECK(ds.records[2].label == 1);
  CHECK(ds.records[2].target == 90.0);
}

TEST_CASE("save then load is the identity on feature values") {
  SyntheticSpec spec;
  spec.num_tasks = 2;
  spec.num_classes = 3;
  spec.feat_dim = 5;
  spec.samples_per_class = 4;
  FeatureDataset ds = gen_synthetic_classification(spec, 99);
  const std::string path =
      (std::filesystem::temp_directory_path() / "vmtl_roundtrip.txt").string();
  save_dataset(ds, path);
  FeatureDataset back = load_dataset(path);
  std::remove(path.c_str());
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].task == ds.records[i].task);
    CHECK(back.records[i].label == ds.records[i].label);
    for (std::size_t j = 0; j < ds.feat_dim; ++j)
      CHECK(back.records[i].x[j] == ds.records[i].x[j]);  // bitwise
  }
}

TEST_CASE("regression roundtrip keeps targets bitwise") {
  SyntheticSpec spec = named_synthetic_spec("rotation");
  spec.num_tasks = 2;
  spec.samples_per_class = 3;
  FeatureDataset ds = gen_rotated_regression(spec, 7);
  const std::string path =
      (std::filesystem::temp_directory_path() / "vmtl_roundtrip_reg.txt")
          .string();
  save_dataset(ds, path);
  FeatureDataset back = load_dataset(path);
  std::remove(path.c_str());
  REQUIRE(back.regression);
  REQUIRE(back.records.size() == ds.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(back.records[i].target == ds.records[i].target);
    for (std::size_t j = 0; j < ds.feat_dim; ++j)
      CHECK(back.records[i].x[j] == ds.records[i].x[j]);
  }
}

TEST_CASE("split follows the ceiling rule") {
  SyntheticSpec spec;
  spec.num_tasks = 1;
  spec.num_classes = 1;
  spec.feat_dim = 2;
  spec.samples_per_class = 100;
  FeatureDataset ds = gen_synthetic_classification(spec, 1);
  auto [train, test] = split(ds, {0.05, 42});
  CHECK(train.records.size() == 5);
  CHECK(test.records.size() == 95);

  // 60-sample cells at 5 percent keep 3 records per cell
  spec.samples_per_class = 60;
  spec.num_tasks = 2;
  spec.num_classes = 3;
  FeatureDataset ds2 = gen_synthetic_classification(spec, 2);
  auto [train2, test2] = split(ds2, {0.05, 42});
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(train2.cell(t, c).size() == 3);
  CHECK(train2.records.size() + test2.records.size() == ds2.records.size());
}

TEST_CASE("split is a partition") {
  SyntheticSpec spec;
  spec.num_tasks = 2;
  spec.num_classes = 2;
  spec.feat_dim = 3;
  spec.samples_per_class = 17;
  FeatureDataset ds = gen_synthetic_classification(spec, 3);
  auto [train, test] = split(ds, {0.2, 9});
  CHECK(train.records.size() + test.records.size() == ds.records.size());
  auto key = [](const FeatureRecord& r) {
    std::string k = std::to_string(r.task) + "|" + std::to_string(r.label);
    for (double v : r.x) k += "|" + std::to_string(v);
    return k;
  };
  std::multiset<std::string> all, parts;
  for (const auto& r : ds.records) all.insert(key(r));
  for (const auto& r : train.records) parts.insert(key(r));
  for (const auto& r : test.records) parts.insert(key(r));
  CHECK(all == parts);
}

TEST_CASE("split determinism and seed sensitivity") {
  SyntheticSpec spec;
  spec.num_tasks = 1;
  spec.num_classes = 1;
  spec.feat_dim = 2;
  spec.samples_per_class = 1000;
  FeatureDataset ds = gen_synthetic_classification(spec, 4);
  auto [a_train, a_test] = split(ds, {0.1, 7});
  auto [b_train, b_test] = split(ds, {0.1, 7});
  REQUIRE(a_train.records.size() == b_train.records.size());
  for (std::size_t i = 0; i < a_train.records.size(); ++i)
    CHECK(a_train.records[i].x == b_train.records[i].x);

  auto [c_train, c_test] = split(ds, {0.1, 8});
  bool any_diff = false;
  for (std::size_t i = 0; i < a_train.records.size(); ++i)
    if (a_train.records[i].x != c_train.records[i].x) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("split rejects bad fractions") {
  SyntheticSpec spec;
  spec.num_tasks = 1;
  spec.num_classes = 1;
  spec.feat_dim = 2;
  spec.samples_per_class = 10;
  FeatureDataset ds = gen_synthetic_classification(spec, 5);
  CHECK_THROWS_AS(split(ds, {0.0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(split(ds, {1.0, 1}), std::invalid_argument);
}

TEST_CASE("generators are pure functions of spec and seed") {
  SyntheticSpec spec;
  spec.num_tasks = 3;
  spec.num_classes = 4;
  spec.feat_dim = 6;
  spec.samples_per_class = 5;
  FeatureDataset a = gen_synthetic_classification(spec, 11);
  FeatureDataset b = gen_synthetic_classification(spec, 11);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i)
    CHECK(a.records[i].x == b.records[i].x);  // bitwise

  FeatureDataset c = gen_synthetic_classification(spec, 12);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.records.size(); ++i)
    if (a.records[i].x != c.records[i].x) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("record count is tasks x classes x samples") {
  SyntheticSpec spec;
  spec.num_tasks = 3;
  spec.num_classes = 4;
  spec.feat_dim = 5;
  spec.samples_per_class = 7;
  CHECK(gen_synthetic_classification(spec, 1).records.size() == 3 * 4 * 7);
}

TEST_CASE("zero shift and vanishing noise make nearest-mean exact") {
  SyntheticSpec spec;
  spec.num_tasks = 3;
  spec.num_classes = 4;
  spec.feat_dim = 8;
  spec.samples_per_class = 12;
  spec.shift = 0.0;
  spec.noise = 1e-6;
  FeatureDataset ds = gen_synthetic_classification(spec, 21);

  // centroids from task 0 classify every other task's samples perfectly
  std::vector<std::vector<double>> centroid(spec.num_classes,
                                            std::vector<double>(8, 0.0));
  std::vector<double> count(spec.num_classes, 0.0);
  for (const auto& r : ds.records) {
    if (r.task != 0) continue;
    count[r.label] += 1.0;
    for (std::size_t j = 0; j < 8; ++j) centroid[r.label][j] += r.x[j];
  }
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    for (auto& v : centroid[c]) v /= count[c];

  std::size_t correct = 0;
  for (const auto& r : ds.records) {
    double best = 1e300;
    std::size_t arg = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < 8; ++j)
        d2 += (r.x[j] - centroid[c][j]) * (r.x[j] - centroid[c][j]);
      if (d2 < best) {
        best = d2;
        arg = c;
      }
    }
    if (arg == r.label) ++correct;
  }
  CHECK(correct == ds.records.size());
}

TEST_CASE("planted twin: tasks 0 and 1 share a distribution, task 2 differs") {
  SyntheticSpec spec = named_synthetic_spec("planted");
  spec.noise = 1e-9;
  spec.samples_per_class = 1;
  FeatureDataset ds = gen_synthetic_classification(spec, 33);
  // with negligible noise, record features approximate the class means
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto& r0 = ds.records[ds.cell(0, c)[0]];
    const auto& r1 = ds.records[ds.cell(1, c)[0]];
    const auto& r2 = ds.records[ds.cell(2, c)[0]];
    double d01 = 0.0, d02 = 0.0;
    for (std::size_t j = 0; j < spec.feat_dim; ++j) {
      d01 += (r0.x[j] - r1.x[j]) * (r0.x[j] - r1.x[j]);
      d02 += (r0.x[j] - r2.x[j]) * (r0.x[j] - r2.x[j]);
    }
    CHECK(d01 < 1e-12);
    CHECK(d02 > 1e-3);
  }
}

TEST_CASE("rotated regression targets take exactly the ten angles") {
  SyntheticSpec spec = named_synthetic_spec("rotation");
  spec.num_tasks = 2;
  spec.samples_per_class = 3;
  FeatureDataset ds = gen_rotated_regression(spec, 8);
  CHECK(ds.regression);
  std::set<double> targets;
  for (const auto& r : ds.records) targets.insert(r.target);
  REQUIRE(targets.size() == 10);
  double expected = 0.0;
  for (double t : targets) {
    CHECK(t == doctest::Approx(expected));
    expected += 10.0;
  }
}

TEST_CASE("angle zero keeps the base shape up to noise") {
  SyntheticSpec spec = named_synthetic_spec("rotation");
  spec.num_tasks = 1;
  spec.samples_per_class = 2;
  spec.noise = 1e-9;
  FeatureDataset ds = gen_rotated_regression(spec, 9);
  auto zero_cell = ds.cell(0, 0);
  REQUIRE(zero_cell.size() == 2);
  const auto& a = ds.records[zero_cell[0]];
  const auto& b = ds.records[zero_cell[1]];
  for (std::size_t j = 0; j < ds.feat_dim; ++j)
    CHECK(a.x[j] == doctest::Approx(b.x[j]).epsilon(1e-6));
}

TEST_CASE("rotation round trip recovers the shape") {
  std::vector<double> shape{1.0, 0.0, 0.5, -2.0, -1.0, 3.0};
  auto there = rotate_shape(shape, 37.0);
  auto back = rotate_shape(there, -37.0);
  for (std::size_t j = 0; j < shape.size(); ++j)
    CHECK(back[j] == doctest::Approx(shape[j]).epsilon(1e-12));
}

TEST_CASE("named specs cover the three benchmarks") {
  CHECK(named_synthetic_spec("default").kind == SyntheticKind::Classification);
  CHECK(named_synthetic_spec("planted").kind == SyntheticKind::PlantedTwin);
  CHECK(named_synthetic_spec("rotation").kind ==
        SyntheticKind::RotatedRegression);
  CHECK_THROWS_AS(named_synthetic_spec("nope"), std::invalid_argument);
}
