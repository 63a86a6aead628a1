#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "vmtl/engine.hpp"
#include "vmtl/metrics.hpp"

namespace {

vmtl::SyntheticSpec spec_from_json(const nlohmann::json& j) {
  vmtl::SyntheticSpec spec;
  const std::string kind = j.value("kind", "classification");
  if (kind == "classification")
    spec.kind = vmtl::SyntheticKind::Classification;
  else if (kind == "planted")
    spec.kind = vmtl::SyntheticKind::PlantedTwin;
  else if (kind == "regression" || kind == "rotation")
    spec.kind = vmtl::SyntheticKind::RotatedRegression;
  else
    throw std::invalid_argument("synthetic spec: unknown kind '" + kind + "'");
  spec.num_tasks = j.value("tasks", spec.num_tasks);
  spec.num_classes = j.value("classes", spec.num_classes);
  spec.feat_dim = j.value("dim", spec.feat_dim);
  spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
  spec.shift = j.value("shift", spec.shift);
  spec.noise = j.value("noise", spec.noise);
  spec.cluster_spread = j.value("cluster_spread", spec.cluster_spread);
  spec.nuisance = j.value("nuisance", spec.nuisance);
  spec.nuisance_count = j.value("nuisance_count", spec.nuisance_count);
  return spec;
}

vmtl::SyntheticSpec resolve_synthetic(const std::string& arg) {
  if (std::filesystem::exists(arg)) {
    std::ifstream in(arg);
    nlohmann::json j;
    in >> j;
    return spec_from_json(j);
  }
  return vmtl::named_synthetic_spec(arg);
}

std::size_t worker_cap(std::size_t seeds) {
  std::size_t cap = seeds;
  if (const char* env = std::getenv("VMTL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) cap = std::min<std::size_t>(cap, static_cast<std::size_t>(v));
  } else {
    const unsigned hw = std::thread::hardware_concurrency();
    if (hw >= 1) cap = std::min<std::size_t>(cap, hw);
  }
  return std::max<std::size_t>(1, cap);
}

std::string config_echo(const vmtl::RunConfig& cfg, std::size_t seeds,
                        const std::string& synthetic_arg) {
  nlohmann::json j;
  j["method"] = vmtl::method_name(cfg.method);
  j["dataset"] = cfg.dataset_path.empty() ? nlohmann::json(nullptr)
                                          : nlohmann::json(cfg.dataset_path);
  j["synthetic"] = synthetic_arg.empty() ? nlohmann::json(nullptr)
                                         : nlohmann::json(synthetic_arg);
  j["split"] = cfg.split_fraction;
  j["seeds"] = seeds;
  j["iterations"] = cfg.iterations;
  j["lr"] = cfg.lr;
  j["lr_halve_every"] = cfg.lr_halve_every;
  j["batch_per_class"] = cfg.batch_per_class;
  j["mc"] = {cfg.mc.num_z_samples, cfg.mc.num_w_samples};
  j["tau0"] = cfg.tau0;
  j["tau_min"] = cfg.tau_min;
  j["tau_decay"] = cfg.tau_decay;
  j["kl_warmup_frac"] = cfg.kl_warmup_frac;
  j["tie_weights"] = cfg.tie_mixing;
  j["hidden"] = cfg.hidden;
  j["z_dim"] = cfg.z_dim;
  j["dropout"] = cfg.dropout_p;
  j["classifier_init_sigma"] = cfg.classifier_init_sigma;
  j["encoder_init_sigma"] = cfg.encoder_init_sigma;
  return j.dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "vmtl: variational multi-task learning experiments on feature datasets"};

  std::string method_str = "vmtl";
  std::string dataset_path, synthetic_arg, out_dir = "vmtl_out";
  std::string export_dataset;
  double split = 0.05;
  std::size_t seeds = 5;
  std::uint64_t seed_base = 0;
  std::vector<std::size_t> mc{10, 10};
  bool quiet = false;

  vmtl::RunConfig cfg;

  app.add_option("--method", method_str, "one of: stl, vstl, bmtl, vbmtl, vmtl, vmtl-ac")
      ->check(CLI::IsMember(vmtl::method_names()));
  auto* ds_opt = app.add_option("--dataset", dataset_path,
                                "path to a vmtl-features v1 file");
  auto* syn_opt = app.add_option(
      "--synthetic", synthetic_arg,
      "named spec (default, planted, rotation) or a JSON spec file");
  ds_opt->excludes(syn_opt);
  app.add_option("--split", split, "train fraction per task and class");
  app.add_option("--seeds", seeds, "number of independent runs");
  app.add_option("--seed-base", seed_base, "first seed value");
  app.add_option("--iters", cfg.iterations, "training iterations per run");
  app.add_option("--lr", cfg.lr, "Adam learning rate");
  app.add_option("--mc", mc, "Monte Carlo sample counts L M")->expected(2);
  app.add_option("--batch-per-class", cfg.batch_per_class,
                 "samples per class per task in each batch");
  app.add_flag("--tie-weights", cfg.tie_mixing,
               "share one mixing-weight matrix between classifiers and representations");
  app.add_option("--out", out_dir, "output directory");
  // architecture / schedule knobs
  app.add_option("--hidden", cfg.hidden, "encoder hidden width");
  app.add_option("--z-dim", cfg.z_dim, "latent representation dimension");
  app.add_option("--dropout", cfg.dropout_p, "input dropout probability");
  app.add_option("--lr-halve-every", cfg.lr_halve_every,
                 "halve the learning rate every N iterations");
  app.add_option("--kl-warmup-frac", cfg.kl_warmup_frac,
                 "fraction of the run over which the KL weight ramps to 1");
  app.add_option("--tau0", cfg.tau0, "initial Gumbel-Softmax temperature");
  app.add_option("--tau-min", cfg.tau_min, "temperature floor");
  app.add_option("--tau-decay", cfg.tau_decay, "temperature decay rate");
  app.add_option("--classifier-init-sigma", cfg.classifier_init_sigma,
                 "initial classifier posterior scale");
  app.add_option("--encoder-init-sigma", cfg.encoder_init_sigma,
                 "initial representation posterior scale");
  app.add_option("--checkpoint-every", cfg.checkpoint_every,
                 "checkpoint period in iterations (0 disables)");
  app.add_option("--export-dataset", export_dataset,
                 "also write the resolved dataset to this path");
  app.add_flag("--quiet", quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    cfg.method = vmtl::method_from_string(method_str);
    cfg.split_fraction = split;
    cfg.mc = {mc.at(0), mc.at(1)};
    if (dataset_path.empty() && synthetic_arg.empty()) {
      std::cerr << "error: give --dataset or --synthetic\n" << app.help();
      return 2;
    }
    if (!dataset_path.empty()) cfg.dataset_path = dataset_path;
    if (!synthetic_arg.empty()) cfg.synthetic = resolve_synthetic(synthetic_arg);
    if (seeds == 0) {
      std::cerr << "error: --seeds must be at least 1\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::filesystem::create_directories(out_dir);
    if (!export_dataset.empty()) {
      vmtl::FeatureDataset ds =
          cfg.synthetic
              ? vmtl::gen_synthetic(*cfg.synthetic,
                                    vmtl::Rng(seed_base).derive("data").seed())
              : vmtl::load_dataset(cfg.dataset_path);
      vmtl::save_dataset(ds, export_dataset);
    }

    vmtl::ExperimentReport report;
    report.method = vmtl::method_name(cfg.method);
    report.split_fraction = cfg.split_fraction;
    report.runs.resize(seeds);
    for (std::size_t i = 0; i < seeds; ++i)
      report.seeds.push_back(seed_base + i);

    // independent per-seed workers, capped by VMTL_THREADS
    const std::size_t workers = worker_cap(seeds);
    std::atomic<std::size_t> next{0};
    std::mutex io_mutex;
    std::vector<std::string> failures;
    auto work = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= seeds) return;
        vmtl::RunConfig run_cfg = cfg;
        run_cfg.seed = report.seeds[i];
        if (!run_cfg.out_dir.empty() || run_cfg.checkpoint_every > 0)
          run_cfg.out_dir =
              out_dir + "/seed" + std::to_string(run_cfg.seed);
        try {
          report.runs[i] = vmtl::run(run_cfg);
          if (!quiet) {
            std::lock_guard<std::mutex> lock(io_mutex);
            std::cout << "seed " << run_cfg.seed << ": "
                      << (report.runs[i].regression ? "nmse " : "accuracy ")
                      << report.runs[i].average_metric << "\n";
          }
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(io_mutex);
          failures.push_back("seed " + std::to_string(run_cfg.seed) + ": " +
                             e.what());
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (!failures.empty()) {
      for (const auto& f : failures) std::cerr << "run failed: " << f << "\n";
      return 1;
    }

    report.regression = report.runs.front().regression;
    report.num_tasks = report.runs.front().num_tasks;

    const std::string echo = config_echo(cfg, seeds, synthetic_arg);
    vmtl::write_file(out_dir + "/metrics.json", vmtl::metrics_json(report, echo));
    vmtl::write_file(out_dir + "/report.txt", vmtl::report_text(report));
    vmtl::write_file(out_dir + "/loss_history.csv", vmtl::loss_history_csv(report));
    if (report.runs.front().alpha)
      vmtl::write_file(out_dir + "/mixing_weights.csv",
                       vmtl::mixing_weights_csv(report));
    if (!quiet) std::cout << "wrote " << out_dir << "/metrics.json\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return 1;
  }
}
