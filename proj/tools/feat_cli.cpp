// feat: command-line front end for the federated class-incremental simulator.
//
//   feat run --config cfg.json [--out dir] [--override key=value ...]
//   feat etf-check --classes C --dim D --seed S [--out dir]
//   feat partition --config cfg.json [--override key=value ...]
//   feat diagnose --config cfg.json --sample-dump [--out file] [--override key=value ...]
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>

#include "feat/config.hpp"
#include "feat/errors.hpp"
#include "feat/geometry.hpp"
#include "feat/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw feat::Error("cannot write " + path.string());
  out << text;
}

std::string short_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::vector<std::string>& overrides) {
  const feat::ExperimentConfig cfg = feat::load_config(config_path, overrides);
  fs::create_directories(out_dir);
  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw feat::Error("cannot write metrics to " + out_dir);

  feat::RunHooks hooks;
  hooks.metrics = &metrics;
  const feat::ExperimentSummary summary = feat::run_experiment(cfg, hooks);
  write_file(fs::path(out_dir) / "summary.json", summary.to_json().dump(2) + "\n");
  write_file(fs::path(out_dir) / "accuracy.csv", feat::accuracy_csv(summary.accuracy));

  std::cout << "ablation=" << summary.ablation
            << " final_average_accuracy=" << feat::format_real(summary.accuracy.final_average) << "\n";
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_etf_check(int classes, int dim, std::uint64_t seed, const std::string& out_dir) {
  const feat::EtfPrototypes etf = feat::build_etf(classes, dim, seed);
  const Eigen::MatrixXd gram = etf.prototypes.transpose() * etf.prototypes;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int i = 0; i < classes; ++i) {
    for (int j = 0; j < classes; ++j) {
      if (i == j) continue;
      lo = std::min(lo, gram(i, j));
      hi = std::max(hi, gram(i, j));
    }
  }
  int rank = 0;
  feat::column_space_projector(etf.prototypes, &rank);

  std::cout << "# classes=" << classes << " dim=" << dim << " seed=" << seed << "\n"
            << "# expected_offdiag=" << short_real(-1.0 / (classes - 1)) << "\n"
            << "# max_offdiag=" << short_real(hi) << " min_offdiag=" << short_real(lo) << "\n"
            << "# max_gram_deviation=" << feat::format_real(feat::gram_deviation(etf)) << "\n"
            << "# column_sum_norm=" << feat::format_real(etf.prototypes.rowwise().sum().norm()) << "\n"
            << "# numerical_rank=" << rank << "\n"
            << "# gram\n"
            << feat::matrix_csv(gram);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "prototypes.csv", feat::matrix_csv(etf.prototypes));
    write_file(fs::path(out_dir) / "gram.csv", feat::matrix_csv(gram));
  }
  return 0;
}

int cmd_partition(const std::string& config_path, const std::vector<std::string>& overrides) {
  const feat::ExperimentConfig cfg = feat::load_config(config_path, overrides);
  const feat::ExperimentData data = feat::prepare_data(cfg);
  std::cout << feat::partition_csv(feat::partition_counts(data.partition, cfg.dataset.classes));
  for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_diagnose(const std::string& config_path, bool sample_dump, const std::string& out_file,
                 const std::vector<std::string>& overrides) {
  const feat::ExperimentConfig cfg = feat::load_config(config_path, overrides);
  nlohmann::json samples = nlohmann::json::array();
  feat::RunHooks hooks;
  hooks.on_sample = [&](const feat::SampleDiagnostic& d) {
    if (sample_dump && d.eval_task == cfg.tasks) samples.push_back(feat::diagnostic_to_json(d));
  };
  const feat::ExperimentSummary summary = feat::run_experiment(cfg, hooks);
  nlohmann::json doc{{"ablation", summary.ablation},
                     {"final_average_accuracy", summary.accuracy.final_average},
                     {"mean_gate", summary.evals.back().mean_gate},
                     {"corrected_fraction", summary.evals.back().corrected_fraction}};
  if (sample_dump) doc["samples"] = std::move(samples);
  const std::string text = doc.dump(2) + "\n";
  if (out_file.empty()) {
    std::cout << text;
  } else {
    write_file(out_file, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated class-incremental learning simulator with ETF prototypes"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::vector<std::string> overrides;

  auto* run = app.add_subcommand("run", "Run an experiment and write metrics");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory")->default_val("feat_out");
  run->add_option("--override", overrides, "Dotted-path override key=value");

  int classes = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  auto* etf = app.add_subcommand("etf-check", "Build an ETF and print its Gram matrix");
  etf->add_option("--classes", classes, "Class count")->required();
  etf->add_option("--dim", dim, "Feature dimension")->required();
  etf->add_option("--seed", seed, "Basis seed")->required();
  etf->add_option("--out", out, "Directory for prototypes.csv and gram.csv");

  auto* partition = app.add_subcommand("partition", "Print per-client per-class counts as CSV");
  partition->add_option("--config", config_path, "Experiment config (JSON)")->required();
  partition->add_option("--override", overrides, "Dotted-path override key=value");

  bool sample_dump = false;
  auto* diagnose = app.add_subcommand("diagnose", "Run and dump per-sample correction diagnostics");
  diagnose->add_option("--config", config_path, "Experiment config (JSON)")->required();
  diagnose->add_flag("--sample-dump", sample_dump, "Include per-sample diagnostics of the final evaluation");
  diagnose->add_option("--out", out, "Output JSON file (default: stdout)");
  diagnose->add_option("--override", overrides, "Dotted-path override key=value");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, out, overrides);
    if (*etf) return cmd_etf_check(classes, dim, seed, out);
    if (*partition) return cmd_partition(config_path, overrides);
    if (*diagnose) return cmd_diagnose(config_path, sample_dump, out, overrides);
  } catch (const feat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const feat::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
