#pragma once

#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "feat/config.hpp"
#include "feat/egc.hpp"
#include "feat/fed.hpp"
#include "feat/replay.hpp"

namespace feat {

/// Accuracies on the test splits of tasks 1..task after training `task`.
struct EvalRecord {
  int task = 0;
  std::vector<double> accuracies;
  double mean_gate = 0.0;
  double corrected_fraction = 0.0;  // share of samples with gate > 0
};

/// Lower-triangular task x task accuracy matrix; rows[t-1][j-1] is the
/// accuracy on task j after training task t.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;
  std::vector<double> average;  // mean of each row
  double final_average = 0.0;   // mean of the last row
  std::vector<double> forgetting;  // per task: max_{t<T} A[t][i] - A[T][i]; 0 for the last task
};

/// Assembles the matrix from per-task evaluations. Throws InvalidArgument on a
/// missing or duplicated task or a row of the wrong length.
AccuracyMatrix accuracy_matrix(std::span<const EvalRecord> evals, int tasks);

/// Client data after partitioning, task splitting and holdout.
struct ExperimentData {
  TaskLayout layout;
  Partition partition;
  std::vector<std::vector<Dataset>> client_train;  // [client][task-1]
  std::vector<std::vector<Dataset>> client_test;
  std::vector<Dataset> pooled_test;                // [task-1], clients in id order
  std::vector<std::string> warnings;
};

ExperimentData prepare_data(const ExperimentConfig& cfg);

struct SampleDiagnostic {
  int eval_task = 0;    // task after which the evaluation ran
  int sample_task = 0;  // task the sample belongs to
  int label = 0;
  std::size_t sample_id = 0;
  Prediction prediction;
};

nlohmann::json diagnostic_to_json(const SampleDiagnostic& d);

struct RunHooks {
  std::ostream* metrics = nullptr;  // JSON Lines sink
  std::function<void(const SampleDiagnostic&)> on_sample;
};

struct ExperimentSummary {
  nlohmann::json config;
  std::string ablation;
  AccuracyMatrix accuracy;
  std::vector<EvalRecord> evals;
  std::size_t parameter_count = 0;
  std::size_t uploads = 0;
  std::size_t upload_scalars_per_client_round = 0;
  bool communication_consistent = false;  // every round uploaded K * (|theta| + 3) values
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// Runs the whole task / round protocol and evaluates the global model on the
/// test splits of all seen tasks after every task.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {});

/// Real number with 17 significant digits.
std::string format_real(double value);

std::string accuracy_csv(const AccuracyMatrix& m);
std::string partition_csv(const std::vector<std::vector<std::size_t>>& counts);

/// Comma-separated matrix body, one line per row.
std::string matrix_csv(const Eigen::MatrixXd& m);

}  // namespace feat
