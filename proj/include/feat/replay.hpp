#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "feat/random.hpp"

namespace feat {

/// Labelled samples. `ids` are the sample indices in the generated pool and
/// survive every subset/merge, so provenance can always be traced.
struct Dataset {
  Eigen::MatrixXd inputs;  // n x input_dim
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }

  Dataset subset(std::span<const std::size_t> rows) const;
  void append(const Dataset& other);
  std::map<int, std::size_t> label_histogram() const;
};

Dataset empty_dataset(int input_dim);

struct SyntheticSpec {
  int classes = 10;
  int per_class = 100;
  int input_dim = 20;
  double spread = 0.3;
};

/// Radius of the class-mean sphere.
inline constexpr double kClassMeanRadius = 1.0;

/// Each class is an isotropic Gaussian (std `spread`) around a seeded random
/// unit direction scaled by kClassMeanRadius. Samples are ordered by class.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Class means generate_synthetic uses for `seed`, one row per class.
Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec, std::uint64_t seed);

/// Contiguous class groups per task. Task numbers are 1-based; task t owns a
/// block of class ids following those of task t-1. When the class count is
/// not divisible by the task count, earlier tasks take one extra class each.
class TaskLayout {
 public:
  TaskLayout() = default;
  TaskLayout(int classes, int tasks);

  int task_count() const { return static_cast<int>(groups_.size()); }
  int class_total() const { return classes_; }
  const std::vector<int>& classes_of(int task) const;
  /// Classes of tasks 1..task.
  std::vector<int> classes_through(int task) const;
  /// Classes of tasks 1..task-1.
  std::vector<int> classes_before(int task) const;
  int task_of(int label) const;

 private:
  int classes_ = 0;
  std::vector<std::vector<int>> groups_;
};

/// Splits a dataset into one dataset per task, preserving sample order.
std::vector<Dataset> split_by_task(const Dataset& data, const TaskLayout& layout);

struct Partition {
  std::vector<Dataset> clients;
  std::vector<std::string> warnings;
};

/// For each class, draws p ~ Dir(beta * 1_K) and hands the class's samples to
/// clients in those proportions using largest-remainder rounding (ties to the
/// lower client id). Each sample goes to exactly one client; client datasets
/// keep the source order.
Partition dirichlet_partition(const Dataset& data, int clients, double beta, std::uint64_t seed);

/// Per-client per-class counts (clients x classes).
std::vector<std::vector<std::size_t>> partition_counts(const Partition& partition, int classes);

/// Adds a warning for every (client, task) cell with no samples.
void warn_empty_tasks(const std::vector<std::vector<Dataset>>& streams, std::vector<std::string>& warnings);

struct HoldoutSplit {
  Dataset train;
  Dataset test;
};

/// Moves round(fraction * n) randomly chosen samples to the test side; both
/// sides keep the source order.
HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed);

enum class ReplayPolicy { kUniform, kClassBalancedUniform };

std::string to_string(ReplayPolicy policy);
ReplayPolicy parse_replay_policy(const std::string& name);

/// Picks min(quota, n) samples. kUniform samples without replacement;
/// kClassBalancedUniform gives each present class an equal share (capped by
/// its supply) and fills the remainder uniformly from what is left. The
/// result keeps the source order.
Dataset select_samples(const Dataset& data, std::size_t quota, ReplayPolicy policy, Rng& rng);

/// Per-task quotas min(per_task, available_i); if their sum exceeds
/// `capacity`, every quota is capped at floor(capacity / tasks).
std::vector<std::size_t> plan_replay_quotas(std::size_t capacity, std::size_t per_task,
                                            std::span<const std::size_t> available);

/// Client-private exemplar memory of capacity M holding up to N samples per
/// earlier task.
class ReplayBuffer {
 public:
  struct StoredTask {
    int task = 0;
    Dataset samples;
  };

  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, std::size_t per_task_quota, ReplayPolicy policy,
               std::uint64_t seed);

  /// Selects exemplars from a finished task, then shrinks every stored task to
  /// the planned quota if the capacity would be exceeded. Tasks must be stored
  /// in increasing order.
  void store_task(int task, const Dataset& task_data);

  std::size_t capacity() const { return capacity_; }
  std::size_t per_task_quota() const { return per_task_; }
  ReplayPolicy policy() const { return policy_; }
  std::size_t size() const;
  const std::vector<StoredTask>& tasks() const { return stored_; }

 private:
  std::size_t capacity_ = 0;
  std::size_t per_task_ = 0;
  ReplayPolicy policy_ = ReplayPolicy::kUniform;
  std::uint64_t seed_ = 0;
  std::vector<StoredTask> stored_;
};

/// Exemplars of every stored task strictly before `current_task`, in task order.
Dataset build_replay_set(const ReplayBuffer& buffer, int current_task, int input_dim);

/// Current task data followed by the replayed samples.
Dataset merged_train_set(const Dataset& current, const Dataset& replay);

}  // namespace feat
