#include "feat/replay.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "feat/errors.hpp"

namespace feat {

Dataset empty_dataset(int input_dim) {
  Dataset d;
  d.inputs.resize(0, input_dim);
  return d;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  out.ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= size()) {
      throw InvalidArgument("subset row " + std::to_string(r) + " out of range");
    }
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(r));
    out.labels.push_back(labels[r]);
    out.ids.push_back(ids[r]);
  }
  return out;
}

void Dataset::append(const Dataset& other) {
  if (other.empty()) return;
  if (empty() && inputs.cols() == 0) {
    *this = other;
    return;
  }
  if (other.inputs.cols() != inputs.cols()) {
    throw ShapeError("cannot merge datasets with different input widths");
  }
  const Eigen::Index old_rows = inputs.rows();
  inputs.conservativeResize(old_rows + other.inputs.rows(), Eigen::NoChange);
  inputs.bottomRows(other.inputs.rows()) = other.inputs;
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  ids.insert(ids.end(), other.ids.begin(), other.ids.end());
}

std::map<int, std::size_t> Dataset::label_histogram() const {
  std::map<int, std::size_t> h;
  for (int y : labels) ++h[y];
  return h;
}

Eigen::MatrixXd synthetic_class_means(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd means(spec.classes, spec.input_dim);
  for (int c = 0; c < spec.classes; ++c) {
    Eigen::VectorXd v(spec.input_dim);
    for (int j = 0; j < spec.input_dim; ++j) v(j) = normal(rng);
    means.row(c) = (kClassMeanRadius / v.norm()) * v.transpose();
  }
  return means;
}

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw InvalidArgument("synthetic data needs at least 2 classes");
  if (spec.per_class < 1) throw InvalidArgument("synthetic data needs at least 1 sample per class");
  if (spec.input_dim < 1) throw InvalidArgument("input dimension must be positive");
  if (!(spec.spread >= 0.0)) throw InvalidArgument("cluster spread must be non-negative");

  const Eigen::MatrixXd means = synthetic_class_means(spec, seed);
  Rng rng(derive_seed(seed, {1}));
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset data;
  const auto n = static_cast<std::size_t>(spec.classes) * static_cast<std::size_t>(spec.per_class);
  data.inputs.resize(static_cast<Eigen::Index>(n), spec.input_dim);
  data.labels.reserve(n);
  data.ids.reserve(n);
  std::size_t row = 0;
  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i, ++row) {
      for (int j = 0; j < spec.input_dim; ++j) {
        const double noise = normal(rng);
        data.inputs(static_cast<Eigen::Index>(row), j) = means(c, j) + spec.spread * noise;
      }
      data.labels.push_back(c);
      data.ids.push_back(row);
    }
  }
  return data;
}

TaskLayout::TaskLayout(int classes, int tasks) : classes_(classes) {
  if (tasks < 1) throw InvalidArgument("task count must be positive");
  if (classes < tasks) throw InvalidArgument("need at least one class per task");
  const int base = classes / tasks;
  const int extra = classes % tasks;
  int next = 0;
  for (int t = 0; t < tasks; ++t) {
    const int size = base + (t < extra ? 1 : 0);
    std::vector<int> group(static_cast<std::size_t>(size));
    std::iota(group.begin(), group.end(), next);
    next += size;
    groups_.push_back(std::move(group));
  }
}

const std::vector<int>& TaskLayout::classes_of(int task) const {
  if (task < 1 || task > task_count()) {
    throw InvalidArgument("task " + std::to_string(task) + " out of range");
  }
  return groups_[static_cast<std::size_t>(task - 1)];
}

std::vector<int> TaskLayout::classes_through(int task) const {
  std::vector<int> out;
  for (int t = 1; t <= task; ++t) {
    const auto& g = classes_of(t);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

std::vector<int> TaskLayout::classes_before(int task) const {
  return task <= 1 ? std::vector<int>{} : classes_through(task - 1);
}

int TaskLayout::task_of(int label) const {
  for (int t = 1; t <= task_count(); ++t) {
    const auto& g = classes_of(t);
    if (label >= g.front() && label <= g.back()) return t;
  }
  throw LabelError("label " + std::to_string(label) + " belongs to no task");
}

std::vector<Dataset> split_by_task(const Dataset& data, const TaskLayout& layout) {
  std::vector<std::vector<std::size_t>> rows(static_cast<std::size_t>(layout.task_count()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows[static_cast<std::size_t>(layout.task_of(data.labels[i]) - 1)].push_back(i);
  }
  std::vector<Dataset> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(data.subset(r));
  return out;
}

Partition dirichlet_partition(const Dataset& data, int clients, double beta, std::uint64_t seed) {
  if (clients < 2) throw InvalidArgument("Dirichlet partition needs at least 2 clients");
  if (!(beta > 0.0)) throw InvalidArgument("Dirichlet concentration must be positive");

  Rng rng(seed);
  std::gamma_distribution<double> gamma(beta, 1.0);
  const auto k = static_cast<std::size_t>(clients);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

  std::vector<std::vector<std::size_t>> assigned(k);
  for (auto& [label, rows] : by_class) {
    std::vector<double> p(k);
    for (auto& v : p) v = gamma(rng);
    double sum = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(sum > 0.0)) {
      // every draw underflowed; fall back to an even split
      std::fill(p.begin(), p.end(), 1.0);
      sum = static_cast<double>(k);
    }
    const std::size_t n = rows.size();
    std::vector<std::size_t> counts(k);
    std::vector<double> remainder(k);
    std::size_t given = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double exact = p[j] / sum * static_cast<double>(n);
      counts[j] = static_cast<std::size_t>(std::floor(exact));
      remainder[j] = exact - static_cast<double>(counts[j]);
      given += counts[j];
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t j = 0; given < n; ++j, ++given) ++counts[order[j % k]];

    const std::vector<std::size_t> perm = shuffled_indices(n, rng);
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t m = 0; m < counts[j]; ++m) assigned[j].push_back(rows[perm[cursor++]]);
    }
  }

  Partition out;
  for (std::size_t j = 0; j < k; ++j) {
    std::sort(assigned[j].begin(), assigned[j].end());
    if (assigned[j].empty()) {
      out.warnings.push_back("client " + std::to_string(j) + " received no samples");
    }
    out.clients.push_back(data.subset(assigned[j]));
  }
  return out;
}

std::vector<std::vector<std::size_t>> partition_counts(const Partition& partition, int classes) {
  std::vector<std::vector<std::size_t>> counts(partition.clients.size(),
                                               std::vector<std::size_t>(static_cast<std::size_t>(classes)));
  for (std::size_t k = 0; k < partition.clients.size(); ++k) {
    for (int y : partition.clients[k].labels) {
      if (y < 0 || y >= classes) throw LabelError("label outside class range");
      ++counts[k][static_cast<std::size_t>(y)];
    }
  }
  return counts;
}

void warn_empty_tasks(const std::vector<std::vector<Dataset>>& streams, std::vector<std::string>& warnings) {
  for (std::size_t k = 0; k < streams.size(); ++k) {
    for (std::size_t t = 0; t < streams[k].size(); ++t) {
      if (streams[k][t].empty()) {
        warnings.push_back("client " + std::to_string(k) + " has no samples for task " +
                           std::to_string(t + 1));
      }
    }
  }
}

HoldoutSplit split_holdout(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidArgument("holdout fraction must be in [0, 1]");
  Rng rng(seed);
  const std::vector<std::size_t> perm = shuffled_indices(data.size(), rng);
  const auto test_n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(test_n));
  std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(test_n), perm.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

std::string to_string(ReplayPolicy policy) {
  return policy == ReplayPolicy::kUniform ? "uniform" : "class-balanced-uniform";
}

ReplayPolicy parse_replay_policy(const std::string& name) {
  if (name == "uniform") return ReplayPolicy::kUniform;
  if (name == "class-balanced-uniform") return ReplayPolicy::kClassBalancedUniform;
  throw InvalidArgument("unknown replay policy '" + name +
                        "' (expected uniform or class-balanced-uniform)");
}

Dataset select_samples(const Dataset& data, std::size_t quota, ReplayPolicy policy, Rng& rng) {
  const std::size_t n = data.size();
  if (quota >= n) return data;

  std::vector<std::size_t> chosen;
  if (policy == ReplayPolicy::kUniform) {
    const std::vector<std::size_t> perm = shuffled_indices(n, rng);
    chosen.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(quota));
  } else {
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[data.labels[i]].push_back(i);
    const std::size_t share = quota / by_class.size();
    std::vector<std::size_t> leftover;
    for (auto& [label, rows] : by_class) {
      const std::vector<std::size_t> perm = shuffled_indices(rows.size(), rng);
      const std::size_t take = std::min(share, rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        (i < take ? chosen : leftover).push_back(rows[perm[i]]);
      }
    }
    std::sort(leftover.begin(), leftover.end());
    const std::size_t missing = quota - chosen.size();
    const std::vector<std::size_t> perm = shuffled_indices(leftover.size(), rng);
    for (std::size_t i = 0; i < missing; ++i) chosen.push_back(leftover[perm[i]]);
  }
  std::sort(chosen.begin(), chosen.end());
  return data.subset(chosen);
}

std::vector<std::size_t> plan_replay_quotas(std::size_t capacity, std::size_t per_task,
                                            std::span<const std::size_t> available) {
  std::vector<std::size_t> quotas;
  quotas.reserve(available.size());
  std::size_t total = 0;
  for (std::size_t a : available) {
    quotas.push_back(std::min(per_task, a));
    total += quotas.back();
  }
  if (total > capacity && !available.empty()) {
    const std::size_t cap = capacity / available.size();
    for (auto& q : quotas) q = std::min(q, cap);
  }
  return quotas;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t per_task_quota, ReplayPolicy policy,
                           std::uint64_t seed)
    : capacity_(capacity), per_task_(per_task_quota), policy_(policy), seed_(seed) {}

void ReplayBuffer::store_task(int task, const Dataset& task_data) {
  if (!stored_.empty() && task <= stored_.back().task) {
    throw InvalidArgument("replay tasks must be stored in increasing order");
  }
  Rng rng(derive_seed(seed_, {static_cast<std::uint64_t>(task), 0}));
  stored_.push_back({task, select_samples(task_data, per_task_, policy_, rng)});

  std::vector<std::size_t> sizes;
  for (const auto& s : stored_) sizes.push_back(s.samples.size());
  const std::vector<std::size_t> quotas = plan_replay_quotas(capacity_, per_task_, sizes);
  for (std::size_t i = 0; i < stored_.size(); ++i) {
    if (quotas[i] < stored_[i].samples.size()) {
      Rng shrink(derive_seed(seed_, {static_cast<std::uint64_t>(stored_[i].task),
                                     static_cast<std::uint64_t>(task)}));
      stored_[i].samples = select_samples(stored_[i].samples, quotas[i], policy_, shrink);
    }
  }
}

std::size_t ReplayBuffer::size() const {
  std::size_t n = 0;
  for (const auto& s : stored_) n += s.samples.size();
  return n;
}

Dataset build_replay_set(const ReplayBuffer& buffer, int current_task, int input_dim) {
  Dataset out = empty_dataset(input_dim);
  for (const auto& s : buffer.tasks()) {
    if (s.task < current_task) out.append(s.samples);
  }
  return out;
}

Dataset merged_train_set(const Dataset& current, const Dataset& replay) {
  Dataset out = current;
  out.append(replay);
  return out;
}

}  // namespace feat
