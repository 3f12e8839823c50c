#include "feat/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "feat/errors.hpp"

namespace feat {

using nlohmann::json;

namespace {

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

json round_json(const RoundMetrics& m) {
  return json{{"record", "round"},
              {"task", m.task},
              {"round", m.round},
              {"loss_total", m.loss_total},
              {"loss_classification", m.loss_classification},
              {"loss_alignment", m.loss_alignment},
              {"global_head_energy", m.global_stats.head_energy},
              {"global_tail_energy", m.global_stats.tail_energy},
              {"global_energy_weight", m.global_stats.weight},
              {"tail_samples", m.tail_samples},
              {"upload_parameters_per_client", m.upload_parameters},
              {"upload_scalars_per_client", m.upload_scalars}};
}

json eval_json(const EvalRecord& e, const AccuracyMatrix& partial, bool egc_active) {
  return json{{"record", "eval"},
              {"task", e.task},
              {"accuracies", e.accuracies},
              {"average_accuracy", partial.average.back()},
              {"forgetting", partial.forgetting},
              {"egc_active", egc_active},
              {"mean_gate", e.mean_gate},
              {"corrected_fraction", e.corrected_fraction}};
}

}  // namespace

AccuracyMatrix accuracy_matrix(std::span<const EvalRecord> evals, int tasks) {
  if (tasks < 1) throw InvalidArgument("accuracy matrix needs at least one task");
  std::vector<const EvalRecord*> by_task(static_cast<std::size_t>(tasks), nullptr);
  for (const EvalRecord& e : evals) {
    if (e.task < 1 || e.task > tasks) {
      throw InvalidArgument("evaluation for unknown task " + std::to_string(e.task));
    }
    auto& slot = by_task[static_cast<std::size_t>(e.task - 1)];
    if (slot != nullptr) throw InvalidArgument("duplicate evaluation for task " + std::to_string(e.task));
    if (e.accuracies.size() != static_cast<std::size_t>(e.task)) {
      throw InvalidArgument("evaluation after task " + std::to_string(e.task) + " has " +
                            std::to_string(e.accuracies.size()) + " cells");
    }
    slot = &e;
  }
  AccuracyMatrix m;
  for (int t = 1; t <= tasks; ++t) {
    const EvalRecord* e = by_task[static_cast<std::size_t>(t - 1)];
    if (e == nullptr) throw InvalidArgument("missing evaluation for task " + std::to_string(t));
    m.rows.push_back(e->accuracies);
    double sum = 0.0;
    for (double a : e->accuracies) sum += a;
    m.average.push_back(sum / static_cast<double>(t));
  }
  m.final_average = m.average.back();
  const std::vector<double>& last = m.rows.back();
  for (int i = 1; i <= tasks; ++i) {
    double best = last[static_cast<std::size_t>(i - 1)];
    for (int t = i; t < tasks; ++t) {
      best = std::max(best, m.rows[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(i - 1)]);
    }
    m.forgetting.push_back(i == tasks ? 0.0 : best - last[static_cast<std::size_t>(i - 1)]);
  }
  return m;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
  validate(cfg);
  const ExperimentSeeds seeds = experiment_seeds(cfg.master_seed);
  ExperimentData out;
  out.layout = TaskLayout(cfg.dataset.classes, cfg.tasks);

  const Dataset pool = generate_synthetic(cfg.dataset, seeds.data);
  if (cfg.clients == 1) {
    out.partition.clients.push_back(pool);
  } else {
    out.partition = dirichlet_partition(pool, cfg.clients, cfg.dirichlet_beta, seeds.partition);
  }
  out.warnings = out.partition.warnings;

  out.pooled_test.assign(static_cast<std::size_t>(cfg.tasks), empty_dataset(cfg.dataset.input_dim));
  for (std::size_t k = 0; k < out.partition.clients.size(); ++k) {
    const std::vector<Dataset> stream = split_by_task(out.partition.clients[k], out.layout);
    std::vector<Dataset> train;
    std::vector<Dataset> test;
    for (std::size_t t = 0; t < stream.size(); ++t) {
      HoldoutSplit split = split_holdout(stream[t], cfg.holdout_fraction,
                                         derive_seed(seeds.holdout, {k, t + 1}));
      out.pooled_test[t].append(split.test);
      train.push_back(std::move(split.train));
      test.push_back(std::move(split.test));
    }
    out.client_train.push_back(std::move(train));
    out.client_test.push_back(std::move(test));
  }
  warn_empty_tasks(out.client_train, out.warnings);
  for (int t = 1; t <= cfg.tasks; ++t) {
    if (out.pooled_test[static_cast<std::size_t>(t - 1)].empty()) {
      throw ConfigError("dataset.per_class", "task " + std::to_string(t) + " has an empty test split");
    }
  }
  return out;
}

json diagnostic_to_json(const SampleDiagnostic& d) {
  const Prediction& p = d.prediction;
  json j{{"eval_task", d.eval_task},
         {"sample_task", d.sample_task},
         {"sample_id", d.sample_id},
         {"label", d.label},
         {"predicted", p.label},
         {"predicted_uncorrected", p.plain_label},
         {"gate", p.gate},
         {"head_energy", p.head_energy},
         {"tail_energy", p.tail_energy},
         {"corrected", p.corrected},
         {"degenerate_feature", p.degenerate_feature},
         {"degenerate_correction", p.degenerate_correction},
         {"logits", vector_json(p.logits)},
         {"logits_uncorrected", vector_json(p.plain_logits)}};
  if (p.head_component.size() > 0) {
    j["head_component"] = vector_json(p.head_component);
    j["tail_component"] = vector_json(p.tail_component);
    // component the correction subtracts: g (P_H x - P_T x)
    j["removed_component"] = vector_json(p.gate * (p.head_component - p.tail_component));
  }
  return j;
}

json ExperimentSummary::to_json() const {
  return json{{"ablation", ablation},
              {"config", config},
              {"accuracy_matrix", accuracy.rows},
              {"average_accuracy", accuracy.average},
              {"final_average_accuracy", accuracy.final_average},
              {"forgetting", accuracy.forgetting},
              {"gsa_enabled", ablation == "gsa" || ablation == "gsa+egc"},
              {"egc_enabled", ablation == "egc" || ablation == "gsa+egc"},
              {"communication",
               {{"parameters_per_upload", parameter_count},
                {"scalars_per_upload", upload_scalars_per_client_round},
                {"uploads", uploads},
                {"consistent", communication_consistent}}},
              {"warnings", warnings}};
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks) {
  const ExperimentData data = prepare_data(cfg);
  const ExperimentSeeds seeds = experiment_seeds(cfg.master_seed);

  const ExtractorShape shape{cfg.model.kind, cfg.dataset.input_dim, cfg.model.hidden_dim,
                             cfg.model.feature_dim};
  ServerState server;
  server.global = init_params(shape, seeds.model_init);

  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < data.client_train.size(); ++k) {
    ClientState c;
    c.id = static_cast<int>(k);
    c.train_tasks = data.client_train[k];
    c.buffer = ReplayBuffer(cfg.replay.capacity, cfg.replay.per_task, cfg.replay.policy,
                            derive_seed(seeds.replay, {k}));
    c.params = server.global;
    c.seed = derive_seed(seeds.clients, {k});
    clients.push_back(std::move(c));
  }

  ProtocolConfig protocol;
  protocol.train.epochs = cfg.epochs;
  protocol.train.batch_size = cfg.batch_size;
  protocol.train.lr = cfg.lr;
  protocol.train.weight_decay = cfg.weight_decay;
  protocol.train.gsa = {cfg.gsa.temperature, cfg.gsa.enabled ? cfg.gsa.weight : 0.0};
  protocol.train.ema_decay = cfg.egc.ema_decay;
  protocol.rounds = cfg.rounds;
  protocol.feature_dim = cfg.model.feature_dim;
  protocol.basis_seed = seeds.basis;
  protocol.layout = data.layout;
  protocol.weighted_model_aggregation = cfg.weighted_model_aggregation;
  protocol.parallel_clients = cfg.parallel_clients;

  ExperimentSummary summary;
  summary.config = config_to_json(cfg);
  summary.ablation = ablation_tag(cfg);
  summary.warnings = data.warnings;
  summary.parameter_count = shape.parameter_count();
  summary.upload_scalars_per_client_round = kEnergyUploadScalars;

  CommunicationLedger ledger;
  auto emit = [&](const json& record) {
    if (hooks.metrics != nullptr) *hooks.metrics << record.dump() << '\n';
  };

  for (int t = 1; t <= cfg.tasks; ++t) {
    run_task(server, clients, protocol, t, [&](const RoundMetrics& m) { emit(round_json(m)); }, &ledger);

    const SubspaceProjectors* proj = server.projectors ? &*server.projectors : nullptr;
    EvalRecord record;
    record.task = t;
    double gate_sum = 0.0;
    std::size_t gated = 0;
    std::size_t total = 0;
    for (int j = 1; j <= t; ++j) {
      const Dataset& test = data.pooled_test[static_cast<std::size_t>(j - 1)];
      const std::vector<Prediction> preds =
          predict_batch(test.inputs, server.global, server.etf, proj, server.global_stats, cfg.egc);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].label == test.labels[i]) ++correct;
        gate_sum += preds[i].gate;
        if (preds[i].gate > 0.0) ++gated;
        if (hooks.on_sample) hooks.on_sample({t, j, test.labels[i], test.ids[i], preds[i]});
      }
      total += preds.size();
      record.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(preds.size()));
    }
    record.mean_gate = gate_sum / static_cast<double>(total);
    record.corrected_fraction = static_cast<double>(gated) / static_cast<double>(total);
    summary.evals.push_back(record);
    const AccuracyMatrix partial = accuracy_matrix(summary.evals, t);
    emit(eval_json(record, partial, cfg.egc.enabled && proj != nullptr));
  }

  summary.accuracy = accuracy_matrix(summary.evals, cfg.tasks);
  summary.uploads = ledger.uploads().size();
  summary.communication_consistent = true;
  for (const auto& u : ledger.uploads()) {
    if (u.parameters != summary.parameter_count || u.scalars != kEnergyUploadScalars) {
      summary.communication_consistent = false;
    }
  }
  if (summary.uploads != static_cast<std::size_t>(cfg.tasks) * cfg.rounds * clients.size()) {
    summary.communication_consistent = false;
  }
  return summary;
}

std::string format_real(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::string accuracy_csv(const AccuracyMatrix& m) {
  std::ostringstream out;
  const std::size_t tasks = m.rows.size();
  out << "after_task";
  for (std::size_t j = 1; j <= tasks; ++j) out << ",task_" << j;
  out << ",average\n";
  for (std::size_t t = 0; t < tasks; ++t) {
    out << t + 1;
    for (std::size_t j = 0; j < tasks; ++j) {
      out << ',';
      if (j < m.rows[t].size()) out << format_real(m.rows[t][j]);
    }
    out << ',' << format_real(m.average[t]) << '\n';
  }
  return out.str();
}

std::string partition_csv(const std::vector<std::vector<std::size_t>>& counts) {
  std::ostringstream out;
  out << "client";
  const std::size_t classes = counts.empty() ? 0 : counts.front().size();
  for (std::size_t c = 0; c < classes; ++c) out << ",class_" << c;
  out << '\n';
  for (std::size_t k = 0; k < counts.size(); ++k) {
    out << k;
    for (std::size_t v : counts[k]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::ostringstream out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_real(m(i, j));
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace feat
