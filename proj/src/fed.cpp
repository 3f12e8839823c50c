#include "feat/fed.hpp"

#include <exception>
#include <string>
#include <thread>

#include "feat/errors.hpp"

namespace feat {

EnergyStats update_tail_ema(const EnergyStats& stats, const SubspaceProjectors& proj,
                            const Eigen::MatrixXd& tail_features, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw InvalidArgument("EMA decay must lie in (0, 1]");
  }
  const Eigen::Index n = tail_features.rows();
  if (n == 0) return stats;

  double head_sum = 0.0;
  double tail_sum = 0.0;
  for (Eigen::Index a = 0; a < n; ++a) {
    const SubspaceEnergies e = subspace_energies(proj, tail_features.row(a).transpose());
    head_sum += e.head;
    tail_sum += e.tail;
  }
  const double head_mean = head_sum / static_cast<double>(n);
  const double tail_mean = tail_sum / static_cast<double>(n);

  EnergyStats out;
  out.weight = static_cast<std::uint64_t>(n);
  if (!stats.initialized()) {
    out.head_energy = head_mean;
    out.tail_energy = tail_mean;
  } else {
    out.head_energy = (1.0 - rho) * stats.head_energy + rho * head_mean;
    out.tail_energy = (1.0 - rho) * stats.tail_energy + rho * tail_mean;
  }
  return out;
}

ModelParams aggregate_models(std::span<const ModelParams> client_params) {
  if (client_params.empty()) {
    throw InvalidArgument("model aggregation needs at least one client");
  }
  ModelParams sum(client_params.front().shape());
  for (const ModelParams& p : client_params) {
    if (!(p.shape() == sum.shape())) {
      throw ShapeError("client models have different shapes");
    }
    sum.flat() += p.flat();
  }
  sum.flat() /= static_cast<double>(client_params.size());
  return sum;
}

ModelParams aggregate_models_weighted(std::span<const ModelParams> client_params,
                                      std::span<const double> weights) {
  if (client_params.empty() || client_params.size() != weights.size()) {
    throw InvalidArgument("weighted aggregation needs one weight per client");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw InvalidArgument("aggregation weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) return aggregate_models(client_params);

  ModelParams sum(client_params.front().shape());
  for (std::size_t k = 0; k < client_params.size(); ++k) {
    if (!(client_params[k].shape() == sum.shape())) {
      throw ShapeError("client models have different shapes");
    }
    sum.flat() += weights[k] * client_params[k].flat();
  }
  sum.flat() /= total;
  return sum;
}

EnergyStats aggregate_energy_stats(std::span<const EnergyStats> client_stats) {
  EnergyStats out;
  for (const EnergyStats& s : client_stats) out.weight += s.weight;
  if (out.weight == 0) return out;
  // normalized weights first, so a lone contributing client passes through exactly
  const auto total = static_cast<double>(out.weight);
  for (const EnergyStats& s : client_stats) {
    if (!s.initialized()) continue;
    const double share = static_cast<double>(s.weight) / total;
    out.head_energy += share * s.head_energy;
    out.tail_energy += share * s.tail_energy;
  }
  return out;
}

std::uint64_t round_seed(std::uint64_t client_seed, int task, int round) {
  return derive_seed(client_seed, {static_cast<std::uint64_t>(task), static_cast<std::uint64_t>(round)});
}

LocalRoundReport local_train_round(ClientState& client, const EtfPrototypes& etf,
                                   const SubspaceProjectors* projectors, const TrainConfig& cfg,
                                   int task, int round) {
  if (task < 1 || task > static_cast<int>(client.train_tasks.size())) {
    throw InvalidArgument("client " + std::to_string(client.id) + " has no data stream for task " +
                          std::to_string(task));
  }
  if (cfg.epochs < 0 || cfg.batch_size < 1) {
    throw InvalidArgument("epochs must be >= 0 and batch size >= 1");
  }
  if (task >= 2 && projectors == nullptr) {
    throw InvalidArgument("tasks after the first need head/tail projectors");
  }
  const Dataset& current = client.train_tasks[static_cast<std::size_t>(task - 1)];
  const Dataset replay = build_replay_set(client.buffer, task, current.input_dim());
  const Dataset train = merged_train_set(current, replay);

  LocalRoundReport report;
  report.samples = train.size();
  if (train.empty()) return report;

  Rng rng(round_seed(client.seed, task, round));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(train.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const Dataset mini = train.subset(std::span(order).subspan(start, stop - start));
      const ForwardTrace trace = forward_trace(client.params, mini.inputs);
      const TotalLoss loss = total_loss({trace.features, mini.labels}, etf, cfg.gsa, task);
      const Eigen::VectorXd grad = backward(client.params, trace, loss.feature_grad);
      client.params = sgd_step(client.params, grad, cfg.lr, cfg.weight_decay);
      report.loss_total += loss.value;
      report.loss_classification += loss.classification;
      report.loss_alignment += loss.alignment;
      ++report.batches;
    }
  }
  if (report.batches > 0) {
    const auto nb = static_cast<double>(report.batches);
    report.loss_total /= nb;
    report.loss_classification /= nb;
    report.loss_alignment /= nb;
  }

  if (task >= 2 && !replay.empty()) {
    const Eigen::MatrixXd features = forward(client.params, replay.inputs);
    std::vector<Eigen::Index> usable;
    for (Eigen::Index a = 0; a < features.rows(); ++a) {
      if (features.row(a).norm() > 0.0) usable.push_back(a);
    }
    Eigen::MatrixXd unit(static_cast<Eigen::Index>(usable.size()), features.cols());
    for (std::size_t i = 0; i < usable.size(); ++i) {
      unit.row(static_cast<Eigen::Index>(i)) = features.row(usable[i]).normalized();
    }
    client.stats = update_tail_ema(client.stats, *projectors, unit, cfg.ema_decay);
    report.tail_samples = usable.size();
  }
  return report;
}

std::size_t CommunicationLedger::round_parameters(int task, int round) const {
  std::size_t n = 0;
  for (const auto& u : uploads_) {
    if (u.task == task && u.round == round) n += u.parameters;
  }
  return n;
}

std::size_t CommunicationLedger::round_scalars(int task, int round) const {
  std::size_t n = 0;
  for (const auto& u : uploads_) {
    if (u.task == task && u.round == round) n += u.scalars;
  }
  return n;
}

void prepare_task_geometry(ServerState& server, const ProtocolConfig& cfg, int task) {
  const std::vector<int> seen = cfg.layout.classes_through(task);
  server.task = task;
  server.round = 0;
  server.etf = build_etf(static_cast<int>(seen.size()), cfg.feature_dim, cfg.basis_seed);
  server.projectors.reset();
  if (task >= 2) {
    server.projectors = build_projectors(server.etf, cfg.layout.classes_of(task),
                                         cfg.layout.classes_before(task));
  }
}

void run_task(ServerState& server, std::vector<ClientState>& clients, const ProtocolConfig& cfg, int task,
              const std::function<void(const RoundMetrics&)>& on_round, CommunicationLedger* ledger) {
  if (clients.empty()) throw InvalidArgument("protocol needs at least one client");
  if (cfg.rounds < 0) throw InvalidArgument("round count must be non-negative");

  prepare_task_geometry(server, cfg, task);
  server.global_stats = {};
  for (ClientState& c : clients) c.stats = {};

  const SubspaceProjectors* proj = server.projectors ? &*server.projectors : nullptr;
  std::vector<LocalRoundReport> reports(clients.size());

  for (int r = 1; r <= cfg.rounds; ++r) {
    server.round = r;
    for (ClientState& c : clients) c.params = server.global;

    if (cfg.parallel_clients && clients.size() > 1) {
      std::vector<std::exception_ptr> errors(clients.size());
      std::vector<std::thread> workers;
      workers.reserve(clients.size());
      for (std::size_t k = 0; k < clients.size(); ++k) {
        workers.emplace_back([&, k] {
          try {
            reports[k] = local_train_round(clients[k], server.etf, proj, cfg.train, task, r);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      }
      for (auto& w : workers) w.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    } else {
      for (std::size_t k = 0; k < clients.size(); ++k) {
        reports[k] = local_train_round(clients[k], server.etf, proj, cfg.train, task, r);
      }
    }

    std::vector<ModelParams> uploaded;
    std::vector<EnergyStats> stats;
    std::vector<double> weights;
    uploaded.reserve(clients.size());
    for (std::size_t k = 0; k < clients.size(); ++k) {
      uploaded.push_back(clients[k].params);
      stats.push_back(clients[k].stats);
      weights.push_back(static_cast<double>(reports[k].samples));
    }
    server.global = cfg.weighted_model_aggregation ? aggregate_models_weighted(uploaded, weights)
                                                   : aggregate_models(uploaded);
    server.global_stats = aggregate_energy_stats(stats);

    RoundMetrics m;
    m.task = task;
    m.round = r;
    m.global_stats = server.global_stats;
    m.upload_parameters = server.global.size();
    m.upload_scalars = kEnergyUploadScalars;
    for (std::size_t k = 0; k < clients.size(); ++k) {
      m.loss_total += reports[k].loss_total;
      m.loss_classification += reports[k].loss_classification;
      m.loss_alignment += reports[k].loss_alignment;
      m.tail_samples += reports[k].tail_samples;
      if (ledger != nullptr) {
        ledger->record({task, r, clients[k].id, clients[k].params.size(), kEnergyUploadScalars});
      }
    }
    const auto kc = static_cast<double>(clients.size());
    m.loss_total /= kc;
    m.loss_classification /= kc;
    m.loss_alignment /= kc;
    if (on_round) on_round(m);
  }

  for (ClientState& c : clients) {
    c.buffer.store_task(task, c.train_tasks[static_cast<std::size_t>(task - 1)]);
  }
}

}  // namespace feat
