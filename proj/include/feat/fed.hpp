#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "feat/geometry.hpp"
#include "feat/model.hpp"
#include "feat/replay.hpp"

namespace feat {

/// Scalar tail-energy priors. weight == 0 means "not yet estimated".
struct EnergyStats {
  double head_energy = 0.0;
  double tail_energy = 0.0;
  std::uint64_t weight = 0;

  bool initialized() const { return weight > 0; }
  bool operator==(const EnergyStats&) const = default;
};

/// One EMA step over a batch of unit-norm tail features (rows). The first step
/// on uninitialized stats copies the batch means. `weight` becomes the batch
/// size. An empty batch returns the stats unchanged.
EnergyStats update_tail_ema(const EnergyStats& stats, const SubspaceProjectors& proj,
                            const Eigen::MatrixXd& tail_features, double rho);

/// Unweighted elementwise mean, accumulated in client order.
ModelParams aggregate_models(std::span<const ModelParams> client_params);

/// Weighted mean; weights need not be normalized.
ModelParams aggregate_models_weighted(std::span<const ModelParams> client_params,
                                      std::span<const double> weights);

/// Sample-size weighted mean of head and tail energies over initialized
/// clients. All-uninitialized input yields uninitialized stats (weight 0),
/// which disables correction downstream.
EnergyStats aggregate_energy_stats(std::span<const EnergyStats> client_stats);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double lr = 0.05;
  double weight_decay = 0.0;
  GsaConfig gsa;       // gsa.weight == 0 disables alignment
  double ema_decay = 0.9;
};

struct ClientState {
  int id = 0;
  std::vector<Dataset> train_tasks;  // index t-1 holds task t
  ReplayBuffer buffer;
  ModelParams params;
  EnergyStats stats;
  std::uint64_t seed = 0;
};

struct LocalRoundReport {
  double loss_total = 0.0;  // batch means averaged over all batches of the round
  double loss_classification = 0.0;
  double loss_alignment = 0.0;
  std::size_t batches = 0;
  std::size_t samples = 0;
  std::size_t tail_samples = 0;
};

/// Seed of the shuffle stream for one (client, task, round).
std::uint64_t round_seed(std::uint64_t client_seed, int task, int round);

/// Runs `epochs` passes of shuffled mini-batches over the merged train set of
/// `task` (current data + replay), one SGD step per batch. For task >= 2 the
/// local energy statistics then take one EMA step over the replayed samples
/// using the updated model. `projectors` must be non-null when task >= 2.
LocalRoundReport local_train_round(ClientState& client, const EtfPrototypes& etf,
                                   const SubspaceProjectors* projectors, const TrainConfig& cfg,
                                   int task, int round);

/// Bookkeeping of simulated client -> server uploads.
class CommunicationLedger {
 public:
  struct Upload {
    int task = 0;
    int round = 0;
    int client = 0;
    std::size_t parameters = 0;
    std::size_t scalars = 0;
  };

  void record(const Upload& upload) { uploads_.push_back(upload); }
  const std::vector<Upload>& uploads() const { return uploads_; }
  std::size_t round_parameters(int task, int round) const;
  std::size_t round_scalars(int task, int round) const;

 private:
  std::vector<Upload> uploads_;
};

/// Scalars uploaded per client per round: head energy, tail energy, sample weight.
inline constexpr std::size_t kEnergyUploadScalars = 3;

struct ServerState {
  ModelParams global;
  EnergyStats global_stats;
  int task = 0;
  int round = 0;
  EtfPrototypes etf;
  std::optional<SubspaceProjectors> projectors;
};

struct ProtocolConfig {
  TrainConfig train;
  int rounds = 1;
  int feature_dim = 0;
  std::uint64_t basis_seed = 0;
  TaskLayout layout;
  bool weighted_model_aggregation = false;
  bool parallel_clients = false;
};

struct RoundMetrics {
  int task = 0;
  int round = 0;
  double loss_total = 0.0;  // mean over clients
  double loss_classification = 0.0;
  double loss_alignment = 0.0;
  EnergyStats global_stats;
  std::size_t upload_parameters = 0;  // per client
  std::size_t upload_scalars = 0;     // per client
  std::size_t tail_samples = 0;       // sum over clients
};

/// Prototypes (and, from task 2 on, head/tail projectors) for `task`.
void prepare_task_geometry(ServerState& server, const ProtocolConfig& cfg, int task);

/// One task of the protocol: rebuild geometry for the enlarged class set,
/// reset energy statistics, then run cfg.rounds rounds of broadcast / local
/// training / model and statistic aggregation, and finally let every client
/// store exemplars of this task. Reductions run on the calling thread in
/// client-id order, so parallel_clients does not change any result.
void run_task(ServerState& server, std::vector<ClientState>& clients, const ProtocolConfig& cfg, int task,
              const std::function<void(const RoundMetrics&)>& on_round = {},
              CommunicationLedger* ledger = nullptr);

}  // namespace feat
