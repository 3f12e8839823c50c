#pragma once

#include <vector>

#include <Eigen/Dense>

#include "feat/fed.hpp"
#include "feat/geometry.hpp"
#include "feat/model.hpp"

namespace feat {

struct EgcConfig {
  double ema_decay = 0.9;
  double epsilon = 1e-8;
  bool enabled = true;
};

/// g = max{(e_H - prior_H) / (e_H + e_T + eps), 0}. Zero when the global
/// statistics are uninitialized.
double confidence_gate(double head_energy, double tail_energy, const EnergyStats& global_stats,
                       double epsilon);

struct Correction {
  Eigen::VectorXd corrected;  // unit norm unless `degenerate`
  Eigen::VectorXd unnormalized;  // x - g P_H x + g P_T x
  bool degenerate = false;  // pre-normalization norm < 1e-12, x returned unchanged
};

/// Suppresses the head-subspace component and boosts the tail-subspace
/// component of a unit feature by `gate`, then renormalizes. gate == 0
/// returns x untouched.
Correction correct_feature(const Eigen::VectorXd& x, const SubspaceProjectors& proj, double gate);

/// Argmax with ties going to the lowest index.
int argmax_lowest(const Eigen::VectorXd& scores);

struct Prediction {
  int label = 0;
  Eigen::VectorXd logits;        // scores of the (possibly corrected) feature
  Eigen::VectorXd plain_logits;  // scores of the uncorrected normalized feature
  int plain_label = 0;
  double gate = 0.0;
  double head_energy = 0.0;
  double tail_energy = 0.0;
  Eigen::VectorXd head_component;  // P_H x, empty when no projectors
  Eigen::VectorXd tail_component;  // P_T x
  bool corrected = false;           // the correction path ran
  bool degenerate_feature = false;  // zero feature vector
  bool degenerate_correction = false;
};

/// Scores a raw (unnormalized) feature against the prototypes. The correction
/// runs only when cfg.enabled and projectors are present (task >= 2).
Prediction predict_feature(const Eigen::VectorXd& feature, const EtfPrototypes& etf,
                           const SubspaceProjectors* projectors, const EnergyStats& global_stats,
                           const EgcConfig& cfg);

Prediction predict(const Eigen::VectorXd& input, const ModelParams& params, const EtfPrototypes& etf,
                   const SubspaceProjectors* projectors, const EnergyStats& global_stats,
                   const EgcConfig& cfg);

/// Row-wise predict over a batch of inputs.
std::vector<Prediction> predict_batch(const Eigen::MatrixXd& inputs, const ModelParams& params,
                                      const EtfPrototypes& etf, const SubspaceProjectors* projectors,
                                      const EnergyStats& global_stats, const EgcConfig& cfg);

}  // namespace feat
