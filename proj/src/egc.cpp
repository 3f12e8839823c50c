#include "feat/egc.hpp"

#include <cmath>
#include <string>

#include "feat/errors.hpp"

namespace feat {

namespace {
constexpr double kDegenerateNorm = 1e-12;
}  // namespace

double confidence_gate(double head_energy, double tail_energy, const EnergyStats& global_stats,
                       double epsilon) {
  if (!(head_energy >= 0.0) || !(tail_energy >= 0.0)) {
    throw InvalidArgument("subspace energies must be non-negative");
  }
  if (!(epsilon > 0.0)) {
    throw InvalidArgument("gate epsilon must be positive");
  }
  if (!global_stats.initialized()) return 0.0;
  const double g = (head_energy - global_stats.head_energy) / (head_energy + tail_energy + epsilon);
  return std::max(g, 0.0);
}

Correction correct_feature(const Eigen::VectorXd& x, const SubspaceProjectors& proj, double gate) {
  if (x.size() != proj.head.rows()) {
    throw ShapeError("feature dimension does not match projectors");
  }
  if (!(gate >= 0.0 && gate < 1.0)) {
    throw InvalidArgument("gate must lie in [0, 1), got " + std::to_string(gate));
  }
  Correction out;
  if (gate == 0.0) {
    out.corrected = x;
    out.unnormalized = x;
    return out;
  }
  out.unnormalized = x - gate * (proj.head * x) + gate * (proj.tail * x);
  const double norm = out.unnormalized.norm();
  if (norm < kDegenerateNorm) {
    out.corrected = x;
    out.degenerate = true;
    return out;
  }
  out.corrected = out.unnormalized / norm;
  return out;
}

int argmax_lowest(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw InvalidArgument("argmax of an empty score vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores(i) > scores(best)) best = i;
  }
  return static_cast<int>(best);
}

Prediction predict_feature(const Eigen::VectorXd& feature, const EtfPrototypes& etf,
                           const SubspaceProjectors* projectors, const EnergyStats& global_stats,
                           const EgcConfig& cfg) {
  if (feature.size() != etf.feature_dim) {
    throw ShapeError("feature dimension does not match prototypes");
  }
  Prediction p;
  const double norm = feature.norm();
  if (!(norm > 0.0)) {
    p.degenerate_feature = true;
    p.plain_logits = Eigen::VectorXd::Zero(etf.class_count);
    p.logits = p.plain_logits;
    return p;
  }
  const Eigen::VectorXd x = feature / norm;
  p.plain_logits = etf.prototypes.transpose() * x;
  p.plain_label = argmax_lowest(p.plain_logits);

  if (!cfg.enabled || projectors == nullptr) {
    p.logits = p.plain_logits;
    p.label = p.plain_label;
    return p;
  }

  p.head_component = projectors->head * x;
  p.tail_component = projectors->tail * x;
  p.head_energy = p.head_component.squaredNorm() / projectors->head_rank_norm;
  p.tail_energy = p.tail_component.squaredNorm() / projectors->tail_rank_norm;
  p.gate = confidence_gate(p.head_energy, p.tail_energy, global_stats, cfg.epsilon);
  p.corrected = true;
  if (p.gate == 0.0) {
    p.logits = p.plain_logits;
    p.label = p.plain_label;
    return p;
  }
  const Correction c = correct_feature(x, *projectors, p.gate);
  p.degenerate_correction = c.degenerate;
  p.logits = etf.prototypes.transpose() * c.corrected;
  p.label = argmax_lowest(p.logits);
  return p;
}

Prediction predict(const Eigen::VectorXd& input, const ModelParams& params, const EtfPrototypes& etf,
                   const SubspaceProjectors* projectors, const EnergyStats& global_stats,
                   const EgcConfig& cfg) {
  const Eigen::MatrixXd features = forward(params, input.transpose());
  return predict_feature(features.row(0).transpose(), etf, projectors, global_stats, cfg);
}

std::vector<Prediction> predict_batch(const Eigen::MatrixXd& inputs, const ModelParams& params,
                                      const EtfPrototypes& etf, const SubspaceProjectors* projectors,
                                      const EnergyStats& global_stats, const EgcConfig& cfg) {
  const Eigen::MatrixXd features = forward(params, inputs);
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index a = 0; a < features.rows(); ++a) {
    out.push_back(predict_feature(features.row(a).transpose(), etf, projectors, global_stats, cfg));
  }
  return out;
}

}  // namespace feat
