#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "feat/geometry.hpp"

namespace feat {

enum class ExtractorKind { kLinear, kMlp2 };

std::string to_string(ExtractorKind kind);
ExtractorKind parse_extractor_kind(const std::string& name);

struct ExtractorShape {
  ExtractorKind kind = ExtractorKind::kMlp2;
  int input_dim = 0;
  int hidden_dim = 0;  // ignored by kLinear
  int feature_dim = 0;

  std::size_t parameter_count() const;
  bool operator==(const ExtractorShape&) const = default;
};

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Extractor weights stored as one flat vector.
///
/// Flat ordering:
///   linear: W (feature_dim x input_dim, row-major), b (feature_dim)
///   mlp2:   W1 (hidden x input_dim, row-major), b1 (hidden),
///           W2 (feature_dim x hidden, row-major), b2 (feature_dim)
/// Aggregation, SGD and gradient checks all operate on this vector.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ExtractorShape shape);
  ModelParams(ExtractorShape shape, Eigen::VectorXd flat);

  const ExtractorShape& shape() const { return shape_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  Eigen::VectorXd& flat() { return flat_; }
  std::size_t size() const { return static_cast<std::size_t>(flat_.size()); }

  // Views into the flat vector. For kLinear only layer 0 exists.
  Eigen::Map<const RowMajorMatrix> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<RowMajorMatrix> weight(int layer);
  Eigen::Map<Eigen::VectorXd> bias(int layer);

 private:
  struct Block {
    std::size_t offset;
    int rows;
    int cols;
  };
  Block weight_block(int layer) const;
  Block bias_block(int layer) const;

  ExtractorShape shape_;
  Eigen::VectorXd flat_;
};

/// Gaussian weights with std 1/sqrt(fan_in), zero biases.
ModelParams init_params(const ExtractorShape& shape, std::uint64_t seed);

/// Intermediate values kept for the backward pass.
struct ForwardTrace {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd hidden_pre;  // empty for kLinear
  Eigen::MatrixXd features;
};

/// B x feature_dim features for B x input_dim inputs. No normalization.
Eigen::MatrixXd forward(const ModelParams& params, const Eigen::MatrixXd& inputs);
ForwardTrace forward_trace(const ModelParams& params, const Eigen::MatrixXd& inputs);

/// Chains dL/dfeatures through the extractor; returns dL/dtheta in flat order.
Eigen::VectorXd backward(const ModelParams& params, const ForwardTrace& trace,
                         const Eigen::MatrixXd& feature_grad);

struct FeatureBatch {
  Eigen::MatrixXd features;  // B x d
  std::vector<int> labels;   // B

  std::map<int, int> class_counts() const;
};

struct GsaConfig {
  double temperature = 0.5;
  double weight = 0.1;
};

struct LossResult {
  double value = 0.0;
  Eigen::MatrixXd feature_grad;  // B x d
};

/// Mean softmax cross-entropy over logits z_i = <f, w_i>.
LossResult classification_loss(const FeatureBatch& batch, const EtfPrototypes& etf);

/// Class-balanced angular distillation: KL(P_F || P_P) per row between the
/// tempered row-softmaxes of the feature and prototype cosine-similarity
/// matrices, averaged within each class then across present classes. The
/// prototype side is constant.
LossResult gsa_loss(const FeatureBatch& batch, const EtfPrototypes& etf, const GsaConfig& cfg);

struct TotalLoss {
  double value = 0.0;
  double classification = 0.0;
  double alignment = 0.0;
  Eigen::MatrixXd feature_grad;
};

/// Task 1 trains on the classification loss alone; later tasks add
/// weight * alignment loss. A zero weight skips the alignment term entirely.
TotalLoss total_loss(const FeatureBatch& batch, const EtfPrototypes& etf, const GsaConfig& cfg,
                     int task_index);

/// theta <- theta - lr * (grad + weight_decay * theta).
ModelParams sgd_step(const ModelParams& params, const Eigen::VectorXd& gradient, double lr,
                     double weight_decay);

}  // namespace feat
