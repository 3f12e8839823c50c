#include "feat/model.hpp"

#include <cmath>
#include <string>

#include "feat/errors.hpp"
#include "feat/random.hpp"

namespace feat {

namespace {

void check_batch(const FeatureBatch& batch, const EtfPrototypes& etf) {
  if (batch.features.rows() < 1) {
    throw ShapeError("feature batch is empty");
  }
  if (batch.features.rows() != static_cast<Eigen::Index>(batch.labels.size())) {
    throw ShapeError("feature batch has " + std::to_string(batch.features.rows()) + " rows but " +
                     std::to_string(batch.labels.size()) + " labels");
  }
  if (batch.features.cols() != etf.feature_dim) {
    throw ShapeError("features have dimension " + std::to_string(batch.features.cols()) +
                     ", prototypes have " + std::to_string(etf.feature_dim));
  }
  for (int y : batch.labels) {
    if (y < 0 || y >= etf.class_count) {
      throw LabelError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(etf.class_count) + ")");
    }
  }
}

// Row-wise log-softmax with max subtraction.
Eigen::MatrixXd log_softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index a = 0; a < logits.rows(); ++a) {
    const double m = logits.row(a).maxCoeff();
    const double lse = m + std::log((logits.row(a).array() - m).exp().sum());
    out.row(a) = logits.row(a).array() - lse;
  }
  return out;
}

}  // namespace

std::string to_string(ExtractorKind kind) {
  return kind == ExtractorKind::kLinear ? "linear" : "mlp2";
}

ExtractorKind parse_extractor_kind(const std::string& name) {
  if (name == "linear") return ExtractorKind::kLinear;
  if (name == "mlp2") return ExtractorKind::kMlp2;
  throw InvalidArgument("unknown extractor kind '" + name + "' (expected linear or mlp2)");
}

std::size_t ExtractorShape::parameter_count() const {
  const auto in = static_cast<std::size_t>(input_dim);
  const auto h = static_cast<std::size_t>(hidden_dim);
  const auto d = static_cast<std::size_t>(feature_dim);
  if (kind == ExtractorKind::kLinear) {
    return d * in + d;
  }
  return h * in + h + d * h + d;
}

ModelParams::ModelParams(ExtractorShape shape)
    : shape_(shape), flat_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(shape.parameter_count()))) {
  if (shape.input_dim < 1 || shape.feature_dim < 1 ||
      (shape.kind == ExtractorKind::kMlp2 && shape.hidden_dim < 1)) {
    throw ShapeError("extractor dimensions must be positive");
  }
}

ModelParams::ModelParams(ExtractorShape shape, Eigen::VectorXd flat) : ModelParams(shape) {
  if (flat.size() != flat_.size()) {
    throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) +
                     " entries, shape needs " + std::to_string(flat_.size()));
  }
  flat_ = std::move(flat);
}

ModelParams::Block ModelParams::weight_block(int layer) const {
  if (shape_.kind == ExtractorKind::kLinear) {
    if (layer != 0) throw ShapeError("linear extractor has a single layer");
    return {0, shape_.feature_dim, shape_.input_dim};
  }
  if (layer == 0) return {0, shape_.hidden_dim, shape_.input_dim};
  if (layer == 1) {
    const auto off = static_cast<std::size_t>(shape_.hidden_dim) * (shape_.input_dim + 1);
    return {off, shape_.feature_dim, shape_.hidden_dim};
  }
  throw ShapeError("mlp2 extractor has layers 0 and 1");
}

ModelParams::Block ModelParams::bias_block(int layer) const {
  const Block w = weight_block(layer);
  return {w.offset + static_cast<std::size_t>(w.rows) * w.cols, w.rows, 1};
}

Eigen::Map<const RowMajorMatrix> ModelParams::weight(int layer) const {
  const Block b = weight_block(layer);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<const Eigen::VectorXd> ModelParams::bias(int layer) const {
  const Block b = bias_block(layer);
  return {flat_.data() + b.offset, b.rows};
}

Eigen::Map<RowMajorMatrix> ModelParams::weight(int layer) {
  const Block b = weight_block(layer);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<Eigen::VectorXd> ModelParams::bias(int layer) {
  const Block b = bias_block(layer);
  return {flat_.data() + b.offset, b.rows};
}

ModelParams init_params(const ExtractorShape& shape, std::uint64_t seed) {
  ModelParams params(shape);
  Rng rng(seed);
  const int layers = shape.kind == ExtractorKind::kLinear ? 1 : 2;
  for (int layer = 0; layer < layers; ++layer) {
    auto w = params.weight(layer);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(w.cols())));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        w(i, j) = normal(rng);
      }
    }
  }
  return params;
}

ForwardTrace forward_trace(const ModelParams& params, const Eigen::MatrixXd& inputs) {
  const ExtractorShape& s = params.shape();
  if (inputs.cols() != s.input_dim) {
    throw ShapeError("input width " + std::to_string(inputs.cols()) + " does not match extractor input " +
                     std::to_string(s.input_dim));
  }
  ForwardTrace trace;
  trace.inputs = inputs;
  if (s.kind == ExtractorKind::kLinear) {
    trace.features = inputs * params.weight(0).transpose();
    trace.features.rowwise() += params.bias(0).transpose();
    return trace;
  }
  trace.hidden_pre = inputs * params.weight(0).transpose();
  trace.hidden_pre.rowwise() += params.bias(0).transpose();
  const Eigen::MatrixXd hidden = trace.hidden_pre.cwiseMax(0.0);
  trace.features = hidden * params.weight(1).transpose();
  trace.features.rowwise() += params.bias(1).transpose();
  return trace;
}

Eigen::MatrixXd forward(const ModelParams& params, const Eigen::MatrixXd& inputs) {
  return forward_trace(params, inputs).features;
}

Eigen::VectorXd backward(const ModelParams& params, const ForwardTrace& trace,
                         const Eigen::MatrixXd& feature_grad) {
  if (feature_grad.rows() != trace.features.rows() || feature_grad.cols() != trace.features.cols()) {
    throw ShapeError("feature gradient shape does not match forward pass");
  }
  ModelParams grad(params.shape());
  if (params.shape().kind == ExtractorKind::kLinear) {
    grad.weight(0) = feature_grad.transpose() * trace.inputs;
    grad.bias(0) = feature_grad.colwise().sum().transpose();
    return std::move(grad.flat());
  }
  const Eigen::MatrixXd hidden = trace.hidden_pre.cwiseMax(0.0);
  grad.weight(1) = feature_grad.transpose() * hidden;
  grad.bias(1) = feature_grad.colwise().sum().transpose();
  Eigen::MatrixXd hidden_grad = feature_grad * params.weight(1);
  hidden_grad.array() *= (trace.hidden_pre.array() > 0.0).cast<double>();
  grad.weight(0) = hidden_grad.transpose() * trace.inputs;
  grad.bias(0) = hidden_grad.colwise().sum().transpose();
  return std::move(grad.flat());
}

std::map<int, int> FeatureBatch::class_counts() const {
  std::map<int, int> counts;
  for (int y : labels) ++counts[y];
  return counts;
}

LossResult classification_loss(const FeatureBatch& batch, const EtfPrototypes& etf) {
  check_batch(batch, etf);
  const auto rows = batch.features.rows();
  const Eigen::MatrixXd logits = batch.features * etf.prototypes;  // B x C
  const Eigen::MatrixXd log_probs = log_softmax_rows(logits);

  LossResult out;
  Eigen::MatrixXd logit_grad = log_probs.array().exp();
  double total = 0.0;
  for (Eigen::Index a = 0; a < rows; ++a) {
    const int y = batch.labels[static_cast<std::size_t>(a)];
    total -= log_probs(a, y);
    logit_grad(a, y) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(rows);
  out.value = total * inv_b;
  out.feature_grad = (logit_grad * inv_b) * etf.prototypes.transpose();
  return out;
}

LossResult gsa_loss(const FeatureBatch& batch, const EtfPrototypes& etf, const GsaConfig& cfg) {
  check_batch(batch, etf);
  if (!(cfg.temperature > 0.0)) {
    throw InvalidArgument("alignment temperature must be positive");
  }
  const Eigen::Index rows = batch.features.rows();

  Eigen::VectorXd norms = batch.features.rowwise().norm();
  for (Eigen::Index a = 0; a < rows; ++a) {
    if (!(norms(a) > 0.0)) {
      throw DegenerateInputError("feature row " + std::to_string(a) +
                                 " has zero norm; cosine similarity is undefined");
    }
  }
  const Eigen::MatrixXd unit = norms.cwiseInverse().asDiagonal() * batch.features;

  Eigen::MatrixXd proto_rows(rows, etf.feature_dim);
  for (Eigen::Index a = 0; a < rows; ++a) {
    const Eigen::VectorXd w = etf.prototypes.col(batch.labels[static_cast<std::size_t>(a)]);
    proto_rows.row(a) = w.transpose() / w.norm();
  }

  const double inv_tau = 1.0 / cfg.temperature;
  const Eigen::MatrixXd log_pf = log_softmax_rows((unit * unit.transpose()) * inv_tau);
  const Eigen::MatrixXd log_pp = log_softmax_rows((proto_rows * proto_rows.transpose()) * inv_tau);
  const Eigen::MatrixXd pf = log_pf.array().exp();

  const std::map<int, int> counts = batch.class_counts();
  const double present = static_cast<double>(counts.size());

  // Row weight 1 / (|C_B| n_{y_a}) realizes the per-class then across-class mean.
  Eigen::MatrixXd logit_grad(rows, rows);
  std::map<int, double> class_kl;
  for (Eigen::Index a = 0; a < rows; ++a) {
    const int y = batch.labels[static_cast<std::size_t>(a)];
    double kl = 0.0;
    for (Eigen::Index b = 0; b < rows; ++b) {
      if (pf(a, b) > 0.0) kl += pf(a, b) * (log_pf(a, b) - log_pp(a, b));
    }
    class_kl[y] += kl;
    const double weight = 1.0 / (present * counts.at(y));
    for (Eigen::Index b = 0; b < rows; ++b) {
      logit_grad(a, b) =
          pf(a, b) > 0.0 ? weight * pf(a, b) * ((log_pf(a, b) - log_pp(a, b)) - kl) : 0.0;
    }
  }

  LossResult out;
  double total = 0.0;
  for (const auto& [c, kl_sum] : class_kl) total += kl_sum / counts.at(c);
  out.value = total / present;

  const Eigen::MatrixXd sim_grad = logit_grad * inv_tau;
  const Eigen::MatrixXd unit_grad = (sim_grad + sim_grad.transpose()) * unit;
  out.feature_grad.resize(rows, etf.feature_dim);
  for (Eigen::Index a = 0; a < rows; ++a) {
    const Eigen::RowVectorXd u = unit.row(a);
    const Eigen::RowVectorXd g = unit_grad.row(a);
    out.feature_grad.row(a) = (g - g.dot(u) * u) / norms(a);
  }
  return out;
}

TotalLoss total_loss(const FeatureBatch& batch, const EtfPrototypes& etf, const GsaConfig& cfg,
                     int task_index) {
  if (task_index < 1) {
    throw InvalidArgument("task index starts at 1");
  }
  if (cfg.weight < 0.0) {
    throw InvalidArgument("alignment weight must be non-negative");
  }
  LossResult cls = classification_loss(batch, etf);
  TotalLoss out;
  out.classification = cls.value;
  out.value = cls.value;
  out.feature_grad = std::move(cls.feature_grad);
  if (task_index > 1 && cfg.weight > 0.0) {
    LossResult gsa = gsa_loss(batch, etf, cfg);
    out.alignment = gsa.value;
    out.value = cls.value + cfg.weight * gsa.value;
    out.feature_grad += cfg.weight * gsa.feature_grad;
  }
  return out;
}

ModelParams sgd_step(const ModelParams& params, const Eigen::VectorXd& gradient, double lr,
                     double weight_decay) {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw InvalidArgument("learning rate and weight decay must be non-negative");
  }
  if (gradient.size() != params.flat().size()) {
    throw ShapeError("gradient size does not match parameter count");
  }
  if (!gradient.allFinite()) {
    throw NumericalError("gradient contains non-finite entries");
  }
  ModelParams next = params;
  next.flat() = params.flat() - lr * (gradient + weight_decay * params.flat());
  return next;
}

}  // namespace feat
