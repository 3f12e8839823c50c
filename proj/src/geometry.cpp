#include "feat/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "feat/errors.hpp"
#include "feat/random.hpp"

namespace feat {

namespace {

constexpr double kPinvRelativeCutoff = 1e-10;
constexpr double kUnitNormTolerance = 1e-6;

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, std::span<const int> ids) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = m.col(ids[i]);
  }
  return out;
}

void check_side(std::span<const int> ids, int class_count, const char* side) {
  if (ids.size() < 2) {
    throw PartitionError(std::string(side) + " class set needs at least 2 classes, got " +
                         std::to_string(ids.size()));
  }
  std::set<int> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) {
    throw PartitionError(std::string(side) + " class set contains duplicates");
  }
  for (int c : ids) {
    if (c < 0 || c >= class_count) {
      throw PartitionError(std::string(side) + " class " + std::to_string(c) +
                           " is not in the frame");
    }
  }
}

}  // namespace

Eigen::MatrixXd orthonormal_basis(int dim, std::uint64_t seed) {
  if (dim < 1) {
    throw DimensionError("basis dimension must be positive");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd gaussian(dim, dim);
  // Fill column by column so the stream layout does not depend on Eigen's storage order.
  for (int j = 0; j < dim; ++j) {
    for (int i = 0; i < dim; ++i) {
      gaussian(i, j) = normal(rng);
    }
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (int j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) {
      q.col(j) = -q.col(j);
    }
  }
  return q;
}

EtfPrototypes build_etf_from_basis(int class_count, const Eigen::MatrixXd& basis,
                                   std::uint64_t basis_seed) {
  if (class_count < 2) {
    throw DimensionError("ETF needs at least 2 classes, got " + std::to_string(class_count));
  }
  if (class_count > basis.rows() || class_count > basis.cols()) {
    throw DimensionError("ETF with " + std::to_string(class_count) +
                         " classes does not fit feature dimension " + std::to_string(basis.rows()));
  }
  const double c = static_cast<double>(class_count);
  Eigen::MatrixXd centering = Eigen::MatrixXd::Identity(class_count, class_count);
  centering.array() -= 1.0 / c;

  EtfPrototypes etf;
  etf.class_count = class_count;
  etf.feature_dim = static_cast<int>(basis.rows());
  etf.basis_seed = basis_seed;
  etf.prototypes = std::sqrt(c / (c - 1.0)) * (basis.leftCols(class_count) * centering);
  return etf;
}

EtfPrototypes build_etf(int class_count, int feature_dim, std::uint64_t basis_seed) {
  if (class_count < 2 || class_count > feature_dim) {
    throw DimensionError("ETF requires 2 <= classes <= feature_dim, got classes=" +
                         std::to_string(class_count) + " feature_dim=" + std::to_string(feature_dim));
  }
  return build_etf_from_basis(class_count, orthonormal_basis(feature_dim, basis_seed), basis_seed);
}

Eigen::MatrixXd simplex_gram(int class_count) {
  const double c = static_cast<double>(class_count);
  Eigen::MatrixXd g = Eigen::MatrixXd::Constant(class_count, class_count, -1.0 / (c - 1.0));
  g.diagonal().setOnes();
  return g;
}

double gram_deviation(const EtfPrototypes& etf) {
  const Eigen::MatrixXd gram = etf.prototypes.transpose() * etf.prototypes;
  return (gram - simplex_gram(etf.class_count)).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd column_space_projector(const Eigen::MatrixXd& columns, int* numerical_rank) {
  const Eigen::MatrixXd gram = columns.transpose() * columns;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  if (!sigma.allFinite()) {
    throw NumericalError("singular value decomposition produced non-finite values");
  }
  const double cutoff = sigma.size() > 0 ? kPinvRelativeCutoff * sigma(0) : 0.0;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sigma.size());
  int rank = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff) {
      inv(i) = 1.0 / sigma(i);
      ++rank;
    }
  }
  const Eigen::MatrixXd pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  if (numerical_rank != nullptr) {
    *numerical_rank = rank;
  }
  return columns * pinv * columns.transpose();
}

SubspaceProjectors build_projectors(const EtfPrototypes& etf, std::span<const int> head_classes,
                                    std::span<const int> tail_classes) {
  check_side(head_classes, etf.class_count, "head");
  check_side(tail_classes, etf.class_count, "tail");
  std::set<int> all(head_classes.begin(), head_classes.end());
  for (int c : tail_classes) {
    if (!all.insert(c).second) {
      throw PartitionError("class " + std::to_string(c) + " is in both head and tail sets");
    }
  }
  if (static_cast<int>(all.size()) != etf.class_count) {
    throw PartitionError("head and tail sets must cover all " + std::to_string(etf.class_count) +
                         " frame classes");
  }

  SubspaceProjectors proj;
  proj.head_classes.assign(head_classes.begin(), head_classes.end());
  proj.tail_classes.assign(tail_classes.begin(), tail_classes.end());
  proj.head = column_space_projector(gather_columns(etf.prototypes, head_classes),
                                     &proj.head_numerical_rank);
  proj.tail = column_space_projector(gather_columns(etf.prototypes, tail_classes),
                                     &proj.tail_numerical_rank);
  proj.head_rank_norm = static_cast<int>(head_classes.size()) - 1;
  proj.tail_rank_norm = static_cast<int>(tail_classes.size()) - 1;
  return proj;
}

SubspaceEnergies subspace_energies(const SubspaceProjectors& proj, const Eigen::VectorXd& x) {
  if (x.size() != proj.head.rows()) {
    throw ShapeError("feature has dimension " + std::to_string(x.size()) + ", projectors expect " +
                     std::to_string(proj.head.rows()));
  }
  const double norm = x.norm();
  if (!(std::abs(norm - 1.0) <= kUnitNormTolerance)) {
    throw InvalidArgument("subspace energies need a unit-norm feature, got norm " +
                          std::to_string(norm));
  }
  return {(proj.head * x).squaredNorm() / proj.head_rank_norm,
          (proj.tail * x).squaredNorm() / proj.tail_rank_norm};
}

}  // namespace feat
