#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace feat {

/// Fixed simplex equiangular tight frame over the classes seen so far.
///
/// Column c of `prototypes` is the unit direction of class c. Classes are the
/// contiguous ids [0, class_count). Every pair of distinct columns has inner
/// product -1/(class_count - 1) and the columns sum to zero.
struct EtfPrototypes {
  int class_count = 0;
  int feature_dim = 0;
  std::uint64_t basis_seed = 0;
  Eigen::MatrixXd prototypes;  // feature_dim x class_count

  Eigen::VectorXd column(int class_id) const { return prototypes.col(class_id); }
};

/// d x d orthonormal matrix obtained by Householder QR of a seeded standard
/// Gaussian matrix, with column signs fixed so that diag(R) > 0.
Eigen::MatrixXd orthonormal_basis(int dim, std::uint64_t seed);

/// Builds the frame from the leading `class_count` columns of
/// orthonormal_basis(feature_dim, basis_seed). Every task reuses the same basis,
/// so clients sharing a seed hold identical prototypes without communication.
EtfPrototypes build_etf(int class_count, int feature_dim, std::uint64_t basis_seed);

/// Same construction with an explicit basis; only the leading `class_count`
/// columns are used and they must be orthonormal. Intended for tests.
EtfPrototypes build_etf_from_basis(int class_count, const Eigen::MatrixXd& basis,
                                   std::uint64_t basis_seed = 0);

/// Closed-form Gram matrix of a simplex ETF: (C/(C-1)) I - (1/(C-1)) 11^T.
Eigen::MatrixXd simplex_gram(int class_count);

/// Largest entrywise deviation of W^T W from simplex_gram.
double gram_deviation(const EtfPrototypes& etf);

/// Orthogonal projector onto the column space of `columns`, computed as
/// A (A^T A)^+ A^T with the pseudoinverse taken through an SVD in which singular
/// values below 1e-10 * sigma_max count as zero. `numerical_rank` receives the
/// number of retained singular values when non-null.
Eigen::MatrixXd column_space_projector(const Eigen::MatrixXd& columns, int* numerical_rank = nullptr);

/// Head (current task) and tail (earlier tasks) projectors over an ETF.
struct SubspaceProjectors {
  std::vector<int> head_classes;
  std::vector<int> tail_classes;
  Eigen::MatrixXd head;  // P_H
  Eigen::MatrixXd tail;  // P_T
  int head_rank_norm = 0;  // |C_H| - 1
  int tail_rank_norm = 0;  // |C_T| - 1
  // Measured ranks of W_H and W_T. A proper subset of frame columns has full
  // column rank, so these generally differ from the normalizers above.
  int head_numerical_rank = 0;
  int tail_numerical_rank = 0;
};

/// Throws PartitionError unless head and tail are disjoint, each of size >= 2,
/// and together cover exactly the frame's classes.
SubspaceProjectors build_projectors(const EtfPrototypes& etf, std::span<const int> head_classes,
                                    std::span<const int> tail_classes);

struct SubspaceEnergies {
  double head = 0.0;
  double tail = 0.0;
};

/// Rank-normalized energies ||P_H x||^2 / (|C_H|-1) and ||P_T x||^2 / (|C_T|-1).
/// `x` must have unit norm within 1e-6.
SubspaceEnergies subspace_energies(const SubspaceProjectors& proj, const Eigen::VectorXd& x);

}  // namespace feat
