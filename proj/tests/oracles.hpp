#pragma once

// Reference computations used only by tests. Each one takes a different route
// from the production code it checks (explicit loops, Gram-Schmidt, least
// squares, finite differences).

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace feat::oracle {

inline Eigen::MatrixXd loop_gram(const Eigen::MatrixXd& w) {
  Eigen::MatrixXd g(w.cols(), w.cols());
  for (Eigen::Index i = 0; i < w.cols(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index r = 0; r < w.rows(); ++r) s += w(r, i) * w(r, j);
      g(i, j) = s;
    }
  }
  return g;
}

inline Eigen::MatrixXd loop_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

/// Modified Gram-Schmidt; columns whose residual falls below `tol` are dropped.
inline Eigen::MatrixXd gram_schmidt(const Eigen::MatrixXd& a, double tol = 1e-10) {
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    Eigen::VectorXd v = a.col(j);
    for (const auto& q : basis) v -= q.dot(v) * q;
    for (const auto& q : basis) v -= q.dot(v) * q;
    const double n = v.norm();
    if (n > tol) basis.push_back(v / n);
  }
  Eigen::MatrixXd q(a.rows(), static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) q.col(static_cast<Eigen::Index>(i)) = basis[i];
  return q;
}

/// Component of x orthogonal to span(a), by Gram-Schmidt.
inline Eigen::VectorXd orthogonal_residual(const Eigen::MatrixXd& a, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd q = gram_schmidt(a);
  Eigen::VectorXd v = x;
  for (Eigen::Index j = 0; j < q.cols(); ++j) v -= q.col(j).dot(v) * q.col(j);
  for (Eigen::Index j = 0; j < q.cols(); ++j) v -= q.col(j).dot(v) * q.col(j);
  return v;
}

/// Projection of x onto span(a) through the least-squares solution
/// argmin_c ||a c - x||, solved by column-pivoting QR.
inline Eigen::VectorXd least_squares_projection(const Eigen::MatrixXd& a, const Eigen::VectorXd& x) {
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(x);
  return a * c;
}

inline Eigen::MatrixXd columns(const Eigen::MatrixXd& w, const std::vector<int>& ids) {
  Eigen::MatrixXd out(w.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = w.col(ids[i]);
  return out;
}

/// Explicit-loop class-balanced KL between row-softmaxed cosine matrices.
inline double gsa_loop(const Eigen::MatrixXd& f, const std::vector<int>& y, const Eigen::MatrixXd& w,
                       double tau) {
  const auto n = static_cast<int>(y.size());
  auto cosine = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      dot += a(i) * b(i);
      na += a(i) * a(i);
      nb += b(i) * b(i);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  std::vector<std::vector<double>> mf(n, std::vector<double>(n)), mp(n, std::vector<double>(n));
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      mf[a][b] = cosine(f.row(a).transpose(), f.row(b).transpose());
      mp[a][b] = cosine(w.col(y[a]), w.col(y[b]));
    }
  }
  auto softmax = [&](const std::vector<double>& row) {
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) z += std::exp(row[i] / tau);
    for (std::size_t i = 0; i < row.size(); ++i) p[i] = std::exp(row[i] / tau) / z;
    return p;
  };
  std::map<int, double> per_class;
  std::map<int, int> count;
  for (int a = 0; a < n; ++a) {
    const auto pf = softmax(mf[a]);
    const auto pp = softmax(mp[a]);
    double kl = 0.0;
    for (int b = 0; b < n; ++b) {
      if (pf[b] > 0.0) kl += pf[b] * std::log(pf[b] / pp[b]);
    }
    per_class[y[a]] += kl;
    ++count[y[a]];
  }
  double total = 0.0;
  for (const auto& [c, s] : per_class) total += s / count[c];
  return total / static_cast<double>(per_class.size());
}

/// Central difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                 Eigen::VectorXd x, Eigen::Index i, double h = 1e-5) {
  const double orig = x(i);
  x(i) = orig + h;
  const double up = f(x);
  x(i) = orig - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from
/// blowing up the ratio.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Eigen::VectorXd random_unit(Eigen::Index dim, std::mt19937_64& rng) {
  Eigen::VectorXd v = random_matrix(dim, 1, rng);
  return v / v.norm();
}

}  // namespace feat::oracle
