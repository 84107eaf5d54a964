#pragma once

// Seeded generators and brute-force oracles shared by the unit and acceptance
// suites. Oracles here deliberately avoid the library's solvers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "projektor/dataspace.hpp"
#include "projektor/ot.hpp"
#include "projektor/predictors.hpp"

namespace testing_support {

using projektor::CostMatrix;
using projektor::Dataset;
using projektor::MixingRatio;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  // Dirichlet(1,...,1) draw, i.e. uniform on the simplex.
  MixingRatio ratio(std::size_t m, double floor = 0.0) {
    std::vector<double> w(m);
    double s = 0.0;
    for (auto& v : w) {
      v = -std::log(uniform(1e-12, 1.0)) + floor;
      s += v;
    }
    for (auto& v : w) v /= s;
    return MixingRatio::normalized(std::move(w));
  }

  CostMatrix cost(int n, int t, double scale = 1.0) {
    CostMatrix c(n, t);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < t; ++j) c(i, j) = scale * uniform();
    return c;
  }

  Dataset points(std::size_t n, std::size_t d, int classes, double spread = 1.0,
                 double shift = 0.0) {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = integer(0, classes - 1);
      for (std::size_t k = 0; k < d; ++k)
        out.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            (k == 0 ? 2.0 * y[i] + shift : 0.0) + spread * normal();
    }
    out.labels = std::move(y);
    return out;
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Exact OT between uniform measures by enumerating permutations of the
/// lcm-replicated assignment problem (tiny sizes only).
inline double brute_force_ot(const CostMatrix& c) {
  const int n = static_cast<int>(c.rows());
  const int t = static_cast<int>(c.cols());
  const int l = std::lcm(n, t);
  if (l > 9) throw std::logic_error("brute-force OT oracle is limited to lcm(n,t) <= 9");
  const int rn = l / n, rt = l / t;
  std::vector<int> perm(static_cast<std::size_t>(l));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int k = 0; k < l; ++k) s += c(k / rn, perm[static_cast<std::size_t>(k)] / rt);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / l;
}

/// Central difference of `f` at 0.
template <class F>
double central_difference(F&& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

/// Mass-reweighting perturbation: source i gains h, the others give up mass
/// in proportion to their share.
inline std::vector<double> shift_mass(std::span<const double> p, std::size_t i, double h) {
  std::vector<double> q(p.begin(), p.end());
  const double rest = 1.0 - p[i];
  for (std::size_t k = 0; k < q.size(); ++k)
    q[k] = k == i ? p[k] + h : p[k] - h * p[k] / rest;
  return q;
}

/// Independent projection of a planted parameter vector onto the row space
/// of a design matrix (via SVD, not the library's solver).
inline Eigen::VectorXd row_space_projection(const Eigen::MatrixXd& x, const Eigen::VectorXd& theta) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double tol = 1e-10 * (s.size() ? s[0] : 1.0);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  for (Eigen::Index k = 0; k < s.size(); ++k)
    if (s[k] > tol) out += svd.matrixV().col(k) * svd.matrixV().col(k).dot(theta);
  return out;
}

/// Exact Shapley values straight from the permutation definition.
inline std::vector<double> shapley_by_permutations(const projektor::SubsetUtility& v, int m) {
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> phi(static_cast<std::size_t>(m), 0.0);
  double count = 0.0;
  do {
    std::uint32_t mask = 0;
    for (int i : order) {
      const double before = v(mask);
      mask |= 1u << i;
      phi[static_cast<std::size_t>(i)] += v(mask) - before;
    }
    count += 1.0;
  } while (std::next_permutation(order.begin(), order.end()));
  for (auto& x : phi) x /= count;
  return phi;
}

}  // namespace testing_support
