#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "winfrac/error.hpp"
#include "winfrac/solver.hpp"

namespace winfrac {

struct SandwichComponents {
  Eigen::MatrixXd a_matrix;
  Eigen::MatrixXd b_matrix;
  std::size_t m_n = 0, h_n = 0;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se;
  bool b_negativity_flag = false;  // tiny negative eigenvalue tolerated
};

inline Eigen::MatrixXd a_matrix(const PairSet& ps, const Eigen::VectorXd& beta, const ModelSpec& spec) {
  Eigen::MatrixXd A = assemble(beta, ps, spec, true, spec.bracket == VarianceBracket::Literal).A;
  checked_factor(A, "sandwich bread A");
  return A;
}

// Per-pair contributions U_ij = K_ij W~_ij (omega_ij - mu_ij), one column per stored pair.
inline Eigen::MatrixXd pair_contributions(const PairSet& ps, const Eigen::VectorXd& beta, const ModelSpec& spec) {
  const auto p = static_cast<Eigen::Index>(ps.p);
  Eigen::MatrixXd U(p, static_cast<Eigen::Index>(ps.pairs.size()));
  Eigen::VectorXd z(p);
  const bool literal = spec.bracket == VarianceBracket::Literal;
  for (std::size_t k = 0; k < ps.pairs.size(); ++k) {
    const auto& sp = ps.pairs[k];
    if (sp.weight == 0.0) {
      U.col(static_cast<Eigen::Index>(k)).setZero();
      continue;
    }
    ps.z(sp, z.data());
    const double eta = beta.dot(z);
    const double mu = spec.link.inverse(eta);
    const double c = spec.link.derivative(eta) / spec.link.variance(mu, spec.mu_clamp) * sp.weight *
                     (literal ? sp.bracket : 1.0) * (static_cast<double>(sp.omega) - mu);
    U.col(static_cast<Eigen::Index>(k)) = c * z;
  }
  return U;
}

// sum_s T_s T_s' - sum_{keys} S_key S_key', T_s = sum of U over pairs containing s,
// S_key = sum of U over the (one or two) orientations of an unordered pair.
inline Eigen::MatrixXd b_sum_fast(const PairSet& ps, const Eigen::MatrixXd& U) {
  const auto p = U.rows();
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(p, static_cast<Eigen::Index>(ps.n));
  Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd S = Eigen::VectorXd::Zero(p);
  std::uint64_t key = ~std::uint64_t{0};
  for (std::size_t k = 0; k < ps.pairs.size(); ++k) {
    const auto& sp = ps.pairs[k];
    const auto u = U.col(static_cast<Eigen::Index>(k));
    T.col(sp.i) += u;
    T.col(sp.j) += u;
    const std::uint64_t kk = (static_cast<std::uint64_t>(std::min(sp.i, sp.j)) << 32) | std::max(sp.i, sp.j);
    if (kk != key) {
      corr.noalias() += S * S.transpose();
      S.setZero();
      key = kk;
    }
    S += u;
  }
  corr.noalias() += S * S.transpose();
  Eigen::MatrixXd out = T * T.transpose() - corr;
  return 0.5 * (out + out.transpose());
}

inline Eigen::MatrixXd b_sum_bruteforce(const PairSet& ps, const Eigen::MatrixXd& U) {
  const auto p = U.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t a = 0; a < ps.pairs.size(); ++a)
    for (std::size_t b = 0; b < ps.pairs.size(); ++b) {
      const auto& x = ps.pairs[a];
      const auto& y = ps.pairs[b];
      if (x.i == y.i || x.i == y.j || x.j == y.i || x.j == y.j)
        out.noalias() += U.col(static_cast<Eigen::Index>(a)) * U.col(static_cast<Eigen::Index>(b)).transpose();
    }
  return out;
}

inline double b_scale(const PairSet& ps) {
  const double h = static_cast<double>(ps.h_n);
  return static_cast<double>(ps.m_n) / (h * h);
}

inline Eigen::MatrixXd b_matrix(const PairSet& ps, const Eigen::VectorXd& beta, const ModelSpec& spec) {
  return b_scale(ps) * b_sum_fast(ps, pair_contributions(ps, beta, spec));
}

inline Eigen::MatrixXd b_matrix_bruteforce(const PairSet& ps, const Eigen::VectorXd& beta, const ModelSpec& spec) {
  return b_scale(ps) * b_sum_bruteforce(ps, pair_contributions(ps, beta, spec));
}

// Returns true when B has a negative eigenvalue small enough to be rounding noise.
inline bool check_psd(const Eigen::MatrixXd& B) {
  if (B.size() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = std::max(es.eigenvalues().maxCoeff(), 0.0);
  if (lo >= 0.0) return false;
  if (-lo <= 1e-10 * std::max(hi, 1e-300) || -lo <= 1e-300) return true;
  throw NumericalError("meat matrix B is not positive semidefinite; " + describe_matrix(B));
}

inline std::pair<Eigen::MatrixXd, Eigen::VectorXd> sandwich(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                                             std::size_t m_n) {
  if (m_n == 0) throw DomainError("m_n must be positive");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw NumericalError("sandwich bread A is not invertible");
  const Eigen::MatrixXd ai = lu.inverse();
  Eigen::MatrixXd cov = ai * b * ai.transpose() / static_cast<double>(m_n);
  cov = 0.5 * (cov + cov.transpose());
  Eigen::VectorXd se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return {cov, se};
}

inline SandwichComponents sandwich_components(const PairSet& ps, const Eigen::VectorXd& beta, const ModelSpec& spec) {
  SandwichComponents sc;
  sc.a_matrix = a_matrix(ps, beta, spec);
  sc.b_matrix = b_matrix(ps, beta, spec);
  sc.b_negativity_flag = check_psd(sc.b_matrix);
  sc.m_n = ps.m_n;
  sc.h_n = ps.h_n;
  std::tie(sc.covariance, sc.se) = sandwich(sc.a_matrix, sc.b_matrix, ps.m_n);
  return sc;
}

}  // namespace winfrac
