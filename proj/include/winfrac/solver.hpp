#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "winfrac/cox_censoring.hpp"
#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"
#include "winfrac/links.hpp"
#include "winfrac/parallel.hpp"
#include "winfrac/weights.hpp"
#include "winfrac/winfun.hpp"

namespace winfrac {

enum class PairCovariate { Difference, Left };  // Z_ij = X_i - X_j, or Z_ij = X_i
enum class VarianceBracket { Literal, Unit };

inline std::string to_string(PairCovariate z) { return z == PairCovariate::Difference ? "difference" : "left"; }
inline std::string to_string(VarianceBracket b) { return b == VarianceBracket::Literal ? "literal" : "unit"; }

inline PairCovariate parse_pair_covariate(const std::string& s) {
  if (s == "difference") return PairCovariate::Difference;
  if (s == "left") return PairCovariate::Left;
  throw ConfigError("unknown pair covariate map '" + s + "'");
}

inline VarianceBracket parse_variance_bracket(const std::string& s) {
  if (s == "literal") return VarianceBracket::Literal;
  if (s == "unit") return VarianceBracket::Unit;
  throw ConfigError("unknown variance bracket mode '" + s + "'");
}

struct ModelSpec {
  Link link{LinkKind::Logit};
  PairCovariate z_map = PairCovariate::Difference;
  WeightScheme weights = WeightScheme::IPCW;
  RestrictionRule restriction = RestrictionRule::fixed(1.0);
  double floor = 0.01;
  PairStructure structure = PairStructure::Marginal;
  double tol = 1e-9;
  double step_tol = 1e-10;
  int max_iter = 50;
  double mu_clamp = 1e-6;
  unsigned threads = 1;
  VarianceBracket bracket = VarianceBracket::Literal;
  double bracket_tolerance = 1e-6;
  bool ties_as_losses = false;

  void validate() const {
    if (!(tol > 0.0) || !(step_tol > 0.0)) throw ConfigError("solver tolerances must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
    if (!(mu_clamp > 0.0 && mu_clamp < 0.5)) throw ConfigError("mu clamp must lie in (0, 0.5)");
    if (!(link.nu > 0.0)) throw ConfigError("scale parameter must be positive");
    check_floor(floor);
    if (weights == WeightScheme::IPCWInfinity &&
        !(restriction.kind == RestrictionRule::Kind::Explicit && std::isinf(restriction.value)))
      throw ConfigError("the ipcw-infinity scheme requires L = inf");
  }
};

struct ScoredPair {
  std::uint32_t i = 0, j = 0;
  std::uint8_t omega = 0;  // omega_ij
  std::uint8_t delta = 0;  // omega_ij + omega_ji
  Resolution::Kind kind = Resolution::Kind::Unresolved;
  bool winsorized = false;
  double weight = 0.0;
  double bracket = 1.0;
};

// Pairs kept are those resolved or carrying positive weight; everything else
// contributes exactly zero to every sum downstream.
struct PairSet {
  std::size_t n = 0, p = 0;
  std::vector<double> x;  // n x p row-major
  PairCovariate z_map = PairCovariate::Difference;
  PairStructure structure = PairStructure::Marginal;
  double L = 0.0;
  std::size_t h_n = 0, m_n = 0, M_n = 0;
  std::vector<ScoredPair> pairs;
  std::size_t resolved = 0, ties = 0, winsorized = 0;

  void z(const ScoredPair& sp, double* out) const {
    const double* xi = x.data() + sp.i * p;
    const double* xj = x.data() + sp.j * p;
    if (z_map == PairCovariate::Difference)
      for (std::size_t k = 0; k < p; ++k) out[k] = xi[k] - xj[k];
    else
      for (std::size_t k = 0; k < p; ++k) out[k] = xi[k];
  }

  Eigen::VectorXd z(const ScoredPair& sp) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(p));
    z(sp, v.data());
    return v;
  }
};

inline PairSet make_pair_set(const Dataset& ds, const PairIndex& idx, PairCovariate z_map, double L) {
  PairSet ps;
  ps.n = ds.size();
  ps.p = ds.p();
  ps.x.assign(ds.x_row(0), ds.x_row(0) + ds.size() * ds.p());
  ps.z_map = z_map;
  ps.structure = idx.structure;
  ps.L = L;
  ps.h_n = idx.h_n;
  ps.m_n = idx.m_n;
  ps.M_n = idx.M_n;
  return ps;
}

// Scores every pair of `idx`: observed win, weight under `scheme`, and the
// influence bracket when `inf` is given.
template <class Surv>
PairSet score_pairs(const Dataset& ds, const std::vector<RestrictedRecord>& rr, const PairIndex& idx,
                    const ModelSpec& spec, const Surv& sc, const InfluenceTerms* inf) {
  if (rr.size() != ds.size() || idx.n != ds.size()) throw DomainError("pair index does not match the dataset");
  const double L = rr.front().L;
  PairSet ps = make_pair_set(ds, idx, spec.z_map, L);
  ps.pairs.reserve(idx.pairs.size());
  for (auto [i, j] : idx.pairs) {
    const PairOutcome po = observed_win(rr[i], rr[j], L, i, j);
    PairWeight w;
    switch (spec.weights) {
      case WeightScheme::IPCW: w = ipcw_weight(po, rr[i], rr[j], sc, L, spec.floor, spec.ties_as_losses); break;
      case WeightScheme::IPCWInfinity: w = ipcw_weight_infinity(po, rr[i], rr[j], sc, spec.floor, spec.ties_as_losses); break;
      case WeightScheme::ResolvedIndicator: w = resolved_indicator_weight(po); break;
      case WeightScheme::WangAlternative: w = wang_alternative_weight(po, rr[i], rr[j], sc, L, spec.floor); break;
    }
    ps.resolved += po.delta();
    ps.ties += po.tie;
    if (w.value <= 0.0 && po.delta() == 0) continue;
    ScoredPair sp;
    sp.i = i;
    sp.j = j;
    sp.omega = static_cast<std::uint8_t>(po.omega_ij);
    sp.delta = static_cast<std::uint8_t>(po.delta());
    sp.kind = po.resolution.kind;
    sp.winsorized = w.winsorized && w.value > 0.0;
    sp.weight = w.value;
    if (inf && w.value > 0.0) sp.bracket = adjusted_weight(w, *inf, po, L, spec.bracket_tolerance);
    ps.winsorized += sp.winsorized;
    ps.pairs.push_back(sp);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Estimating function and Newton matrix

struct Assembly {
  Eigen::VectorXd U;
  Eigen::MatrixXd A;
};

inline constexpr std::size_t kPairBlock = 8192;

// U = (1/h) sum K w (omega - mu),  A = (1/h) sum w b h^2 / V z z'
// with b the influence bracket when `use_bracket`. Blocks are summed in index
// order, so the result is independent of the thread count.
inline Assembly assemble(const Eigen::VectorXd& beta, const PairSet& ps, const ModelSpec& spec, bool want_A,
                         bool use_bracket_in_A = false, bool use_bracket_in_U = false) {
  const std::size_t p = ps.p;
  if (static_cast<std::size_t>(beta.size()) != p) throw DomainError("coefficient vector has the wrong dimension");
  const std::size_t nb = (ps.pairs.size() + kPairBlock - 1) / kPairBlock;
  std::vector<Eigen::VectorXd> Ub(nb, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)));
  std::vector<Eigen::MatrixXd> Ab(want_A ? nb : 0, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p)));
  parallel_for(nb, spec.threads, [&](std::size_t b) {
    std::vector<double> z(p);
    double* u = Ub[b].data();
    double* a = want_A ? Ab[b].data() : nullptr;
    const std::size_t lo = b * kPairBlock, hi = std::min(ps.pairs.size(), lo + kPairBlock);
    for (std::size_t k = lo; k < hi; ++k) {
      const ScoredPair& sp = ps.pairs[k];
      if (sp.weight == 0.0) continue;
      ps.z(sp, z.data());
      double eta = 0.0;
      for (std::size_t c = 0; c < p; ++c) eta += beta[static_cast<Eigen::Index>(c)] * z[c];
      const double mu = spec.link.inverse(eta);
      const double h = spec.link.derivative(eta);
      const double v = spec.link.variance(mu, spec.mu_clamp);
      const double wu = sp.weight * (use_bracket_in_U ? sp.bracket : 1.0);
      const double cu = h / v * wu * (static_cast<double>(sp.omega) - mu);
      for (std::size_t c = 0; c < p; ++c) u[c] += cu * z[c];
      if (a) {
        const double wa = sp.weight * (use_bracket_in_A ? sp.bracket : 1.0);
        const double ca = wa * h * h / v;
        for (std::size_t c2 = 0; c2 < p; ++c2)
          for (std::size_t c1 = c2; c1 < p; ++c1) a[c2 * p + c1] += ca * z[c1] * z[c2];
      }
    }
  });
  Assembly out{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)), Eigen::MatrixXd()};
  if (want_A) out.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t b = 0; b < nb; ++b) {
    out.U += Ub[b];
    if (want_A) out.A += Ab[b];
  }
  const double h_n = static_cast<double>(ps.h_n);
  out.U /= h_n;
  if (want_A) {
    out.A /= h_n;
    out.A.triangularView<Eigen::StrictlyUpper>() = out.A.transpose().triangularView<Eigen::StrictlyUpper>();
  }
  return out;
}

inline Eigen::VectorXd estimating_function(const Eigen::VectorXd& beta, const PairSet& ps, const ModelSpec& spec) {
  return assemble(beta, ps, spec, false).U;
}

inline Eigen::MatrixXd newton_matrix(const Eigen::VectorXd& beta, const PairSet& ps, const ModelSpec& spec) {
  return assemble(beta, ps, spec, true).A;
}

// ---------------------------------------------------------------------------
// Newton solver

struct TraceEntry {
  int iteration = 0;
  double u_norm = 0.0;     // max-norm of U at the start of the iteration
  double step_norm = 0.0;  // max-norm of the accepted step
  int halvings = 0;
};

struct SolveResult {
  Eigen::VectorXd beta;
  bool converged = false;
  int iterations = 0;
  double u_norm = 0.0;
  Eigen::MatrixXd A;  // Newton matrix at the returned beta
  std::vector<TraceEntry> trace;
};

inline std::size_t positive_weight_pairs(const PairSet& ps) {
  return static_cast<std::size_t>(
      std::count_if(ps.pairs.begin(), ps.pairs.end(), [](const ScoredPair& s) { return s.weight > 0.0; }));
}

inline Eigen::LDLT<Eigen::MatrixXd> checked_factor(const Eigen::MatrixXd& A, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> f(A);
  const double scale = A.cwiseAbs().maxCoeff();
  if (!(scale > 0.0) || f.info() != Eigen::Success || !f.isPositive() || f.rcond() < 1e-12 ||
      f.vectorD().minCoeff() <= 1e-13 * scale)
    throw NumericalError(std::string(what) + " is singular (collinear or degenerate pair covariates); " +
                         describe_matrix(A));
  return f;
}

inline SolveResult solve(const PairSet& ps, const ModelSpec& spec) {
  spec.validate();
  if (positive_weight_pairs(ps) == 0) throw NumericalError("no resolved pairs with positive weight");
  SolveResult res;
  const auto p = static_cast<Eigen::Index>(ps.p);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Assembly cur = assemble(beta, ps, spec, true);
  for (int it = 0; it < spec.max_iter; ++it) {
    const double un = cur.U.cwiseAbs().maxCoeff();
    if (un < spec.tol) {
      res.converged = true;
      break;
    }
    const Eigen::VectorXd step = checked_factor(cur.A, "Newton matrix A").solve(cur.U);
    double frac = 1.0;
    int halvings = 0;
    Eigen::VectorXd cand;
    Assembly next;
    for (;;) {
      cand = beta + frac * step;
      next = assemble(cand, ps, spec, true);
      const double nn = next.U.cwiseAbs().maxCoeff();
      if ((std::isfinite(nn) && nn <= un) || halvings >= 30) break;
      frac *= 0.5;
      ++halvings;
    }
    const double sn = (frac * step).cwiseAbs().maxCoeff();
    beta = cand;
    cur = std::move(next);
    res.trace.push_back({it + 1, un, sn, halvings});
    res.iterations = it + 1;
    if (sn < spec.step_tol) {
      res.converged = true;
      break;
    }
  }
  res.u_norm = cur.U.cwiseAbs().maxCoeff();
  if (!res.converged && res.u_norm < spec.tol) res.converged = true;
  res.beta = beta;
  res.A = cur.A;
  return res;
}

// (1/h) sum Z {omega_ij - R_ij expit(beta'Z)}, R_ij = omega_ij + omega_ji.
inline Eigen::VectorXd pwfm_residual(const Eigen::VectorXd& beta, const PairSet& ps, const Link& link) {
  if (link.kind != LinkKind::Logit) throw DomainError("the PWFM residual is defined for the logit link only");
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ps.p));
  Eigen::VectorXd z(static_cast<Eigen::Index>(ps.p));
  for (const auto& sp : ps.pairs) {
    if (sp.delta == 0) continue;
    ps.z(sp, z.data());
    r += z * (static_cast<double>(sp.omega) - expit(beta.dot(z)));
  }
  return r / static_cast<double>(ps.h_n);
}

// theta = log(Phi(b) / (1 - Phi(b))) componentwise, delta-method covariance.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> probit_to_logit(const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov) {
  Eigen::VectorXd theta(beta.size()), jac(beta.size());
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    const double P = norm_cdf(beta[k]);
    const double Q = norm_cdf(-beta[k]);
    theta[k] = std::log(P / Q);
    jac[k] = norm_pdf(beta[k]) / (P * Q);
  }
  Eigen::MatrixXd c = cov.size() ? Eigen::MatrixXd(jac.asDiagonal() * cov * jac.asDiagonal()) : Eigen::MatrixXd();
  return {theta, c};
}

}  // namespace winfrac
