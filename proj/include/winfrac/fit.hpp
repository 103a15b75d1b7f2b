#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "winfrac/cox_censoring.hpp"
#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"
#include "winfrac/rng.hpp"
#include "winfrac/solver.hpp"
#include "winfrac/variance.hpp"

namespace winfrac {

inline constexpr double kZ975 = 1.959963984540054;

struct FitDiagnostics {
  double L = 0.0;
  double censoring_rate = 0.0;
  double resolved_fraction = 0.0;
  std::size_t resolved = 0, ties = 0, positive_weight = 0, winsorized = 0;
  double weight_min = 0.0, weight_median = 0.0, weight_max = 0.0;
  std::size_t h_n = 0, m_n = 0, M_n = 0;
  int iterations = 0;
  bool converged = false;
  double u_norm = 0.0;
  double max_bracket_dev = 0.0;
  bool censoring_model = false;
  std::size_t censoring_events = 0;
  Eigen::VectorXd cox_gamma;
  int cox_iterations = 0;
  bool b_negativity_flag = false;
  std::vector<TraceEntry> trace;
};

struct FitResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  Eigen::VectorXd se, ci_low, ci_high, p_value;
  SandwichComponents sandwich;
  FitDiagnostics diag;
};

inline void fill_wald(FitResult& r) {
  const auto p = r.beta.size();
  r.se = r.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  r.ci_low.resize(p);
  r.ci_high.resize(p);
  r.p_value.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) {
    r.ci_low[k] = r.beta[k] - kZ975 * r.se[k];
    r.ci_high[k] = r.beta[k] + kZ975 * r.se[k];
    r.p_value[k] = r.se[k] > 0.0 ? std::erfc(std::abs(r.beta[k] / r.se[k]) / std::sqrt(2.0)) : std::nan("");
  }
}

// Everything needed before solving: restricted records, censoring model, scored pairs.
struct PreparedPairs {
  double L = 0.0;
  std::vector<RestrictedRecord> rr;
  std::optional<CoxCensoringFit> cox;
  PairSet pairs;
  double max_bracket_dev = 0.0;
};

inline PreparedPairs prepare_pairs(const Dataset& ds, const ModelSpec& spec) {
  spec.validate();
  PreparedPairs out;
  out.L = choose_restriction(ds, spec.restriction);
  out.rr = restrict(ds, out.L);
  const PairIndex idx = enumerate_pairs(ds, spec.structure);
  if (needs_censoring_model(spec.weights) && censoring_event_count(ds) > 0) {
    out.cox = fit_censoring_model(ds);
    if (!out.cox->converged) throw ConvergenceError("censoring model did not converge");
    const InfluenceTerms inf = influence_terms(*out.cox, ds, out.rr);
    out.pairs = score_pairs(ds, out.rr, idx, spec, CoxSurvival(*out.cox, ds), &inf);
  } else {
    // No censoring events: the Breslow estimate is identically zero, S_c = 1.
    out.pairs = score_pairs(ds, out.rr, idx, spec, UnitSurvival{}, nullptr);
  }
  for (const auto& sp : out.pairs.pairs) out.max_bracket_dev = std::max(out.max_bracket_dev, std::abs(sp.bracket - 1.0));
  return out;
}

inline FitResult fit(const Dataset& ds, const ModelSpec& spec) {
  PreparedPairs prep = prepare_pairs(ds, spec);
  const PairSet& ps = prep.pairs;
  SolveResult sol = solve(ps, spec);
  if (!sol.converged) throw ConvergenceError("estimating equation solver did not converge in " +
                                             std::to_string(spec.max_iter) + " iterations");
  FitResult r;
  r.beta = sol.beta;
  r.sandwich = sandwich_components(ps, sol.beta, spec);
  r.covariance = r.sandwich.covariance;
  fill_wald(r);

  auto& d = r.diag;
  d.L = prep.L;
  d.censoring_rate = censoring_rate(prep.rr);
  d.resolved = ps.resolved;
  d.resolved_fraction = static_cast<double>(ps.resolved) / static_cast<double>(ps.h_n);
  d.ties = ps.ties;
  d.winsorized = ps.winsorized;
  std::vector<double> w;
  for (const auto& sp : ps.pairs)
    if (sp.weight > 0.0) w.push_back(sp.weight);
  d.positive_weight = w.size();
  if (!w.empty()) {
    std::sort(w.begin(), w.end());
    d.weight_min = w.front();
    d.weight_max = w.back();
    const std::size_t m = w.size() / 2;
    d.weight_median = w.size() % 2 ? w[m] : 0.5 * (w[m - 1] + w[m]);
  }
  d.h_n = ps.h_n;
  d.m_n = ps.m_n;
  d.M_n = ps.M_n;
  d.iterations = sol.iterations;
  d.converged = sol.converged;
  d.u_norm = sol.u_norm;
  d.max_bracket_dev = prep.max_bracket_dev;
  d.censoring_events = censoring_event_count(ds);
  d.censoring_model = prep.cox.has_value();
  if (prep.cox) {
    d.cox_gamma = prep.cox->gamma;
    d.cox_iterations = prep.cox->iterations;
  }
  d.b_negativity_flag = r.sandwich.b_negativity_flag;
  d.trace = std::move(sol.trace);
  return r;
}

// Random partition into k folds; mean of fold estimates, covariance sum / k^2.
inline FitResult split_and_combine(const Dataset& ds, const ModelSpec& spec, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ConfigError("split count must be positive");
  if (k == 1) return fit(ds, spec);
  if (k > ds.size()) throw ConfigError("split count exceeds the number of subjects");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = perm.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % (i + 1));
    std::swap(perm[i], perm[j]);
  }
  FitResult out;
  const auto p = static_cast<Eigen::Index>(ds.p());
  out.beta = Eigen::VectorXd::Zero(p);
  out.covariance = Eigen::MatrixXd::Zero(p, p);
  bool all_converged = true;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> rows;
    for (std::size_t t = f; t < perm.size(); t += k) rows.push_back(perm[t]);
    std::sort(rows.begin(), rows.end());
    FitResult fr;
    try {
      fr = fit(ds.subset(rows), spec);
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(f + 1) + " of " + std::to_string(k) + ": " + e.what());
    }
    out.beta += fr.beta;
    out.covariance += fr.covariance;
    all_converged = all_converged && fr.diag.converged;
    auto& d = out.diag;
    d.L = fr.diag.L;
    d.h_n += fr.diag.h_n;
    d.m_n += fr.diag.m_n;
    d.resolved += fr.diag.resolved;
    d.ties += fr.diag.ties;
    d.positive_weight += fr.diag.positive_weight;
    d.winsorized += fr.diag.winsorized;
    d.iterations = std::max(d.iterations, fr.diag.iterations);
    d.max_bracket_dev = std::max(d.max_bracket_dev, fr.diag.max_bracket_dev);
    d.weight_min = f == 0 ? fr.diag.weight_min : std::min(d.weight_min, fr.diag.weight_min);
    d.weight_max = std::max(d.weight_max, fr.diag.weight_max);
  }
  const double kk = static_cast<double>(k);
  out.beta /= kk;
  out.covariance /= kk * kk;
  fill_wald(out);
  out.diag.converged = all_converged;
  out.diag.resolved_fraction = static_cast<double>(out.diag.resolved) / static_cast<double>(out.diag.h_n);
  out.diag.censoring_rate = censoring_rate(restrict(ds, out.diag.L));
  out.diag.censoring_events = censoring_event_count(ds);
  return out;
}

}  // namespace winfrac
