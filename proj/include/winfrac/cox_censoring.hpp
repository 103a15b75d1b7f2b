#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <vector>

#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"

namespace winfrac {

struct CoxOptions {
  double tol = 1e-9;
  int max_iter = 50;
  // Skip estimation and use this coefficient vector (hand examples, true-model checks).
  std::optional<Eigen::VectorXd> fixed_gamma;
};

struct CoxPartial {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

// One distinct censoring-event time with its risk-set sums
// R0 = sum exp(g'x), R1 = sum x exp(g'x), R2 = sum x x' exp(g'x).
struct BaselineStep {
  double time = 0.0;
  double events = 0.0;
  double dlambda = 0.0;
  double cumhaz = 0.0;
  double r0 = 0.0;
  Eigen::VectorXd r1;
  Eigen::MatrixXd r2;
  Eigen::VectorXd xbar;
  Eigen::VectorXd cum_xbar;  // running sum of xbar * dlambda, used by G_i(t)
};

struct CoxCensoringFit {
  Eigen::VectorXd gamma;
  std::vector<BaselineStep> steps;
  std::vector<double> step_times;
  std::size_t n = 0;
  bool converged = false;
  int iterations = 0;
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;

  std::size_t dim() const { return static_cast<std::size_t>(gamma.size()); }

  // Index of the last step with time <= t, or -1.
  std::ptrdiff_t step_at(double t) const {
    auto it = std::upper_bound(step_times.begin(), step_times.end(), t);
    return static_cast<std::ptrdiff_t>(it - step_times.begin()) - 1;
  }

  double baseline_cumhaz(double t) const {
    auto k = step_at(t);
    return k < 0 ? 0.0 : steps[static_cast<std::size_t>(k)].cumhaz;
  }

  double risk_score(const double* x) const {
    double lp = 0.0;
    for (Eigen::Index k = 0; k < gamma.size(); ++k) lp += gamma[k] * x[k];
    return std::exp(lp);
  }
};

namespace detail {

struct CoxWork {
  const std::vector<double>* time;
  const std::vector<int>* event;
  const Eigen::MatrixXd* X;
  std::vector<std::size_t> order;  // descending time
};

inline CoxWork make_work(const std::vector<double>& time, const std::vector<int>& event, const Eigen::MatrixXd& X) {
  CoxWork w{&time, &event, &X, std::vector<std::size_t>(time.size())};
  std::iota(w.order.begin(), w.order.end(), std::size_t{0});
  std::stable_sort(w.order.begin(), w.order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });
  return w;
}

// Walks distinct times from largest to smallest. At each time, tied subjects join
// the risk set first (Breslow), then `on_events` sees the sums.
template <class F>
void sweep(const CoxWork& w, const Eigen::VectorXd& gamma, F&& on_events) {
  const auto& t = *w.time;
  const auto& d = *w.event;
  const auto& X = *w.X;
  const Eigen::Index r = X.cols();
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(r);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(r, r);
  Eigen::VectorXd xsum(r);
  std::size_t k = 0;
  const std::size_t n = w.order.size();
  while (k < n) {
    const double tk = t[w.order[k]];
    std::size_t e = k;
    double events = 0.0;
    xsum.setZero();
    while (e < n && t[w.order[e]] == tk) {
      const std::size_t i = w.order[e];
      const double lp = r ? X.row(i).dot(gamma) : 0.0;
      const double ex = std::exp(lp);
      s0 += ex;
      if (r) {
        s1.noalias() += ex * X.row(i).transpose();
        s2.noalias() += ex * X.row(i).transpose() * X.row(i);
      }
      if (d[i]) {
        events += 1.0;
        if (r) xsum += X.row(i).transpose();
      }
      ++e;
    }
    if (events > 0.0) on_events(tk, events, xsum, s0, s1, s2);
    k = e;
  }
}

inline void check_cox_input(const std::vector<double>& time, const std::vector<int>& event, const Eigen::MatrixXd& X) {
  if (time.size() != event.size() || static_cast<Eigen::Index>(time.size()) != X.rows())
    throw DomainError("censoring model inputs have inconsistent lengths");
  if (std::none_of(event.begin(), event.end(), [](int e) { return e != 0; }))
    throw NumericalError("censoring model unidentifiable: no censoring events");
}

}  // namespace detail

inline CoxPartial cox_partial(const std::vector<double>& time, const std::vector<int>& event, const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& gamma) {
  auto w = detail::make_work(time, event, X);
  const Eigen::Index r = X.cols();
  CoxPartial out{0.0, Eigen::VectorXd::Zero(r), Eigen::MatrixXd::Zero(r, r)};
  detail::sweep(w, gamma, [&](double, double events, const Eigen::VectorXd& xsum, double s0,
                              const Eigen::VectorXd& s1, const Eigen::MatrixXd& s2) {
    out.loglik += (r ? xsum.dot(gamma) : 0.0) - events * std::log(s0);
    if (r) {
      const Eigen::VectorXd xbar = s1 / s0;
      out.score += xsum - events * xbar;
      out.information += events * (s2 / s0 - xbar * xbar.transpose());
    }
  });
  return out;
}

inline std::string describe_matrix(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  std::ostringstream os;
  os << "eigenvalues [" << es.eigenvalues().transpose() << "]";
  return os.str();
}

inline CoxCensoringFit fit_censoring_model(const std::vector<double>& time, const std::vector<int>& event,
                                           const Eigen::MatrixXd& X, const CoxOptions& opt = {}) {
  detail::check_cox_input(time, event, X);
  const Eigen::Index r = X.cols();
  CoxCensoringFit fit;
  fit.n = time.size();
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(r);
  CoxPartial cur = cox_partial(time, event, X, gamma);

  if (opt.fixed_gamma) {
    if (opt.fixed_gamma->size() != r) throw DomainError("fixed censoring coefficients have the wrong length");
    gamma = *opt.fixed_gamma;
    cur = cox_partial(time, event, X, gamma);
    fit.converged = true;
  } else if (r == 0) {
    fit.converged = true;
  } else {
    for (int it = 0; it < opt.max_iter; ++it) {
      if (cur.score.norm() < opt.tol) {
        fit.converged = true;
        break;
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
      const double scale = std::max(1.0, cur.information.diagonal().cwiseAbs().maxCoeff());
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13 ||
          ldlt.vectorD().minCoeff() <= 1e-12 * scale)
        throw NumericalError("censoring model information matrix is singular (collinear censoring covariates?); " +
                             describe_matrix(cur.information));
      Eigen::VectorXd step = ldlt.solve(cur.score);
      double frac = 1.0;
      CoxPartial next;
      Eigen::VectorXd cand;
      for (int h = 0; h < 40; ++h) {
        cand = gamma + frac * step;
        next = cox_partial(time, event, X, cand);
        if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)) break;
        frac *= 0.5;
      }
      gamma = cand;
      cur = std::move(next);
      fit.iterations = it + 1;
    }
    if (!fit.converged && cur.score.norm() < opt.tol) fit.converged = true;
  }
  fit.gamma = gamma;
  fit.loglik = cur.loglik;
  fit.score = cur.score;
  fit.information = cur.information;

  // Breslow increments on the ascending time grid.
  auto w = detail::make_work(time, event, X);
  std::vector<BaselineStep> rev;
  detail::sweep(w, gamma, [&](double tk, double events, const Eigen::VectorXd&, double s0, const Eigen::VectorXd& s1,
                              const Eigen::MatrixXd& s2) {
    BaselineStep s;
    s.time = tk;
    s.events = events;
    s.r0 = s0;
    s.r1 = s1;
    s.r2 = s2;
    s.dlambda = events / s0;
    s.xbar = r ? Eigen::VectorXd(s1 / s0) : Eigen::VectorXd();
    rev.push_back(std::move(s));
  });
  fit.steps.assign(rev.rbegin(), rev.rend());
  double cum = 0.0;
  Eigen::VectorXd cx = Eigen::VectorXd::Zero(r);
  for (auto& s : fit.steps) {
    cum += s.dlambda;
    s.cumhaz = cum;
    if (r) cx += s.xbar * s.dlambda;
    s.cum_xbar = cx;
    fit.step_times.push_back(s.time);
  }
  return fit;
}

inline Eigen::MatrixXd censoring_design(const Dataset& ds) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.r()));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t k = 0; k < ds.r(); ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = ds.cx_row(i)[k];
  return X;
}

inline std::size_t censoring_event_count(const Dataset& ds) {
  std::size_t c = 0;
  for (const auto& s : ds.subjects()) c += s.fatal_ind == 0;
  return c;
}

// Censoring is the event: time eta = D ^ C, indicator 1 - fatal_ind, full follow-up.
inline CoxCensoringFit fit_censoring_model(const Dataset& ds, const CoxOptions& opt = {}) {
  std::vector<double> time(ds.size());
  std::vector<int> event(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    time[i] = ds[i].fatal_obs;
    event[i] = 1 - ds[i].fatal_ind;
  }
  return fit_censoring_model(time, event, censoring_design(ds), opt);
}

inline double survival_at(const CoxCensoringFit& fit, double t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (t < 0.0) return 1.0;
  return std::exp(-fit.baseline_cumhaz(t) * fit.risk_score(x.data()));
}

// Survival evaluator keyed by subject: S_c(t | censoring covariates of `subject`).
class CoxSurvival {
 public:
  CoxSurvival(const CoxCensoringFit& fit, const Dataset& ds) : fit_(&fit), risk_(ds.size()) {
    for (std::size_t i = 0; i < ds.size(); ++i) risk_[i] = fit.risk_score(ds.cx_row(i));
  }
  double operator()(std::size_t subject, double t) const {
    return std::exp(-fit_->baseline_cumhaz(t) * risk_[subject]);
  }

 private:
  const CoxCensoringFit* fit_;
  std::vector<double> risk_;
};

// Censoring survival identically 1 (no censoring in the data).
struct UnitSurvival {
  double operator()(std::size_t, double) const { return 1.0; }
};

// ---------------------------------------------------------------------------
// Influence terms

// G_i(t) = sum_{t_k <= t} (x_i - xbar(t_k)) exp(g'x_i) dLambda0(t_k)
inline Eigen::VectorXd influence_G(const CoxCensoringFit& fit, const double* x, double t) {
  const Eigen::Index r = fit.gamma.size();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(r);
  auto k = fit.step_at(t);
  if (k < 0 || r == 0) return g;
  const auto& s = fit.steps[static_cast<std::size_t>(k)];
  const Eigen::Map<const Eigen::VectorXd> xv(x, r);
  g = fit.risk_score(x) * (xv * s.cumhaz - s.cum_xbar);
  return g;
}

struct InfluenceTerms {
  Eigen::MatrixXd omega;
  Eigen::MatrixXd psi;  // n x r
  Eigen::VectorXd psi_mean;
  bool omega_invertible = false;
  // G_i at xi_D,i and at L (rows = subjects).
  Eigen::MatrixXd G_xi, G_L;
  // G_i' Omega^{-1} psi_mean at the two evaluation times (zero when r = 0).
  std::vector<double> c_xi, c_L;

  double bracket_fatal(std::size_t i, std::size_t j) const { return 1.0 + c_xi[i] + c_xi[j]; }
  double bracket_L(std::size_t i, std::size_t j) const { return 1.0 + c_L[i] + c_L[j]; }
};

inline InfluenceTerms influence_terms(const CoxCensoringFit& fit, const Dataset& ds,
                                      const std::vector<RestrictedRecord>& rr) {
  const std::size_t n = ds.size();
  const Eigen::Index r = fit.gamma.size();
  if (rr.size() != n) throw DomainError("restricted records do not match the dataset");
  if (static_cast<std::size_t>(r) != ds.r()) throw DomainError("censoring fit dimension does not match the dataset");
  InfluenceTerms inf;
  inf.omega = Eigen::MatrixXd::Zero(r, r);
  for (const auto& s : fit.steps)
    if (r) inf.omega += s.events * (s.r2 / s.r0 - s.xbar * s.xbar.transpose());
  inf.omega /= static_cast<double>(n);

  inf.psi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), r);
  inf.G_xi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), r);
  inf.G_L = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), r);
  for (std::size_t i = 0; i < n && r; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double* x = ds.cx_row(i);
    const double eta = ds[i].fatal_obs;
    // Psi_i = delta_C (x_i - xbar(eta_i)) - G_i(eta_i)
    Eigen::VectorXd p = -influence_G(fit, x, eta);
    if (ds[i].fatal_ind == 0) {
      const auto& s = fit.steps[static_cast<std::size_t>(fit.step_at(eta))];
      p += Eigen::Map<const Eigen::VectorXd>(x, r) - s.xbar;
    }
    inf.psi.row(row) = p.transpose();
    inf.G_xi.row(row) = influence_G(fit, x, rr[i].xi_D).transpose();
    inf.G_L.row(row) = influence_G(fit, x, rr[i].L).transpose();
  }
  inf.psi_mean = r ? Eigen::VectorXd(inf.psi.colwise().mean().transpose()) : Eigen::VectorXd();

  inf.c_xi.assign(n, 0.0);
  inf.c_L.assign(n, 0.0);
  if (r == 0) {
    inf.omega_invertible = true;
    return inf;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(inf.omega);
  const double scale = inf.omega.cwiseAbs().maxCoeff();
  inf.omega_invertible = scale > 0.0 && lu.isInvertible() && lu.rcond() > 1e-13;
  if (inf.omega_invertible) {
    const Eigen::VectorXd proj = lu.solve(inf.psi_mean);
    for (std::size_t i = 0; i < n; ++i) {
      inf.c_xi[i] = inf.G_xi.row(static_cast<Eigen::Index>(i)).dot(proj);
      inf.c_L[i] = inf.G_L.row(static_cast<Eigen::Index>(i)).dot(proj);
    }
  }
  return inf;
}

}  // namespace winfrac
