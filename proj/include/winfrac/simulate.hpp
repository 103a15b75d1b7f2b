#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"
#include "winfrac/fit.hpp"
#include "winfrac/format.hpp"
#include "winfrac/links.hpp"
#include "winfrac/parallel.hpp"
#include "winfrac/rng.hpp"
#include "winfrac/winfun.hpp"

namespace winfrac {

// Joint survival exp(-[(lD d e^{-bD'x})^a + (l1 t e^{-b1'x})^a]^{1/a});
// X1 ~ N(0,1) truncated to [-1,1], X2 = +-1; Cox censoring with constant baseline.
struct GumbelHougaard {
  double alpha = 1.0;
  double lambda_D = 0.25;
  double lambda_1 = 1.0;
  std::vector<double> beta_D{0.6, -0.4};
  std::vector<double> beta_1{0.25, 0.55};
  double censor_baseline = 0.35;
  std::vector<double> censor_gamma{-0.6, 0.5};
  bool censor = true;
};

// Latent bivariate normal -> exponential margins, shifted by X * beta; X ~ Bernoulli,
// censoring hazard exp(beta_C Phi(X)).
struct IdentityGaussian {
  double lambda_1 = 0.15;
  double lambda_2 = 0.30;
  double beta_d = 10.0;
  double beta_2 = 8.0;
  double rho = 0.5;
  double beta_C = -5.7;
  double treat_prob = 0.5;
  bool censor = true;
};

// D = a X + e_D, T = a X + e_T, (e_D, e_T) normal with sd sigma and correlation rho;
// X equally spaced on [lower, u]; censoring hazard exp(beta_C X).
struct ProbitLinear {
  double alpha_slope = 1.0;
  double lower = 2.0;
  double u = 5.0;
  double sigma = 0.4;
  double rho = 0.75;
  double beta_C = -0.79;
  bool censor = true;
};

using SimulationDesign = std::variant<GumbelHougaard, IdentityGaussian, ProbitLinear>;

inline void validate(const SimulationDesign& d) {
  std::visit(
      [](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, GumbelHougaard>) {
          if (!(g.alpha >= 1.0)) throw ConfigError("Gumbel-Hougaard alpha must be >= 1");
          if (!(g.lambda_D > 0.0 && g.lambda_1 > 0.0 && g.censor_baseline > 0.0)) throw ConfigError("rates must be positive");
          if (g.beta_D.size() != 2 || g.beta_1.size() != 2 || g.censor_gamma.size() != 2)
            throw ConfigError("Gumbel-Hougaard design has two covariates");
        } else if constexpr (std::is_same_v<T, IdentityGaussian>) {
          if (!(g.lambda_1 > 0.0 && g.lambda_2 > 0.0)) throw ConfigError("rates must be positive");
          if (!(std::abs(g.rho) < 1.0)) throw ConfigError("latent correlation must lie in (-1, 1)");
          if (!(g.treat_prob >= 0.0 && g.treat_prob <= 1.0)) throw ConfigError("treatment probability must lie in [0, 1]");
        } else {
          if (!(g.sigma > 0.0)) throw ConfigError("error sd must be positive");
          if (!(g.u > g.lower)) throw ConfigError("covariate range must be nonempty");
          if (!(std::abs(g.rho) < 1.0)) throw ConfigError("error correlation must lie in (-1, 1)");
        }
      },
      d);
}

struct LatentSubject {
  std::vector<double> x;   // model covariates
  std::vector<double> cx;  // censoring covariates (empty: same as x)
  double D = 0.0;
  double T = 0.0;
  double C = kInfinity;
};

namespace detail {

inline double truncated_std_normal(Rng& rng) {
  for (;;) {
    const double z = rng.normal();
    if (z >= -1.0 && z <= 1.0) return z;
  }
}

inline double dot2(const std::vector<double>& b, const std::vector<double>& x) { return b[0] * x[0] + b[1] * x[1]; }

// `slot` in [0,1] positions the subject on the ProbitLinear grid; negative draws X uniformly.
inline LatentSubject draw_latent(const SimulationDesign& design, Rng& rng, double slot) {
  LatentSubject s;
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, GumbelHougaard>) {
          s.x = {truncated_std_normal(rng), rng.bernoulli(0.5) ? 1.0 : -1.0};
          const double S = rng.positive_stable(1.0 / g.alpha);
          const double e1 = rng.exponential(), e2 = rng.exponential();
          const double a = 1.0 / g.alpha;
          s.D = std::pow(e1 / S, a) / (g.lambda_D * std::exp(-dot2(g.beta_D, s.x)));
          s.T = std::pow(e2 / S, a) / (g.lambda_1 * std::exp(-dot2(g.beta_1, s.x)));
          const double ec = rng.exponential();
          if (g.censor) s.C = ec / (g.censor_baseline * std::exp(dot2(g.censor_gamma, s.x)));
        } else if constexpr (std::is_same_v<T, IdentityGaussian>) {
          const double xv = rng.bernoulli(g.treat_prob) ? 1.0 : 0.0;
          s.x = {xv};
          s.cx = {norm_cdf(xv)};
          const double n1 = rng.normal(), n2 = rng.normal();
          const double z1 = n1, z2 = g.rho * n1 + std::sqrt(1.0 - g.rho * g.rho) * n2;
          s.D = -std::log(norm_cdf(-z1)) / g.lambda_1 + xv * g.beta_d;
          s.T = -std::log(norm_cdf(-z2)) / g.lambda_2 + xv * g.beta_2;
          const double ec = rng.exponential();
          if (g.censor) s.C = ec / std::exp(g.beta_C * s.cx[0]);
        } else {
          const double xv = slot >= 0.0 ? g.lower + (g.u - g.lower) * slot : g.lower + (g.u - g.lower) * rng.uniform();
          s.x = {xv};
          const double n1 = rng.normal(), n2 = rng.normal();
          const double eD = g.sigma * n1;
          const double eT = g.sigma * (g.rho * n1 + std::sqrt(1.0 - g.rho * g.rho) * n2);
          s.D = std::max(0.0, g.alpha_slope * xv + eD);
          s.T = std::max(0.0, g.alpha_slope * xv + eT);
          const double ec = rng.exponential();
          if (g.censor) s.C = ec / std::exp(g.beta_C * xv);
        }
      },
      design);
  return s;
}

}  // namespace detail

inline std::vector<LatentSubject> draw_latent_sample(const SimulationDesign& design, std::size_t n, std::uint64_t seed) {
  validate(design);
  if (n < 2) throw DomainError("need at least two subjects");
  Rng rng(seed);
  std::vector<LatentSubject> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(detail::draw_latent(design, rng, static_cast<double>(i) / static_cast<double>(n - 1)));
  return out;
}

// Observed nonfatal time is T ^ D ^ C with indicator I(T <= D, T <= C).
inline SubjectRecord observe(const LatentSubject& s, std::size_t index) {
  SubjectRecord r;
  r.id = std::to_string(index + 1);
  r.covariates = s.x;
  r.censoring_covariates = s.cx;
  r.fatal_obs = std::min(s.D, s.C);
  r.fatal_ind = s.D <= s.C ? 1 : 0;
  r.nonfatal_obs = {std::min(s.T, r.fatal_obs)};
  r.nonfatal_ind = {(s.T <= s.D && s.T <= s.C) ? 1 : 0};
  return r;
}

inline Dataset to_dataset(const std::vector<LatentSubject>& latent) {
  std::vector<SubjectRecord> recs;
  recs.reserve(latent.size());
  for (std::size_t i = 0; i < latent.size(); ++i) recs.push_back(observe(latent[i], i));
  const std::size_t r = latent.front().cx.size();
  return Dataset(std::move(recs), ColumnMap::standard(latent.front().x.size(), 1, r));
}

inline Dataset simulate(const SimulationDesign& design, std::size_t n, std::uint64_t seed) {
  return to_dataset(draw_latent_sample(design, n, seed));
}

inline Dataset gen_gumbel_hougaard(const GumbelHougaard& d, std::size_t n, std::uint64_t seed) { return simulate(d, n, seed); }
inline Dataset gen_identity_gaussian(const IdentityGaussian& d, std::size_t n, std::uint64_t seed) { return simulate(d, n, seed); }
inline Dataset gen_probit_linear(const ProbitLinear& d, std::size_t n, std::uint64_t seed) { return simulate(d, n, seed); }

// True S_c(t | censoring covariates) of the design.
inline double true_censoring_survival(const SimulationDesign& design, double t, const double* cx) {
  return std::visit(
      [&](const auto& g) -> double {
        using T = std::decay_t<decltype(g)>;
        if (!g.censor) return 1.0;
        if constexpr (std::is_same_v<T, GumbelHougaard>)
          return std::exp(-g.censor_baseline * t * std::exp(g.censor_gamma[0] * cx[0] + g.censor_gamma[1] * cx[1]));
        else
          return std::exp(-t * std::exp(g.beta_C * cx[0]));
      },
      design);
}

// ---------------------------------------------------------------------------
// Kendall's tau-b in O(n log n)

inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw DomainError("Kendall's tau needs two equal-length samples");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b]; });
  auto pairs_in_runs = [&](auto eq) {
    double t = 0.0, run = 1.0;
    for (std::size_t k = 1; k < n; ++k) {
      if (eq(idx[k - 1], idx[k])) {
        run += 1.0;
      } else {
        t += run * (run - 1.0) / 2.0;
        run = 1.0;
      }
    }
    return t + run * (run - 1.0) / 2.0;
  };
  const double tx = pairs_in_runs([&](std::size_t a, std::size_t b) { return x[a] == x[b]; });
  const double txy = pairs_in_runs([&](std::size_t a, std::size_t b) { return x[a] == x[b] && y[a] == y[b]; });
  std::vector<double> v(n), buf(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = y[idx[k]];
  // Count inversions (discordant pairs) by bottom-up merge sort on y.
  double swaps = 0.0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, o = lo;
      while (a < mid && b < hi) {
        if (v[b] < v[a]) {
          swaps += static_cast<double>(mid - a);
          buf[o++] = v[b++];
        } else {
          buf[o++] = v[a++];
        }
      }
      while (a < mid) buf[o++] = v[a++];
      while (b < hi) buf[o++] = v[b++];
    }
    std::swap(v, buf);
  }
  // v is now sorted: count tied-y pairs.
  double ty = 0.0, run = 1.0;
  for (std::size_t k = 1; k < n; ++k) {
    if (v[k] == v[k - 1]) {
      run += 1.0;
    } else {
      ty += run * (run - 1.0) / 2.0;
      run = 1.0;
    }
  }
  ty += run * (run - 1.0) / 2.0;
  const double n0 = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double num = n0 - tx - ty + txy - 2.0 * swaps;
  return num / std::sqrt((n0 - tx) * (n0 - ty));
}

// ---------------------------------------------------------------------------
// Monte Carlo truth

// Tied pairs are left out of the truth regression unless ties_as_losses, which
// matches the estimating equations under the corresponding weight convention.
struct TruthOptions {
  std::size_t pair_draws = 100000;
  std::uint64_t seed = 20240601;
  PairCovariate z_map = PairCovariate::Difference;
  bool ties_as_losses = false;
};

// No-intercept regression of a binary response: least squares for the identity
// link, maximum likelihood (Fisher scoring) otherwise.
inline Eigen::VectorXd fit_binary_glm(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Link& link) {
  const auto p = Z.cols();
  if (y.size() == 0 || Z.rows() != y.size()) throw DomainError("regression inputs have inconsistent sizes");
  if (link.kind == LinkKind::Identity) {
    Eigen::LDLT<Eigen::MatrixXd> f(Z.transpose() * Z);
    if (f.info() != Eigen::Success || !f.isPositive() || f.rcond() < 1e-12) throw NumericalError("degenerate regression design");
    return f.solve(Z.transpose() * y);
  }
  const double ys = y.sum();
  if (ys == 0.0 || ys == static_cast<double>(y.size())) throw NumericalError("complete separation: response is constant");
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index r = 0; r < Z.rows(); ++r) {
      const double eta = Z.row(r).dot(beta);
      const double mu = std::clamp(link.inverse(eta), 1e-12, 1.0 - 1e-12);
      const double h = link.derivative(eta);
      const double v = mu * (1.0 - mu);
      score += (h / v * (y[r] - mu)) * Z.row(r).transpose();
      info.noalias() += (h * h / v) * Z.row(r).transpose() * Z.row(r);
    }
    Eigen::LDLT<Eigen::MatrixXd> f(info);
    if (f.info() != Eigen::Success || f.rcond() < 1e-14) throw NumericalError("degenerate regression design");
    const Eigen::VectorXd step = f.solve(score);
    beta += step;
    if (!beta.allFinite() || beta.cwiseAbs().maxCoeff() > 50.0) throw NumericalError("regression diverged (separation)");
    if (step.cwiseAbs().maxCoeff() < 1e-12) return beta;
  }
  throw ConvergenceError("truth regression did not converge");
}

struct TruthSample {
  Eigen::MatrixXd Z;
  Eigen::VectorXd W;
};

inline TruthSample draw_truth_pairs(const SimulationDesign& design, double L, const TruthOptions& opt) {
  validate(design);
  if (opt.pair_draws < 1) throw DomainError("pair_draws must be positive");
  Rng rng(opt.seed);
  const LatentSubject probe = detail::draw_latent(design, rng, -1.0);
  const auto p = static_cast<Eigen::Index>(probe.x.size());
  TruthSample ts{Eigen::MatrixXd(static_cast<Eigen::Index>(opt.pair_draws), p),
                 Eigen::VectorXd(static_cast<Eigen::Index>(opt.pair_draws))};
  std::size_t got = 0, attempts = 0;
  while (got < opt.pair_draws) {
    if (++attempts > 1000 * opt.pair_draws + 1000) throw NumericalError("could not draw admissible pairs");
    const LatentSubject a = detail::draw_latent(design, rng, -1.0);
    const LatentSubject b = detail::draw_latent(design, rng, -1.0);
    const CompleteOutcome ya{a.D, {std::min(a.T, a.D)}}, yb{b.D, {std::min(b.T, b.D)}};
    const FullComparison c = full_compare(ya, yb, L);
    if (!opt.ties_as_losses && c.tie) continue;
    const auto r = static_cast<Eigen::Index>(got);
    for (Eigen::Index k = 0; k < p; ++k)
      ts.Z(r, k) = opt.z_map == PairCovariate::Difference ? a.x[static_cast<std::size_t>(k)] - b.x[static_cast<std::size_t>(k)]
                                                          : a.x[static_cast<std::size_t>(k)];
    ts.W[r] = c.win_ij;
    ++got;
  }
  return ts;
}

inline Eigen::VectorXd mc_truth(const SimulationDesign& design, const Link& link, double L, const TruthOptions& opt = {}) {
  if (opt.pair_draws < 10000) throw ConfigError("pair_draws must be at least 10000");
  check_restriction(L);
  const TruthSample ts = draw_truth_pairs(design, L, opt);
  return fit_binary_glm(ts.Z, ts.W, link);
}

inline std::vector<std::pair<std::string, std::string>> design_fields(const SimulationDesign& design) {
  std::vector<std::pair<std::string, std::string>> f;
  auto vec = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + fmt17(v[k]);
    return s;
  };
  std::visit(
      [&](const auto& g) {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, GumbelHougaard>) {
          f = {{"design", "gumbel"},
               {"alpha", fmt17(g.alpha)},
               {"lambda_D", fmt17(g.lambda_D)},
               {"lambda_1", fmt17(g.lambda_1)},
               {"beta_D", vec(g.beta_D)},
               {"beta_1", vec(g.beta_1)},
               {"censor_baseline", fmt17(g.censor_baseline)},
               {"censor_gamma", vec(g.censor_gamma)}};
        } else if constexpr (std::is_same_v<T, IdentityGaussian>) {
          f = {{"design", "identity"},         {"lambda_1", fmt17(g.lambda_1)}, {"lambda_2", fmt17(g.lambda_2)},
               {"beta_d", fmt17(g.beta_d)},    {"beta_2", fmt17(g.beta_2)},     {"rho", fmt17(g.rho)},
               {"beta_C", fmt17(g.beta_C)},    {"treat_prob", fmt17(g.treat_prob)}};
        } else {
          f = {{"design", "probit-linear"}, {"alpha_slope", fmt17(g.alpha_slope)}, {"lower", fmt17(g.lower)},
               {"u", fmt17(g.u)},           {"sigma", fmt17(g.sigma)},             {"rho", fmt17(g.rho)},
               {"beta_C", fmt17(g.beta_C)}};
        }
        f.emplace_back("censor", g.censor ? "true" : "false");
      },
      design);
  return f;
}

inline std::string describe(const SimulationDesign& design) {
  std::string s;
  for (const auto& [k, v] : design_fields(design)) s += (s.empty() ? "" : ";") + k + "=" + v;
  return s;
}

// Truth values are cached per (design, link, L, options) for the life of the process.
inline Eigen::VectorXd cached_truth(const SimulationDesign& design, const Link& link, double L, const TruthOptions& opt) {
  static std::mutex mu;
  static std::map<std::string, Eigen::VectorXd> cache;
  std::ostringstream key;
  key << describe(design) << '|' << link.name() << '|' << fmt17(L) << '|' << opt.pair_draws << '|' << opt.seed << '|'
      << to_string(opt.z_map) << '|' << opt.ties_as_losses;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key.str());
    if (it != cache.end()) return it->second;
  }
  Eigen::VectorXd t = mc_truth(design, link, L, opt);
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key.str(), t);
  return t;
}

// ---------------------------------------------------------------------------
// Replication studies

struct StudyOptions {
  std::size_t n = 200;
  std::size_t reps = 500;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  TruthOptions truth;
  std::optional<Eigen::VectorXd> truth_value;  // skip the Monte Carlo oracle
  double max_failure_fraction = 0.02;
};

struct Replication {
  bool ok = false;
  Eigen::VectorXd beta, se;
  double censoring_rate = 0.0;
  std::string error;
};

struct StudySummary {
  Eigen::VectorXd truth, mean, rbias, mcsd, ase, cp;
  double censoring_rate = 0.0;
  std::size_t reps = 0, failures = 0;
  std::uint64_t seed = 0;
  std::string design;
  std::vector<Replication> replications;
};

inline Replication run_replication(const SimulationDesign& design, const ModelSpec& spec, std::size_t n,
                                   std::uint64_t seed, std::size_t rep) {
  Replication r;
  try {
    const Dataset ds = simulate(design, n, Rng::stream(seed, rep).next());
    ModelSpec s = spec;
    s.threads = 1;
    const FitResult fr = fit(ds, s);
    r.beta = fr.beta;
    r.se = fr.se;
    r.censoring_rate = fr.diag.censoring_rate;
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

inline StudySummary summarize(const std::vector<Replication>& reps, const Eigen::VectorXd& truth) {
  StudySummary s;
  s.truth = truth;
  const auto p = truth.size();
  s.mean = Eigen::VectorXd::Zero(p);
  s.ase = Eigen::VectorXd::Zero(p);
  s.cp = Eigen::VectorXd::Zero(p);
  s.mcsd = Eigen::VectorXd::Zero(p);
  double m = 0.0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    m += 1.0;
    s.mean += r.beta;
    s.ase += r.se;
    s.censoring_rate += r.censoring_rate;
    for (Eigen::Index k = 0; k < p; ++k) s.cp[k] += std::abs(r.beta[k] - truth[k]) <= kZ975 * r.se[k] ? 1.0 : 0.0;
  }
  s.reps = reps.size();
  if (m == 0.0) throw NumericalError("every replication failed");
  s.mean /= m;
  s.ase /= m;
  s.cp /= m;
  s.censoring_rate /= m;
  for (const auto& r : reps)
    if (r.ok) s.mcsd += (r.beta - s.mean).cwiseAbs2();
  s.mcsd = m > 1.0 ? Eigen::VectorXd((s.mcsd / (m - 1.0)).cwiseSqrt()) : Eigen::VectorXd::Zero(p);
  s.rbias = ((s.mean - truth).array() / truth.array() * 100.0).matrix();
  return s;
}

inline StudySummary run_study(const SimulationDesign& design, const ModelSpec& spec, const StudyOptions& opt) {
  validate(design);
  if (opt.reps < 2) throw ConfigError("a study needs at least two replications");
  if (spec.restriction.kind != RestrictionRule::Kind::Explicit)
    throw ConfigError("studies need an explicit restriction time");
  const double L = spec.restriction.value;
  TruthOptions topt = opt.truth;
  topt.z_map = spec.z_map;
  topt.ties_as_losses = spec.ties_as_losses;
  const Eigen::VectorXd truth = opt.truth_value ? *opt.truth_value : cached_truth(design, spec.link, L, topt);
  std::vector<Replication> reps(opt.reps);
  parallel_for(opt.reps, opt.threads, [&](std::size_t r) { reps[r] = run_replication(design, spec, opt.n, opt.seed, r); });
  StudySummary s = summarize(reps, truth);
  s.seed = opt.seed;
  s.design = describe(design);
  if (static_cast<double>(s.failures) > opt.max_failure_fraction * static_cast<double>(opt.reps)) {
    std::string first;
    for (const auto& r : reps)
      if (!r.ok) {
        first = r.error;
        break;
      }
    throw NumericalError("study aborted: " + std::to_string(s.failures) + " of " + std::to_string(opt.reps) +
                         " replications failed (first: " + first + ")");
  }
  s.replications = std::move(reps);
  return s;
}

}  // namespace winfrac
