// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (capped at 1 so ctest reports a plain failure).

#include <chrono>
#include <cstdio>
#include <random>
#include <string>

#include "oracles.hpp"
#include "winfrac/winfrac.hpp"

using namespace winfrac;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string f3(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr std::size_t kTruthDraws = 1000000;
constexpr std::size_t kReps = 500;
constexpr std::uint64_t kStudySeed = 20240901;

ModelSpec study_spec(LinkKind link, WeightScheme w, double L, PairCovariate z = PairCovariate::Difference) {
  ModelSpec s;
  s.link = Link(link);
  s.weights = w;
  s.z_map = z;
  s.restriction = RestrictionRule::fixed(L);
  return s;
}

Eigen::VectorXd truth(const SimulationDesign& d, LinkKind link, double L, PairCovariate z = PairCovariate::Difference) {
  TruthOptions o;
  o.pair_draws = kTruthDraws;
  o.z_map = z;
  return mc_truth(d, Link(link), L, o);
}

StudySummary study(const SimulationDesign& d, const ModelSpec& spec, const Eigen::VectorXd& beta0) {
  StudyOptions o;
  o.n = 200;
  o.reps = kReps;
  o.seed = kStudySeed;
  o.truth_value = beta0;
  return run_study(d, spec, o);
}

std::string row(const char* label, const StudySummary& s) {
  std::string out = label;
  for (Eigen::Index k = 0; k < s.mean.size(); ++k)
    out += " [b" + std::to_string(k + 1) + " truth " + f3(s.truth[k]) + " rbias " + f3(s.rbias[k]) + "% cp " +
           f3(s.cp[k]) + " ase/mcsd " + f3(s.ase[k] / s.mcsd[k]) + "]";
  out += " cens " + f3(100.0 * s.censoring_rate) + "% fail " + std::to_string(s.failures);
  return out;
}

bool in(double v, double lo, double hi) { return v >= lo && v <= hi; }

struct TrueSurv {
  const SimulationDesign* design;
  const Dataset* ds;
  double operator()(std::size_t i, double t) const { return true_censoring_survival(*design, t, ds->cx_row(i)); }
};

}  // namespace

int main() {
  const GumbelHougaard first;

  // 1, 2, 8 (ratio), 10 share the first-design studies.
  const auto t0 = std::chrono::steady_clock::now();
  const Eigen::VectorXd b05 = truth(first, LinkKind::Logit, 0.5);
  const Eigen::VectorXd b2 = truth(first, LinkKind::Logit, 2.0);
  const StudySummary s05 = study(first, study_spec(LinkKind::Logit, WeightScheme::IPCW, 0.5), b05);
  const StudySummary s2 = study(first, study_spec(LinkKind::Logit, WeightScheme::IPCW, 2.0), b2);
  const double c1_time = seconds_since(t0);
  {
    const double reference_rbias[2][2] = {{3.0, 2.9}, {4.8, 19.9}};
    bool ok = c1_time < 900.0;
    int li = 0;
    for (const StudySummary* s : {&s05, &s2}) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        ok = ok && std::abs(std::abs(s->rbias[k]) - reference_rbias[li][k]) <= 6.0;
        ok = ok && in(s->cp[k], 0.92, 0.97);
      }
      ++li;
    }
    // Monte Carlo standard error of each RBias, in percentage points.
    std::string mc = " | rbias mc se";
    for (const StudySummary* s : {&s05, &s2})
      for (Eigen::Index k = 0; k < 2; ++k)
        mc += " " + f3(100.0 * s->mcsd[k] / std::sqrt(static_cast<double>(s->reps)) / std::abs(s->truth[k]));
    verdict(1, ok, row("L=0.5", s05) + " | " + row("L=2", s2) + mc + " | " + f3(c1_time) + " s");
  }

  {
    const StudySummary s = study(first, study_spec(LinkKind::Logit, WeightScheme::ResolvedIndicator, 2.0), b2);
    verdict(2, std::abs(s.rbias[1]) > 50.0 && s.cp[1] < 0.87, row("No-IPCW L=2", s));
  }

  {
    IdentityGaussian d1;
    d1.beta_C = -5.7;
    const Eigen::VectorXd t1 = truth(d1, LinkKind::Identity, 11.5, PairCovariate::Left);
    const StudySummary a = study(d1, study_spec(LinkKind::Identity, WeightScheme::IPCW, 11.5, PairCovariate::Left), t1);
    IdentityGaussian d2;
    d2.beta_C = -4.2;
    const Eigen::VectorXd t2 = truth(d2, LinkKind::Identity, 26.0, PairCovariate::Left);
    const StudySummary b =
        study(d2, study_spec(LinkKind::Identity, WeightScheme::ResolvedIndicator, 26.0, PairCovariate::Left), t2);
    const bool ok = std::abs(a.rbias[0]) <= 1.5 && in(a.cp[0], 0.92, 0.97) && b.cp[0] < 0.50;
    verdict(3, ok, row("IPCW L=11.5", a) + " | " + row("No-IPCW L=26", b));
  }

  {
    TruthOptions o;  // 1e5 pairs
    const Eigen::VectorXd a = mc_truth(first, Link(LinkKind::Logit), 0.5, o);
    const Eigen::VectorXd b = mc_truth(first, Link(LinkKind::Logit), 2.0, o);
    const bool ok = std::abs(a[0] - 0.367) <= 0.015 && std::abs(a[1] - 0.223) <= 0.015 &&
                    std::abs(b[0] - 0.480) <= 0.015 && std::abs(b[1] + 0.087) <= 0.015;
    verdict(4, ok, "L=0.5 (" + f3(a[0]) + ", " + f3(a[1]) + ") L=2 (" + f3(b[0]) + ", " + f3(b[1]) + ")");
  }

  {
    GumbelHougaard g;
    g.alpha = 2.0;
    const auto s = draw_latent_sample(g, 100000, 5);
    // The copula ties D and T given X; mapping each through its own conditional
    // survival removes the covariate-induced association.
    std::vector<double> D, T, uD, uT;
    for (const auto& l : s) {
      D.push_back(l.D);
      T.push_back(l.T);
      const double eD = g.beta_D[0] * l.x[0] + g.beta_D[1] * l.x[1], e1 = g.beta_1[0] * l.x[0] + g.beta_1[1] * l.x[1];
      uD.push_back(std::exp(-g.lambda_D * l.D * std::exp(-eD)));
      uT.push_back(std::exp(-g.lambda_1 * l.T * std::exp(-e1)));
    }
    const double tau = kendall_tau(uD, uT);
    verdict(5, std::abs(tau - 0.5) <= 0.01, "conditional tau " + f3(tau) + " (pooled over X " + f3(kendall_tau(D, T)) + ")");
  }

  {
    double worst = 0.0;
    int fitted = 0;
    std::mt19937_64 g(6);
    std::uniform_int_distribution<int> nd(20, 120);
    for (int r = 0; r < 50; ++r) {
      const Dataset ds = simulate(first, static_cast<std::size_t>(nd(g)), 6000 + static_cast<std::uint64_t>(r));
      const ModelSpec spec = study_spec(LinkKind::Logit, WeightScheme::ResolvedIndicator, 1.0);
      const FitResult fr = fit(ds, spec);
      const PreparedPairs prep = prepare_pairs(ds, spec);
      worst = std::max(worst, pwfm_residual(fr.beta, prep.pairs, spec.link).cwiseAbs().maxCoeff());
      ++fitted;
    }
    char b[96];
    std::snprintf(b, sizeof b, "max residual %.3e over %d fits", worst, fitted);
    verdict(6, fitted == 50 && worst < 1e-8, b);
  }

  {
    const StudySummary p = study(first, study_spec(LinkKind::Probit, WeightScheme::IPCW, 0.5), b05);
    Eigen::VectorXd theta_mean = Eigen::VectorXd::Zero(2);
    std::size_t ok_reps = 0;
    for (const auto& r : p.replications)
      if (r.ok) {
        theta_mean += probit_to_logit(r.beta, Eigen::MatrixXd::Identity(2, 2)).first;
        ++ok_reps;
      }
    theta_mean /= static_cast<double>(ok_reps);
    const double gap = (theta_mean - s05.mean).cwiseAbs().maxCoeff();
    const double spot = probit_to_logit(Eigen::VectorXd::Constant(1, 0.087), Eigen::MatrixXd::Identity(1, 1)).first[0];
    const bool ok = gap <= 0.02 && std::abs(spot - 0.139) < 0.0005;
    verdict(7, ok, "transformed probit mean (" + f3(theta_mean[0]) + ", " + f3(theta_mean[1]) + ") logit mean (" +
                       f3(s05.mean[0]) + ", " + f3(s05.mean[1]) + ") gap " + f3(gap) + " spot " + f3(spot));
  }

  {
    double worst = 0.0;
    int checked = 0;
    unsigned attempt = 0;
    std::mt19937_64 g(8);
    std::uniform_int_distribution<int> nd(3, 30);
    while (checked < 100) {
      const auto n = static_cast<std::size_t>(nd(g));
      const Dataset ds = oracle::random_dataset(n, 2, 8000 + attempt++, 0.25, 6);
      ModelSpec spec = study_spec(LinkKind::Logit, checked % 2 ? WeightScheme::ResolvedIndicator : WeightScheme::IPCW, 4.0);
      PreparedPairs prep;
      try {
        prep = prepare_pairs(ds, spec);
      } catch (const NumericalError&) {
        continue;  // degenerate censoring fit on a tiny sample
      }
      const Eigen::Vector2d beta(0.2, -0.1);
      worst = std::max(worst, oracle::rel_diff(b_matrix(prep.pairs, beta, spec), b_matrix_bruteforce(prep.pairs, beta, spec)));
      ++checked;
    }
    bool counts = true;
    for (std::size_t n : {5u, 10u, 50u}) {
      const auto idx = enumerate_pairs(n, PairStructure::Marginal);
      for (auto a : idx.pairs) counts = counts && dependence_neighbors(idx, a).size() + 1 == 4 * n - 6;
    }
    bool ratio = true;
    std::string rs;
    for (const StudySummary* s : {&s05, &s2})
      for (Eigen::Index k = 0; k < 2; ++k) {
        const double q = s->ase[k] / s->mcsd[k];
        ratio = ratio && in(q, 0.85, 1.15);
        rs += " " + f3(q);
      }
    char b[160];
    std::snprintf(b, sizeof b, "fast vs brute max rel %.2e over %d; neighbor counts %s; ase/mcsd", worst, checked,
                  counts ? "ok" : "wrong");
    verdict(8, worst < 1e-12 && counts && ratio, b + rs);
  }

  {
    const double L = 1.0;
    const ModelSpec spec = study_spec(LinkKind::Logit, WeightScheme::IPCW, L);
    const Eigen::VectorXd beta0 = truth(first, LinkKind::Logit, L);
    const std::size_t R = 2000, n = 100;
    const SimulationDesign design = first;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sumsq = Eigen::VectorXd::Zero(2);
    for (std::size_t r = 0; r < R; ++r) {
      const Dataset ds = simulate(design, n, 9000000 + r);
      const auto rr = restrict(ds, L);
      const auto idx = enumerate_pairs(ds, PairStructure::Marginal);
      const PairSet ps = score_pairs(ds, rr, idx, spec, TrueSurv{&design, &ds}, nullptr);
      const Eigen::VectorXd U = estimating_function(beta0, ps, spec);
      sum += U;
      sumsq += U.cwiseAbs2();
    }
    const Eigen::VectorXd mean = sum / static_cast<double>(R);
    const Eigen::VectorXd var = (sumsq / static_cast<double>(R) - mean.cwiseAbs2()) * (R / (R - 1.0));
    bool ok = true;
    std::string d;
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double se = std::sqrt(var[k] / static_cast<double>(R));
      ok = ok && std::abs(mean[k]) < 3.0 * se;
      char b[96];
      std::snprintf(b, sizeof b, " [U%ld mean %.2e, %.2f mc se]", static_cast<long>(k + 1), mean[k], mean[k] / se);
      d += b;
    }
    verdict(9, ok, "2000 datasets of n=100" + d);
  }

  {
    const StudySummary w = study(first, study_spec(LinkKind::Logit, WeightScheme::WangAlternative, 2.0), b2);
    verdict(10, w.cp[0] < 0.80 && s2.cp[0] >= 0.90,
            row("Wang L=2", w) + " | IPCW cp " + f3(s2.cp[0]) + " (same datasets)");
  }

  {
    const Dataset ds = simulate(first, 2000, 11);
    const auto fit = fit_censoring_model(ds);
    bool ok = fit.converged && std::abs(fit.gamma[0] + 0.6) <= 0.1 && std::abs(fit.gamma[1] - 0.5) <= 0.1;
    std::string d = "gamma (" + f3(fit.gamma[0]) + ", " + f3(fit.gamma[1]) + ") baseline/0.35t at";
    for (double t : {0.5, 1.0, 2.0}) {
      const double r = fit.baseline_cumhaz(t) / (0.35 * t);
      ok = ok && std::abs(r - 1.0) <= 0.05;
      d += " t=" + f3(t) + ": " + f3(r);
    }
    // Context only: the same quantities averaged over 200 further datasets.
    Eigen::Vector2d gm = Eigen::Vector2d::Zero();
    double rm = 0.0;
    for (int r = 0; r < 200; ++r) {
      const auto f = fit_censoring_model(simulate(first, 2000, 110000 + static_cast<std::uint64_t>(r)));
      gm += f.gamma / 200.0;
      rm += f.baseline_cumhaz(1.0) / 0.35 / 200.0;
    }
    d += " | 200-fit mean gamma (" + f3(gm[0]) + ", " + f3(gm[1]) + ") ratio at t=1 " + f3(rm);
    verdict(11, ok, d);
  }

  std::printf("%d of 11 criteria failed\n", failures);
  return failures ? 1 : 0;
}
