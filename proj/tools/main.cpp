// winfrac command-line driver: fit, trajectory, simulate, truth, study.

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "winfrac/winfrac.hpp"

using namespace winfrac;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

// Error tied to a specific command-line flag.
struct FlagError : ConfigError {
  FlagError(std::string f, const std::string& m) : ConfigError(f + ": " + m), flag(std::move(f)) {}
  std::string flag;
};

// ---------------------------------------------------------------------------
// Output

void write_json(std::ostream& os, const json& j, int depth = 0) {
  const std::string pad(static_cast<std::size_t>(2 * depth + 2), ' '), end(static_cast<std::size_t>(2 * depth), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << pad << json(it.key()).dump() << ": ";
        write_json(os, it.value(), depth + 1);
      }
      os << '\n' << end << '}';
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      os << "[\n";
      for (std::size_t k = 0; k < j.size(); ++k) {
        if (k) os << ",\n";
        os << pad;
        write_json(os, j[k], depth + 1);
      }
      os << '\n' << end << ']';
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      os << (std::isfinite(v) ? fmt17(v) : "null");
      return;
    }
    default: os << j.dump();
  }
}

std::string render_json(const json& j) {
  std::ostringstream os;
  write_json(os, j);
  os << '\n';
  return os.str();
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FlagError("--output", "cannot write '" + path + "'");
  out << text;
}

// Provenance header for CSV outputs.
std::string comment_block(const json& cfg) {
  std::string s;
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    std::string v;
    if (it->is_string()) v = it->get<std::string>();
    else if (it->is_number_float()) v = fmt17(it->get<double>());
    else v = it->dump();
    s += "# " + it.key() + "=" + v + "\n";
  }
  return s;
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}

// ---------------------------------------------------------------------------
// Config file: key = value lines, '#' comments, keys are long flag names.

std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FlagError("--config", "cannot open '" + path + "'");
  std::vector<std::string> args;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const std::string t(trim(line));
    if (t.empty() || t.front() == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw FlagError("--config", "line " + std::to_string(no) + " is not key = value");
    std::string key(trim(std::string_view(t).substr(0, eq)));
    std::string val(trim(std::string_view(t).substr(eq + 1)));
    if (val.size() >= 2 && (val.front() == '"' || val.front() == '\'') && val.back() == val.front())
      val = val.substr(1, val.size() - 2);
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw FlagError("--config", "line " + std::to_string(no) + " has an empty key");
    args.push_back("--" + key + "=" + val);
  }
  return args;
}

// ---------------------------------------------------------------------------
// Option groups

double parse_L(const std::string& s, const std::string& flag) {
  if (s == "inf" || s == "Inf" || s == "infinity") return kInfinity;
  auto v = parse_double(s);
  if (!v) throw FlagError(flag, "'" + s + "' is not a number or 'inf'");
  if (!(*v > 0.0)) throw FlagError(flag, "restriction time must be positive");
  return *v;
}

struct ModelOpts {
  std::string link = "logit";
  std::optional<std::string> L;
  std::optional<double> L_quantile, L_censor_quantile;
  std::string weights = "ipcw";
  double floor = 0.01;
  std::string structure = "marginal";
  std::string pair_covariate = "auto";
  std::string bracket = "literal";
  bool ties_as_losses = false;
  int max_iter = 50;
  double tol = 1e-9;
  unsigned threads = 1;

  void add(CLI::App* app) {
    app->add_option("--link", link, "identity, logit or probit")->capture_default_str();
    app->add_option("--L", L, "restriction time (number or inf)");
    app->add_option("--L-quantile", L_quantile, "restriction at this quantile of observed fatal times");
    app->add_option("--L-censor-quantile", L_censor_quantile, "restriction at this quantile of censoring times");
    app->add_option("--weights", weights, "ipcw, ipcw-infinity, resolved (none) or wang")->capture_default_str();
    app->add_option("--floor", floor, "winsorization floor for the survival product")->capture_default_str();
    app->add_option("--structure", structure, "marginal or difference pair set")->capture_default_str();
    app->add_option("--pair-covariate", pair_covariate, "difference (X_i - X_j), left (X_i) or auto")
        ->capture_default_str();
    app->add_option("--variance-bracket", bracket, "literal or unit")->capture_default_str();
    app->add_flag("--ties-as-losses", ties_as_losses, "weight complete ties and count them as non-wins");
    app->add_option("--max-iter", max_iter, "Newton iteration limit")->capture_default_str();
    app->add_option("--tol", tol, "estimating-function tolerance")->capture_default_str();
    app->add_option("--threads", threads, "worker threads")->capture_default_str();
  }

  RestrictionRule restriction(std::optional<RestrictionRule> fallback) const {
    const int given = (L ? 1 : 0) + (L_quantile ? 1 : 0) + (L_censor_quantile ? 1 : 0);
    if (given > 1) throw FlagError("--L", "give only one of --L, --L-quantile, --L-censor-quantile");
    if (L) return RestrictionRule::fixed(parse_L(*L, "--L"));
    auto level = [](double q, const char* flag) {
      if (!(q > 0.0 && q <= 1.0)) throw FlagError(flag, "quantile level must lie in (0, 1]");
      return q;
    };
    if (L_quantile) return RestrictionRule::fatal_quantile(level(*L_quantile, "--L-quantile"));
    if (L_censor_quantile) return RestrictionRule::censoring_quantile(level(*L_censor_quantile, "--L-censor-quantile"));
    if (fallback) return *fallback;
    throw FlagError("--L", "a restriction time is required");
  }

  ModelSpec spec(const RestrictionRule& rule, PairCovariate auto_z) const {
    ModelSpec s;
    try {
      s.link = Link::parse(link);
    } catch (const ConfigError& e) {
      throw FlagError("--link", e.what());
    }
    try {
      s.weights = parse_weight_scheme(weights);
    } catch (const ConfigError& e) {
      throw FlagError("--weights", e.what());
    }
    try {
      s.structure = parse_pair_structure(structure);
    } catch (const Error& e) {
      throw FlagError("--structure", e.what());
    }
    try {
      s.z_map = pair_covariate == "auto" ? auto_z : parse_pair_covariate(pair_covariate);
    } catch (const Error& e) {
      throw FlagError("--pair-covariate", e.what());
    }
    try {
      s.bracket = parse_variance_bracket(bracket);
    } catch (const Error& e) {
      throw FlagError("--variance-bracket", e.what());
    }
    if (!(floor > 0.0 && floor < 1.0)) throw FlagError("--floor", "winsorization floor must lie in (0, 1)");
    if (max_iter < 1) throw FlagError("--max-iter", "must be at least 1");
    if (!(tol > 0.0)) throw FlagError("--tol", "must be positive");
    if (threads < 1) throw FlagError("--threads", "must be at least 1");
    s.floor = floor;
    s.restriction = rule;
    s.ties_as_losses = ties_as_losses;
    s.max_iter = max_iter;
    s.tol = tol;
    s.threads = threads;
    if (s.weights == WeightScheme::IPCWInfinity &&
        !(rule.kind == RestrictionRule::Kind::Explicit && std::isinf(rule.value)))
      throw FlagError("--weights", "the ipcw-infinity scheme requires --L inf");
    return s;
  }
};

json rule_json(const RestrictionRule& r) {
  switch (r.kind) {
    case RestrictionRule::Kind::Explicit: return std::isinf(r.value) ? json("inf") : json(r.value);
    case RestrictionRule::Kind::FatalQuantile: return "fatal-quantile:" + fmt17(r.value);
    case RestrictionRule::Kind::CensoringQuantile: return "censoring-quantile:" + fmt17(r.value);
  }
  return nullptr;
}

void spec_json(json& cfg, const ModelSpec& s) {
  cfg["link"] = s.link.name();
  cfg["scale_nu"] = s.link.nu;
  cfg["restriction"] = rule_json(s.restriction);
  cfg["weights"] = to_string(s.weights);
  cfg["floor"] = s.floor;
  cfg["structure"] = to_string(s.structure);
  cfg["pair_covariate"] = to_string(s.z_map);
  cfg["variance_bracket"] = to_string(s.bracket);
  cfg["ties_as_losses"] = s.ties_as_losses;
  cfg["max_iter"] = s.max_iter;
  cfg["tol"] = s.tol;
  cfg["step_tol"] = s.step_tol;
  cfg["mu_clamp"] = s.mu_clamp;
  cfg["threads"] = s.threads;
}

struct DataOpts {
  std::string path;
  std::string id = "id";
  std::vector<std::string> covariates, censor_covariates, nonfatal_time, nonfatal_ind;
  std::string fatal_time = "d_time", fatal_ind = "d_ind";

  void add(CLI::App* app) {
    app->add_option("--data", path, "input CSV")->required();
    app->add_option("--id-col", id, "subject id column")->capture_default_str();
    app->add_option("--covariates", covariates, "model covariate columns (default: x1, x2, ...)")->delimiter(',');
    app->add_option("--censor-covariates", censor_covariates, "censoring-model covariate columns (default: c1, ... or the model covariates)")
        ->delimiter(',');
    app->add_option("--fatal-time", fatal_time, "fatal event time column")->capture_default_str();
    app->add_option("--fatal-ind", fatal_ind, "fatal event indicator column")->capture_default_str();
    app->add_option("--nonfatal-time", nonfatal_time, "nonfatal time columns in priority order (default: t1_time, ...)")
        ->delimiter(',');
    app->add_option("--nonfatal-ind", nonfatal_ind, "nonfatal indicator columns (default: t1_ind, ...)")->delimiter(',');
  }

  // Resolves the column map against the file header, naming the flag on failure.
  ColumnMap columns() const {
    std::ifstream in(path);
    if (!in) throw FlagError("--data", "cannot open '" + path + "'");
    std::string header;
    while (std::getline(in, header))
      if (!trim(header).empty() && header.front() != '#') break;
    std::vector<std::string> names;
    for (auto& f : split(header, ',')) names.push_back(f.size() >= 2 && f.front() == '"' ? f.substr(1, f.size() - 2) : f);
    auto has = [&](const std::string& c) { return std::find(names.begin(), names.end(), c) != names.end(); };
    auto matching = [&](const std::string& pattern) {
      std::vector<std::string> out;
      const std::regex re(pattern);
      for (auto& n : names)
        if (std::regex_match(n, re)) out.push_back(n);
      return out;
    };
    auto check = [&](const std::string& flag, const std::vector<std::string>& cols) {
      for (auto& c : cols)
        if (!has(c)) throw FlagError(flag, "column '" + c + "' not found in " + path);
    };
    ColumnMap m;
    m.id = id;
    check("--id-col", {id});
    m.covariates = covariates.empty() ? matching("x[0-9]+") : covariates;
    if (m.covariates.empty()) throw FlagError("--covariates", "no covariate columns given or found");
    check("--covariates", m.covariates);
    m.censoring_covariates = censor_covariates.empty() ? matching("c[0-9]+") : censor_covariates;
    check("--censor-covariates", m.censoring_covariates);
    if (m.censoring_covariates.empty()) m.censoring_covariates = m.covariates;
    m.fatal_time = fatal_time;
    m.fatal_ind = fatal_ind;
    check("--fatal-time", {fatal_time});
    check("--fatal-ind", {fatal_ind});
    std::vector<std::string> nt = nonfatal_time, ni = nonfatal_ind;
    if (nt.empty()) nt = matching("t[0-9]+_time");
    if (ni.empty())
      for (auto& t : nt) ni.push_back(t.size() > 5 && t.ends_with("_time") ? t.substr(0, t.size() - 5) + "_ind" : t + "_ind");
    if (nt.empty()) throw FlagError("--nonfatal-time", "no nonfatal columns given or found");
    if (nt.size() != ni.size()) throw FlagError("--nonfatal-ind", "needs one indicator column per nonfatal time column");
    check("--nonfatal-time", nt);
    check("--nonfatal-ind", ni);
    for (std::size_t k = 0; k < nt.size(); ++k) m.nonfatal.emplace_back(nt[k], ni[k]);
    return m;
  }

  Dataset load() const { return load_csv(path, columns()); }
};

json columns_json(const ColumnMap& m) {
  json c;
  c["id"] = m.id;
  c["covariates"] = m.covariates;
  c["censoring_covariates"] = m.censoring_covariates;
  c["fatal_time"] = m.fatal_time;
  c["fatal_ind"] = m.fatal_ind;
  json nf = json::array();
  for (auto& [t, d] : m.nonfatal) nf.push_back({{"time", t}, {"ind", d}});
  c["nonfatal"] = nf;
  return c;
}

struct DesignOpts {
  std::string design = "gumbel";
  std::optional<double> alpha, lambda_D, lambda_1, lambda_2, censor_baseline, beta_d, beta_2, rho, beta_C, treat_prob;
  std::optional<double> alpha_slope, lower, u, sigma;
  std::vector<double> beta_D, beta_1, censor_gamma;
  bool no_censoring = false;

  void add(CLI::App* app) {
    app->add_option("--design", design, "gumbel, identity or probit-linear")->capture_default_str();
    app->add_option("--alpha", alpha, "gumbel: copula parameter (>= 1)");
    app->add_option("--lambda-D", lambda_D, "gumbel: fatal rate");
    app->add_option("--lambda-1", lambda_1, "gumbel/identity: nonfatal (gumbel) or fatal (identity) rate");
    app->add_option("--lambda-2", lambda_2, "identity: nonfatal rate");
    app->add_option("--beta-D", beta_D, "gumbel: fatal coefficients")->delimiter(',');
    app->add_option("--beta-1", beta_1, "gumbel: nonfatal coefficients")->delimiter(',');
    app->add_option("--censor-baseline", censor_baseline, "gumbel: censoring baseline hazard");
    app->add_option("--censor-gamma", censor_gamma, "gumbel: censoring coefficients")->delimiter(',');
    app->add_option("--beta-d", beta_d, "identity: fatal shift");
    app->add_option("--beta-2", beta_2, "identity: nonfatal shift");
    app->add_option("--rho", rho, "identity/probit-linear: latent correlation");
    app->add_option("--beta-C", beta_C, "identity/probit-linear: censoring coefficient");
    app->add_option("--treat-prob", treat_prob, "identity: P(X = 1)");
    app->add_option("--alpha-slope", alpha_slope, "probit-linear: slope");
    app->add_option("--lower", lower, "probit-linear: covariate lower bound");
    app->add_option("--u", u, "probit-linear: covariate upper bound");
    app->add_option("--sigma", sigma, "probit-linear: error sd");
    app->add_flag("--no-censoring", no_censoring, "draw without censoring");
  }

  SimulationDesign build() const {
    auto set = [](double& f, const std::optional<double>& v) {
      if (v) f = *v;
    };
    auto setv = [](std::vector<double>& f, const std::vector<double>& v, const char* flag) {
      if (v.empty()) return;
      if (v.size() != f.size()) throw FlagError(flag, "needs " + std::to_string(f.size()) + " values");
      f = v;
    };
    auto reject = [&](std::initializer_list<std::pair<bool, const char*>> unused) {
      for (auto [given, flag] : unused)
        if (given) throw FlagError(flag, "does not apply to design '" + design + "'");
    };
    SimulationDesign out;
    if (design == "gumbel") {
      GumbelHougaard g;
      set(g.alpha, alpha);
      set(g.lambda_D, lambda_D);
      set(g.lambda_1, lambda_1);
      set(g.censor_baseline, censor_baseline);
      setv(g.beta_D, beta_D, "--beta-D");
      setv(g.beta_1, beta_1, "--beta-1");
      setv(g.censor_gamma, censor_gamma, "--censor-gamma");
      reject({{lambda_2.has_value(), "--lambda-2"}, {beta_d.has_value(), "--beta-d"}, {beta_2.has_value(), "--beta-2"},
              {rho.has_value(), "--rho"}, {beta_C.has_value(), "--beta-C"}, {treat_prob.has_value(), "--treat-prob"},
              {alpha_slope.has_value(), "--alpha-slope"}, {lower.has_value(), "--lower"}, {u.has_value(), "--u"},
              {sigma.has_value(), "--sigma"}});
      g.censor = !no_censoring;
      out = g;
    } else if (design == "identity") {
      IdentityGaussian g;
      set(g.lambda_1, lambda_1);
      set(g.lambda_2, lambda_2);
      set(g.beta_d, beta_d);
      set(g.beta_2, beta_2);
      set(g.rho, rho);
      set(g.beta_C, beta_C);
      set(g.treat_prob, treat_prob);
      reject({{alpha.has_value(), "--alpha"}, {lambda_D.has_value(), "--lambda-D"}, {!beta_D.empty(), "--beta-D"},
              {!beta_1.empty(), "--beta-1"}, {censor_baseline.has_value(), "--censor-baseline"},
              {!censor_gamma.empty(), "--censor-gamma"}, {alpha_slope.has_value(), "--alpha-slope"},
              {lower.has_value(), "--lower"}, {u.has_value(), "--u"}, {sigma.has_value(), "--sigma"}});
      g.censor = !no_censoring;
      out = g;
    } else if (design == "probit-linear") {
      ProbitLinear g;
      set(g.alpha_slope, alpha_slope);
      set(g.lower, lower);
      set(g.u, u);
      set(g.sigma, sigma);
      set(g.rho, rho);
      set(g.beta_C, beta_C);
      reject({{alpha.has_value(), "--alpha"}, {lambda_D.has_value(), "--lambda-D"}, {lambda_1.has_value(), "--lambda-1"},
              {lambda_2.has_value(), "--lambda-2"}, {!beta_D.empty(), "--beta-D"}, {!beta_1.empty(), "--beta-1"},
              {censor_baseline.has_value(), "--censor-baseline"}, {!censor_gamma.empty(), "--censor-gamma"},
              {beta_d.has_value(), "--beta-d"}, {beta_2.has_value(), "--beta-2"}, {treat_prob.has_value(), "--treat-prob"}});
      g.censor = !no_censoring;
      out = g;
    } else {
      throw FlagError("--design", "unknown design '" + design + "'");
    }
    try {
      validate(out);
    } catch (const ConfigError& e) {
      throw FlagError("--design", e.what());
    }
    return out;
  }
};

PairCovariate natural_pair_covariate(const SimulationDesign& d) {
  return std::holds_alternative<IdentityGaussian>(d) ? PairCovariate::Left : PairCovariate::Difference;
}

void design_json(json& cfg, const SimulationDesign& d) {
  for (const auto& [k, v] : design_fields(d)) cfg[k] = v;
}

std::string interpretation(const Link& l) {
  switch (l.kind) {
    case LinkKind::Identity: return "additive change in the win fraction";
    case LinkKind::Logit: return "log odds of winning";
    case LinkKind::Probit: return "probit-scale change in the win fraction";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Commands

struct FitCmd {
  DataOpts data;
  ModelOpts model;
  std::size_t splits = 1;
  std::uint64_t seed = 1;
  std::string output, format = "json";

  void add(CLI::App* app) {
    data.add(app);
    model.add(app);
    app->add_option("--format", format, "json or csv")->capture_default_str();
    app->add_option("--splits", splits, "divide-and-combine fold count")->capture_default_str();
    app->add_option("--seed", seed, "seed for the fold partition")->capture_default_str();
    app->add_option("--output", output, "output path (default stdout)");
  }

  int run() const {
    const RestrictionRule rule = model.restriction(RestrictionRule::fatal_quantile(0.9));
    const ModelSpec spec = model.spec(rule, PairCovariate::Difference);
    if (splits < 1) throw FlagError("--splits", "must be at least 1");
    if (format != "json" && format != "csv") throw FlagError("--format", "must be json or csv");
    const ColumnMap cols = data.columns();
    const Dataset ds = load_csv(data.path, cols);
    if (splits > ds.size()) throw FlagError("--splits", "exceeds the number of subjects");

    json cfg;
    cfg["command"] = "fit";
    cfg["data"] = data.path;
    cfg["columns"] = columns_json(cols);
    spec_json(cfg, spec);
    cfg["splits"] = splits;
    cfg["seed"] = seed;
    cfg["format"] = format;

    const FitResult r = splits > 1 ? split_and_combine(ds, spec, splits, seed) : fit(ds, spec);
    if (format == "csv") {
      cfg.erase("columns");
      cfg["L"] = r.diag.L;
      std::ostringstream os;
      os << comment_block(cfg);
      os << "covariate,estimate,se,ci_low,ci_high,p\n";
      for (std::size_t k = 0; k < ds.p(); ++k) {
        const auto e = static_cast<Eigen::Index>(k);
        os << cols.covariates[k] << ',' << fmt17(r.beta[e]) << ',' << fmt17(r.se[e]) << ',' << fmt17(r.ci_low[e]) << ','
           << fmt17(r.ci_high[e]) << ',' << fmt17(r.p_value[e]) << '\n';
      }
      emit(os.str(), output);
      return r.diag.converged ? 0 : kExitFailed;
    }

    json out;
    out["status"] = r.diag.converged ? "ok" : "not-converged";
    out["config"] = cfg;
    out["n"] = ds.size();
    out["L"] = r.diag.L;
    out["link"] = spec.link.name();
    out["interpretation"] = interpretation(spec.link);
    if (spec.link.kind == LinkKind::Logit && spec.weights == WeightScheme::ResolvedIndicator) {
      out["equivalence"] = "PWFM";
      if (splits == 1) {
        const PreparedPairs prep = prepare_pairs(ds, spec);
        out["pwfm_residual_norm"] = pwfm_residual(r.beta, prep.pairs, spec.link).cwiseAbs().maxCoeff();
      }
    }
    json coefs = json::array();
    for (std::size_t k = 0; k < ds.p(); ++k) {
      const auto e = static_cast<Eigen::Index>(k);
      coefs.push_back({{"name", cols.covariates[k]},
                       {"estimate", r.beta[e]},
                       {"se", r.se[e]},
                       {"ci_low", r.ci_low[e]},
                       {"ci_high", r.ci_high[e]},
                       {"p", r.p_value[e]}});
    }
    out["coefficients"] = coefs;
    if (spec.link.kind == LinkKind::Probit) {
      const auto [theta, cov] = probit_to_logit(r.beta, r.covariance);
      json lg = json::array();
      for (std::size_t k = 0; k < ds.p(); ++k) {
        const auto e = static_cast<Eigen::Index>(k);
        lg.push_back({{"name", cols.covariates[k]}, {"log_win_odds", theta[e]}, {"se", std::sqrt(std::max(0.0, cov(e, e)))}});
      }
      out["logit_scale"] = lg;
    }
    const auto& d = r.diag;
    json diag;
    diag["censoring_rate"] = d.censoring_rate;
    diag["resolved_fraction"] = d.resolved_fraction;
    diag["resolved_pairs"] = d.resolved;
    diag["tied_pairs"] = d.ties;
    diag["positive_weight_pairs"] = d.positive_weight;
    diag["weight_min"] = d.weight_min;
    diag["weight_median"] = d.weight_median;
    diag["weight_max"] = d.weight_max;
    diag["winsorized_count"] = d.winsorized;
    diag["h_n"] = d.h_n;
    diag["m_n"] = d.m_n;
    diag["M_n"] = d.M_n;
    diag["iterations"] = d.iterations;
    diag["converged"] = d.converged;
    diag["u_norm"] = d.u_norm;
    diag["max_bracket_deviation"] = d.max_bracket_dev;
    diag["censoring_events"] = d.censoring_events;
    diag["censoring_model"] = d.censoring_model;
    if (d.cox_gamma.size()) diag["censoring_gamma"] = vec_json(d.cox_gamma);
    diag["b_negativity_flag"] = d.b_negativity_flag;
    out["diagnostics"] = diag;
    json cov = json::array();
    for (Eigen::Index a = 0; a < r.covariance.rows(); ++a) cov.push_back(vec_json(r.covariance.row(a).transpose()));
    out["covariance"] = cov;
    emit(render_json(out), output);
    return d.converged ? 0 : kExitFailed;
  }
};

struct TrajectoryCmd {
  DataOpts data;
  ModelOpts model;
  std::vector<double> grid;
  double grid_from = 0.25, grid_to = 0.99;
  std::size_t grid_steps = 20;
  std::string output;

  void add(CLI::App* app) {
    data.add(app);
    model.add(app);
    app->add_option("--grid", grid, "explicit restriction times")->delimiter(',');
    app->add_option("--grid-from", grid_from, "first grid point as a fatal-time quantile")->capture_default_str();
    app->add_option("--grid-to", grid_to, "last grid point as a fatal-time quantile")->capture_default_str();
    app->add_option("--grid-steps", grid_steps, "number of grid points")->capture_default_str();
    app->add_option("--output", output, "output path (default stdout)");
  }

  int run() const {
    if (model.L || model.L_quantile || model.L_censor_quantile)
      throw FlagError("--L", "trajectory takes its restriction times from --grid");
    const ColumnMap cols = data.columns();
    const Dataset ds = load_csv(data.path, cols);
    std::vector<double> Ls = grid;
    std::string grid_desc;
    if (Ls.empty()) {
      if (grid_steps < 1) throw FlagError("--grid-steps", "must be at least 1");
      if (!(grid_from > 0.0 && grid_from <= grid_to && grid_to <= 1.0))
        throw FlagError("--grid-from", "need 0 < grid-from <= grid-to <= 1");
      const double lo = choose_restriction(ds, RestrictionRule::fatal_quantile(grid_from));
      const double hi = choose_restriction(ds, RestrictionRule::fatal_quantile(grid_to));
      for (std::size_t k = 0; k < grid_steps; ++k)
        Ls.push_back(grid_steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(grid_steps - 1));
      grid_desc = "fatal-quantile " + fmt17(grid_from) + " to " + fmt17(grid_to) + " in " + std::to_string(grid_steps) + " steps";
    } else {
      for (double L : Ls)
        if (!(L > 0.0)) throw FlagError("--grid", "restriction times must be positive");
      grid_desc = "explicit";
    }
    const ModelSpec base = model.spec(RestrictionRule::fixed(Ls.front()), PairCovariate::Difference);

    json cfg;
    cfg["command"] = "trajectory";
    cfg["data"] = data.path;
    cfg["covariates"] = [&] {
      std::string s;
      for (auto& c : cols.covariates) s += (s.empty() ? "" : ",") + c;
      return s;
    }();
    spec_json(cfg, base);
    cfg.erase("restriction");
    cfg["grid"] = grid_desc;

    std::ostringstream os;
    os << comment_block(cfg);
    os << "L,covariate,estimate,se,ci_low,ci_high,status\n";
    bool all_ok = true;
    for (double L : Ls) {
      ModelSpec s = base;
      s.restriction = RestrictionRule::fixed(L);
      try {
        const FitResult r = fit(ds, s);
        for (std::size_t k = 0; k < ds.p(); ++k) {
          const auto e = static_cast<Eigen::Index>(k);
          os << fmt17(L) << ',' << cols.covariates[k] << ',' << fmt17(r.beta[e]) << ',' << fmt17(r.se[e]) << ','
             << fmt17(r.ci_low[e]) << ',' << fmt17(r.ci_high[e]) << ",ok\n";
        }
      } catch (const Error& e) {
        all_ok = false;
        std::string why = to_string(e.kind());
        for (std::size_t k = 0; k < ds.p(); ++k)
          os << fmt17(L) << ',' << cols.covariates[k] << ",nan,nan,nan,nan," << why << '\n';
      }
    }
    emit(os.str(), output);
    return all_ok ? 0 : kExitFailed;
  }
};

struct SimulateCmd {
  DesignOpts design;
  std::size_t n = 200;
  std::uint64_t seed = 1;
  std::string output;

  void add(CLI::App* app) {
    design.add(app);
    app->add_option("--n", n, "number of subjects")->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--output", output, "output path (default stdout)");
  }

  int run() const {
    const SimulationDesign d = design.build();
    if (n < 2) throw FlagError("--n", "need at least two subjects");
    json cfg;
    cfg["command"] = "simulate";
    design_json(cfg, d);
    cfg["n"] = n;
    cfg["seed"] = seed;
    std::ostringstream os;
    os << comment_block(cfg);
    write_csv(simulate(d, n, seed), os);
    emit(os.str(), output);
    return 0;
  }
};

struct TruthCmd {
  DesignOpts design;
  std::string link = "logit";
  std::string L = "";
  std::size_t pair_draws = 100000;
  std::uint64_t seed = TruthOptions{}.seed;
  std::string pair_covariate = "auto";
  bool ties_as_losses = false;
  std::string output;

  void add(CLI::App* app) {
    design.add(app);
    app->add_option("--link", link, "identity, logit or probit")->capture_default_str();
    app->add_option("--L", L, "restriction time (number or inf)")->required();
    app->add_option("--pair-draws", pair_draws, "independent pairs drawn")->capture_default_str();
    app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--pair-covariate", pair_covariate, "difference, left or auto")->capture_default_str();
    app->add_flag("--ties-as-losses", ties_as_losses, "keep complete ties as non-wins");
    app->add_option("--output", output, "output path (default stdout)");
  }

  int run() const {
    const SimulationDesign d = design.build();
    TruthOptions opt;
    opt.pair_draws = pair_draws;
    opt.seed = seed;
    opt.ties_as_losses = ties_as_losses;
    try {
      opt.z_map = pair_covariate == "auto" ? natural_pair_covariate(d) : parse_pair_covariate(pair_covariate);
    } catch (const Error& e) {
      throw FlagError("--pair-covariate", e.what());
    }
    Link lk;
    try {
      lk = Link::parse(link);
    } catch (const ConfigError& e) {
      throw FlagError("--link", e.what());
    }
    const double Lv = parse_L(L, "--L");
    if (pair_draws < 10000) throw FlagError("--pair-draws", "must be at least 10000");
    const Eigen::VectorXd b = mc_truth(d, lk, Lv, opt);
    json cfg;
    cfg["command"] = "truth";
    design_json(cfg, d);
    cfg["link"] = lk.name();
    cfg["L"] = std::isinf(Lv) ? json("inf") : json(Lv);
    cfg["pair_draws"] = pair_draws;
    cfg["seed"] = seed;
    cfg["pair_covariate"] = to_string(opt.z_map);
    cfg["ties_as_losses"] = ties_as_losses;
    json out;
    out["status"] = "ok";
    out["config"] = cfg;
    out["beta_L"] = vec_json(b);
    emit(render_json(out), output);
    return 0;
  }
};

struct StudyCmd {
  DesignOpts design;
  ModelOpts model;
  std::size_t n = 200, reps = 500;
  std::uint64_t seed = 1;
  std::size_t pair_draws = 100000;
  std::uint64_t truth_seed = TruthOptions{}.seed;
  std::vector<double> truth;
  double max_failure = 0.02;
  std::string output;

  void add(CLI::App* app) {
    design.add(app);
    model.add(app);
    app->add_option("--n", n, "subjects per replication")->capture_default_str();
    app->add_option("--reps", reps, "replications")->capture_default_str();
    app->add_option("--seed", seed, "master seed")->capture_default_str();
    app->add_option("--pair-draws", pair_draws, "pairs for the truth oracle")->capture_default_str();
    app->add_option("--truth-seed", truth_seed, "seed for the truth oracle")->capture_default_str();
    app->add_option("--truth", truth, "known true coefficients (skips the oracle)")->delimiter(',');
    app->add_option("--max-failure-fraction", max_failure, "abort when more replications fail")->capture_default_str();
    app->add_option("--output", output, "output path (default stdout)");
  }

  int run() const {
    const SimulationDesign d = design.build();
    const RestrictionRule rule = model.restriction(std::nullopt);
    if (rule.kind != RestrictionRule::Kind::Explicit) throw FlagError("--L", "studies need an explicit --L");
    const ModelSpec spec = model.spec(rule, natural_pair_covariate(d));
    if (n < 2) throw FlagError("--n", "need at least two subjects");
    if (reps < 2) throw FlagError("--reps", "need at least two replications");
    if (pair_draws < 10000) throw FlagError("--pair-draws", "must be at least 10000");
    StudyOptions opt;
    opt.n = n;
    opt.reps = reps;
    opt.seed = seed;
    opt.threads = spec.threads;
    opt.truth.pair_draws = pair_draws;
    opt.truth.seed = truth_seed;
    opt.max_failure_fraction = max_failure;
    if (!truth.empty()) opt.truth_value = Eigen::Map<const Eigen::VectorXd>(truth.data(), static_cast<Eigen::Index>(truth.size()));

    json cfg;
    cfg["command"] = "study";
    design_json(cfg, d);
    spec_json(cfg, spec);
    cfg["n"] = n;
    cfg["reps"] = reps;
    cfg["seed"] = seed;
    cfg["pair_draws"] = pair_draws;
    cfg["truth_seed"] = truth_seed;
    if (!truth.empty()) {
      std::string s;
      for (double t : truth) s += (s.empty() ? "" : ",") + fmt17(t);
      cfg["truth"] = s;
    }
    cfg["max_failure_fraction"] = max_failure;

    const StudySummary s = run_study(d, spec, opt);
    if (s.truth.size() != s.mean.size()) throw FlagError("--truth", "wrong number of coefficients");
    std::ostringstream os;
    os << comment_block(cfg);
    os << "coefficient,beta_L,mean,rbias_pct,mcsd,ase,cp,censoring_pct,reps,failures\n";
    for (Eigen::Index k = 0; k < s.truth.size(); ++k)
      os << 'x' << (k + 1) << ',' << fmt17(s.truth[k]) << ',' << fmt17(s.mean[k]) << ',' << fmt17(s.rbias[k]) << ','
         << fmt17(s.mcsd[k]) << ',' << fmt17(s.ase[k]) << ',' << fmt17(s.cp[k]) << ','
         << fmt17(100.0 * s.censoring_rate) << ',' << s.reps << ',' << s.failures << '\n';
    emit(os.str(), output);
    return 0;
  }
};

int report(const std::string& kind, const std::string& message, const std::string& flag, int code) {
  json e;
  e["error"] = {{"kind", kind}, {"message", message}};
  if (!flag.empty()) e["error"]["flag"] = flag;
  e["exit_code"] = code;
  std::cerr << render_json(e);
  return code;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Schema:
    case ErrorKind::Parse:
    case ErrorKind::Config:
    case ErrorKind::Domain: return kExitUsage;
    case ErrorKind::Numerical:
    case ErrorKind::Convergence: return kExitFailed;
  }
  return kExitFailed;
}

// Inserts the --config file's entries right after the subcommand, so flags
// given later on the command line take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> path;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) path = args[k + 1];
    else if (args[k].rfind("--config=", 0) == 0) path = args[k].substr(9);
  }
  if (!path) return args;
  const auto extra = config_arguments(*path);
  std::size_t at = 0;
  while (at < args.size() && args[at].rfind("-", 0) == 0) ++at;
  const std::size_t pos = at < args.size() ? at + 1 : args.size();
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(pos), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Win-fraction regression for prioritized composite endpoints", "winfrac"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  FitCmd fit_cmd;
  TrajectoryCmd traj_cmd;
  SimulateCmd sim_cmd;
  TruthCmd truth_cmd;
  StudyCmd study_cmd;
  std::string config_path;
  auto* f = app.add_subcommand("fit", "fit the regression at one restriction time");
  auto* t = app.add_subcommand("trajectory", "fit over a grid of restriction times (CSV)");
  auto* s = app.add_subcommand("simulate", "draw a dataset from a simulation design (CSV)");
  auto* u = app.add_subcommand("truth", "Monte Carlo pseudo-true coefficients");
  auto* y = app.add_subcommand("study", "replication study with bias and coverage summary (CSV)");
  fit_cmd.add(f);
  traj_cmd.add(t);
  sim_cmd.add(s);
  truth_cmd.add(u);
  study_cmd.add(y);
  for (auto* sub : {f, t, s, u, y}) {
    sub->add_option("--config", config_path, "key = value file; command-line flags take precedence");
    // Repeated vector options (config then command line) keep the last occurrence.
    for (auto* opt : sub->get_options())
      if (opt->get_expected_max() > 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string flag;
    const std::string msg = e.what();
    const auto p = msg.find("--");
    if (p != std::string::npos) {
      auto q = msg.find_first_of(" :=,'\"", p);
      flag = msg.substr(p, q == std::string::npos ? std::string::npos : q - p);
    }
    return report("config", msg, flag, kExitUsage);
  } catch (const FlagError& e) {
    return report("config", e.what(), e.flag, kExitUsage);
  }

  try {
    if (f->parsed()) return fit_cmd.run();
    if (t->parsed()) return traj_cmd.run();
    if (s->parsed()) return sim_cmd.run();
    if (u->parsed()) return truth_cmd.run();
    return study_cmd.run();
  } catch (const FlagError& e) {
    return report("config", e.what(), e.flag, kExitUsage);
  } catch (const Error& e) {
    return report(to_string(e.kind()), e.what(), "", exit_code(e.kind()));
  } catch (const std::exception& e) {
    return report("internal", e.what(), "", kExitFailed);
  }
}
