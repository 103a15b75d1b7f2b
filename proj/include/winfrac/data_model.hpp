#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "winfrac/error.hpp"
#include "winfrac/format.hpp"

namespace winfrac {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct SubjectRecord {
  std::string id;
  std::vector<double> covariates;
  double fatal_obs = 0.0;
  int fatal_ind = 0;
  std::vector<double> nonfatal_obs;
  std::vector<int> nonfatal_ind;
  // Empty means "same as covariates".
  std::vector<double> censoring_covariates;

  const std::vector<double>& censor_x() const {
    return censoring_covariates.empty() ? covariates : censoring_covariates;
  }
};

struct ColumnMap {
  std::string id = "id";
  std::vector<std::string> covariates;
  std::string fatal_time = "d_time";
  std::string fatal_ind = "d_ind";
  std::vector<std::pair<std::string, std::string>> nonfatal;
  std::vector<std::string> censoring_covariates;

  static ColumnMap standard(std::size_t p, std::size_t q, std::size_t r = 0) {
    ColumnMap m;
    for (std::size_t k = 0; k < p; ++k) m.covariates.push_back("x" + std::to_string(k + 1));
    for (std::size_t k = 0; k < q; ++k)
      m.nonfatal.emplace_back("t" + std::to_string(k + 1) + "_time", "t" + std::to_string(k + 1) + "_ind");
    for (std::size_t k = 0; k < r; ++k) m.censoring_covariates.push_back("c" + std::to_string(k + 1));
    return m;
  }
};

namespace detail {

inline std::string check_subject(const SubjectRecord& s) {
  auto bad_time = [](double t) { return !std::isfinite(t) || t < 0.0; };
  if (bad_time(s.fatal_obs)) return "fatal time must be finite and nonnegative";
  if (s.fatal_ind != 0 && s.fatal_ind != 1) return "fatal indicator must be 0 or 1";
  for (std::size_t q = 0; q < s.nonfatal_obs.size(); ++q) {
    if (bad_time(s.nonfatal_obs[q])) return "nonfatal time must be finite and nonnegative";
    if (s.nonfatal_ind[q] != 0 && s.nonfatal_ind[q] != 1) return "nonfatal indicator must be 0 or 1";
    if (s.nonfatal_obs[q] > s.fatal_obs) return "nonfatal time exceeds fatal time";
  }
  for (double x : s.covariates)
    if (!std::isfinite(x)) return "covariate must be finite";
  for (double x : s.censoring_covariates)
    if (!std::isfinite(x)) return "censoring covariate must be finite";
  return {};
}

}  // namespace detail

class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<SubjectRecord> subjects, ColumnMap map = {}) : subjects_(std::move(subjects)) {
    if (subjects_.empty()) throw DomainError("dataset has no subjects");
    p_ = subjects_.front().covariates.size();
    q_ = subjects_.front().nonfatal_obs.size();
    r_ = subjects_.front().censor_x().size();
    if (p_ == 0) throw SchemaError("at least one covariate is required");
    if (q_ == 0) throw SchemaError("at least one nonfatal component is required");
    std::unordered_set<std::string> ids;
    std::vector<std::size_t> bad;
    std::string first_msg;
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      const auto& s = subjects_[i];
      std::string msg;
      if (s.covariates.size() != p_ || s.nonfatal_obs.size() != q_ || s.nonfatal_ind.size() != q_ ||
          s.censor_x().size() != r_)
        msg = "inconsistent record shape";
      else if (!ids.insert(s.id).second)
        msg = "duplicate id '" + s.id + "'";
      else
        msg = detail::check_subject(s);
      if (!msg.empty()) {
        if (first_msg.empty()) first_msg = msg;
        bad.push_back(i + 1);
      }
    }
    if (!bad.empty()) {
      std::ostringstream os;
      os << "invalid rows";
      for (auto b : bad) os << ' ' << b;
      os << ": " << first_msg;
      throw ParseError(os.str(), bad);
    }
    if (map.covariates.empty() && map.nonfatal.empty())
      map = ColumnMap::standard(p_, q_, subjects_.front().censoring_covariates.size());
    map_ = std::move(map);
    x_.resize(subjects_.size() * p_);
    cx_.resize(subjects_.size() * r_);
    for (std::size_t i = 0; i < subjects_.size(); ++i) {
      std::copy(subjects_[i].covariates.begin(), subjects_[i].covariates.end(), x_.begin() + i * p_);
      const auto& c = subjects_[i].censor_x();
      std::copy(c.begin(), c.end(), cx_.begin() + i * r_);
    }
  }

  std::size_t size() const { return subjects_.size(); }
  std::size_t p() const { return p_; }
  std::size_t q_count() const { return q_; }
  // Censoring-covariate dimension.
  std::size_t r() const { return r_; }
  bool has_censoring_covariates() const { return !subjects_.empty() && !subjects_.front().censoring_covariates.empty(); }

  const SubjectRecord& operator[](std::size_t i) const { return subjects_[i]; }
  const std::vector<SubjectRecord>& subjects() const { return subjects_; }
  const ColumnMap& column_map() const { return map_; }

  // Row-major n x p and n x r covariate blocks.
  const double* x_row(std::size_t i) const { return x_.data() + i * p_; }
  const double* cx_row(std::size_t i) const { return cx_.data() + i * r_; }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    std::vector<SubjectRecord> s;
    s.reserve(rows.size());
    for (auto i : rows) s.push_back(subjects_.at(i));
    return Dataset(std::move(s), map_);
  }

 private:
  std::vector<SubjectRecord> subjects_;
  ColumnMap map_;
  std::size_t p_ = 0, q_ = 0, r_ = 0;
  std::vector<double> x_, cx_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> csv_fields(const std::string& line) {
  auto f = split(line, ',');
  for (auto& s : f)
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return f;
}

}  // namespace detail

inline Dataset read_csv(std::istream& in, const ColumnMap& map) {
  // Lines starting with '#' carry provenance comments and are skipped.
  std::string header;
  bool got = false;
  while (std::getline(in, header))
    if (!trim(header).empty() && header.front() != '#') {
      got = true;
      break;
    }
  if (!got) throw SchemaError("empty CSV input");
  auto names = detail::csv_fields(header);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < names.size(); ++k) col.emplace(names[k], k);

  if (map.covariates.empty()) throw SchemaError("no covariate columns given");
  if (map.nonfatal.empty()) throw SchemaError("no nonfatal columns given");
  auto need = [&](const std::string& name) -> std::size_t {
    auto it = col.find(name);
    if (it == col.end()) throw SchemaError("missing column '" + name + "'");
    return it->second;
  };
  const std::size_t c_id = need(map.id);
  std::vector<std::size_t> c_x, c_cx;
  for (auto& n : map.covariates) c_x.push_back(need(n));
  for (auto& n : map.censoring_covariates) c_cx.push_back(need(n));
  const std::size_t c_dt = need(map.fatal_time), c_di = need(map.fatal_ind);
  std::vector<std::pair<std::size_t, std::size_t>> c_nf;
  for (auto& [t, d] : map.nonfatal) c_nf.emplace_back(need(t), need(d));

  std::vector<SubjectRecord> subjects;
  std::vector<std::size_t> bad;
  std::string first_msg;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty() || line.front() == '#') continue;
    ++row;
    auto f = detail::csv_fields(line);
    std::string msg;
    SubjectRecord s;
    auto num = [&](std::size_t c) -> double {
      if (c >= f.size()) {
        if (msg.empty()) msg = "row has too few fields";
        return 0.0;
      }
      auto v = parse_double(f[c]);
      if (!v) {
        if (msg.empty()) msg = "non-numeric value '" + f[c] + "' in column '" + names[c] + "'";
        return 0.0;
      }
      return *v;
    };
    auto ind = [&](std::size_t c) -> int {
      double v = num(c);
      if (v != 0.0 && v != 1.0) {
        if (msg.empty()) msg = "indicator in column '" + names[c] + "' is not 0/1";
        return 0;
      }
      return static_cast<int>(v);
    };
    s.id = c_id < f.size() ? f[c_id] : std::string();
    for (auto c : c_x) s.covariates.push_back(num(c));
    for (auto c : c_cx) s.censoring_covariates.push_back(num(c));
    s.fatal_obs = num(c_dt);
    s.fatal_ind = ind(c_di);
    for (auto [t, d] : c_nf) {
      s.nonfatal_obs.push_back(num(t));
      s.nonfatal_ind.push_back(ind(d));
    }
    if (msg.empty()) msg = detail::check_subject(s);
    if (!msg.empty()) {
      if (first_msg.empty()) first_msg = "row " + std::to_string(row) + ": " + msg;
      bad.push_back(row);
    }
    subjects.push_back(std::move(s));
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "invalid rows";
    for (auto b : bad) os << ' ' << b;
    os << " (" << first_msg << ")";
    throw ParseError(os.str(), bad);
  }
  if (subjects.empty()) throw SchemaError("CSV has no data rows");
  return Dataset(std::move(subjects), map);
}

inline Dataset load_csv(const std::string& path, const ColumnMap& map) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return read_csv(in, map);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  const auto& m = ds.column_map();
  out << m.id;
  for (auto& c : m.covariates) out << ',' << c;
  for (auto& c : m.censoring_covariates) out << ',' << c;
  out << ',' << m.fatal_time << ',' << m.fatal_ind;
  for (auto& [t, d] : m.nonfatal) out << ',' << t << ',' << d;
  out << '\n';
  for (const auto& s : ds.subjects()) {
    out << s.id;
    for (double x : s.covariates) out << ',' << fmt17(x);
    for (double x : s.censoring_covariates) out << ',' << fmt17(x);
    out << ',' << fmt17(s.fatal_obs) << ',' << s.fatal_ind;
    for (std::size_t q = 0; q < s.nonfatal_obs.size(); ++q)
      out << ',' << fmt17(s.nonfatal_obs[q]) << ',' << s.nonfatal_ind[q];
    out << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  write_csv(ds, out);
}

// ---------------------------------------------------------------------------
// Restriction

struct RestrictedRecord {
  double L = kInfinity;
  double xi_D = 0.0;
  int delta_D = 0;
  std::vector<double> xi;
  std::vector<int> delta;
  double eta = 0.0;
  int delta_C = 0;
};

inline void check_restriction(double L) {
  if (!(L > 0.0)) throw DomainError("restriction time must be positive");
}

// An observed time at or beyond L becomes an observed restricted event at L.
inline RestrictedRecord restrict_subject(const SubjectRecord& s, double L) {
  check_restriction(L);
  RestrictedRecord r;
  r.L = L;
  auto cut = [L](double t, int d, double& xi, int& delta) {
    if (t >= L) {
      xi = L;
      delta = 1;
    } else {
      xi = t;
      delta = d;
    }
  };
  cut(s.fatal_obs, s.fatal_ind, r.xi_D, r.delta_D);
  r.xi.resize(s.nonfatal_obs.size());
  r.delta.resize(s.nonfatal_obs.size());
  for (std::size_t q = 0; q < s.nonfatal_obs.size(); ++q) cut(s.nonfatal_obs[q], s.nonfatal_ind[q], r.xi[q], r.delta[q]);
  r.eta = s.fatal_obs;
  r.delta_C = 1 - s.fatal_ind;
  return r;
}

inline std::vector<RestrictedRecord> restrict(const Dataset& ds, double L) {
  check_restriction(L);
  std::vector<RestrictedRecord> out;
  out.reserve(ds.size());
  for (const auto& s : ds.subjects()) out.push_back(restrict_subject(s, L));
  return out;
}

inline double censoring_rate(const std::vector<RestrictedRecord>& rr) {
  if (rr.empty()) return 0.0;
  std::size_t c = 0;
  for (const auto& r : rr) c += r.delta_D == 0;
  return static_cast<double>(c) / static_cast<double>(rr.size());
}

struct RestrictionRule {
  enum class Kind { Explicit, FatalQuantile, CensoringQuantile };
  Kind kind = Kind::Explicit;
  double value = 0.0;

  static RestrictionRule fixed(double L) { return {Kind::Explicit, L}; }
  static RestrictionRule fatal_quantile(double q) { return {Kind::FatalQuantile, q}; }
  static RestrictionRule censoring_quantile(double q) { return {Kind::CensoringQuantile, q}; }
};

// Order statistic at ceil(q * m), 1-based.
inline double order_statistic_quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DomainError("quantile of an empty set");
  if (!(q > 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in (0, 1]");
  std::sort(v.begin(), v.end());
  auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()) - 1e-12));
  k = std::clamp<std::size_t>(k, 1, v.size());
  return v[k - 1];
}

inline double choose_restriction(const Dataset& ds, const RestrictionRule& rule) {
  if (ds.size() == 0) throw DomainError("empty dataset");
  switch (rule.kind) {
    case RestrictionRule::Kind::Explicit:
      check_restriction(rule.value);
      return rule.value;
    case RestrictionRule::Kind::FatalQuantile:
    case RestrictionRule::Kind::CensoringQuantile: {
      const int want = rule.kind == RestrictionRule::Kind::FatalQuantile ? 1 : 0;
      std::vector<double> t;
      for (const auto& s : ds.subjects())
        if (s.fatal_ind == want) t.push_back(s.fatal_obs);
      if (t.empty())
        throw DomainError(want ? "no observed fatal events for a fatal-time quantile"
                               : "no observed censoring times for a censoring quantile");
      double L = order_statistic_quantile(std::move(t), rule.value);
      check_restriction(L);
      return L;
    }
  }
  return rule.value;
}

}  // namespace winfrac
