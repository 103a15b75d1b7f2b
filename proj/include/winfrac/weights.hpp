#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "winfrac/cox_censoring.hpp"
#include "winfrac/error.hpp"
#include "winfrac/winfun.hpp"

namespace winfrac {

enum class WeightScheme { IPCW, IPCWInfinity, ResolvedIndicator, WangAlternative };

inline std::string to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::IPCW: return "ipcw";
    case WeightScheme::IPCWInfinity: return "ipcw-infinity";
    case WeightScheme::ResolvedIndicator: return "resolved";
    case WeightScheme::WangAlternative: return "wang";
  }
  return "?";
}

inline WeightScheme parse_weight_scheme(const std::string& s) {
  if (s == "ipcw") return WeightScheme::IPCW;
  if (s == "ipcw-infinity") return WeightScheme::IPCWInfinity;
  if (s == "resolved" || s == "none") return WeightScheme::ResolvedIndicator;
  if (s == "wang") return WeightScheme::WangAlternative;
  throw ConfigError("unknown weight scheme '" + s + "'");
}

inline bool needs_censoring_model(WeightScheme s) { return s != WeightScheme::ResolvedIndicator; }

struct PairWeight {
  double value = 0.0;
  double adjusted_value = 0.0;
  WeightScheme scheme = WeightScheme::IPCW;
  bool winsorized = false;
};

inline void check_floor(double floor) {
  if (!(floor > 0.0 && floor < 1.0)) throw ConfigError("winsorization floor must lie in (0, 1)");
}

namespace detail {

inline PairWeight make_weight(WeightScheme s, double num, double prod, double floor) {
  PairWeight w;
  w.scheme = s;
  if (num == 0.0) return w;
  w.winsorized = prod < floor;
  w.value = num / std::max(prod, floor);
  w.adjusted_value = w.value;
  return w;
}

// Both members of every component up to (not including) level `upto` sit at L.
inline bool all_at(const RestrictedRecord& ri, const RestrictedRecord& rj, double L, std::size_t upto) {
  if (!(ri.xi_D == L && rj.xi_D == L)) return false;
  for (std::size_t k = 0; k < upto; ++k)
    if (!(ri.xi[k] == L && rj.xi[k] == L)) return false;
  return true;
}

inline void check_same_L(const RestrictedRecord& ri, const RestrictedRecord& rj, double L) {
  if (ri.L != L || rj.L != L) throw DomainError("records restricted at a different L");
}

}  // namespace detail

// Complete ties get weight zero, so the target is the win probability among
// untied pairs. With ties_as_losses they are weighted like a resolved pair and
// count as non-wins instead.
template <class Surv>
PairWeight ipcw_weight(const PairOutcome& po, const RestrictedRecord& ri, const RestrictedRecord& rj, const Surv& sc,
                       double L, double floor, bool ties_as_losses = false) {
  check_floor(floor);
  detail::check_same_L(ri, rj, L);
  const auto s = WeightScheme::IPCW;
  switch (po.resolution.kind) {
    case Resolution::Kind::Fatal:
      return detail::make_weight(s, ri.delta_D * rj.delta_D, sc(po.i, ri.xi_D) * sc(po.j, rj.xi_D), floor);
    case Resolution::Kind::Nonfatal: {
      const auto q = static_cast<std::size_t>(po.resolution.q - 1);
      const double num = ri.delta[q] * rj.delta[q] * (detail::all_at(ri, rj, L, q) ? 1.0 : 0.0);
      return detail::make_weight(s, num, sc(po.i, L) * sc(po.j, L), floor);
    }
    case Resolution::Kind::Unresolved:
      if (ties_as_losses && po.tie && detail::all_at(ri, rj, L, ri.xi.size()))
        return detail::make_weight(s, 1.0, sc(po.i, L) * sc(po.j, L), floor);
      break;
  }
  return detail::make_weight(s, 0.0, 1.0, floor);
}

template <class Surv>
PairWeight ipcw_weight_infinity(const PairOutcome& po, const RestrictedRecord& ri, const RestrictedRecord& rj,
                                const Surv& sc, double floor = 0.01, bool ties_as_losses = false) {
  check_floor(floor);
  if (!std::isinf(ri.L) || !std::isinf(rj.L)) throw DomainError("the unrestricted weight needs records built with L = infinity");
  const auto s = WeightScheme::IPCWInfinity;
  switch (po.resolution.kind) {
    case Resolution::Kind::Fatal:
      return detail::make_weight(s, ri.delta_D * rj.delta_D, sc(po.i, ri.xi_D) * sc(po.j, rj.xi_D), floor);
    case Resolution::Kind::Nonfatal: {
      const auto q = static_cast<std::size_t>(po.resolution.q - 1);
      bool tied = ri.xi_D == rj.xi_D;
      for (std::size_t k = 0; k < q; ++k) tied = tied && ri.xi[k] == rj.xi[k];
      const double num = ri.delta[q] * rj.delta[q] * (tied ? 1.0 : 0.0);
      return detail::make_weight(s, num, sc(po.i, ri.xi[q]) * sc(po.j, rj.xi[q]), floor);
    }
    case Resolution::Kind::Unresolved:
      if (ties_as_losses && po.tie) return detail::make_weight(s, 1.0, sc(po.i, ri.xi_D) * sc(po.j, rj.xi_D), floor);
      break;
  }
  return detail::make_weight(s, 0.0, 1.0, floor);
}

inline PairWeight resolved_indicator_weight(const PairOutcome& po) {
  PairWeight w;
  w.scheme = WeightScheme::ResolvedIndicator;
  w.value = w.adjusted_value = po.delta();
  return w;
}

// Winner-dependent weight, kept only for comparison studies: it does not give
// unbiased estimating equations for the win fraction.
template <class Surv>
PairWeight wang_alternative_weight(const PairOutcome& po, const RestrictedRecord& ri, const RestrictedRecord& rj,
                                   const Surv& sc, double L, double floor) {
  check_floor(floor);
  detail::check_same_L(ri, rj, L);
  const auto s = WeightScheme::WangAlternative;
  const bool i_wins = po.omega_ij == 1;
  const bool unrestricted = std::isinf(L);
  switch (po.resolution.kind) {
    case Resolution::Kind::Fatal: {
      const double t = i_wins ? rj.xi_D : ri.xi_D;
      const double num = i_wins ? rj.delta_D : ri.delta_D;
      return detail::make_weight(s, num, sc(po.i, t) * sc(po.j, t), floor);
    }
    case Resolution::Kind::Nonfatal: {
      const auto q = static_cast<std::size_t>(po.resolution.q - 1);
      const double num = i_wins ? rj.delta[q] : ri.delta[q];
      if (unrestricted) {
        const double t = i_wins ? rj.xi[q] : ri.xi[q];
        return detail::make_weight(s, num, sc(po.i, t) * sc(po.j, t), floor);
      }
      const double ind = detail::all_at(ri, rj, L, q) ? 1.0 : 0.0;
      return detail::make_weight(s, num * ind, sc(po.i, L) * sc(po.j, L), floor);
    }
    default: break;
  }
  return detail::make_weight(s, 0.0, 1.0, floor);
}

// W~ = W {1 + eps_ij' Omega^{-1} psi_mean}; returns the bracket and fills adjusted_value.
inline double adjusted_weight(PairWeight& pw, const InfluenceTerms& inf, const PairOutcome& po, double L,
                              double tolerance = 1e-6) {
  if (pw.value == 0.0) {
    pw.adjusted_value = 0.0;
    return 1.0;
  }
  if (inf.omega.size() > 0 && !inf.omega_invertible)
    throw NumericalError("censoring information matrix Omega is singular; " + describe_matrix(inf.omega));
  const bool at_xi = po.resolution.kind == Resolution::Kind::Fatal || std::isinf(L);
  const double b = at_xi ? inf.bracket_fatal(po.i, po.j) : inf.bracket_L(po.i, po.j);
  if (!(std::abs(b - 1.0) < tolerance))
    throw NumericalError("adjusted-weight bracket deviates from 1 by " + std::to_string(b - 1.0));
  pw.adjusted_value = pw.value * b;
  return b;
}

}  // namespace winfrac
