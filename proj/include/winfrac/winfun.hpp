#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"

namespace winfrac {

// Level at which a pair comparison was settled.
struct Resolution {
  enum class Kind : std::uint8_t { Fatal, Nonfatal, Unresolved };
  Kind kind = Kind::Unresolved;
  int q = 0;  // 1-based nonfatal level when kind == Nonfatal

  static Resolution fatal() { return {Kind::Fatal, 0}; }
  static Resolution nonfatal(int q) { return {Kind::Nonfatal, q}; }
  static Resolution unresolved() { return {Kind::Unresolved, 0}; }

  bool resolved() const { return kind == Kind::Fatal || kind == Kind::Nonfatal; }
  // kappa^(level): level 0 is fatal, level q >= 1 nonfatal.
  bool kappa(int level) const {
    if (level == 0) return kind == Kind::Fatal;
    return kind == Kind::Nonfatal && q == level;
  }
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

inline std::string to_string(const Resolution& r) {
  switch (r.kind) {
    case Resolution::Kind::Fatal: return "fatal";
    case Resolution::Kind::Nonfatal: return "nonfatal" + std::to_string(r.q);
    case Resolution::Kind::Unresolved: return "unresolved";
  }
  return "?";
}

// tie: unresolved, but every component was observed and equal (all at L after
// restriction), so the pair is known to have no winner.
struct PairOutcome {
  std::size_t i = 0, j = 0;
  int omega_ij = 0, omega_ji = 0;
  Resolution resolution;
  bool tie = false;
  int delta() const { return omega_ij + omega_ji; }
};

// ---------------------------------------------------------------------------
// Full-data win function

struct CompleteOutcome {
  double D = 0.0;
  std::vector<double> T;
};

struct FullComparison {
  int win_ij = 0, win_ji = 0;
  Resolution resolution;
  bool tie = false;
};

inline FullComparison full_compare(const CompleteOutcome& yi, const CompleteOutcome& yj, double L) {
  FullComparison c;
  const double di = std::min(yi.D, L), dj = std::min(yj.D, L);
  if (di > dj) {
    c.win_ij = 1;
    c.resolution = Resolution::fatal();
    return c;
  }
  if (dj > di) {
    c.win_ji = 1;
    c.resolution = Resolution::fatal();
    return c;
  }
  // Nonfatal components only matter up to the common (restricted) death time.
  const double h = di;
  for (std::size_t q = 0; q < yi.T.size(); ++q) {
    const double ti = std::min(yi.T[q], h), tj = std::min(yj.T[q], h);
    if (ti > tj) {
      c.win_ij = 1;
      c.resolution = Resolution::nonfatal(static_cast<int>(q) + 1);
      return c;
    }
    if (tj > ti) {
      c.win_ji = 1;
      c.resolution = Resolution::nonfatal(static_cast<int>(q) + 1);
      return c;
    }
  }
  c.tie = true;
  return c;
}

inline int full_win(const CompleteOutcome& yi, const CompleteOutcome& yj, double L) {
  return full_compare(yi, yj, L).win_ij;
}

// ---------------------------------------------------------------------------
// Observed win function

inline PairOutcome observed_win(const RestrictedRecord& ri, const RestrictedRecord& rj, double L,
                                std::size_t i = 0, std::size_t j = 1) {
  if (ri.L != L || rj.L != L) throw DomainError("records restricted at a different L");
  PairOutcome po;
  po.i = i;
  po.j = j;
  if (ri.xi_D > rj.xi_D) {
    if (rj.delta_D) {
      po.omega_ij = 1;
      po.resolution = Resolution::fatal();
    }
    return po;
  }
  if (rj.xi_D > ri.xi_D) {
    if (ri.delta_D) {
      po.omega_ji = 1;
      po.resolution = Resolution::fatal();
    }
    return po;
  }
  // Equal restricted fatal times: walk the nonfatal levels while each is tied or
  // indeterminate.
  const std::size_t Q = ri.xi.size();
  for (std::size_t q = 0; q < Q; ++q) {
    const double a = ri.xi[q], b = rj.xi[q];
    if (a > b && rj.delta[q]) {
      po.omega_ij = 1;
      po.resolution = Resolution::nonfatal(static_cast<int>(q) + 1);
      return po;
    }
    if (b > a && ri.delta[q]) {
      po.omega_ji = 1;
      po.resolution = Resolution::nonfatal(static_cast<int>(q) + 1);
      return po;
    }
    if (a != b) return po;
  }
  bool tie = ri.delta_D && rj.delta_D;
  for (std::size_t q = 0; tie && q < Q; ++q)
    tie = ri.xi[q] == rj.xi[q] && ri.delta[q] && rj.delta[q];
  po.tie = tie;
  return po;
}

// ---------------------------------------------------------------------------
// Pair index sets

enum class PairStructure {
  Marginal,   // all ordered pairs i != j
  Difference  // i > j
};

inline std::string to_string(PairStructure s) {
  switch (s) {
    case PairStructure::Marginal: return "marginal";
    case PairStructure::Difference: return "difference";
  }
  return "?";
}

inline PairStructure parse_pair_structure(const std::string& s) {
  if (s == "marginal") return PairStructure::Marginal;
  if (s == "difference") return PairStructure::Difference;
  throw ConfigError("unknown pair structure '" + s + "'");
}

using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

// Pairs are stored grouped by their unordered key {a < b}, keys in lexicographic
// order, so (a,b) and (b,a) are adjacent whenever both are present.
struct PairIndex {
  PairStructure structure = PairStructure::Marginal;
  std::size_t n = 0;
  std::vector<IndexPair> pairs;
  std::size_t h_n = 0;
  std::size_t m_n = 0;
  std::size_t M_n = 0;

  bool contains(std::size_t i, std::size_t j) const {
    if (i >= n || j >= n || i == j) return false;
    return structure == PairStructure::Marginal || i > j;
  }
};

namespace detail {

inline void finish_counts(PairIndex& idx) {
  idx.h_n = idx.pairs.size();
  std::vector<std::size_t> deg(idx.n, 0);
  for (auto [i, j] : idx.pairs) {
    ++deg[i];
    ++deg[j];
  }
  std::size_t best = 0;
  for (auto [i, j] : idx.pairs) {
    const std::size_t both = idx.contains(j, i) ? 2 : 1;
    best = std::max(best, deg[i] + deg[j] - both);
  }
  idx.M_n = best;
}

}  // namespace detail

inline PairIndex enumerate_pairs(std::size_t n, PairStructure s) {
  if (n < 2) throw DomainError("need at least two subjects to form pairs");
  PairIndex idx;
  idx.structure = s;
  idx.n = n;
  idx.pairs.reserve(s == PairStructure::Marginal ? n * (n - 1) : n * (n - 1) / 2);
  for (std::uint32_t a = 0; a < n; ++a)
    for (std::uint32_t b = a + 1; b < n; ++b) {
      if (s == PairStructure::Marginal) idx.pairs.emplace_back(a, b);
      idx.pairs.emplace_back(b, a);
    }
  idx.m_n = n / 2;
  detail::finish_counts(idx);
  return idx;
}

inline PairIndex enumerate_pairs(const Dataset& ds, PairStructure s) { return enumerate_pairs(ds.size(), s); }

inline std::vector<IndexPair> dependence_neighbors(const PairIndex& idx, IndexPair pair) {
  if (!idx.contains(pair.first, pair.second)) throw DomainError("pair is not in the index set");
  std::vector<IndexPair> out;
  for (auto p : idx.pairs) {
    if (p == pair) continue;
    if (p.first == pair.first || p.first == pair.second || p.second == pair.first || p.second == pair.second)
      out.push_back(p);
  }
  return out;
}

}  // namespace winfrac
