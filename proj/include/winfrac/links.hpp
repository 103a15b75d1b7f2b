#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "winfrac/error.hpp"

namespace winfrac {

enum class LinkKind { Identity, Logit, Probit };

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Link {
  LinkKind kind = LinkKind::Logit;
  double nu = 1.0;

  Link() = default;
  explicit Link(LinkKind k, double scale = 1.0) : kind(k), nu(scale) {}

  double inverse(double eta) const {
    switch (kind) {
      case LinkKind::Identity: return eta;
      case LinkKind::Logit: return expit(eta);
      case LinkKind::Probit: return norm_cdf(eta);
    }
    return eta;
  }

  // h(eta) = d g^{-1} / d eta
  double derivative(double eta) const {
    switch (kind) {
      case LinkKind::Identity: return 1.0;
      case LinkKind::Logit: {
        const double m = expit(eta);
        return m * (1.0 - m);
      }
      case LinkKind::Probit: return norm_pdf(eta);
    }
    return 1.0;
  }

  // V(mu) with mu clamped to [eps, 1 - eps].
  double variance(double mu, double eps = 1e-6) const {
    const double m = std::clamp(mu, eps, 1.0 - eps);
    return m * (1.0 - m) / nu;
  }

  std::string name() const {
    switch (kind) {
      case LinkKind::Identity: return "identity";
      case LinkKind::Logit: return "logit";
      case LinkKind::Probit: return "probit";
    }
    return "?";
  }

  static Link parse(const std::string& s) {
    if (s == "identity") return Link(LinkKind::Identity);
    if (s == "logit") return Link(LinkKind::Logit);
    if (s == "probit") return Link(LinkKind::Probit);
    throw ConfigError("unknown link '" + s + "'");
  }
};

}  // namespace winfrac
