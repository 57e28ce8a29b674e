#pragma once

// Priors, data-space enumeration and the prior-predictive marginal r(x).

#include "smml/model.hpp"

#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <numeric>

namespace smml {

enum class PriorFamily { Beta, Dirichlet, Gamma };

inline std::string to_string(PriorFamily f) {
  switch (f) {
    case PriorFamily::Beta: return "beta";
    case PriorFamily::Dirichlet: return "dirichlet";
    case PriorFamily::Gamma: return "gamma";
  }
  return "?";
}

inline PriorFamily parse_prior_family(const std::string& s) {
  if (s == "beta") return PriorFamily::Beta;
  if (s == "dirichlet") return PriorFamily::Dirichlet;
  if (s == "gamma") return PriorFamily::Gamma;
  throw ConfigError("unknown prior family '" + s + "'");
}

/// Conjugate prior over the per-observation mean coordinates: Beta(a, b) on p,
/// Dirichlet(alpha) on the probability vector, Gamma(shape a, rate b) on lambda.
struct PriorSpec {
  PriorFamily family = PriorFamily::Beta;
  std::vector<double> params{1.0, 1.0};

  nlohmann::json descriptor() const { return {{"family", to_string(family)}, {"params", params}}; }
};

inline void validate_prior(const PriorSpec& prior, const ExponentialFamily& model) {
  for (double a : prior.params)
    if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("prior hyperparameters must be finite and > 0");
  const std::string fam = model.family();
  switch (prior.family) {
    case PriorFamily::Beta:
      if (fam != "binomial") throw ConfigError("beta prior requires the binomial model");
      if (prior.params.size() != 2) throw ConfigError("beta prior takes 2 parameters");
      break;
    case PriorFamily::Dirichlet:
      if (fam != "multinomial") throw ConfigError("dirichlet prior requires the multinomial model");
      if (static_cast<int>(prior.params.size()) != model.dim_stat() + 1)
        throw ConfigError("dirichlet prior needs one parameter per category");
      break;
    case PriorFamily::Gamma:
      if (fam != "poisson") throw ConfigError("gamma prior requires the poisson model");
      if (prior.params.size() != 2) throw ConfigError("gamma prior takes shape and rate");
      break;
  }
}

/// Log prior density at per-observation mean coordinates m.
inline double prior_log_density(const PriorSpec& prior, const Vector& m) {
  const auto& a = prior.params;
  switch (prior.family) {
    case PriorFamily::Beta:
      return (a[0] - 1.0) * std::log(m(0)) + (a[1] - 1.0) * std::log1p(-m(0)) -
             (std::lgamma(a[0]) + std::lgamma(a[1]) - std::lgamma(a[0] + a[1]));
    case PriorFamily::Dirichlet: {
      double total = 0.0;
      double lp = 0.0;
      const double last = 1.0 - m.sum();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double pi = i + 1 < a.size() ? m(static_cast<Eigen::Index>(i)) : last;
        lp += (a[i] - 1.0) * std::log(pi) - std::lgamma(a[i]);
        total += a[i];
      }
      return lp + std::lgamma(total);
    }
    case PriorFamily::Gamma:
      return a[0] * std::log(a[1]) - std::lgamma(a[0]) + (a[0] - 1.0) * std::log(m(0)) - a[1] * m(0);
  }
  return 0.0;
}

/// Prior CDF of a one-dimensional mean coordinate.
inline double prior_cdf(const PriorSpec& prior, double x) {
  namespace bm = boost::math;
  switch (prior.family) {
    case PriorFamily::Beta:
      return x <= 0.0 ? 0.0 : x >= 1.0 ? 1.0 : bm::ibeta(prior.params[0], prior.params[1], x);
    case PriorFamily::Gamma:
      return x <= 0.0 ? 0.0 : bm::gamma_p(prior.params[0], prior.params[1] * x);
    case PriorFamily::Dirichlet:
      break;
  }
  throw UnsupportedError("prior_cdf: one-dimensional priors only");
}

// ---------------------------------------------------------------------------

/// Enumerated data space. Finite families enumerate exhaustively; the Poisson
/// space is cut where the prior-predictive tail drops below `truncation`.
inline DataSpace enumerate_space(const ExponentialFamily& model, const PriorSpec& prior,
                                 double truncation = kTruncationEpsilon) {
  validate_prior(prior, model);
  if (const auto* poisson = dynamic_cast<const Poisson*>(&model)) {
    const double n = poisson->sample_size();
    const double shape = prior.params[0];
    const double rate = prior.params[1];
    const boost::math::negative_binomial_distribution<double> predictive(shape, rate / (rate + n));
    DataSpace space;
    for (int s = 0;; ++s) {
      space.points.push_back(poisson->point(s));
      const double tail = boost::math::cdf(boost::math::complement(predictive, static_cast<double>(s)));
      if (tail < truncation) {
        space.truncation_mass = tail;
        break;
      }
      if (s > 50'000'000) throw NumericalError("poisson truncation did not terminate");
    }
    return space;
  }
  return model.data_space();
}

struct MarginalTable {
  DataSpace space;
  std::vector<double> log_r;
  std::vector<double> r;
  double total_mass = 0.0;

  std::size_t size() const { return r.size(); }
  const DataPoint& point(std::size_t i) const { return space.points[i]; }
};

enum class MarginalMethod { ClosedForm, Quadrature };

namespace detail {

inline double conjugate_log_marginal(const ExponentialFamily& model, const PriorSpec& prior, const DataPoint& x) {
  const double n = model.sample_size();
  const auto& a = prior.params;
  switch (prior.family) {
    case PriorFamily::Beta: {
      const double s = x.stat(0);
      const auto lbeta = [](double u, double v) { return std::lgamma(u) + std::lgamma(v) - std::lgamma(u + v); };
      return x.log_base + lbeta(s + a[0], n - s + a[1]) - lbeta(a[0], a[1]);
    }
    case PriorFamily::Dirichlet: {
      double total = 0.0;
      double lr = x.log_base;
      const double last = n - x.stat.sum();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double c = i + 1 < a.size() ? x.stat(static_cast<Eigen::Index>(i)) : last;
        lr += std::lgamma(c + a[i]) - std::lgamma(a[i]);
        total += a[i];
      }
      return lr + std::lgamma(total) - std::lgamma(n + total);
    }
    case PriorFamily::Gamma: {
      // log h already carries s log n - log s!
      const double s = x.stat(0);
      return x.log_base - s * std::log(n) + std::lgamma(a[0] + s) - std::lgamma(a[0]) +
             a[0] * std::log(a[1] / (a[1] + n)) + s * std::log(n / (a[1] + n));
    }
  }
  return 0.0;
}

// Checks a quadrature value and its error estimate.
inline double checked(double value, double error, double rel_tol, std::size_t index) {
  if (!std::isfinite(value) || !(value > 0.0) || error > 1e3 * rel_tol * value)
    throw QuadratureError("marginal quadrature failed to converge at data point " + std::to_string(index), index);
  return value;
}

// tanh-sinh on [0, 1] with f(x, 1 - x) evaluated from the endpoint distance the
// rule supplies, so x^a (1-x)^b singularities stay accurate at both ends.
template <class F>
double unit_interval(F f, double rel_tol, double* error) {
  static boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate([&](double x, double xc) { return f(x, x > 0.5 ? xc : 1.0 - x); }, 0.0, 1.0, rel_tol, error);
}

inline double finite_or_zero(double v) { return std::isfinite(v) ? v : 0.0; }

inline double quadrature_marginal(const ExponentialFamily& model, const PriorSpec& prior, const DataPoint& x,
                                  std::size_t index, double rel_tol) {
  const double n = model.sample_size();
  const auto& a = prior.params;
  double error = 0.0;
  switch (prior.family) {
    case PriorFamily::Beta: {
      const double s = x.stat(0);
      const double log_norm = std::lgamma(a[0] + a[1]) - std::lgamma(a[0]) - std::lgamma(a[1]);
      const auto f = [&](double p, double q) {
        return finite_or_zero(
            std::exp(x.log_base + log_norm + (s + a[0] - 1.0) * std::log(p) + (n - s + a[1] - 1.0) * std::log(q)));
      };
      const double v = unit_interval(f, rel_tol, &error);
      return checked(v, error, rel_tol, index);
    }
    case PriorFamily::Gamma: {
      const auto f = [&](double lam) {
        const Vector m = scalar(lam);
        return finite_or_zero(
            std::exp(model.log_likelihood_natural(x, model.natural_from_mean(n * m)) + prior_log_density(prior, m)));
      };
      const double v = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(
          f, 0.0, std::numeric_limits<double>::infinity(), 20, rel_tol, &error);
      return checked(v, error, rel_tol, index);
    }
    case PriorFamily::Dirichlet: {
      if (model.dim_theta() != 2) throw UnsupportedError("quadrature marginal: multinomial with K = 3 only");
      // stick-breaking p = (u, (1-u) v, (1-u)(1-v)) keeps every log p_i accurate
      // near the edges of the simplex
      const double counts[3] = {x.stat(0), x.stat(1), n - x.stat(0) - x.stat(1)};
      const double log_norm =
          std::lgamma(a[0] + a[1] + a[2]) - std::lgamma(a[0]) - std::lgamma(a[1]) - std::lgamma(a[2]);
      const auto outer = [&](double u, double uc) {
        const double lu = std::log(u);
        const double lw = std::log(uc);
        double inner_error = 0.0;
        return unit_interval(
            [&](double v, double vc) {
              const double lp[3] = {lu, lw + std::log(v), lw + std::log(vc)};
              double e = x.log_base + log_norm + lw;
              for (std::size_t i = 0; i < 3; ++i) e += (counts[i] + a[i] - 1.0) * lp[i];
              return finite_or_zero(std::exp(e));
            },
            rel_tol, &inner_error);
      };
      // the inner rule shares the static integrator, so integrate the outer with Gauss-Kronrod
      const double v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
          [&](double u) { return outer(u, 1.0 - u); }, 0.0, 1.0, 15, rel_tol, &error);
      return checked(v, error, rel_tol, index);
    }
  }
  return 0.0;
}

}  // namespace detail

/// Prior-predictive marginal over an enumerated space. Conjugate closed forms by
/// default; numerical quadrature over the mean coordinates on request.
/// Truncated spaces are renormalised.
inline MarginalTable marginal_table(const ExponentialFamily& model, const PriorSpec& prior, DataSpace space,
                                    MarginalMethod method = MarginalMethod::ClosedForm, double rel_tol = 1e-10) {
  validate_prior(prior, model);
  MarginalTable table;
  table.log_r.reserve(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const DataPoint& x = space.points[i];
    double lr = 0.0;
    if (method == MarginalMethod::ClosedForm) {
      lr = detail::conjugate_log_marginal(model, prior, x);
    } else {
      lr = std::log(detail::quadrature_marginal(model, prior, x, i, rel_tol));
    }
    if (!std::isfinite(lr)) throw NumericalError("marginal: non-finite log r at point " + std::to_string(i));
    table.log_r.push_back(lr);
  }
  const double log_total = log_sum_exp(table.log_r);
  if (space.truncation_mass > 0.0)
    for (double& lr : table.log_r) lr -= log_total;
  table.r.reserve(table.log_r.size());
  for (double lr : table.log_r) {
    const double r = std::exp(lr);
    if (!(r > 0.0)) throw InvariantError("marginal: r(x) underflowed to zero; narrow the data space");
    table.r.push_back(r);
  }
  table.total_mass = std::accumulate(table.r.begin(), table.r.end(), 0.0);
  if (std::abs(table.total_mass - 1.0) > 1e-9)
    throw InvariantError("marginal: total mass " + std::to_string(table.total_mass) + " differs from 1");
  table.space = std::move(space);
  return table;
}

inline MarginalTable marginal_table(const ExponentialFamily& model, const PriorSpec& prior,
                                    MarginalMethod method = MarginalMethod::ClosedForm,
                                    double truncation = kTruncationEpsilon) {
  return marginal_table(model, prior, enumerate_space(model, prior, truncation), method);
}

}  // namespace smml
