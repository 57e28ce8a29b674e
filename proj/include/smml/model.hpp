#pragma once

// Exponential-family models over countable data spaces, enumerated in
// sufficient-statistic coordinates:
//
//   log p_n(x|theta) = log h(x) + eta(theta)' T(x) - A(eta(theta))
//
// One data point per attainable value of T; multiplicities live in log h.

#include "smml/core.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <utility>

namespace smml {

struct DataPoint {
  Vector stat;      ///< T(x)
  double log_base;  ///< log h(x)
};

struct DataSpace {
  std::vector<DataPoint> points;
  double truncation_mass = 0.0;

  std::size_t size() const { return points.size(); }
};

struct MleResult {
  Vector theta;
  bool clamped = false;
};

class ExponentialFamily {
 public:
  virtual ~ExponentialFamily() = default;

  virtual std::string family() const = 0;
  virtual nlohmann::json descriptor() const = 0;

  virtual int dim_theta() const = 0;
  virtual int dim_stat() const = 0;
  /// Number of i.i.d. observations making up one data set.
  virtual int sample_size() const = 0;

  virtual Vector natural_map(const Vector& theta) const = 0;
  virtual Matrix natural_jacobian(const Vector& theta) const = 0;
  /// Hessian of each natural coordinate with respect to theta (dim_stat matrices, p x p).
  virtual std::vector<Matrix> natural_hessians(const Vector& theta) const = 0;

  virtual double log_partition(const Vector& eta) const = 0;
  virtual Vector log_partition_grad(const Vector& eta) const = 0;
  virtual Matrix log_partition_hess(const Vector& eta) const = 0;

  virtual bool in_interior(const Vector& theta) const = 0;
  virtual bool canonical() const { return false; }

  /// Clamps a mean-value parameter (units of T, i.e. n-scaled) into the interior of
  /// the mean domain at kClampEpsilon per observation. Returns true if it moved.
  virtual bool clamp_mean(Vector& mean) const = 0;

  /// Closed-form natural parameter for an interior mean; the starting point of
  /// the Newton inversion in mean_to_natural.
  virtual Vector natural_from_mean(const Vector& mean) const = 0;

  /// Inverse of natural_map. Empty when the model is handled through the generic
  /// first-order-condition solver rather than by moment matching.
  virtual std::optional<Vector> theta_from_natural(const Vector& eta) const = 0;

  /// Parameter whose mean value is (approximately) `mean`; starting point of the
  /// generic KL-projection solver.
  virtual Vector theta_from_mean(const Vector& mean) const = 0;

  /// Per-observation mean parameter (p for binomial, probabilities for
  /// multinomial, rate for Poisson). Error norms are measured in these coordinates.
  virtual Vector mean_coordinates(const Vector& theta) const = 0;

  /// Bounds of a one-parameter space, used by the golden-section fallback.
  virtual std::optional<std::pair<double, double>> theta_bounds() const { return std::nullopt; }

  virtual MleResult mle(const DataPoint& x) const = 0;

  /// The enumerated space for finite families; throws for infinite ones, which
  /// are truncated under a prior (see marginal.hpp).
  virtual DataSpace data_space() const = 0;

  // ---- derived quantities

  bool moment_matchable() const {
    return theta_from_natural(Vector::Zero(dim_stat())).has_value();
  }

  double log_likelihood_natural(const DataPoint& x, const Vector& eta) const {
    return x.log_base + eta.dot(x.stat) - log_partition(eta);
  }

  double log_likelihood(const DataPoint& x, const Vector& theta) const {
    return log_likelihood_natural(x, natural_map(theta));
  }

  /// Mean-value parameter grad A(eta(theta)) = E_theta[T].
  Vector mean_value(const Vector& theta) const { return log_partition_grad(natural_map(theta)); }

  /// -(1/n) times the Hessian of the log-likelihood of x at theta.
  Matrix observed_information(const DataPoint& x, const Vector& theta) const {
    const Vector eta = natural_map(theta);
    const Matrix jac = natural_jacobian(theta);
    Matrix info = jac.transpose() * log_partition_hess(eta) * jac;
    const Vector resid = x.stat - log_partition_grad(eta);
    const auto hess = natural_hessians(theta);
    for (std::size_t k = 0; k < hess.size(); ++k) info -= resid(static_cast<Eigen::Index>(k)) * hess[k];
    return info / static_cast<double>(sample_size());
  }
};

/// Per-observation Fisher information J1(theta) = (1/n) Deta' Hess A Deta.
inline Matrix fisher_info(const ExponentialFamily& model, const Vector& theta) {
  if (!model.in_interior(theta)) throw DomainError("fisher_info: parameter outside the interior of Theta");
  const Matrix jac = model.natural_jacobian(theta);
  Matrix j1 = jac.transpose() * model.log_partition_hess(model.natural_map(theta)) * jac;
  j1 /= static_cast<double>(model.sample_size());
  return 0.5 * (j1 + j1.transpose());
}

inline MleResult mle(const ExponentialFamily& model, const DataPoint& x) { return model.mle(x); }

// ===========================================================================
// Binomial: n Bernoulli trials, T = number of successes.

enum class Parameterization { Mean, Logit, Arcsine };

inline std::string to_string(Parameterization p) {
  switch (p) {
    case Parameterization::Mean: return "mean";
    case Parameterization::Logit: return "logit";
    case Parameterization::Arcsine: return "arcsine";
  }
  return "?";
}

inline Parameterization parse_parameterization(const std::string& s) {
  if (s == "mean") return Parameterization::Mean;
  if (s == "logit") return Parameterization::Logit;
  if (s == "arcsine") return Parameterization::Arcsine;
  throw ConfigError("unknown parameterization '" + s + "'");
}

/// theta is p (Mean), logit p (Logit, canonical) or asin(sqrt p) (Arcsine). The
/// arcsine chart has constant Fisher information 4 and is solved through the
/// generic KL-projection path rather than moment matching.
class Binomial final : public ExponentialFamily {
 public:
  explicit Binomial(int n, Parameterization param = Parameterization::Mean) : n_(n), param_(param) {
    if (n < 1) throw ConfigError("binomial: n must be >= 1");
  }

  Parameterization parameterization() const { return param_; }

  std::string family() const override { return "binomial"; }
  nlohmann::json descriptor() const override {
    return {{"family", "binomial"}, {"n", n_}, {"parameterization", to_string(param_)}};
  }
  int dim_theta() const override { return 1; }
  int dim_stat() const override { return 1; }
  int sample_size() const override { return n_; }
  bool canonical() const override { return param_ == Parameterization::Logit; }

  double prob(const Vector& theta) const {
    switch (param_) {
      case Parameterization::Mean: return theta(0);
      case Parameterization::Logit: return sigmoid(theta(0));
      case Parameterization::Arcsine: {
        const double s = std::sin(theta(0));
        return s * s;
      }
    }
    return 0.0;
  }

  Vector theta_from_prob(double p) const {
    switch (param_) {
      case Parameterization::Mean: return scalar(p);
      case Parameterization::Logit: return scalar(logit(p));
      case Parameterization::Arcsine: return scalar(std::asin(std::sqrt(p)));
    }
    return scalar(p);
  }

  Vector natural_map(const Vector& theta) const override {
    switch (param_) {
      case Parameterization::Mean: return scalar(logit(theta(0)));
      case Parameterization::Logit: return theta;
      case Parameterization::Arcsine: return scalar(2.0 * std::log(std::tan(theta(0))));
    }
    return theta;
  }

  Matrix natural_jacobian(const Vector& theta) const override {
    const double t = theta(0);
    switch (param_) {
      case Parameterization::Mean: return Matrix::Constant(1, 1, 1.0 / (t * (1.0 - t)));
      case Parameterization::Logit: return Matrix::Identity(1, 1);
      case Parameterization::Arcsine: return Matrix::Constant(1, 1, 4.0 / std::sin(2.0 * t));
    }
    return Matrix::Identity(1, 1);
  }

  std::vector<Matrix> natural_hessians(const Vector& theta) const override {
    const double t = theta(0);
    double d2 = 0.0;
    switch (param_) {
      case Parameterization::Mean: d2 = -1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t)); break;
      case Parameterization::Logit: d2 = 0.0; break;
      case Parameterization::Arcsine: {
        const double s2 = std::sin(2.0 * t);
        d2 = -8.0 * std::cos(2.0 * t) / (s2 * s2);
        break;
      }
    }
    return {Matrix::Constant(1, 1, d2)};
  }

  double log_partition(const Vector& eta) const override { return n_ * softplus(eta(0)); }
  Vector log_partition_grad(const Vector& eta) const override { return scalar(n_ * sigmoid(eta(0))); }
  Matrix log_partition_hess(const Vector& eta) const override {
    const double p = sigmoid(eta(0));
    return Matrix::Constant(1, 1, n_ * p * (1.0 - p));
  }

  bool in_interior(const Vector& theta) const override {
    if (theta.size() != 1 || !std::isfinite(theta(0))) return false;
    switch (param_) {
      case Parameterization::Mean: return theta(0) > 0.0 && theta(0) < 1.0;
      case Parameterization::Logit: return true;
      case Parameterization::Arcsine: return theta(0) > 0.0 && theta(0) < std::acos(0.0);
    }
    return false;
  }

  bool clamp_mean(Vector& mean) const override {
    const double lo = kClampEpsilon * n_;
    const double hi = (1.0 - kClampEpsilon) * n_;
    const double c = std::clamp(mean(0), lo, hi);
    const bool moved = c != mean(0);
    mean(0) = c;
    return moved;
  }

  Vector natural_from_mean(const Vector& mean) const override { return scalar(logit(mean(0) / n_)); }

  std::optional<Vector> theta_from_natural(const Vector& eta) const override {
    switch (param_) {
      case Parameterization::Mean: return scalar(sigmoid(eta(0)));
      case Parameterization::Logit: return eta;
      case Parameterization::Arcsine: return std::nullopt;
    }
    return std::nullopt;
  }

  Vector theta_from_mean(const Vector& mean) const override { return theta_from_prob(mean(0) / n_); }

  Vector mean_coordinates(const Vector& theta) const override { return scalar(prob(theta)); }

  std::optional<std::pair<double, double>> theta_bounds() const override {
    switch (param_) {
      case Parameterization::Mean: return std::pair{0.0, 1.0};
      case Parameterization::Arcsine: return std::pair{0.0, std::acos(0.0)};
      case Parameterization::Logit: return std::nullopt;
    }
    return std::nullopt;
  }

  MleResult mle(const DataPoint& x) const override {
    Vector mean = x.stat;
    const bool clamped = clamp_mean(mean);
    return {theta_from_prob(mean(0) / n_), clamped};
  }

  DataSpace data_space() const override {
    DataSpace space;
    space.points.reserve(static_cast<std::size_t>(n_) + 1);
    for (int s = 0; s <= n_; ++s) {
      const double log_choose = std::lgamma(n_ + 1.0) - std::lgamma(s + 1.0) - std::lgamma(n_ - s + 1.0);
      space.points.push_back({scalar(s), log_choose});
    }
    return space;
  }

 private:
  int n_;
  Parameterization param_;
};

// ===========================================================================
// Multinomial with K categories and n trials. theta = (p_1, ..., p_{K-1});
// T = (N_1, ..., N_{K-1}); eta_i = log(p_i / p_K).

class Multinomial final : public ExponentialFamily {
 public:
  Multinomial(int categories, int n) : k_(categories), n_(n) {
    if (categories < 2) throw ConfigError("multinomial: need at least 2 categories");
    if (n < 1) throw ConfigError("multinomial: n must be >= 1");
  }

  int categories() const { return k_; }

  std::string family() const override { return "multinomial"; }
  nlohmann::json descriptor() const override {
    return {{"family", "multinomial"}, {"n", n_}, {"categories", k_}};
  }
  int dim_theta() const override { return k_ - 1; }
  int dim_stat() const override { return k_ - 1; }
  int sample_size() const override { return n_; }

  /// Full probability vector (p_1, ..., p_K).
  Vector probabilities(const Vector& theta) const {
    Vector p(k_);
    p.head(k_ - 1) = theta;
    p(k_ - 1) = 1.0 - theta.sum();
    return p;
  }

  Vector natural_map(const Vector& theta) const override {
    const double last = std::log1p(-theta.sum());
    return theta.array().log() - last;
  }

  Matrix natural_jacobian(const Vector& theta) const override {
    const double last = 1.0 - theta.sum();
    Matrix jac = Matrix::Constant(k_ - 1, k_ - 1, 1.0 / last);
    jac.diagonal().array() += theta.array().inverse();
    return jac;
  }

  std::vector<Matrix> natural_hessians(const Vector& theta) const override {
    const double last = 1.0 - theta.sum();
    std::vector<Matrix> out;
    for (int i = 0; i < k_ - 1; ++i) {
      Matrix h = Matrix::Constant(k_ - 1, k_ - 1, 1.0 / (last * last));
      h(i, i) -= 1.0 / (theta(i) * theta(i));
      out.push_back(std::move(h));
    }
    return out;
  }

  double log_partition(const Vector& eta) const override {
    std::vector<double> terms(eta.data(), eta.data() + eta.size());
    terms.push_back(0.0);
    return n_ * log_sum_exp(terms);
  }

  Vector log_partition_grad(const Vector& eta) const override { return n_ * softmax_free(eta); }

  Matrix log_partition_hess(const Vector& eta) const override {
    const Vector p = softmax_free(eta);
    Matrix h = -p * p.transpose();
    h.diagonal() += p;
    return n_ * h;
  }

  bool in_interior(const Vector& theta) const override {
    if (theta.size() != k_ - 1 || !theta.allFinite()) return false;
    return (theta.array() > 0.0).all() && theta.sum() < 1.0;
  }

  bool clamp_mean(Vector& mean) const override {
    Vector p = probabilities(mean / n_);
    bool moved = false;
    double added = 0.0;
    for (int i = 0; i < k_; ++i) {
      if (p(i) < kClampEpsilon) {
        added += kClampEpsilon - p(i);
        p(i) = kClampEpsilon;
        moved = true;
      }
    }
    if (moved) {
      Eigen::Index big = 0;
      p.maxCoeff(&big);
      p(big) -= added;
      mean = n_ * p.head(k_ - 1);
    }
    return moved;
  }

  Vector natural_from_mean(const Vector& mean) const override {
    const Vector p = mean / n_;
    return p.array().log() - std::log1p(-p.sum());
  }

  std::optional<Vector> theta_from_natural(const Vector& eta) const override { return softmax_free(eta); }

  Vector theta_from_mean(const Vector& mean) const override { return mean / n_; }

  Vector mean_coordinates(const Vector& theta) const override { return theta; }

  MleResult mle(const DataPoint& x) const override {
    Vector mean = x.stat;
    const bool clamped = clamp_mean(mean);
    return {mean / n_, clamped};
  }

  DataSpace data_space() const override {
    DataSpace space;
    std::vector<int> counts(static_cast<std::size_t>(k_), 0);
    enumerate(counts, 0, n_, space);
    return space;
  }

 private:
  Vector softmax_free(const Vector& eta) const {
    std::vector<double> terms(eta.data(), eta.data() + eta.size());
    terms.push_back(0.0);
    const double lse = log_sum_exp(terms);
    return (eta.array() - lse).exp();
  }

  // Lexicographic order over (N_1, ..., N_{K-1}); N_K takes the remainder.
  void enumerate(std::vector<int>& counts, int pos, int remaining, DataSpace& space) const {
    if (pos == k_ - 1) {
      counts[static_cast<std::size_t>(pos)] = remaining;
      double log_h = std::lgamma(n_ + 1.0);
      Vector stat(k_ - 1);
      for (int i = 0; i < k_; ++i) {
        log_h -= std::lgamma(counts[static_cast<std::size_t>(i)] + 1.0);
        if (i < k_ - 1) stat(i) = counts[static_cast<std::size_t>(i)];
      }
      space.points.push_back({std::move(stat), log_h});
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[static_cast<std::size_t>(pos)] = c;
      enumerate(counts, pos + 1, remaining - c, space);
    }
  }

  int k_;
  int n_;
};

// ===========================================================================
// Poisson: n i.i.d. counts with rate lambda = theta, T = sum of counts.
// The data space is countably infinite and is truncated under the prior.

class Poisson final : public ExponentialFamily {
 public:
  explicit Poisson(int n) : n_(n) {
    if (n < 1) throw ConfigError("poisson: n must be >= 1");
  }

  std::string family() const override { return "poisson"; }
  nlohmann::json descriptor() const override { return {{"family", "poisson"}, {"n", n_}}; }
  int dim_theta() const override { return 1; }
  int dim_stat() const override { return 1; }
  int sample_size() const override { return n_; }

  Vector natural_map(const Vector& theta) const override { return scalar(std::log(theta(0))); }
  Matrix natural_jacobian(const Vector& theta) const override { return Matrix::Constant(1, 1, 1.0 / theta(0)); }
  std::vector<Matrix> natural_hessians(const Vector& theta) const override {
    return {Matrix::Constant(1, 1, -1.0 / (theta(0) * theta(0)))};
  }

  double log_partition(const Vector& eta) const override { return n_ * std::exp(eta(0)); }
  Vector log_partition_grad(const Vector& eta) const override { return scalar(n_ * std::exp(eta(0))); }
  Matrix log_partition_hess(const Vector& eta) const override {
    return Matrix::Constant(1, 1, n_ * std::exp(eta(0)));
  }

  bool in_interior(const Vector& theta) const override {
    return theta.size() == 1 && std::isfinite(theta(0)) && theta(0) > 0.0;
  }

  bool clamp_mean(Vector& mean) const override {
    const double lo = kClampEpsilon * n_;
    if (mean(0) >= lo) return false;
    mean(0) = lo;
    return true;
  }

  Vector natural_from_mean(const Vector& mean) const override { return scalar(std::log(mean(0) / n_)); }
  std::optional<Vector> theta_from_natural(const Vector& eta) const override { return scalar(std::exp(eta(0))); }
  Vector theta_from_mean(const Vector& mean) const override { return mean / n_; }
  Vector mean_coordinates(const Vector& theta) const override { return theta; }

  MleResult mle(const DataPoint& x) const override {
    Vector mean = x.stat;
    const bool clamped = clamp_mean(mean);
    return {mean / n_, clamped};
  }

  DataSpace data_space() const override {
    throw UnsupportedError("poisson: data space is infinite; enumerate it under a prior");
  }

  /// Data point for total count s.
  DataPoint point(int s) const {
    return {scalar(s), s * std::log(static_cast<double>(n_)) - std::lgamma(s + 1.0)};
  }

 private:
  int n_;
};

// ===========================================================================

struct ModelSpec {
  std::string family = "binomial";
  int n = 10;
  int categories = 3;
  Parameterization parameterization = Parameterization::Mean;
};

/// Builds the model named by `spec`, optionally with a different sample size.
inline std::unique_ptr<ExponentialFamily> make_model(const ModelSpec& spec, int n = 0) {
  const int size = n > 0 ? n : spec.n;
  if (spec.family == "binomial") return std::make_unique<Binomial>(size, spec.parameterization);
  if (spec.family == "multinomial") return std::make_unique<Multinomial>(spec.categories, size);
  if (spec.family == "poisson") return std::make_unique<Poisson>(size);
  throw ConfigError("unknown model family '" + spec.family + "'");
}

}  // namespace smml
