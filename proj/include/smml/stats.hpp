#pragma once

// Seeding, sampling and the small statistics used by the experiment harness.

#include "smml/core.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cstdint>
#include <random>

namespace smml {

/// SplitMix64 finaliser; the counter-based seed derivation below is built on it.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for task (a, b) under a master seed; independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ (b + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

/// Uniform on [0, 1) from the top 53 bits; identical across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, bound) by rejection.
inline std::size_t uniform_index(Rng& rng, std::size_t bound) {
  const std::uint64_t b = bound;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % b;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return static_cast<std::size_t>(x % b);
}

/// Inverse-CDF sampler over a finite probability table.
class DiscreteSampler {
 public:
  explicit DiscreteSampler(std::span<const double> probs) {
    double acc = 0.0;
    cdf_.reserve(probs.size());
    for (double p : probs) cdf_.push_back(acc += p);
    for (double& c : cdf_) c /= acc;
  }
  std::size_t operator()(Rng& rng) const {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

/// Linear-interpolated sample quantile (type 7).
inline double quantile(std::vector<double> values, double prob) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (values.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - lo) * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline double mean(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? std::numeric_limits<double>::quiet_NaN() : s / values.size();
}

struct LineFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double slope_se = std::numeric_limits<double>::quiet_NaN();
  bool fitted = false;
};

/// Ordinary least squares of y on x. Needs at least 3 points.
inline LineFit ols(std::span<const double> x, std::span<const double> y) {
  LineFit fit;
  const std::size_t m = x.size();
  if (m < 3 || y.size() != m) return fit;
  const double mx = mean(x);
  const double my = mean(y);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = y[i] - fit.intercept - fit.slope * x[i];
    rss += e * e;
  }
  fit.slope_se = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
  fit.fitted = std::isfinite(fit.slope);
  return fit;
}

/// Log-log fit of y against n.
inline LineFit loglog_fit(std::span<const int> ns, std::span<const double> y) {
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (!(y[i] > 0.0)) continue;
    lx.push_back(std::log(static_cast<double>(ns[i])));
    ly.push_back(std::log(y[i]));
  }
  return ols(lx, ly);
}

enum class TrendClaim {
  WeaklyIncreasing,  ///< no significant decrease
  NoUpwardTrend,     ///< no significant increase
  Decreasing,        ///< significant decrease
};

struct TrendTest {
  double slope = 0.0;  ///< point estimate (statistic against log n)
  double lower = 0.0;  ///< one-sided 95% lower bound
  double upper = 0.0;  ///< one-sided 95% upper bound
  bool pass = false;
};

inline bool trend_pass(TrendClaim claim, double lower, double upper) {
  switch (claim) {
    case TrendClaim::WeaklyIncreasing: return upper >= 0.0;
    case TrendClaim::NoUpwardTrend: return lower <= 0.0;
    case TrendClaim::Decreasing: return upper < 0.0;
  }
  return false;
}

/// One-sided bootstrap trend test. `samples[g]` holds the replicate-level values
/// at grid point g; `stat` reduces a resampled group to the statistic whose slope
/// against log n is tested.
template <class Stat>
TrendTest bootstrap_trend(std::span<const int> ns, const std::vector<std::vector<double>>& samples, Stat stat,
                          TrendClaim claim, std::size_t resamples, std::uint64_t seed) {
  std::vector<double> lx;
  for (int n : ns) lx.push_back(std::log(static_cast<double>(n)));
  std::vector<double> point;
  for (const auto& s : samples) point.push_back(stat(s));
  TrendTest out;
  out.slope = ols(lx, point).slope;
  std::vector<double> slopes;
  slopes.reserve(resamples);
  Rng rng(seed);
  std::vector<double> resampled;
  std::vector<double> stats(samples.size());
  for (std::size_t b = 0; b < resamples; ++b) {
    for (std::size_t g = 0; g < samples.size(); ++g) {
      const auto& s = samples[g];
      resampled.resize(s.size());
      for (auto& v : resampled) v = s[uniform_index(rng, s.size())];
      stats[g] = stat(resampled);
    }
    slopes.push_back(ols(lx, stats).slope);
  }
  out.lower = quantile(slopes, 0.05);
  out.upper = quantile(slopes, 0.95);
  out.pass = trend_pass(claim, out.lower, out.upper);
  return out;
}

/// One-sided trend test for an exactly computed series (no sampling noise):
/// t-based bounds from the regression residuals of the statistic on log n.
inline TrendTest deterministic_trend(std::span<const int> ns, std::span<const double> values, TrendClaim claim,
                                     bool log_values = true) {
  std::vector<double> lx;
  std::vector<double> ly;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    lx.push_back(std::log(static_cast<double>(ns[i])));
    ly.push_back(log_values ? std::log(values[i]) : values[i]);
  }
  const LineFit fit = ols(lx, ly);
  TrendTest out;
  out.slope = fit.slope;
  // one-sided 95% t quantile on the residual degrees of freedom
  const double dof = lx.size() >= 3 ? static_cast<double>(lx.size() - 2) : 1.0;
  const double t = boost::math::quantile(boost::math::students_t(dof), 0.95);
  out.lower = fit.slope - t * fit.slope_se;
  out.upper = fit.slope + t * fit.slope_se;
  out.pass = fit.fitted && trend_pass(claim, out.lower, out.upper);
  return out;
}

}  // namespace smml
