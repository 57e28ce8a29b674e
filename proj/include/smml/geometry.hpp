#pragma once

// Local Fisher-Rao geometry: per-observation distances, weighted Fisher-Voronoi
// cells with offsets omega_j = -(2/n) log q_j, and Jeffreys-density meshes.

#include "smml/codebook.hpp"

#include <functional>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

namespace smml {

class FisherMetric {
 public:
  explicit FisherMetric(const ExponentialFamily& model) : model_(&model) {}

  Matrix operator()(const Vector& theta) const { return fisher_info(*model_, theta); }
  const ExponentialFamily& model() const { return *model_; }

 private:
  const ExponentialFamily* model_;
};

/// Squared per-observation Fisher-Rao distance, quadratic form at the midpoint.
inline double fr_distance_sq(const FisherMetric& metric, const Vector& a, const Vector& b) {
  if (!metric.model().in_interior(a) || !metric.model().in_interior(b))
    throw DomainError("fr_distance_sq: points must be interior");
  const Vector d = a - b;
  const Vector mid = 0.5 * (a + b);
  return d.dot(metric(mid) * d);
}

/// Exact squared Bernoulli geodesic distance (2 |asin sqrt p1 - asin sqrt p2|)^2.
inline double bernoulli_geodesic_sq(double p1, double p2) {
  if (!(p1 > 0.0 && p1 < 1.0 && p2 > 0.0 && p2 < 1.0)) throw DomainError("bernoulli_geodesic_sq: p outside (0,1)");
  const double d = 2.0 * (std::asin(std::sqrt(p1)) - std::asin(std::sqrt(p2)));
  return d * d;
}

// ---------------------------------------------------------------------------

struct WeightedVoronoi {
  std::vector<Vector> sites;
  std::vector<double> weights;  ///< omega_j
  int n = 1;

  static WeightedVoronoi from_codebook(const Codebook& codebook, int n) {
    WeightedVoronoi v;
    v.sites = codebook.codepoints;
    v.n = n;
    for (double q : codebook.assertion_probs) {
      if (!(q > 0.0)) throw InvariantError("voronoi: q_j must be > 0");
      v.weights.push_back(-2.0 / n * std::log(q));
    }
    return v;
  }
};

/// argmin_j d_F^2(theta, site_j) + omega_j; exact ties to the smallest index.
inline std::size_t voronoi_assign(const WeightedVoronoi& vor, const FisherMetric& metric, const Vector& theta) {
  std::size_t best = 0;
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < vor.sites.size(); ++j) {
    const double v = fr_distance_sq(metric, theta, vor.sites[j]) + vor.weights[j];
    if (v < lo) {
      lo = v;
      best = j;
    }
  }
  return best;
}

/// (n/2)(d_F^2(theta, site_j) - d_F^2(theta, site_l)) - log(q_j / q_l); zero on
/// the pairwise boundary.
inline double voronoi_offset(const WeightedVoronoi& vor, const FisherMetric& metric, std::size_t j, std::size_t l,
                             const Vector& theta) {
  const double half_n = 0.5 * vor.n;
  const double log_ratio = -half_n * (vor.weights[j] - vor.weights[l]);
  return half_n * (fr_distance_sq(metric, theta, vor.sites[j]) - fr_distance_sq(metric, theta, vor.sites[l])) -
         log_ratio;
}

/// Point on the segment [a, b] where the j/l boundary equation holds (bisection).
inline Vector voronoi_boundary(const WeightedVoronoi& vor, const FisherMetric& metric, std::size_t j, std::size_t l,
                               const Vector& a, const Vector& b) {
  const auto f = [&](double t) { return voronoi_offset(vor, metric, j, l, Vector(a + t * (b - a))); };
  if (f(0.0) * f(1.0) > 0.0) throw NumericalError("voronoi_boundary: no sign change on the segment");
  const auto [lo, hi] = boost::math::tools::bisect(f, 0.0, 1.0, boost::math::tools::eps_tolerance<double>(52));
  return a + 0.5 * (lo + hi) * (b - a);
}

// ---------------------------------------------------------------------------

struct Box {
  Vector lo;
  Vector hi;

  int dim() const { return static_cast<int>(lo.size()); }
  Vector center() const { return 0.5 * (lo + hi); }
};

struct MeshPlan {
  Box region;
  int n = 1;
  double mesh_constant = 1.0;
  double target_mesh = 0.0;  ///< delta_n = c n^{-1/2}
  std::vector<Vector> codepoints;
  std::vector<Box> cells;
  std::vector<double> diameters;  ///< realized Fisher-Rao diameter per cell
  double sup_diameter = 0.0;
  double jeffreys_volume = 0.0;  ///< integral of |J1|^{1/2} over the region
  double predicted_count = 0.0;  ///< jeffreys_volume / delta_n^p
  bool shrunk = false;
  std::string warning;

  std::size_t k() const { return codepoints.size(); }
};

namespace detail {

template <class F>
double gk(F f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 21>::integrate(f, a, b, 15, 1e-12);
}

// Fisher-Rao arc length along coordinate `axis` from a to b, other coordinates at `base`.
inline double axis_arc_length(const FisherMetric& metric, const Vector& base, int axis, double a, double b) {
  if (b <= a) return 0.0;
  return gk(
      [&](double t) {
        Vector th = base;
        th(axis) = t;
        return std::sqrt(metric(th)(axis, axis));
      },
      a, b);
}

// Coordinate x in (a, hi] with arc length `target` from a along the axis.
inline double axis_advance(const FisherMetric& metric, const Vector& base, int axis, double a, double hi,
                           double target) {
  const auto f = [&](double x) { return axis_arc_length(metric, base, axis, a, x) - target; };
  if (f(hi) <= 0.0) return hi;
  std::uintmax_t iters = 200;
  const auto [lo, up] =
      boost::math::tools::toms748_solve(f, a, hi, -target, f(hi), boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (lo + up);
}

inline Box shrink_into_interior(const ExponentialFamily& model, Box region, bool& shrunk) {
  const int d = region.dim();
  for (int attempt = 0; attempt < 64; ++attempt) {
    bool ok = true;
    for (int corner = 0; corner < (1 << d); ++corner) {
      Vector c(d);
      for (int i = 0; i < d; ++i) c(i) = (corner >> i) & 1 ? region.hi(i) : region.lo(i);
      if (!model.in_interior(c)) ok = false;
    }
    if (ok) return region;
    shrunk = true;
    if (attempt < 8) {
      const double margin = kClampEpsilon * (1 << attempt);
      region.lo.array() += margin;
      region.hi.array() -= margin;
    } else {
      // constrained charts (the simplex): pull the upper corner towards the lower one
      region.hi = region.lo + 0.9 * (region.hi - region.lo);
    }
    if ((region.hi.array() <= region.lo.array()).any()) break;
  }
  throw DomainError("jeffreys_mesh: region cannot be moved inside Theta");
}

// Realized diameter of a box cell: the longer midpoint-rule diagonal.
inline double box_diameter(const FisherMetric& metric, const Box& cell) {
  if (cell.dim() == 1) return axis_arc_length(metric, cell.lo, 0, cell.lo(0), cell.hi(0));
  double best = 0.0;
  const int d = cell.dim();
  for (int corner = 0; corner < (1 << (d - 1)); ++corner) {
    Vector a = cell.lo;
    Vector b = cell.hi;
    for (int i = 0; i < d - 1; ++i)
      if ((corner >> i) & 1) std::swap(a(i), b(i));
    if (metric.model().in_interior(a) && metric.model().in_interior(b))
      best = std::max(best, std::sqrt(fr_distance_sq(metric, a, b)));
  }
  return best;
}

inline double jeffreys_volume(const FisherMetric& metric, const Box& region) {
  const auto density = [&](const Vector& th) {
    return metric.model().in_interior(th) ? std::sqrt(std::max(0.0, metric(th).determinant())) : 0.0;
  };
  if (region.dim() == 1) return gk([&](double t) { return density(scalar(t)); }, region.lo(0), region.hi(0));
  if (region.dim() == 2)
    return gk(
        [&](double x) {
          return gk(
              [&](double y) {
                Vector th(2);
                th << x, y;
                return density(th);
              },
              region.lo(1), region.hi(1));
        },
        region.lo(0), region.hi(0));
  throw UnsupportedError("jeffreys_mesh: dimension > 2");
}

// Equal arc-length breakpoints along one axis: `cells` intervals.
inline std::vector<double> axis_breaks(const FisherMetric& metric, const Vector& base, int axis, double a, double b,
                                       std::size_t cells) {
  const double total = axis_arc_length(metric, base, axis, a, b);
  const double gap = total / static_cast<double>(cells);
  std::vector<double> breaks{a};
  for (std::size_t i = 1; i < cells; ++i) breaks.push_back(axis_advance(metric, base, axis, breaks.back(), b, gap));
  breaks.push_back(b);
  return breaks;
}

inline double axis_midpoint(const FisherMetric& metric, const Vector& base, int axis, double a, double b) {
  return axis_advance(metric, base, axis, a, b, 0.5 * axis_arc_length(metric, base, axis, a, b));
}

}  // namespace detail

/// Codepoints equispaced in Fisher-Rao arc length at gap c n^{-1/2}: arc-length
/// equispacing in 1-D, a per-axis arc-length product grid in 2-D.
inline MeshPlan jeffreys_mesh(const FisherMetric& metric, Box region, int n, double c) {
  if (!(c > 0.0)) throw ConfigError("jeffreys_mesh: mesh constant must be > 0");
  if (region.dim() != metric.model().dim_theta()) throw ConfigError("jeffreys_mesh: region dimension mismatch");
  MeshPlan plan;
  plan.n = n;
  plan.mesh_constant = c;
  plan.target_mesh = c / std::sqrt(static_cast<double>(n));
  region = detail::shrink_into_interior(metric.model(), std::move(region), plan.shrunk);
  if (plan.shrunk) plan.warning = "region touched the boundary of Theta and was shrunk";
  plan.region = region;
  const int d = region.dim();
  plan.jeffreys_volume = detail::jeffreys_volume(metric, region);
  plan.predicted_count = plan.jeffreys_volume / std::pow(plan.target_mesh, d);

  const Vector base = region.center();
  double gap = plan.target_mesh;
  if (d == 2) {
    // sheared metrics make square cells longer on one diagonal; size the grid so
    // a cell at the centre of the region meets the diameter bound
    Box probe{base, base};
    for (int axis = 0; axis < 2; ++axis)
      probe.hi(axis) = detail::axis_advance(metric, base, axis, base(axis), region.hi(axis), gap);
    const double diam = detail::box_diameter(metric, probe);
    if (diam > 1.5 * plan.target_mesh) gap *= 0.98 * 1.5 * plan.target_mesh / diam;
  }
  for (int attempt = 0; attempt < 20; ++attempt) {
    std::vector<std::vector<double>> breaks(static_cast<std::size_t>(d));
    std::vector<std::vector<double>> centers(static_cast<std::size_t>(d));
    for (int axis = 0; axis < d; ++axis) {
      const double len = detail::axis_arc_length(metric, base, axis, region.lo(axis), region.hi(axis));
      const auto cells = static_cast<std::size_t>(std::max(1.0, std::ceil(len / gap - 1e-9)));
      auto& br = breaks[static_cast<std::size_t>(axis)];
      br = detail::axis_breaks(metric, base, axis, region.lo(axis), region.hi(axis), cells);
      for (std::size_t i = 0; i + 1 < br.size(); ++i)
        centers[static_cast<std::size_t>(axis)].push_back(detail::axis_midpoint(metric, base, axis, br[i], br[i + 1]));
    }
    plan.codepoints.clear();
    plan.cells.clear();
    plan.diameters.clear();
    if (d == 1) {
      for (std::size_t i = 0; i < centers[0].size(); ++i) {
        plan.codepoints.push_back(scalar(centers[0][i]));
        plan.cells.push_back({scalar(breaks[0][i]), scalar(breaks[0][i + 1])});
      }
    } else {
      // product grid; a cell over the diameter bound is halved across its
      // longer side, recursively
      const double bound = 1.5 * plan.target_mesh;
      std::function<void(const Box&, int)> place = [&](const Box& cell, int depth) {
        const Vector mid = cell.center();
        if (depth < 12 && detail::box_diameter(metric, cell) > bound) {
          const double len0 = detail::axis_arc_length(metric, mid, 0, cell.lo(0), cell.hi(0));
          const double len1 = detail::axis_arc_length(metric, mid, 1, cell.lo(1), cell.hi(1));
          const int axis = len0 >= len1 ? 0 : 1;
          const double cut = detail::axis_midpoint(metric, mid, axis, cell.lo(axis), cell.hi(axis));
          Box left = cell, right = cell;
          left.hi(axis) = cut;
          right.lo(axis) = cut;
          place(left, depth + 1);
          place(right, depth + 1);
          return;
        }
        Vector th(2);
        for (int axis = 0; axis < 2; ++axis)
          th(axis) = detail::axis_midpoint(metric, mid, axis, cell.lo(axis), cell.hi(axis));
        if (!metric.model().in_interior(th)) return;
        plan.codepoints.push_back(th);
        plan.cells.push_back(cell);
      };
      for (std::size_t i = 0; i + 1 < breaks[0].size(); ++i)
        for (std::size_t j = 0; j + 1 < breaks[1].size(); ++j) {
          Vector lo(2), hi(2);
          lo << breaks[0][i], breaks[1][j];
          hi << breaks[0][i + 1], breaks[1][j + 1];
          place({lo, hi}, 0);
        }
    }
    plan.sup_diameter = 0.0;
    for (const auto& cell : plan.cells) {
      plan.diameters.push_back(detail::box_diameter(metric, cell));
      plan.sup_diameter = std::max(plan.sup_diameter, plan.diameters.back());
    }
    if (plan.sup_diameter <= 1.5 * plan.target_mesh) break;
    gap *= 0.95 * 1.5 * plan.target_mesh / plan.sup_diameter;
  }
  if (plan.codepoints.empty()) throw NumericalError("jeffreys_mesh: no codepoint inside the parameter space");
  return plan;
}

/// `count` points equispaced in arc length over a 1-D region (cell midpoints),
/// or a per-axis product grid with ceil(count^{1/d}) points per axis.
inline std::vector<Vector> jeffreys_points(const FisherMetric& metric, Box region, std::size_t count) {
  bool shrunk = false;
  region = detail::shrink_into_interior(metric.model(), std::move(region), shrunk);
  const int d = region.dim();
  const Vector base = region.center();
  const auto per_axis =
      d == 1 ? count : static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(count), 1.0 / d) - 1e-9));
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(d));
  for (int axis = 0; axis < d; ++axis) {
    const auto br = detail::axis_breaks(metric, base, axis, region.lo(axis), region.hi(axis), per_axis);
    for (std::size_t i = 0; i + 1 < br.size(); ++i)
      centers[static_cast<std::size_t>(axis)].push_back(detail::axis_midpoint(metric, base, axis, br[i], br[i + 1]));
  }
  std::vector<Vector> out;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  while (out.size() < count) {
    Vector th(d);
    for (int a = 0; a < d; ++a) th(a) = centers[static_cast<std::size_t>(a)][idx[static_cast<std::size_t>(a)]];
    if (metric.model().in_interior(th)) out.push_back(th);
    int a = d - 1;
    while (a >= 0 && ++idx[static_cast<std::size_t>(a)] == per_axis) idx[static_cast<std::size_t>(a--)] = 0;
    if (a < 0) break;
  }
  return out;
}

/// Prior mass of each 1-D mesh cell, with the two end cells extended to the
/// edge of Theta so the masses sum to one.
inline std::vector<double> mesh_prior_masses(const MeshPlan& plan, const ExponentialFamily& model,
                                             const PriorSpec& prior) {
  if (plan.region.dim() != 1) throw UnsupportedError("mesh_prior_masses: one-parameter models only");
  std::vector<double> edges;
  for (const auto& cell : plan.cells) edges.push_back(model.mean_coordinates(cell.lo)(0));
  edges.push_back(model.mean_coordinates(plan.cells.back().hi)(0));
  std::vector<double> cdf;
  for (double e : edges) cdf.push_back(prior_cdf(prior, e));
  if (edges.back() > edges.front()) {
    cdf.front() = 0.0;
    cdf.back() = 1.0;
  } else {
    cdf.front() = 1.0;
    cdf.back() = 0.0;
  }
  std::vector<double> masses;
  for (std::size_t i = 0; i + 1 < cdf.size(); ++i) masses.push_back(std::abs(cdf[i + 1] - cdf[i]));
  double total = 0.0;
  for (double m : masses) total += m;
  for (double& m : masses) m /= total;
  return masses;
}

}  // namespace smml
