#pragma once

// Cellwise SMML codepoints: the KL projection of the normalised cellwise
// distribution onto the model. In a family parameterised one-to-one by its
// natural parameter this is moment matching, grad A(eta*) = S_j / q_j; curved or
// implicitly inverted charts go through Newton on the first-order condition
//
//   Deta(theta)' (S_j - q_j grad A(eta(theta))) = 0.

#include "smml/codebook.hpp"

#include <boost/math/tools/minima.hpp>

#include <optional>

namespace smml {

struct ProjectionResult {
  Vector theta;
  double achieved_kl = 0.0;
  int iterations = 0;
  bool converged = false;
  bool boundary = false;
  double foc_residual = 0.0;
};

struct ProjectionOptions {
  int max_iter = 200;
  /// Start for the generic solver; also forces the generic path on
  /// moment-matchable models (used to cross-check the two solvers).
  std::optional<Vector> start;
};

struct NaturalSolve {
  Vector eta;
  int iterations = 0;
  double residual = 0.0;
};

/// Damped Newton inversion of grad A. Residual ||grad A(eta) - mean|| <= tol.
inline NaturalSolve solve_mean_to_natural(const ExponentialFamily& model, const Vector& mean,
                                          std::optional<Vector> start = std::nullopt, int max_iter = 100,
                                          double tol = 1e-10) {
  Vector eta = start ? *start : model.natural_from_mean(mean);
  Vector g = model.log_partition_grad(eta) - mean;
  double res = g.norm();
  int it = 0;
  int polish = 0;
  while (it < max_iter) {
    if (!std::isfinite(res)) break;
    if (res <= tol && ++polish > 2) break;
    Matrix h = model.log_partition_hess(eta);
    Vector step;
    double damping = 0.0;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Matrix hd = h;
      hd.diagonal().array() += damping;
      Eigen::LDLT<Matrix> ldlt(hd);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
        step = ldlt.solve(g);
        if (step.allFinite()) break;
      }
      step.resize(0);
      damping = damping == 0.0 ? 1e-8 * (1.0 + h.diagonal().cwiseAbs().maxCoeff()) : damping * 100.0;
    }
    if (step.size() == 0) break;
    ++it;
    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector trial = eta - t * step;
      const Vector gt = model.log_partition_grad(trial) - mean;
      const double rt = gt.norm();
      if (std::isfinite(rt) && rt < res) {
        eta = trial;
        g = gt;
        res = rt;
        improved = true;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }
  if (!(res <= tol))
    throw ConvergenceError("mean_to_natural: Newton did not reach the residual tolerance", res);
  return {eta, it, res};
}

inline Vector mean_to_natural(const ExponentialFamily& model, const Vector& mean,
                              std::optional<Vector> start = std::nullopt) {
  return solve_mean_to_natural(model, mean, std::move(start)).eta;
}

/// ||Deta(theta)' (S - q grad A(eta(theta)))||.
inline double foc_residual(const ExponentialFamily& model, double mass, const Vector& stat_sum, const Vector& theta) {
  const Vector eta = model.natural_map(theta);
  return (model.natural_jacobian(theta).transpose() * (stat_sum - mass * model.log_partition_grad(eta))).norm();
}

/// D_KL(pbar_j || p_theta) over the cell's support.
inline double kl_divergence(const CellSummary& cell, const MarginalTable& marginal, const ExponentialFamily& model,
                            const Vector& theta) {
  const Vector eta = model.natural_map(theta);
  double kl = 0.0;
  for (std::size_t m = 0; m < cell.members.size(); ++m) {
    const double w = cell.weights[m];
    if (w > 0.0) kl += w * (std::log(w) - model.log_likelihood_natural(marginal.point(cell.members[m]), eta));
  }
  return kl;
}

namespace detail {

// Objective A(eta(theta)) - mean' eta(theta): the cellwise cross-entropy up to
// terms constant in theta, divided by q.
inline double projection_objective(const ExponentialFamily& model, const Vector& mean, const Vector& theta) {
  const Vector eta = model.natural_map(theta);
  return model.log_partition(eta) - mean.dot(eta);
}

inline ProjectionResult generic_projection(const ExponentialFamily& model, double mass, const Vector& mean,
                                           const Vector& start, int max_iter) {
  ProjectionResult out;
  Vector theta = start;
  if (!model.in_interior(theta)) theta = model.theta_from_mean(mean);
  double f = projection_objective(model, mean, theta);
  auto gradient = [&](const Vector& th) {
    return Vector(model.natural_jacobian(th).transpose() *
                  (model.log_partition_grad(model.natural_map(th)) - mean));
  };
  Vector g = gradient(theta);
  int it = 0;
  for (; it < max_iter; ++it) {
    if (mass * g.norm() <= 1e-13) break;
    const Vector eta = model.natural_map(theta);
    const Matrix jac = model.natural_jacobian(theta);
    const Matrix scoring = jac.transpose() * model.log_partition_hess(eta) * jac;
    Matrix newton = scoring;
    const Vector resid = model.log_partition_grad(eta) - mean;
    const auto hess = model.natural_hessians(theta);
    for (std::size_t k = 0; k < hess.size(); ++k) newton += resid(static_cast<Eigen::Index>(k)) * hess[k];
    Vector step;
    Eigen::LDLT<Matrix> ldlt(newton);
    if (ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all()) {
      step = ldlt.solve(g);
    } else {
      step = scoring.ldlt().solve(g);
    }
    if (!step.allFinite()) break;
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      const Vector trial = theta - t * step;
      if (model.in_interior(trial)) {
        const double ft = projection_objective(model, mean, trial);
        const Vector gt = gradient(trial);
        if (ft < f - 1e-4 * t * g.dot(step) || (ft <= f + 1e-14 * std::abs(f) && gt.norm() < g.norm())) {
          theta = trial;
          f = ft;
          g = gt;
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  out.iterations = it;
  out.theta = theta;
  out.converged = mass * g.norm() <= 1e-9;

  // Golden-section style fallback on bounded one-parameter charts.
  if (!out.converged && model.dim_theta() == 1) {
    if (const auto bounds = model.theta_bounds()) {
      const double span = bounds->second - bounds->first;
      const auto fn = [&](double x) { return projection_objective(model, mean, scalar(x)); };
      const auto [x, fx] = boost::math::tools::brent_find_minima(fn, bounds->first + 1e-12 * span,
                                                                 bounds->second - 1e-12 * span, 52);
      (void)fx;
      const Vector cand = scalar(x);
      if (mass * gradient(cand).norm() < mass * g.norm()) {
        out.theta = cand;
        out.converged = mass * gradient(cand).norm() <= 1e-9;
      }
    }
  }
  return out;
}

}  // namespace detail

/// KL projection from the cell's sufficient summary (q_j, S_j). The achieved KL
/// needs the cell's members and is filled in by kl_projection.
inline ProjectionResult project_summary(const ExponentialFamily& model, double mass, const Vector& stat_sum,
                                        const ProjectionOptions& opts = {}) {
  if (!(mass > 0.0)) throw InvariantError("projection: cell mass must be > 0");
  Vector mean = stat_sum / mass;
  ProjectionResult out;
  out.boundary = model.clamp_mean(mean);
  if (model.moment_matchable() && !opts.start) {
    const NaturalSolve solve = solve_mean_to_natural(model, mean);
    out.theta = *model.theta_from_natural(solve.eta);
    out.iterations = solve.iterations;
    out.converged = true;
  } else {
    const Vector start = opts.start ? *opts.start : model.theta_from_mean(mean);
    const ProjectionResult g = detail::generic_projection(model, mass, mean, start, opts.max_iter);
    out.theta = g.theta;
    out.iterations = g.iterations;
    out.converged = g.converged;
  }
  out.foc_residual = foc_residual(model, mass, mass * mean, out.theta);
  return out;
}

/// argmin_theta D_KL(pbar_j || p_theta).
inline ProjectionResult kl_projection(const CellSummary& cell, const MarginalTable& marginal,
                                      const ExponentialFamily& model, const ProjectionOptions& opts = {}) {
  ProjectionResult out = project_summary(model, cell.mass, cell.stat_sum, opts);
  out.achieved_kl = kl_divergence(cell, marginal, model, out.theta);
  return out;
}

/// Moment matching: grad A(eta(theta*)) = S_j / q_j. Requires a model with an
/// explicit inverse of its natural map.
inline ProjectionResult moment_match(const CellSummary& cell, const MarginalTable& marginal,
                                     const ExponentialFamily& model) {
  if (!model.moment_matchable()) throw UnsupportedError("moment_match: model has no inverse natural map");
  return kl_projection(cell, marginal, model);
}

/// Codepoints for every cell of a partition.
inline std::vector<Vector> project_cells(const Partition& partition, const MarginalTable& marginal,
                                         const ExponentialFamily& model) {
  std::vector<Vector> out;
  for (const auto& cell : summarize(partition, marginal))
    out.push_back(project_summary(model, cell.mass, cell.stat_sum).theta);
  return out;
}

}  // namespace smml
