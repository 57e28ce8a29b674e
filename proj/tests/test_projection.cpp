#include "smml/projection.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace smml;

namespace {

const PriorSpec kUniform{PriorFamily::Beta, {1.0, 1.0}};

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t i = lo; i <= hi; ++i) out.push_back(i);
  return out;
}

// Brute-force argmin of the cell KL over a probability grid; returns p.
double grid_argmin(const CellSummary& cell, const MarginalTable& m, const Binomial& model, double lo, double hi,
                   double step) {
  double best_p = lo, best = std::numeric_limits<double>::infinity();
  for (double p = lo; p <= hi + 1e-15; p += step) {
    const Vector theta = model.theta_from_prob(p);
    const double kl = kl_divergence(cell, m, model, theta);
    if (kl < best) {
      best = kl;
      best_p = p;
    }
  }
  return best_p;
}

std::vector<std::size_t> random_cell(std::size_t points, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points; ++i)
    if (rng() % 3 == 0) out.push_back(i);
  if (out.empty()) out.push_back(rng() % points);
  return out;
}

}  // namespace

TEST(KlProjection, FullSpaceUnderUniformMarginal) {
  const Binomial model(10);
  const auto m = marginal_table(model, kUniform);
  const auto r = kl_projection(summarize_cell(m, range(0, 10)), m, model);
  EXPECT_NEAR(r.theta(0), 0.5, 1e-12);
  EXPECT_TRUE(r.converged);
  EXPECT_FALSE(r.boundary);
}

TEST(KlProjection, TwoPointCellAgreesWithGridSearch) {
  const Binomial model(2);
  const auto m = marginal_table(model, kUniform);
  const auto cell = summarize_cell(m, {0, 1});
  const auto r = kl_projection(cell, m, model);
  EXPECT_NEAR(r.theta(0), 0.25, 1e-12);
  EXPECT_NEAR(grid_argmin(cell, m, model, 0.001, 0.999, 1e-5), r.theta(0), 1e-4);
  EXPECT_NEAR(moment_match(cell, m, model).theta(0), r.theta(0), 1e-9);
}

TEST(KlProjection, SingletonCellProjectsToTheMle) {
  const Binomial model(10, Parameterization::Logit);
  const auto m = marginal_table(model, kUniform);
  for (std::size_t s = 1; s < 10; ++s) {
    const auto r = kl_projection(summarize_cell(m, {s}), m, model);
    const Vector mle = model.mle(m.point(s)).theta;
    EXPECT_NEAR(r.theta(0), mle(0), 1e-10);
    // pbar is a point mass, so the divergence is the self-information at the MLE
    EXPECT_NEAR(r.achieved_kl, -model.log_likelihood(m.point(s), mle), 1e-12);
  }
}

TEST(MomentMatch, EqualWeightAverages) {
  const Binomial model(10);
  const auto m = marginal_table(model, kUniform);
  const auto cell = summarize_cell(m, {3, 4, 5});
  EXPECT_NEAR(cell.mean_stat()(0), 4.0, 1e-12);
  EXPECT_NEAR(moment_match(cell, m, model).theta(0), 0.4, 1e-12);

  const Multinomial mult(3, 6);
  const auto mm = marginal_table(mult, {PriorFamily::Dirichlet, {1.0, 1.0, 1.0}});
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < mm.size(); ++i) {
    const Vector& t = mm.point(i).stat;
    if ((t(0) == 3 && t(1) == 2) || (t(0) == 1 && t(1) == 2)) members.push_back(i);
  }
  ASSERT_EQ(members.size(), 2u);
  const auto r = moment_match(summarize_cell(mm, members), mm, mult);
  EXPECT_NEAR(r.theta(0), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.theta(1), 1.0 / 3.0, 1e-12);
}

TEST(MomentMatch, BoundaryMeanIsClampedAndFlagged) {
  const Binomial model(4);
  const auto m = marginal_table(model, kUniform);
  const auto r = moment_match(summarize_cell(m, {4}), m, model);
  EXPECT_TRUE(r.boundary);
  EXPECT_NEAR(r.theta(0), 1.0 - kClampEpsilon, 1e-15);
}

TEST(MeanToNatural, BernoulliValuesAndRoundTrip) {
  const Binomial bern(1, Parameterization::Logit);
  EXPECT_NEAR(mean_to_natural(bern, scalar(0.5))(0), 0.0, 1e-12);
  EXPECT_NEAR(mean_to_natural(bern, scalar(0.75))(0), std::log(3.0), 1e-10);
  EXPECT_NEAR(mean_to_natural(bern, scalar(0.75))(0), 1.098612, 5e-7);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 0.99);
  const Multinomial mult(4, 9);
  const Poisson pois(3);
  for (int i = 0; i < 50; ++i) {
    const Vector mu = scalar(u(rng));
    EXPECT_NEAR(bern.log_partition_grad(mean_to_natural(bern, mu))(0), mu(0), 1e-10);

    Vector w(4);
    for (int c = 0; c < 4; ++c) w(c) = u(rng);
    const Vector mm = 9.0 * w.head(3) / w.sum();
    EXPECT_LE((mult.log_partition_grad(mean_to_natural(mult, mm)) - mm).norm(), 1e-10);

    const Vector pm = scalar(3.0 * 10.0 * u(rng));
    EXPECT_LE(std::abs(pois.log_partition_grad(mean_to_natural(pois, pm))(0) - pm(0)), 1e-10);
  }
}

TEST(KlProjection, OptimalAgainstRandomCompetitors) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.001, 0.999);
  const Binomial bin(12, Parameterization::Arcsine);
  const auto mb = marginal_table(bin, {PriorFamily::Beta, {2.0, 5.0}});
  const Multinomial mult(3, 5);
  const auto mm = marginal_table(mult, {PriorFamily::Dirichlet, {1.0, 2.0, 1.0}});
  for (int trial = 0; trial < 50; ++trial) {
    const auto cb = summarize_cell(mb, random_cell(mb.size(), rng));
    const auto rb = kl_projection(cb, mb, bin);
    const auto cm = summarize_cell(mm, random_cell(mm.size(), rng));
    const auto rm = kl_projection(cm, mm, mult);
    EXPECT_GE(rb.achieved_kl, 0.0);
    EXPECT_GE(rm.achieved_kl, 0.0);
    if (!rb.boundary) {
      EXPECT_LE(rb.foc_residual, 1e-9);
    }
    if (!rm.boundary) {
      EXPECT_LE(rm.foc_residual, 1e-9);
    }
    for (int c = 0; c < 100; ++c) {
      EXPECT_LE(rb.achieved_kl, kl_divergence(cb, mb, bin, bin.theta_from_prob(u(rng))) + 1e-12);
      Vector p(3);
      for (int i = 0; i < 3; ++i) p(i) = u(rng);
      p /= p.sum();
      EXPECT_LE(rm.achieved_kl, kl_divergence(cm, mm, mult, p.head(2)) + 1e-12);
    }
  }
}

TEST(KlProjection, GenericSolverMatchesMomentMatching) {
  std::mt19937_64 rng(5);
  const Binomial logit(15, Parameterization::Logit);
  const auto m = marginal_table(logit, {PriorFamily::Beta, {1.5, 2.5}});
  for (int trial = 0; trial < 30; ++trial) {
    const auto cell = summarize_cell(m, random_cell(m.size(), rng));
    const auto mm = moment_match(cell, m, logit);
    if (mm.boundary) continue;
    ProjectionOptions opts;
    opts.start = scalar(0.0);
    const auto g = kl_projection(cell, m, logit, opts);
    EXPECT_TRUE(g.converged);
    EXPECT_LE(std::abs(g.theta(0) - mm.theta(0)), 1e-8);
  }
}

TEST(KlProjection, CurvedParameterizationAgreesWithGrid) {
  const Binomial arcsine(8, Parameterization::Arcsine);
  const auto m = marginal_table(arcsine, {PriorFamily::Beta, {2.0, 3.0}});
  const auto cell = summarize_cell(m, {1, 2, 6});
  ProjectionOptions opts;
  opts.start = arcsine.theta_from_prob(0.5);
  const auto g = kl_projection(cell, m, arcsine, opts);
  EXPECT_TRUE(g.converged);
  EXPECT_LE(g.foc_residual, 1e-9);
  EXPECT_NEAR(arcsine.prob(g.theta), grid_argmin(cell, m, arcsine, 0.001, 0.999, 1e-5), 1e-4);
  // the mean-value identity holds in every parameterization
  EXPECT_NEAR(arcsine.prob(g.theta) * 8.0, cell.mean_stat()(0), 1e-9);
}

TEST(KlProjection, InvariantUnderScalingTheCellMass) {
  const Binomial model(10, Parameterization::Arcsine);
  const auto m = marginal_table(model, {PriorFamily::Beta, {3.0, 2.0}});
  const auto cell = summarize_cell(m, {2, 5, 7, 8});
  ProjectionOptions opts;
  opts.start = model.theta_from_prob(0.3);
  const auto base = project_summary(model, cell.mass, cell.stat_sum, opts);
  for (double scale : {1e-3, 0.5, 7.0}) {
    const auto scaled = project_summary(model, scale * cell.mass, scale * cell.stat_sum, opts);
    EXPECT_NEAR(scaled.theta(0), base.theta(0), 1e-10);
  }
}

TEST(KlProjection, AffineCaseIsAWeightedAverageOfMles) {
  const Binomial model(9);
  const auto m = marginal_table(model, {PriorFamily::Beta, {2.0, 2.0}});
  const auto cell = summarize_cell(m, {1, 3, 4, 8});
  double avg = 0.0;
  for (std::size_t i = 0; i < cell.members.size(); ++i)
    avg += cell.weights[i] * model.mle(m.point(cell.members[i])).theta(0);
  EXPECT_NEAR(kl_projection(cell, m, model).theta(0), avg, 1e-12);
}

TEST(KlProjection, RejectsZeroMass) {
  const Binomial model(3);
  EXPECT_THROW(project_summary(model, 0.0, scalar(0.0)), InvariantError);
}
