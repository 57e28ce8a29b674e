#pragma once

// Seeded Monte Carlo checks of the large-n behaviour of SMML codebooks: agreement
// of the exact partition with the weighted Fisher-Voronoi cells of the MLE,
// error rates, the weighted-MLE-average residual and the observed-information
// remainder. Each grid point builds its own codebook and is evaluated from its
// own derived seed, so rows do not depend on evaluation order.

#include "smml/partition_opt.hpp"

namespace smml {

enum class CodebookSource { Dp, Lloyd, JeffreysMesh };

inline std::string to_string(CodebookSource s) {
  switch (s) {
    case CodebookSource::Dp: return "dp";
    case CodebookSource::Lloyd: return "lloyd";
    case CodebookSource::JeffreysMesh: return "jeffreys_mesh";
  }
  return "?";
}

inline CodebookSource parse_codebook_source(const std::string& s) {
  if (s == "dp") return CodebookSource::Dp;
  if (s == "lloyd") return CodebookSource::Lloyd;
  if (s == "jeffreys_mesh") return CodebookSource::JeffreysMesh;
  throw ConfigError("unknown codebook source '" + s + "'");
}

struct ExperimentConfig {
  ModelSpec model;
  PriorSpec prior;
  /// True parameter in per-observation mean coordinates (p, probabilities without
  /// the last, or the Poisson rate).
  std::vector<double> theta0{0.3};
  std::vector<int> n_grid{50, 100, 200, 400, 800, 1600};
  std::size_t replicates = 2000;
  std::uint64_t seed = 0;
  CodebookSource source = CodebookSource::JeffreysMesh;
  double mesh_constant = 1.0;
  /// Mesh region in mean coordinates, applied to every axis.
  double region_lo = 0.1;
  double region_hi = 0.9;
  bool exclude_clamped = true;
  std::size_t bootstrap = 500;
  /// dp / lloyd sources: largest k tried (0 picks twice the mesh count).
  std::size_t k_max = 0;
  std::size_t restarts = 20;

  void validate() const {
    if (n_grid.empty()) throw ConfigError("experiment: empty n grid");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      if (n_grid[i] < 1) throw ConfigError("experiment: n must be >= 1");
      if (i > 0 && n_grid[i] <= n_grid[i - 1]) throw ConfigError("experiment: n grid must be strictly increasing");
    }
    if (replicates < 1) throw ConfigError("experiment: replicates must be >= 1");
    if (!(mesh_constant > 0.0)) throw ConfigError("experiment: mesh constant must be > 0");
    if (!(region_lo < region_hi)) throw ConfigError("experiment: empty region");
    const auto probe = make_model(model, n_grid.front());
    if (static_cast<int>(theta0.size()) != probe->dim_theta())
      throw ConfigError("experiment: theta0 has the wrong dimension");
    if (!probe->in_interior(probe->theta_from_mean(from_std(theta0) * n_grid.front())))
      throw ConfigError("experiment: theta0 must be interior");
    validate_prior(prior, *probe);
  }
};

/// One grid point: the codebook used for assignment, the induced partition and
/// the KL projection of each of its cells.
struct Stage {
  int n = 0;
  std::unique_ptr<ExponentialFamily> model;
  MarginalTable marginal;
  Codebook codebook;
  Box region;
  Partition partition;
  std::vector<CellSummary> cells;
  std::vector<Vector> projected;
  std::string warning;
};

namespace detail {

inline Box mean_region(const ExponentialFamily& model, double lo, double hi) {
  const int d = model.dim_theta();
  const double n = model.sample_size();
  Box box{Vector(d), Vector(d)};
  for (int a = 0; a < d; ++a) {
    // the other coordinates sit at the centre of the admissible simplex slice
    Vector mlo = Vector::Constant(d, 0.5 * (lo + hi) / std::max(1, d));
    Vector mhi = mlo;
    mlo(a) = lo;
    mhi(a) = hi;
    const Vector tlo = model.theta_from_mean(n * mlo);
    const Vector thi = model.theta_from_mean(n * mhi);
    box.lo(a) = std::min(tlo(a), thi(a));
    box.hi(a) = std::max(tlo(a), thi(a));
  }
  return box;
}

inline bool central(const Box& region, const Vector& theta) {
  for (int a = 0; a < region.dim(); ++a) {
    const double w = region.hi(a) - region.lo(a);
    if (theta(a) < region.lo(a) + 0.1 * w || theta(a) > region.hi(a) - 0.1 * w) return false;
  }
  return true;
}

}  // namespace detail

inline Stage build_stage(const ExperimentConfig& cfg, int n, double mesh_constant) {
  Stage st;
  st.n = n;
  st.model = make_model(cfg.model, n);
  const ExponentialFamily& model = *st.model;
  st.marginal = marginal_table(model, cfg.prior);
  st.region = detail::mean_region(model, cfg.region_lo, cfg.region_hi);
  const FisherMetric metric(model);
  const MeshPlan plan = jeffreys_mesh(metric, st.region, n, mesh_constant);
  st.warning = plan.warning;
  switch (cfg.source) {
    case CodebookSource::JeffreysMesh:
      st.codebook.codepoints = plan.codepoints;
      st.codebook.assertion_probs = mesh_prior_masses(plan, model, cfg.prior);
      st.codebook.fixed = true;
      break;
    case CodebookSource::Dp:
    case CodebookSource::Lloyd: {
      const std::size_t kmax = cfg.k_max > 0 ? cfg.k_max : std::max<std::size_t>(1, 2 * plan.k());
      const KRange range{1, std::min(kmax, st.marginal.size())};
      MultiStartOptions ms;
      ms.restarts = cfg.restarts;
      ms.seed = derive_seed(cfg.seed, 0x5eed, static_cast<std::uint64_t>(n));
      const SolveResult r = cfg.source == CodebookSource::Dp ? dp_exact_1d(model, st.marginal, range)
                                                              : lloyd_sweep(model, st.marginal, range, ms);
      st.codebook = r.codebook;
      break;
    }
  }
  st.partition = assign(st.codebook, model, st.marginal);
  compact(st.partition);
  st.cells = summarize(st.partition, st.marginal);
  for (const auto& c : st.cells) st.projected.push_back(project_summary(model, c.mass, c.stat_sum).theta);
  return st;
}

inline Stage build_stage(const ExperimentConfig& cfg, int n) { return build_stage(cfg, n, cfg.mesh_constant); }

/// Per-data-point quantities of a stage.
struct PointTable {
  std::vector<double> prob;  ///< p_n(x | theta0)
  std::vector<std::size_t> exact;
  std::vector<std::size_t> geometric;
  std::vector<Vector> smml;  ///< codepoint of the exact cell, mean coordinates
  std::vector<Vector> mle;   ///< MLE, mean coordinates
  std::vector<char> clamped;
};

inline PointTable point_table(const Stage& st, const Vector& theta0_mean) {
  const ExponentialFamily& model = *st.model;
  const Vector theta0 = model.theta_from_mean(theta0_mean * st.n);
  const FisherMetric metric(model);
  const auto vor = WeightedVoronoi::from_codebook(st.codebook, st.n);
  const AssignmentTable table(st.codebook, model);
  PointTable t;
  std::vector<double> lp;
  for (std::size_t i = 0; i < st.marginal.size(); ++i) {
    const DataPoint& x = st.marginal.point(i);
    lp.push_back(model.log_likelihood(x, theta0));
    const MleResult m = model.mle(x);
    t.exact.push_back(table.best(x));
    t.geometric.push_back(voronoi_assign(vor, metric, m.theta));
    t.smml.push_back(model.mean_coordinates(st.projected[st.partition.cell_of[i]]));
    t.mle.push_back(model.mean_coordinates(m.theta));
    t.clamped.push_back(m.clamped ? 1 : 0);
  }
  const double norm = log_sum_exp(lp);
  for (double v : lp) t.prob.push_back(std::exp(v - norm));
  return t;
}

/// R draws from p_n(. | theta0) for grid point g.
inline std::vector<std::size_t> draw_replicates(const PointTable& t, std::uint64_t seed, std::size_t g,
                                                std::size_t replicates) {
  Rng rng(derive_seed(seed, 0xda7a, g));
  const DiscreteSampler sampler(t.prob);
  std::vector<std::size_t> out(replicates);
  for (auto& i : out) i = sampler(rng);
  return out;
}

// ---------------------------------------------------------------------------

struct AgreementRow {
  int n = 0;
  std::size_t k = 0;
  double rate = 1.0;
  double bootstrap_se = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;
};

struct RateRow {
  int n = 0;
  double median_error = 0.0;
  double p90_error = 0.0;
  double median_mle_error = 0.0;
  double median_scaled_gap = 0.0;  ///< median sqrt(n) ||theta_SMML - theta_hat||
};

struct ResidualRow {
  int n = 0;
  double max_scaled_residual = 0.0;  ///< max over central cells of sqrt(n) ||eps||
  double max_abs_residual = 0.0;     ///< max over all cells with interior MLEs
  std::size_t central_cells = 0;
  std::size_t excluded_cells = 0;
};

struct RemainderRow {
  int n = 0;
  double max_remainder = 0.0;
  std::size_t central_cells = 0;
  std::size_t excluded_points = 0;
};

struct NegativeControl {
  int n = 0;
  double wide_remainder = 0.0;
  double mesh_remainder = 0.0;
  double mesh_constant = 0.0;
  double ratio = 0.0;
};

struct AsymptoticsReport {
  std::vector<AgreementRow> agreement;
  std::vector<RateRow> rate;
  std::vector<ResidualRow> residual;
  std::vector<RemainderRow> remainder;
  bool uninformative = false;  ///< every codebook had a single cell
  double excluded_fraction_last = 0.0;

  TrendTest agreement_trend;  ///< over the grid after its first point
  LineFit smml_fit;
  LineFit mle_fit;
  TrendTest gap_trend;
  TrendTest residual_trend;
  TrendTest remainder_trend;
  std::vector<std::string> warnings;
};

namespace detail {

struct StageSamples {
  std::vector<double> agree;
  std::vector<double> err;
  std::vector<double> mle_err;
  std::vector<double> gap;
  std::size_t excluded = 0;
};

inline StageSamples sample_stage(const ExperimentConfig& cfg, const Stage& st, std::size_t g) {
  const PointTable t = point_table(st, from_std(cfg.theta0));
  const auto draws = draw_replicates(t, cfg.seed, g, cfg.replicates);
  const Vector theta0 = from_std(cfg.theta0);
  const double rn = std::sqrt(static_cast<double>(st.n));
  StageSamples s;
  for (std::size_t i : draws) {
    if (cfg.exclude_clamped && t.clamped[i]) {
      ++s.excluded;
      continue;
    }
    s.agree.push_back(t.exact[i] == t.geometric[i] ? 1.0 : 0.0);
    s.err.push_back((t.smml[i] - theta0).norm());
    s.mle_err.push_back((t.mle[i] - theta0).norm());
    s.gap.push_back(rn * (t.smml[i] - t.mle[i]).norm());
  }
  return s;
}

inline double bootstrap_se(const std::vector<double>& v, std::size_t resamples, std::uint64_t seed) {
  if (v.empty() || resamples < 2) return 0.0;
  Rng rng(seed);
  std::vector<double> means;
  for (std::size_t b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[uniform_index(rng, v.size())];
    means.push_back(s / v.size());
  }
  const double mu = mean(means);
  double ss = 0.0;
  for (double m : means) ss += (m - mu) * (m - mu);
  return std::sqrt(ss / (means.size() - 1));
}

}  // namespace detail

/// theta_j* - sum_{x in P_j} w_j(x) theta_hat(x) for every cell whose MLEs are
/// interior, in the model's own coordinates. Cells with clamped MLEs map to nullopt.
inline std::vector<std::optional<Vector>> cell_residuals(const Stage& st) {
  std::vector<std::optional<Vector>> out;
  for (std::size_t j = 0; j < st.cells.size(); ++j) {
    const auto& c = st.cells[j];
    Vector avg = Vector::Zero(st.model->dim_theta());
    bool clamped = false;
    for (std::size_t m = 0; m < c.members.size() && !clamped; ++m) {
      const MleResult r = st.model->mle(st.marginal.point(c.members[m]));
      clamped = r.clamped;
      avg += c.weights[m] * r.theta;
    }
    if (clamped) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(Vector(st.projected[j] - avg));
    }
  }
  return out;
}

/// max over members x and five points on [theta_hat(x), codepoint] of
/// ||-(1/n) Hess l(theta) - J1(codepoint)||_2. Members with clamped MLEs are skipped.
struct RemainderCheck {
  double max_remainder = 0.0;
  std::size_t excluded = 0;
};

inline RemainderCheck observed_info_check(const ExponentialFamily& model, const MarginalTable& marginal,
                                          const CellSummary& cell, const Vector& codepoint) {
  RemainderCheck out;
  const Matrix j1 = fisher_info(model, codepoint);
  for (std::size_t i : cell.members) {
    const DataPoint& x = marginal.point(i);
    const MleResult m = model.mle(x);
    if (m.clamped) {
      ++out.excluded;
      continue;
    }
    for (int s = 0; s <= 4; ++s) {
      const Vector th = m.theta + (s / 4.0) * (codepoint - m.theta);
      out.max_remainder = std::max(out.max_remainder, spectral_norm(model.observed_information(x, th) - j1));
    }
  }
  return out;
}

inline ResidualRow residual_row(const Stage& st) {
  ResidualRow row;
  row.n = st.n;
  const auto eps = cell_residuals(st);
  for (std::size_t j = 0; j < eps.size(); ++j) {
    if (!eps[j]) {
      ++row.excluded_cells;
      continue;
    }
    const double e = eps[j]->norm();
    row.max_abs_residual = std::max(row.max_abs_residual, e);
    if (detail::central(st.region, st.projected[j])) {
      ++row.central_cells;
      row.max_scaled_residual = std::max(row.max_scaled_residual, std::sqrt(static_cast<double>(st.n)) * e);
    }
  }
  return row;
}

inline RemainderRow remainder_row(const Stage& st) {
  RemainderRow row;
  row.n = st.n;
  for (std::size_t j = 0; j < st.cells.size(); ++j) {
    if (!detail::central(st.region, st.projected[j])) continue;
    ++row.central_cells;
    const RemainderCheck c = observed_info_check(*st.model, st.marginal, st.cells[j], st.projected[j]);
    row.max_remainder = std::max(row.max_remainder, c.max_remainder);
    row.excluded_points += c.excluded;
  }
  return row;
}

/// Remainder of an artificially wide cell (MLEs with mean coordinate in
/// [lo, hi]) against the central-cell maximum of a fine mesh at the same n.
inline NegativeControl negative_control(const ExperimentConfig& cfg, int n = 50, double lo = 0.2, double hi = 0.5,
                                        double fine_constant = 0.25) {
  const Stage fine = build_stage(cfg, n, fine_constant);
  const ExponentialFamily& model = *fine.model;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < fine.marginal.size(); ++i) {
    const double p = model.mean_coordinates(model.mle(fine.marginal.point(i)).theta)(0);
    if (p >= lo - 1e-12 && p <= hi + 1e-12) members.push_back(i);
  }
  if (members.empty()) throw ConfigError("negative control: wide cell contains no data point");
  const CellSummary cell = summarize_cell(fine.marginal, members);
  const Vector theta = project_summary(model, cell.mass, cell.stat_sum).theta;
  NegativeControl out;
  out.n = n;
  out.mesh_constant = fine_constant;
  out.wide_remainder = observed_info_check(model, fine.marginal, cell, theta).max_remainder;
  out.mesh_remainder = remainder_row(fine).max_remainder;
  out.ratio = out.mesh_remainder > 0.0 ? out.wide_remainder / out.mesh_remainder
                                       : std::numeric_limits<double>::infinity();
  return out;
}

/// All experiments over the grid from one set of stages.
inline AsymptoticsReport run_asymptotics(const ExperimentConfig& cfg) {
  cfg.validate();
  AsymptoticsReport rep;
  rep.uninformative = true;
  std::vector<std::vector<double>> agree;
  std::vector<std::vector<double>> gap;
  std::vector<double> med_err;
  std::vector<double> med_mle;
  std::vector<double> residual;
  std::vector<double> remainder;
  for (std::size_t g = 0; g < cfg.n_grid.size(); ++g) {
    const int n = cfg.n_grid[g];
    const Stage st = build_stage(cfg, n);
    if (!st.warning.empty()) rep.warnings.push_back("n=" + std::to_string(n) + ": " + st.warning);
    if (st.codebook.size() > 1) rep.uninformative = false;
    const detail::StageSamples s = detail::sample_stage(cfg, st, g);

    AgreementRow a;
    a.n = n;
    a.k = st.codebook.size();
    a.used = s.agree.size();
    a.excluded = s.excluded;
    a.rate = s.agree.empty() ? 1.0 : mean(s.agree);
    a.bootstrap_se = detail::bootstrap_se(s.agree, cfg.bootstrap, derive_seed(cfg.seed, 0xb5e, g));
    rep.agreement.push_back(a);

    RateRow r;
    r.n = n;
    r.median_error = median(s.err);
    r.p90_error = quantile(s.err, 0.9);
    r.median_mle_error = median(s.mle_err);
    r.median_scaled_gap = median(s.gap);
    rep.rate.push_back(r);

    rep.residual.push_back(residual_row(st));
    rep.remainder.push_back(remainder_row(st));

    agree.push_back(s.agree);
    gap.push_back(s.gap);
    med_err.push_back(r.median_error);
    med_mle.push_back(r.median_mle_error);
    residual.push_back(rep.residual.back().max_scaled_residual);
    remainder.push_back(rep.remainder.back().max_remainder);
    rep.excluded_fraction_last = static_cast<double>(s.excluded) / static_cast<double>(cfg.replicates);
  }

  const std::span<const int> ns(cfg.n_grid);
  const auto mean_stat = [](const std::vector<double>& v) { return v.empty() ? 1.0 : mean(v); };
  const auto median_stat = [](const std::vector<double>& v) { return median(v); };
  if (ns.size() >= 4) {
    const std::vector<std::vector<double>> tail(agree.begin() + 1, agree.end());
    rep.agreement_trend = bootstrap_trend(ns.subspan(1), tail, mean_stat, TrendClaim::WeaklyIncreasing,
                                          cfg.bootstrap, derive_seed(cfg.seed, 0x7e1d, 1));
  }
  rep.smml_fit = loglog_fit(ns, med_err);
  rep.mle_fit = loglog_fit(ns, med_mle);
  if (ns.size() >= 3) {
    rep.gap_trend = bootstrap_trend(ns, gap, median_stat, TrendClaim::NoUpwardTrend, cfg.bootstrap,
                                    derive_seed(cfg.seed, 0x7e1d, 2));
    rep.residual_trend = deterministic_trend(ns, residual, TrendClaim::Decreasing);
    rep.remainder_trend = deterministic_trend(ns, remainder, TrendClaim::Decreasing);
  }
  return rep;
}

}  // namespace smml
