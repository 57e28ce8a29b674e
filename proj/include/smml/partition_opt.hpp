#pragma once

// Searching for the codelength-minimising partition: exact interval DP on a
// one-dimensional statistic, Lloyd alternation in general, and the polyhedral
// form of the assignment rule for a fixed codebook.

#include "smml/geometry.hpp"
#include "smml/projection.hpp"
#include "smml/stats.hpp"

#include <numeric>

namespace smml {

struct TraceRow {
  int sweep = 0;
  double codelength = 0.0;
  std::size_t k = 0;
};

struct KPoint {
  std::size_t k = 0;
  double codelength = 0.0;
};

struct SolveResult {
  Partition partition;
  Codebook codebook;
  double codelength = 0.0;
  std::size_t k = 0;
  std::string method;  ///< dp | lloyd | polyhedral
  std::vector<TraceRow> trace;
  std::vector<double> half_steps;  ///< codelength after each assignment step
  std::vector<KPoint> k_curve;     ///< best codelength per k (dp, sweeps)
  std::size_t dropped = 0;
  std::uint64_t seed = 0;
  int sweeps = 0;
  bool transfers_applied = false;  ///< transfer_refine lowered the Lloyd result
};

struct KRange {
  std::size_t lo = 1;
  std::size_t hi = 1;
};

namespace detail {

// Cost of one cell with its projected codepoint: -q log q - sum r log p(x | theta*).
struct CellCost {
  double cost = std::numeric_limits<double>::infinity();
  Vector theta;
};

inline CellCost cell_cost(const ExponentialFamily& model, double log_q, const Vector& stat_sum, double base_sum) {
  const double q = std::exp(log_q);
  CellCost out;
  out.theta = project_summary(model, q, stat_sum).theta;
  const Vector eta = model.natural_map(out.theta);
  out.cost = -q * log_q - (base_sum + eta.dot(stat_sum) - q * model.log_partition(eta));
  return out;
}

inline std::vector<std::size_t> order_by_stat(const MarginalTable& marginal) {
  std::vector<std::size_t> order(marginal.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return marginal.point(a).stat(0) < marginal.point(b).stat(0); });
  return order;
}

inline SolveResult finish(const ExponentialFamily& model, const MarginalTable& marginal, Partition partition,
                          std::string method) {
  SolveResult out;
  const auto cells = summarize(partition, marginal);
  std::vector<Vector> codepoints;
  for (const auto& c : cells) codepoints.push_back(project_summary(model, c.mass, c.stat_sum).theta);
  out.codebook = synced_codebook(std::move(codepoints), partition, marginal);
  out.codelength = codelength(out.codebook, partition, marginal, model);
  out.k = partition.cells;
  out.partition = std::move(partition);
  out.method = std::move(method);
  return out;
}

}  // namespace detail

/// Exact optimum over contiguous-interval partitions of the ordered statistic
/// values, for every k in the range; the overall winner prefers smaller k on ties.
inline SolveResult dp_exact_1d(const ExponentialFamily& model, const MarginalTable& marginal, KRange range) {
  if (model.dim_stat() != 1) throw UnsupportedError("dp_exact_1d: one-dimensional sufficient statistic required");
  if (range.lo < 1 || range.hi < range.lo) throw ConfigError("dp_exact_1d: invalid k range");
  const auto order = detail::order_by_stat(marginal);
  const std::size_t m = order.size();
  const std::size_t kmax = std::min(range.hi, m);
  if (range.lo > m) throw ConfigError("dp_exact_1d: k range exceeds the number of data points");

  // cost[a][b]: cell made of sorted points a..b-1
  std::vector<std::vector<double>> cost(m + 1, std::vector<double>(m + 1, std::numeric_limits<double>::infinity()));
  for (std::size_t a = 0; a < m; ++a) {
    double log_q = -std::numeric_limits<double>::infinity();
    Vector s = Vector::Zero(1);
    double base = 0.0;
    for (std::size_t b = a + 1; b <= m; ++b) {
      const std::size_t i = order[b - 1];
      log_q = log_add_exp(log_q, marginal.log_r[i]);
      s += marginal.r[i] * marginal.point(i).stat;
      base += marginal.r[i] * marginal.point(i).log_base;
      cost[a][b] = detail::cell_cost(model, log_q, s, base).cost;
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  // best[k][b]: optimal cost of the first b sorted points in exactly k cells
  std::vector<std::vector<double>> best(kmax + 1, std::vector<double>(m + 1, inf));
  std::vector<std::vector<std::size_t>> split(kmax + 1, std::vector<std::size_t>(m + 1, 0));
  best[0][0] = 0.0;
  for (std::size_t k = 1; k <= kmax; ++k)
    for (std::size_t b = k; b <= m; ++b)
      for (std::size_t a = k - 1; a < b; ++a) {
        const double v = best[k - 1][a] + cost[a][b];
        if (v < best[k][b]) {
          best[k][b] = v;
          split[k][b] = a;
        }
      }

  SolveResult winner;
  bool have = false;
  std::vector<KPoint> curve;
  for (std::size_t k = range.lo; k <= kmax; ++k) {
    Partition p;
    p.cells = k;
    p.cell_of.assign(m, 0);
    std::size_t b = m;
    for (std::size_t kk = k; kk >= 1; --kk) {
      const std::size_t a = split[kk][b];
      for (std::size_t t = a; t < b; ++t) p.cell_of[order[t]] = kk - 1;
      b = a;
    }
    SolveResult r = detail::finish(model, marginal, std::move(p), "dp");
    curve.push_back({k, r.codelength});
    if (!have || r.codelength < winner.codelength - 1e-12) {
      winner = std::move(r);
      have = true;
    }
  }
  winner.k_curve = std::move(curve);
  winner.trace.push_back({0, winner.codelength, winner.k});
  return winner;
}

struct LloydOptions {
  int max_sweeps = 500;
  double tol = 1e-12;
};

/// Lloyd alternation from a codebook: argmin assignment, then per-cell q and
/// KL projection. Cells emptied by assignment are dropped.
inline SolveResult lloyd_solve(const ExponentialFamily& model, const MarginalTable& marginal, const Codebook& init,
                               const LloydOptions& opts = {}) {
  if (init.size() == 0) throw ConfigError("lloyd_solve: empty initial codebook");
  for (double q : init.assertion_probs)
    if (!(q > 0.0)) throw ConfigError("lloyd_solve: initial assertion probabilities must be > 0");
  Codebook cb = init;
  cb.fixed = true;
  SolveResult out;
  out.method = "lloyd";
  for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
    Partition p = assign(cb, model, marginal);
    const auto kept = compact(p);
    out.dropped += cb.size() - kept.size();
    std::vector<Vector> old;
    for (std::size_t j : kept) old.push_back(cb.codepoints[j]);
    const Codebook half = synced_codebook(std::move(old), p, marginal);
    const double half_l = codelength(half, p, marginal, model);
    out.half_steps.push_back(half_l);
    if (sweep == 1) out.trace.push_back({0, half_l, p.cells});
    const double prev = out.trace.back().codelength;

    SolveResult next = detail::finish(model, marginal, p, "lloyd");
    out.sweeps = sweep;
    if (next.codelength > prev) {
      // rounding-level rise at a fixed point: keep the state behind the last row
      if (sweep == 1) {
        out.partition = std::move(p);
        out.codebook = half;
        out.codelength = half_l;
        out.k = out.partition.cells;
      }
      break;
    }
    const bool unchanged = sweep > 1 && next.partition.cell_of == out.partition.cell_of;
    out.partition = std::move(next.partition);
    out.codebook = next.codebook;
    out.codelength = next.codelength;
    out.k = next.k;
    out.trace.push_back({sweep, out.codelength, out.k});
    cb = next.codebook;
    cb.fixed = true;
    if (unchanged || prev - out.codelength < opts.tol) break;
  }
  out.codebook.fixed = false;
  return out;
}

namespace detail {

struct MemberCell {
  std::vector<std::size_t> members;
  double cost = 0.0;
};

inline double member_cost(const ExponentialFamily& model, const MarginalTable& marginal,
                          const std::vector<std::size_t>& members) {
  std::vector<double> log_r;
  Vector s = Vector::Zero(model.dim_stat());
  double base = 0.0;
  for (std::size_t i : members) {
    log_r.push_back(marginal.log_r[i]);
    s += marginal.r[i] * marginal.point(i).stat;
    base += marginal.r[i] * marginal.point(i).log_base;
  }
  return cell_cost(model, log_sum_exp(log_r), s, base).cost;
}

// One pass of single-point transfers, each applied when it lowers the exact
// codelength by more than tol. Returns whether anything moved.
inline bool transfer_pass(const ExponentialFamily& model, const MarginalTable& marginal, Partition& partition,
                          double tol) {
  std::vector<MemberCell> cells(partition.cells);
  for (std::size_t i = 0; i < partition.cell_of.size(); ++i) cells[partition.cell_of[i]].members.push_back(i);
  for (auto& c : cells) c.cost = member_cost(model, marginal, c.members);
  bool moved = false;
  for (std::size_t i = 0; i < partition.cell_of.size(); ++i) {
    const std::size_t a = partition.cell_of[i];
    if (cells[a].members.size() < 2) continue;
    std::vector<std::size_t> without = cells[a].members;
    without.erase(std::find(without.begin(), without.end(), i));
    const double cost_a = member_cost(model, marginal, without);
    double best_delta = -tol;
    std::size_t best_b = a;
    double best_cost_b = 0.0;
    for (std::size_t b = 0; b < cells.size(); ++b) {
      if (b == a) continue;
      std::vector<std::size_t> with = cells[b].members;
      with.insert(std::upper_bound(with.begin(), with.end(), i), i);
      const double cost_b = member_cost(model, marginal, with);
      const double delta = cost_a + cost_b - cells[a].cost - cells[b].cost;
      if (delta < best_delta) {
        best_delta = delta;
        best_b = b;
        best_cost_b = cost_b;
      }
    }
    if (best_b == a) continue;
    cells[a].members = std::move(without);
    cells[a].cost = cost_a;
    auto& mb = cells[best_b].members;
    mb.insert(std::upper_bound(mb.begin(), mb.end(), i), i);
    cells[best_b].cost = best_cost_b;
    partition.cell_of[i] = best_b;
    moved = true;
  }
  return moved;
}

}  // namespace detail

/// Alternates single-point transfer passes with Lloyd until neither lowers the
/// codelength. Lloyd fixed points on a lattice can sit next to strictly better
/// partitions that one reassignment step cannot reach.
inline SolveResult transfer_refine(const ExponentialFamily& model, const MarginalTable& marginal, SolveResult start,
                                   const LloydOptions& opts = {}) {
  SolveResult cur = std::move(start);
  for (int round = 0; round < opts.max_sweeps; ++round) {
    Partition p = cur.partition;
    if (!detail::transfer_pass(model, marginal, p, opts.tol)) break;
    SolveResult moved = detail::finish(model, marginal, std::move(p), cur.method);
    if (!(moved.codelength < cur.codelength)) break;
    Codebook cb = moved.codebook;
    cb.fixed = true;
    SolveResult polished = lloyd_solve(model, marginal, cb, opts);
    SolveResult& next = polished.codelength <= moved.codelength ? polished : moved;
    int sweep = cur.trace.empty() ? 0 : cur.trace.back().sweep;
    cur.trace.push_back({++sweep, moved.codelength, moved.k});
    if (&next == &polished)
      for (std::size_t t = 1; t < polished.trace.size(); ++t)
        cur.trace.push_back({++sweep, polished.trace[t].codelength, polished.trace[t].k});
    cur.partition = std::move(next.partition);
    cur.codebook = next.codebook;
    cur.codebook.fixed = false;
    cur.codelength = next.codelength;
    cur.k = next.k;
    cur.dropped += polished.dropped;
    cur.sweeps += polished.sweeps;
    cur.transfers_applied = true;
  }
  return cur;
}

struct MultiStartOptions {
  std::size_t restarts = 20;
  std::uint64_t seed = 0;
  LloydOptions lloyd;
  /// Follow each restart with transfer_refine.
  bool transfers = true;
};

struct MultiStartResult {
  SolveResult best;
  std::vector<SolveResult> runs;
};

namespace detail {

inline Vector data_theta(const ExponentialFamily& model, const DataPoint& x) {
  Vector m = x.stat;
  model.clamp_mean(m);
  return model.theta_from_mean(m);
}

inline Box data_region(const ExponentialFamily& model, const MarginalTable& marginal) {
  Box box{data_theta(model, marginal.point(0)), data_theta(model, marginal.point(0))};
  for (std::size_t i = 1; i < marginal.size(); ++i) {
    const Vector th = data_theta(model, marginal.point(i));
    box.lo = box.lo.cwiseMin(th);
    box.hi = box.hi.cwiseMax(th);
  }
  return box;
}

inline Codebook uniform_codebook(std::vector<Vector> codepoints) {
  Codebook cb;
  cb.fixed = true;
  const double q = 1.0 / static_cast<double>(codepoints.size());
  cb.assertion_probs.assign(codepoints.size(), q);
  cb.codepoints = std::move(codepoints);
  return cb;
}

// Codepoints at the marginal quantiles (j + 1/2)/k of the first statistic coordinate.
inline std::vector<Vector> quantile_points(const ExponentialFamily& model, const MarginalTable& marginal,
                                           std::size_t k) {
  const auto order = order_by_stat(marginal);
  std::vector<Vector> out;
  double acc = 0.0;
  std::size_t j = 0;
  for (std::size_t t = 0; t < order.size() && j < k; ++t) {
    acc += marginal.r[order[t]];
    while (j < k && acc >= (static_cast<double>(j) + 0.5) / static_cast<double>(k)) {
      const Vector th = data_theta(model, marginal.point(order[t]));
      if (out.empty() || (out.back() - th).norm() > 0.0) out.push_back(th);
      ++j;
    }
  }
  return out;
}

inline std::vector<Vector> random_points(const ExponentialFamily& model, const MarginalTable& marginal,
                                         std::size_t k, Rng& rng) {
  const std::size_t count = std::min(k, marginal.size());
  std::vector<std::size_t> picked;
  while (picked.size() < count) {
    const std::size_t i = uniform_index(rng, marginal.size());
    if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
  }
  std::vector<Vector> out;
  for (std::size_t i : picked) out.push_back(data_theta(model, marginal.point(i)));
  return out;
}

inline bool better(const SolveResult& a, const SolveResult& b) {
  if (a.codelength != b.codelength) return a.codelength < b.codelength;
  if (a.k != b.k) return a.k < b.k;
  return a.seed < b.seed;
}

}  // namespace detail

/// Seeded multi-start Lloyd with k initial codepoints. Restart 0 starts from a
/// Jeffreys mesh over the range of the data MLEs, restart 1 from marginal
/// quantiles, later ones from distinct random data points. Each restart's seed
/// depends only on the master seed and its index.
inline MultiStartResult lloyd_multistart(const ExponentialFamily& model, const MarginalTable& marginal, std::size_t k,
                                         const MultiStartOptions& opts = {}) {
  if (k < 1) throw ConfigError("lloyd: k must be >= 1");
  MultiStartResult out;
  const FisherMetric metric(model);
  for (std::size_t r = 0; r < std::max<std::size_t>(opts.restarts, 1); ++r) {
    const std::uint64_t seed = derive_seed(opts.seed, k, r);
    std::vector<Vector> points;
    if (r == 0) {
      points = jeffreys_points(metric, detail::data_region(model, marginal), k);
    } else if (r == 1) {
      points = detail::quantile_points(model, marginal, k);
    } else {
      Rng rng(seed);
      points = detail::random_points(model, marginal, k, rng);
    }
    if (points.empty()) continue;
    SolveResult run = lloyd_solve(model, marginal, detail::uniform_codebook(std::move(points)), opts.lloyd);
    if (opts.transfers) run = transfer_refine(model, marginal, std::move(run), opts.lloyd);
    run.seed = seed;
    out.runs.push_back(std::move(run));
  }
  if (out.runs.empty()) throw NumericalError("lloyd: no restart produced a codebook");
  out.best = out.runs.front();
  for (const auto& run : out.runs)
    if (detail::better(run, out.best)) out.best = run;
  return out;
}

/// Multi-start Lloyd for every k in the range; best over k, smaller k on ties.
inline SolveResult lloyd_sweep(const ExponentialFamily& model, const MarginalTable& marginal, KRange range,
                               const MultiStartOptions& opts = {}) {
  if (range.lo < 1 || range.hi < range.lo) throw ConfigError("lloyd: invalid k range");
  SolveResult winner;
  bool have = false;
  std::vector<KPoint> curve;
  for (std::size_t k = range.lo; k <= range.hi; ++k) {
    SolveResult r = lloyd_multistart(model, marginal, k, opts).best;
    curve.push_back({k, r.codelength});
    if (!have || r.codelength < winner.codelength - 1e-12) {
      winner = std::move(r);
      have = true;
    }
  }
  winner.k_curve = std::move(curve);
  return winner;
}

// ---------------------------------------------------------------------------
// Polyhedral cells in sufficient-statistic space.

struct HalfSpace {
  std::size_t other = 0;  ///< the competing cell l
  Vector normal;          ///< eta_j - eta_l
  double offset = 0.0;    ///< log q_l - log q_j + A(eta_j) - A(eta_l)

  bool contains(const Vector& t, double tol = kTieTolerance) const { return normal.dot(t) - offset >= -tol; }
};

struct PolyhedralCell {
  std::size_t index = 0;
  std::vector<HalfSpace> halfspaces;

  bool contains(const Vector& t, double tol = kTieTolerance) const {
    for (const auto& h : halfspaces)
      if (!h.contains(t, tol)) return false;
    return true;
  }
};

inline std::vector<PolyhedralCell> polyhedral_cells(const Codebook& codebook, const ExponentialFamily& model) {
  std::vector<Vector> eta;
  std::vector<double> a;
  std::vector<double> lq;
  for (std::size_t j = 0; j < codebook.size(); ++j) {
    const double q = codebook.assertion_probs[j];
    if (!(q > 0.0)) throw InvariantError("polyhedral cells: q_j must be > 0");
    eta.push_back(model.natural_map(codebook.codepoints[j]));
    a.push_back(model.log_partition(eta.back()));
    lq.push_back(std::log(q));
  }
  std::vector<PolyhedralCell> cells(codebook.size());
  for (std::size_t j = 0; j < codebook.size(); ++j) {
    cells[j].index = j;
    for (std::size_t l = 0; l < codebook.size(); ++l) {
      if (l == j) continue;
      cells[j].halfspaces.push_back({l, eta[j] - eta[l], lq[l] - lq[j] + a[j] - a[l]});
    }
  }
  return cells;
}

/// Cell whose half-space system accepts t; ties (within kTieTolerance) go to the
/// smallest index.
inline std::size_t polyhedral_assign(const std::vector<PolyhedralCell>& cells, const Vector& t) {
  for (const auto& c : cells)
    if (c.contains(t)) return c.index;
  throw InvariantError("polyhedral assignment: no cell accepts the statistic");
}

inline std::size_t polyhedral_assign(const Codebook& codebook, const ExponentialFamily& model, const Vector& t) {
  return polyhedral_assign(polyhedral_cells(codebook, model), t);
}

/// Pullback of the polyhedral tessellation to the enumerated data space.
inline Partition polyhedral_partition(const Codebook& codebook, const ExponentialFamily& model,
                                      const MarginalTable& marginal) {
  const auto cells = polyhedral_cells(codebook, model);
  Partition p;
  p.cells = codebook.size();
  for (std::size_t i = 0; i < marginal.size(); ++i) p.cell_of.push_back(polyhedral_assign(cells, marginal.point(i).stat));
  return p;
}

}  // namespace smml
