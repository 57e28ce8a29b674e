#pragma once

// Codebooks, partitions and the two-part SMML codelength
//
//   I(P) = -sum_j q_j log q_j  -  sum_j sum_{x in P_j} r(x) log p_n(x | theta_j)
//
// together with its split into assertion entropy and expected cross-entropy.

#include "smml/marginal.hpp"

#include <optional>

namespace smml {

struct Codebook {
  std::vector<Vector> codepoints;
  std::vector<double> assertion_probs;
  /// Fixed-codebook mode: q is part of the codebook and is not required to equal
  /// the partition-induced cell masses.
  bool fixed = false;

  std::size_t size() const { return codepoints.size(); }
};

struct Partition {
  std::vector<std::size_t> cell_of;  ///< cell index per data point (0-based)
  std::size_t cells = 0;
};

struct CellSummary {
  std::size_t index = 0;
  double mass = 0.0;       ///< q_j
  double log_mass = 0.0;   ///< log q_j
  Vector stat_sum;         ///< S_j = sum r(x) T(x)
  std::vector<std::size_t> members;
  std::vector<double> weights;  ///< w_j(x) = r(x) / q_j, aligned with members

  Vector mean_stat() const { return stat_sum / mass; }
};

inline std::vector<std::vector<std::size_t>> cell_members(const Partition& partition) {
  std::vector<std::vector<std::size_t>> members(partition.cells);
  for (std::size_t i = 0; i < partition.cell_of.size(); ++i) {
    const std::size_t j = partition.cell_of[i];
    if (j >= partition.cells) throw InvariantError("partition: cell index out of range");
    members[j].push_back(i);
  }
  return members;
}

inline CellSummary summarize_cell(const MarginalTable& marginal, std::vector<std::size_t> members,
                                  std::size_t index = 0) {
  if (members.empty()) throw InvariantError("cell " + std::to_string(index) + " is empty");
  CellSummary cell;
  cell.index = index;
  std::vector<double> log_r;
  log_r.reserve(members.size());
  for (std::size_t i : members) log_r.push_back(marginal.log_r[i]);
  cell.log_mass = log_sum_exp(log_r);
  cell.mass = std::exp(cell.log_mass);
  if (!(cell.mass > 0.0)) throw InvariantError("cell " + std::to_string(index) + " has zero marginal mass");
  const int d = marginal.point(members.front()).stat.size();
  cell.stat_sum = Vector::Zero(d);
  cell.weights.reserve(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    const std::size_t i = members[m];
    cell.stat_sum += marginal.r[i] * marginal.point(i).stat;
    cell.weights.push_back(std::exp(log_r[m] - cell.log_mass));
  }
  cell.members = std::move(members);
  return cell;
}

/// Per-cell summaries; throws on empty or zero-mass cells.
inline std::vector<CellSummary> summarize(const Partition& partition, const MarginalTable& marginal) {
  if (partition.cell_of.size() != marginal.size())
    throw InvariantError("partition does not cover the data space");
  auto members = cell_members(partition);
  std::vector<CellSummary> out;
  out.reserve(members.size());
  for (std::size_t j = 0; j < members.size(); ++j) out.push_back(summarize_cell(marginal, std::move(members[j]), j));
  return out;
}

/// Codebook whose assertion probabilities are the partition's cell masses.
inline Codebook synced_codebook(std::vector<Vector> codepoints, const Partition& partition,
                                const MarginalTable& marginal) {
  const auto cells = summarize(partition, marginal);
  Codebook cb;
  cb.codepoints = std::move(codepoints);
  for (const auto& c : cells) cb.assertion_probs.push_back(c.mass);
  return cb;
}

namespace detail {

inline void check_codebook(const Codebook& codebook, const ExponentialFamily& model) {
  if (codebook.size() == 0) throw InvariantError("codebook is empty");
  if (codebook.assertion_probs.size() != codebook.size())
    throw InvariantError("codebook: codepoint and assertion-probability counts differ");
  double total = 0.0;
  for (double q : codebook.assertion_probs) {
    if (!(q > 0.0)) throw InvariantError("codebook: assertion probability must be > 0");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvariantError("codebook: assertion probabilities do not sum to 1");
  for (const auto& theta : codebook.codepoints)
    if (!model.in_interior(theta)) throw InvariantError("codebook: codepoint outside the interior of Theta");
}

inline std::vector<CellSummary> checked_cells(const Codebook& codebook, const Partition& partition,
                                              const MarginalTable& marginal, const ExponentialFamily& model) {
  check_codebook(codebook, model);
  if (partition.cells != codebook.size()) throw InvariantError("codebook and partition have different cell counts");
  auto cells = summarize(partition, marginal);
  if (!codebook.fixed) {
    for (std::size_t j = 0; j < cells.size(); ++j)
      if (std::abs(cells[j].mass - codebook.assertion_probs[j]) > 1e-9)
        throw InvariantError("codebook assertion probability of cell " + std::to_string(j) +
                             " is out of sync with the partition");
  }
  return cells;
}

}  // namespace detail

struct CellTerms {
  double mass = 0.0;
  double assertion = 0.0;      ///< -q log q
  double detail = 0.0;         ///< -sum r log p
  double cross_entropy = 0.0;  ///< H(pbar_j, p_theta_j)
  double entropy = 0.0;        ///< H(pbar_j)
  double kl = 0.0;             ///< cross_entropy - entropy
};

struct Decomposition {
  double assertion_entropy = 0.0;
  double expected_cross_entropy = 0.0;
  std::vector<CellTerms> cells;

  double total() const { return assertion_entropy + expected_cross_entropy; }
};

/// Assertion entropy H(q) and sum_j q_j H(pbar_j, p_theta_j). q comes from the
/// partition; desynchronised codebooks are rejected unless in fixed mode.
inline Decomposition decompose(const Codebook& codebook, const Partition& partition, const MarginalTable& marginal,
                               const ExponentialFamily& model) {
  const auto cells = detail::checked_cells(codebook, partition, marginal, model);
  Decomposition out;
  out.cells.reserve(cells.size());
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto& cell = cells[j];
    const Vector eta = model.natural_map(codebook.codepoints[j]);
    CellTerms t;
    t.mass = cell.mass;
    t.assertion = -cell.mass * cell.log_mass;
    for (std::size_t m = 0; m < cell.members.size(); ++m) {
      const std::size_t i = cell.members[m];
      const double w = cell.weights[m];
      const double lp = model.log_likelihood_natural(marginal.point(i), eta);
      t.detail -= marginal.r[i] * lp;
      t.cross_entropy -= w * lp;
      t.entropy -= xlogx(w);
      t.kl += w > 0.0 ? w * (std::log(w) - lp) : 0.0;
    }
    out.assertion_entropy += t.assertion;
    out.expected_cross_entropy += cell.mass * t.cross_entropy;
    out.cells.push_back(t);
  }
  return out;
}

/// Expected two-part codelength I(P) in nats.
inline double codelength(const Codebook& codebook, const Partition& partition, const MarginalTable& marginal,
                         const ExponentialFamily& model) {
  const auto cells = detail::checked_cells(codebook, partition, marginal, model);
  double assertion = 0.0;
  double detail = 0.0;
  for (std::size_t j = 0; j < cells.size(); ++j) {
    const auto& cell = cells[j];
    assertion -= cell.mass * cell.log_mass;
    const Vector eta = model.natural_map(codebook.codepoints[j]);
    for (std::size_t i : cell.members) detail -= marginal.r[i] * model.log_likelihood_natural(marginal.point(i), eta);
  }
  const double total = assertion + detail;
  if (!std::isfinite(total)) throw NumericalError("codelength is not finite");
  return total;
}

/// Lambda_j(x) = -log q_j - log p_n(x | theta_j).
inline double assign_cost(const DataPoint& x, std::size_t j, const Codebook& codebook,
                          const ExponentialFamily& model) {
  const double q = codebook.assertion_probs.at(j);
  if (!(q > 0.0)) throw InvariantError("assign_cost: q_j must be > 0");
  return -std::log(q) - model.log_likelihood(x, codebook.codepoints.at(j));
}

/// Precomputed natural parameters and log-normalisers for repeated assignment.
class AssignmentTable {
 public:
  AssignmentTable(const Codebook& codebook, const ExponentialFamily& model) {
    for (std::size_t j = 0; j < codebook.size(); ++j) {
      const double q = codebook.assertion_probs[j];
      if (!(q > 0.0)) throw InvariantError("assignment: q_j must be > 0");
      eta_.push_back(model.natural_map(codebook.codepoints[j]));
      offset_.push_back(-std::log(q) + model.log_partition(eta_.back()));
    }
  }

  /// Lambda_j(x) without the shared -log h(x) term.
  double reduced_cost(const Vector& stat, std::size_t j) const { return offset_[j] - eta_[j].dot(stat); }

  /// argmin_j Lambda_j(x); near-ties (kTieTolerance) go to the smallest index.
  std::size_t best(const DataPoint& x) const {
    const std::size_t k = eta_.size();
    std::vector<double> cost(k);
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      cost[j] = reduced_cost(x.stat, j) - x.log_base;
      lo = std::min(lo, cost[j]);
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cost[j] <= lo + kTieTolerance) return j;
    return 0;
  }

  std::size_t size() const { return eta_.size(); }

 private:
  std::vector<Vector> eta_;
  std::vector<double> offset_;
};

inline std::size_t best_cell(const DataPoint& x, const Codebook& codebook, const ExponentialFamily& model) {
  return AssignmentTable(codebook, model).best(x);
}

/// Pointwise argmin_j Lambda_j(x). Cells may come out empty; see compact().
inline Partition assign(const Codebook& codebook, const ExponentialFamily& model, const MarginalTable& marginal) {
  const AssignmentTable table(codebook, model);
  Partition p;
  p.cells = codebook.size();
  p.cell_of.reserve(marginal.size());
  for (std::size_t i = 0; i < marginal.size(); ++i) p.cell_of.push_back(table.best(marginal.point(i)));
  return p;
}

/// Drops empty cells, renumbering the rest in order. Returns the kept original indices.
inline std::vector<std::size_t> compact(Partition& partition) {
  std::vector<std::size_t> count(partition.cells, 0);
  for (std::size_t j : partition.cell_of) ++count[j];
  std::vector<std::size_t> kept;
  std::vector<std::size_t> remap(partition.cells, 0);
  for (std::size_t j = 0; j < partition.cells; ++j)
    if (count[j] > 0) {
      remap[j] = kept.size();
      kept.push_back(j);
    }
  for (std::size_t& j : partition.cell_of) j = remap[j];
  partition.cells = kept.size();
  return kept;
}

}  // namespace smml
