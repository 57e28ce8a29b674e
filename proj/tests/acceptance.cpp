// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "smml/smml.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

using namespace smml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0.0 && secs > limit_s) {
    o.pass = false;
    o.detail += " (runtime limit " + fmt(limit_s) + " s exceeded)";
  }
  if (!o.pass) ++failures;
  char head[64];
  std::snprintf(head, sizeof head, "AC%-2d %s  %-28s", id, o.pass ? "PASS" : "FAIL", name.c_str());
  char tail[32];
  std::snprintf(tail, sizeof tail, "  [%.2f s]", secs);
  std::cout << head << o.detail << tail << std::endl;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

struct Case {
  std::unique_ptr<ExponentialFamily> model;
  MarginalTable marginal;
};

std::vector<Case> model_cases() {
  std::vector<Case> out;
  auto add = [&](std::unique_ptr<ExponentialFamily> m, const PriorSpec& prior) {
    MarginalTable t = marginal_table(*m, prior);
    out.push_back({std::move(m), std::move(t)});
  };
  add(std::make_unique<Binomial>(15), {PriorFamily::Beta, {1.0, 1.0}});
  add(std::make_unique<Binomial>(12, Parameterization::Logit), {PriorFamily::Beta, {2.0, 5.0}});
  add(std::make_unique<Binomial>(10, Parameterization::Arcsine), {PriorFamily::Beta, {0.5, 0.5}});
  add(std::make_unique<Multinomial>(3, 6), {PriorFamily::Dirichlet, {1.0, 1.0, 1.0}});
  add(std::make_unique<Poisson>(3), {PriorFamily::Gamma, {2.0, 1.0}});
  return out;
}

// Random per-observation mean inside the model's domain, mapped to theta.
Vector random_theta(const ExponentialFamily& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.02, 0.98);
  const int n = model.sample_size();
  if (model.family() == "poisson") return model.theta_from_mean(scalar(n * 8.0 * u(rng)));
  if (model.family() == "multinomial") {
    Vector w(model.dim_theta() + 1);
    for (int i = 0; i < w.size(); ++i) w(i) = u(rng);
    w /= w.sum();
    return model.theta_from_mean(n * w.head(model.dim_theta()));
  }
  return model.theta_from_mean(scalar(n * u(rng)));
}

std::vector<std::size_t> random_subset(std::size_t size, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  const std::size_t keep = 1 + rng() % 4;
  for (std::size_t i = 0; i < size; ++i)
    if (rng() % keep == 0) out.push_back(i);
  if (out.empty()) out.push_back(rng() % size);
  return out;
}

// ---------------------------------------------------------------------------

Outcome decomposition_identity() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  bool bounded = true;
  for (auto& c : model_cases()) {
    const auto& model = *c.model;
    const auto& m = c.marginal;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t k = 1 + rng() % std::min<std::size_t>(8, m.size());
      Partition p;
      p.cells = k;
      for (std::size_t i = 0; i < m.size(); ++i) p.cell_of.push_back(i < k ? i : rng() % k);
      std::shuffle(p.cell_of.begin(), p.cell_of.end(), rng);
      std::vector<Vector> pts;
      for (std::size_t j = 0; j < k; ++j) pts.push_back(random_theta(model, rng));
      const Codebook cb = synced_codebook(pts, p, m);

      // direct evaluation of both sides
      std::vector<double> q(k, 0.0);
      for (std::size_t i = 0; i < m.size(); ++i) q[p.cell_of[i]] += m.r[i];
      double h = 0.0;
      for (double x : q) h -= x * std::log(x);
      std::vector<double> cross(k, 0.0);
      for (std::size_t i = 0; i < m.size(); ++i) {
        const std::size_t j = p.cell_of[i];
        cross[j] -= (m.r[i] / q[j]) * model.log_likelihood(m.point(i), pts[j]);
      }
      double rhs = h;
      for (std::size_t j = 0; j < k; ++j) rhs += q[j] * cross[j];
      const double lhs = codelength(cb, p, m, model);
      const Decomposition d = decompose(cb, p, m, model);
      worst = std::max({worst, std::abs(lhs - rhs), std::abs(d.total() - lhs),
                        std::abs(d.assertion_entropy - h)});
      if (h > std::log(static_cast<double>(k)) + 1e-12) bounded = false;
    }
  }
  return {worst <= 1e-10 && bounded, "max |I - (H(q) + sum q H)| = " + num(worst) + (bounded ? "" : ", H(q) > log k")};
}

Outcome projection_optimality() {
  std::mt19937_64 rng(202);
  std::size_t violations = 0;
  for (auto& c : model_cases()) {
    const auto& model = *c.model;
    const auto& m = c.marginal;
    for (int trial = 0; trial < 50; ++trial) {
      const CellSummary cell = summarize_cell(m, random_subset(m.size(), rng));
      const double best = kl_projection(cell, m, model).achieved_kl;
      for (int r = 0; r < 100; ++r)
        if (best > kl_divergence(cell, m, model, random_theta(model, rng)) + 1e-12) ++violations;
    }
  }
  // moment matching against a p grid of step 1e-5
  const Binomial model(12, Parameterization::Logit);
  const auto m = marginal_table(model, {PriorFamily::Beta, {2.0, 5.0}});
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const CellSummary cell = summarize_cell(m, random_subset(m.size(), rng));
    const auto mm = moment_match(cell, m, model);
    double best_p = 0.0, best = std::numeric_limits<double>::infinity();
    for (int g = 100; g <= 99900; ++g) {
      const double p = g * 1e-5;
      const double kl = kl_divergence(cell, m, model, model.theta_from_prob(p));
      if (kl < best) {
        best = kl;
        best_p = p;
      }
    }
    worst = std::max(worst, std::abs(model.prob(mm.theta) - best_p));
  }
  return {violations == 0 && worst <= 1e-4,
          std::to_string(violations) + " competitor wins; max |p_mm - p_grid| = " + num(worst)};
}

// Best codelength over all set partitions via a subset recursion over cell masks.
double best_set_partition(int n, const MarginalTable& m) {
  const int size = n + 1;
  const std::uint32_t full = (1u << size) - 1;
  std::vector<double> cost(full + 1, 0.0);
  for (std::uint32_t s = 1; s <= full; ++s) {
    double q = 0.0, stat = 0.0;
    for (int x = 0; x < size; ++x)
      if (s >> x & 1u) {
        q += m.r[x];
        stat += m.r[x] * x;
      }
    double p = stat / q / n;
    p = std::clamp(p, kClampEpsilon, 1.0 - kClampEpsilon);
    double detail = 0.0;
    for (int x = 0; x < size; ++x)
      if (s >> x & 1u) {
        const double lp = std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0) +
                          x * std::log(p) + (n - x) * std::log1p(-p);
        detail -= m.r[x] * lp;
      }
    cost[s] = -q * std::log(q) + detail;
  }
  std::vector<double> best(full + 1, std::numeric_limits<double>::infinity());
  best[0] = 0.0;
  for (std::uint32_t s = 1; s <= full; ++s) {
    const std::uint32_t low = s & (~s + 1);
    for (std::uint32_t sub = s; sub; sub = (sub - 1) & s)
      if (sub & low) best[s] = std::min(best[s], cost[sub] + best[s ^ sub]);
  }
  return best[full];
}

Outcome dp_exactness() {
  double worst = 0.0;
  for (const auto& prior : {PriorSpec{PriorFamily::Beta, {1.0, 1.0}}, PriorSpec{PriorFamily::Beta, {2.0, 5.0}}}) {
    for (int n = 1; n <= 12; ++n) {
      const Binomial model(n);
      const auto m = marginal_table(model, prior);
      const auto dp = dp_exact_1d(model, m, {1, static_cast<std::size_t>(n) + 1});
      worst = std::max(worst, std::abs(dp.codelength - best_set_partition(n, m)));
    }
  }
  return {worst <= 1e-12, "max |DP - all set partitions| over n<=12, two priors = " + num(worst)};
}

bool monotone(const SolveResult& r) {
  for (std::size_t i = 1; i < r.trace.size(); ++i)
    if (r.trace[i].codelength > r.trace[i - 1].codelength) return false;
  return true;
}

Outcome lloyd_soundness() {
  const Binomial model(20);
  const auto m = marginal_table(model, {PriorFamily::Beta, {1.0, 1.0}});
  const auto dp = dp_exact_1d(model, m, {4, 4});
  const auto fixed_point = lloyd_solve(model, m, dp.codebook);
  const bool zero_change = fixed_point.sweeps == 1 && fixed_point.partition.cell_of == dp.partition.cell_of &&
                           std::abs(fixed_point.codelength - dp.codelength) <= 1e-12;
  MultiStartOptions opts;
  opts.seed = 4;
  const auto ms = lloyd_multistart(model, m, 4, opts);
  bool all_monotone = monotone(fixed_point);
  double min_gap = std::numeric_limits<double>::infinity();
  for (const auto& run : ms.runs) {
    all_monotone = all_monotone && monotone(run);
    if (run.k == 4) min_gap = std::min(min_gap, std::abs(run.codelength - dp.codelength));
  }
  return {all_monotone && zero_change && ms.runs.size() == 20 && min_gap <= 1e-9,
          std::string("monotone=") + (all_monotone ? "yes" : "no") + ", dp fixed point=" +
              (zero_change ? "yes" : "no") + ", best gap over " + std::to_string(ms.runs.size()) +
              " restarts = " + num(min_gap) + " nats"};
}

Outcome polyhedral_equivalence() {
  std::mt19937_64 rng(505);
  const Binomial bin(20);
  const auto mb = marginal_table(bin, {PriorFamily::Beta, {1.0, 1.0}});
  const Multinomial mult(3, 6);
  const auto mm = marginal_table(mult, {PriorFamily::Dirichlet, {1.0, 1.0, 1.0}});
  std::size_t mismatches = 0, checked = 0;
  for (const auto& [model, m] : std::vector<std::pair<const ExponentialFamily*, const MarginalTable*>>{
           {&bin, &mb}, {&mult, &mm}}) {
    for (int trial = 0; trial < 10; ++trial) {
      Codebook cb;
      cb.fixed = true;
      const std::size_t k = 2 + rng() % 5;
      double total = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        cb.codepoints.push_back(random_theta(*model, rng));
        cb.assertion_probs.push_back(0.05 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        total += cb.assertion_probs.back();
      }
      for (double& q : cb.assertion_probs) q /= total;
      const auto cells = polyhedral_cells(cb, *model);
      for (std::size_t i = 0; i < m->size(); ++i) {
        // argmin by direct codelength comparison, smallest index on ties
        std::size_t arg = 0;
        double lo = std::numeric_limits<double>::infinity();
        std::vector<double> cost(k);
        for (std::size_t j = 0; j < k; ++j) {
          cost[j] = assign_cost(m->point(i), j, cb, *model);
          lo = std::min(lo, cost[j]);
        }
        while (cost[arg] > lo + kTieTolerance) ++arg;
        ++checked;
        if (polyhedral_assign(cells, m->point(i).stat) != arg) ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over " + std::to_string(checked) + " lattice points"};
}

ExperimentConfig bernoulli_experiment(Parameterization param) {
  ExperimentConfig cfg;
  cfg.model.family = "binomial";
  cfg.model.parameterization = param;
  cfg.prior = {PriorFamily::Beta, {1.0, 1.0}};
  cfg.theta0 = {0.3};
  cfg.n_grid = {50, 100, 200, 400, 800, 1600};
  cfg.replicates = 2000;
  cfg.seed = 20240601;
  cfg.source = CodebookSource::JeffreysMesh;
  cfg.mesh_constant = 1.0;
  return cfg;
}

const AsymptoticsReport& mean_report() {
  static const AsymptoticsReport rep = run_asymptotics(bernoulli_experiment(Parameterization::Mean));
  return rep;
}

Outcome agreement_trend() {
  const auto& rep = mean_report();
  std::string rates;
  for (const auto& a : rep.agreement) rates += (rates.empty() ? "" : " ") + num(a.rate);
  const auto& t = rep.agreement_trend;
  return {t.pass && !rep.uninformative,
          "rates [" + rates + "], slope " + num(t.slope) + " in [" + num(t.lower) + ", " + num(t.upper) + "]"};
}

Outcome estimation_rate() {
  const auto& rep = mean_report();
  const bool control = rep.mle_fit.slope >= -0.6 && rep.mle_fit.slope <= -0.4;
  const bool smml = rep.smml_fit.slope >= -0.6 && rep.smml_fit.slope <= -0.4;
  return {control && smml && rep.gap_trend.pass,
          "MLE slope " + num(rep.mle_fit.slope) + ", SMML slope " + num(rep.smml_fit.slope) + " (se " +
              num(rep.smml_fit.slope_se) + "), scaled-gap trend upper " + num(rep.gap_trend.upper)};
}

Outcome residual_criterion() {
  double worst = 0.0;
  for (int n : bernoulli_experiment(Parameterization::Mean).n_grid) {
    const Stage st = build_stage(bernoulli_experiment(Parameterization::Mean), n);
    for (const auto& e : cell_residuals(st))
      if (e) worst = std::max(worst, e->norm());
  }
  auto cfg = bernoulli_experiment(Parameterization::Logit);
  cfg.replicates = 200;
  cfg.bootstrap = 100;
  const auto rep = run_asymptotics(cfg);
  std::string series;
  for (const auto& r : rep.residual) series += (series.empty() ? "" : " ") + num(r.max_scaled_residual);
  return {worst <= 1e-12 && rep.residual_trend.pass,
          "mean max |eps| = " + num(worst) + "; logit sqrt(n)|eps| [" + series + "]"};
}

Outcome remainder_criterion() {
  const auto& rep = mean_report();
  std::string series;
  for (const auto& r : rep.remainder) series += (series.empty() ? "" : " ") + num(r.max_remainder);
  const auto nc = negative_control(bernoulli_experiment(Parameterization::Mean));
  const double grid_ratio = nc.wide_remainder / rep.remainder.front().max_remainder;
  return {rep.remainder_trend.pass && nc.ratio >= 10.0,
          "remainder [" + series + "]; wide cell " + num(nc.wide_remainder) + " vs c=" + num(nc.mesh_constant) +
              " mesh " + num(nc.mesh_remainder) + " at n=" + std::to_string(nc.n) + " (ratio " + num(nc.ratio) +
              "; vs c=1 mesh ratio " + num(grid_ratio) + ")"};
}

int run_cli_process(const std::string& args) {
  const std::string cmd = std::string(SMML_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome reproducibility() {
  const std::string dir = SMML_CONFIG_DIR;
  const std::vector<std::pair<std::string, std::string>> runs{
      {"solve", "binomial_dp.ini"},          {"sweep-k", "binomial_dp.ini"},
      {"decompose", "binomial_dp.ini"},      {"voronoi", "binomial_dp.ini"},
      {"solve", "multinomial_lloyd.ini"},    {"sweep-k", "poisson_dp.ini"},
      {"asymptotics", "bernoulli_asymptotics.ini"}};
  std::size_t compared = 0, differing = 0;
  for (const auto& [cmd, ini] : runs) {
    std::vector<fs::path> outs;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = fs::temp_directory_path() / ("smml_acceptance_" + cmd + "_" + ini + std::to_string(rep));
      fs::remove_all(out);
      for (const char* format : {"csv", "json"})
        if (run_cli_process(cmd + " --config " + dir + "/" + ini + " --out " + out.string() + " --format " + format) != 0)
          return {false, cmd + " on " + ini + " failed"};
      outs.push_back(out);
    }
    for (const auto& entry : fs::directory_iterator(outs[0])) {
      ++compared;
      if (slurp(entry.path()) != slurp(outs[1] / entry.path().filename())) ++differing;
    }
  }
  return {compared > 0 && differing == 0,
          std::to_string(differing) + " of " + std::to_string(compared) + " artifacts differ across reruns"};
}

}  // namespace

int main() {
  std::cout << "smml " << kToolVersion << " acceptance\n";
  report(1, "decomposition identity", 10.0, decomposition_identity);
  report(2, "KL projection optimality", 60.0, projection_optimality);
  report(3, "DP exactness", 300.0, dp_exactness);
  report(4, "Lloyd soundness", 0.0, lloyd_soundness);
  report(5, "polyhedral equivalence", 30.0, polyhedral_equivalence);
  report(6, "Voronoi agreement trend", 300.0, agreement_trend);
  report(7, "estimation rate", 0.0, estimation_rate);
  report(8, "weighted-average residual", 0.0, residual_criterion);
  report(9, "observed-information remainder", 0.0, remainder_criterion);
  report(10, "reproducibility", 0.0, reproducibility);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
