#pragma once

// Command-line driver: solve | sweep-k | decompose | voronoi | asymptotics.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include "smml/io.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace smml {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct Session {
  RunConfig cfg;
  std::unique_ptr<ExponentialFamily> model;
  MarginalTable marginal;
  Provenance prov;
  std::filesystem::path out;
  std::vector<std::string> formats;
};

inline Session open_session(const std::string& config_path, std::optional<std::uint64_t> seed,
                            const std::string& out_dir, const std::string& format, bool need_marginal = true) {
  Session s;
  s.cfg = load_config_file(config_path, seed);
  s.model = make_model(s.cfg.model);
  if (need_marginal) s.marginal = marginal_table(*s.model, s.cfg.prior, s.cfg.marginal, s.cfg.truncation);
  s.prov = {s.cfg.hash(), s.cfg.solver.seed};
  s.out = out_dir.empty() ? std::filesystem::path(s.cfg.output.directory) : std::filesystem::path(out_dir);
  s.formats = format.empty() ? s.cfg.output.formats : std::vector<std::string>{format};
  return s;
}

namespace detail {

// Fixed codebook on a Jeffreys mesh over the experiment region, cells taken from
// the polyhedral tessellation; unused cells are dropped and q renormalised.
inline SolveResult polyhedral_solve(const Session& s) {
  const ExponentialFamily& model = *s.model;
  const FisherMetric metric(model);
  const Box region = mean_region(model, s.cfg.experiment.region_lo, s.cfg.experiment.region_hi);
  const MeshPlan plan = jeffreys_mesh(metric, region, model.sample_size(), s.cfg.solver.mesh_constant);
  Codebook cb;
  cb.fixed = true;
  cb.codepoints = plan.codepoints;
  cb.assertion_probs = model.dim_theta() == 1 ? mesh_prior_masses(plan, model, s.cfg.prior)
                                              : std::vector<double>(plan.k(), 1.0 / static_cast<double>(plan.k()));
  SolveResult r;
  r.method = "polyhedral";
  r.partition = polyhedral_partition(cb, model, s.marginal);
  const auto kept = compact(r.partition);
  r.dropped = cb.size() - kept.size();
  double total = 0.0;
  for (std::size_t j : kept) {
    r.codebook.codepoints.push_back(cb.codepoints[j]);
    r.codebook.assertion_probs.push_back(cb.assertion_probs[j]);
    total += cb.assertion_probs[j];
  }
  for (double& q : r.codebook.assertion_probs) q /= total;
  r.codebook.fixed = true;
  r.codelength = codelength(r.codebook, r.partition, s.marginal, model);
  r.k = r.partition.cells;
  r.trace.push_back({0, r.codelength, r.k});
  return r;
}

inline SolveResult run_solver(const Session& s) {
  const KRange range{s.cfg.solver.k_min, s.cfg.solver.k_max};
  if (s.cfg.solver.method == "dp") return dp_exact_1d(*s.model, s.marginal, range);
  if (s.cfg.solver.method == "lloyd") {
    MultiStartOptions ms;
    ms.restarts = s.cfg.solver.restarts;
    ms.seed = s.cfg.solver.seed;
    ms.lloyd.max_sweeps = s.cfg.solver.max_sweeps;
    return lloyd_sweep(*s.model, s.marginal, range, ms);
  }
  return polyhedral_solve(s);
}

inline std::vector<std::string> vec_cells(const Vector& v) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(fmt(v(i)));
  return out;
}

inline std::vector<std::string> indexed(const std::string& stem, int d) {
  std::vector<std::string> out;
  if (d == 1) return {stem};
  for (int i = 1; i <= d; ++i) out.push_back(stem + "_" + std::to_string(i));
  return out;
}

template <class... Parts>
std::vector<std::string> concat(Parts&&... parts) {
  std::vector<std::string> out;
  (out.insert(out.end(), parts.begin(), parts.end()), ...);
  return out;
}

}  // namespace detail

inline int cmd_solve(const Session& s, std::ostream& log) {
  SolveResult r = detail::run_solver(s);
  nlohmann::json doc = codebook_document(r, *s.model, s.cfg.prior, s.marginal, s.prov);
  if (r.method == "lloyd" && s.model->dim_stat() == 1) {
    const SolveResult dp = dp_exact_1d(*s.model, s.marginal, {s.cfg.solver.k_min, s.cfg.solver.k_max});
    doc["dp_gap_nats"] = r.codelength - dp.codelength;
    log << "dp-lloyd gap: " << fmt(r.codelength - dp.codelength) << " nats\n";
  }
  doc["dropped_cells"] = r.dropped;
  write_json(s.out / "codebook.json", doc);
  Table trace({"sweep", "codelength_nats", "k"});
  for (const auto& row : r.trace) trace.row({std::to_string(row.sweep), fmt(row.codelength), std::to_string(row.k)});
  write_table(s.out, "trace", trace, s.formats, s.prov);
  log << "method=" << r.method << " k=" << r.k << " codelength=" << fmt(r.codelength) << " nats\n";
  return kExitOk;
}

inline int cmd_sweep_k(const Session& s, std::ostream& log) {
  if (s.cfg.solver.method == "polyhedral") throw ConfigError("sweep-k needs solver method dp or lloyd");
  const SolveResult r = detail::run_solver(s);
  Table t({"k", "codelength_nats", "codelength_bits"});
  for (const auto& p : r.k_curve) t.row({std::to_string(p.k), fmt(p.codelength), fmt(p.codelength / std::log(2.0))});
  write_table(s.out, "sweep_k", t, s.formats, s.prov);
  log << "best k=" << r.k << " codelength=" << fmt(r.codelength) << " nats\n";
  return kExitOk;
}

inline int cmd_decompose(const Session& s, const std::string& codebook_path, std::ostream& log) {
  Codebook cb;
  Partition p;
  if (!codebook_path.empty()) {
    const LoadedCodebook lc = read_codebook(read_json_file(codebook_path), s.marginal);
    if (lc.model != s.model->descriptor() || lc.prior != s.cfg.prior.descriptor())
      throw ConfigError("codebook was produced for a different model or prior");
    cb = lc.codebook;
    p = lc.partition;
  } else {
    SolveResult r = detail::run_solver(s);
    cb = r.codebook;
    p = r.partition;
  }
  const Decomposition d = decompose(cb, p, s.marginal, *s.model);
  const double total = codelength(cb, p, s.marginal, *s.model);
  Table t({"cell", "q", "assertion_nats", "detail_nats", "cross_entropy_nats", "entropy_nats", "kl_nats"});
  double detail_sum = 0.0;
  for (std::size_t j = 0; j < d.cells.size(); ++j) {
    const auto& c = d.cells[j];
    detail_sum += c.detail;
    t.row({std::to_string(j), fmt(c.mass), fmt(c.assertion), fmt(c.detail), fmt(c.cross_entropy), fmt(c.entropy),
           fmt(c.kl)});
  }
  t.row({"total", fmt(1.0), fmt(d.assertion_entropy), fmt(detail_sum), fmt(d.expected_cross_entropy), "", ""});
  write_table(s.out, "decompose", t, s.formats, s.prov);
  log << "I=" << fmt(total) << " H(q)=" << fmt(d.assertion_entropy) << " detail=" << fmt(detail_sum)
      << " log k=" << fmt(std::log(static_cast<double>(cb.size()))) << "\n";
  return kExitOk;
}

inline int cmd_voronoi(const Session& s, std::ostream& log) {
  const SolveResult r = detail::run_solver(s);
  const ExponentialFamily& model = *s.model;
  const FisherMetric metric(model);
  const auto vor = WeightedVoronoi::from_codebook(r.codebook, model.sample_size());
  const int d = model.dim_theta();

  // pairwise boundaries between neighbouring sites along a one-dimensional chart
  std::vector<std::string> lower(r.k), upper(r.k);
  if (d == 1) {
    std::vector<std::size_t> order(r.k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return vor.sites[a](0) < vor.sites[b](0); });
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
      const std::size_t j = order[i];
      const std::size_t l = order[i + 1];
      if (voronoi_offset(vor, metric, j, l, vor.sites[j]) * voronoi_offset(vor, metric, j, l, vor.sites[l]) > 0.0)
        continue;
      const Vector b = voronoi_boundary(vor, metric, j, l, vor.sites[j], vor.sites[l]);
      upper[j] = fmt(b(0));
      lower[l] = fmt(b(0));
    }
  }
  Table sites(detail::concat(std::vector<std::string>{"cell"}, detail::indexed("theta", d),
                             detail::indexed("mean", d),
                             std::vector<std::string>{"q", "omega", "lower_boundary", "upper_boundary"}));
  for (std::size_t j = 0; j < r.k; ++j)
    sites.row(detail::concat(std::vector<std::string>{std::to_string(j)}, detail::vec_cells(vor.sites[j]),
                             detail::vec_cells(model.mean_coordinates(vor.sites[j])),
                             std::vector<std::string>{fmt(r.codebook.assertion_probs[j]), fmt(vor.weights[j]),
                                                      lower[j], upper[j]}));
  write_table(s.out, "voronoi_sites", sites, s.formats, s.prov);

  const AssignmentTable exact(r.codebook, model);
  Table pts(detail::concat(detail::indexed("stat", model.dim_stat()), detail::indexed("mle", d),
                           std::vector<std::string>{"clamped", "exact_cell", "voronoi_cell", "agree"}));
  std::size_t agree = 0;
  for (std::size_t i = 0; i < s.marginal.size(); ++i) {
    const DataPoint& x = s.marginal.point(i);
    const MleResult m = model.mle(x);
    const std::size_t e = exact.best(x);
    const std::size_t v = voronoi_assign(vor, metric, m.theta);
    agree += e == v;
    pts.row(detail::concat(detail::vec_cells(x.stat), detail::vec_cells(m.theta),
                           std::vector<std::string>{m.clamped ? "1" : "0", std::to_string(e), std::to_string(v),
                                                    e == v ? "1" : "0"}));
  }
  write_table(s.out, "voronoi_points", pts, s.formats, s.prov);
  log << "k=" << r.k << " exact/voronoi agreement " << agree << "/" << s.marginal.size() << "\n";
  return kExitOk;
}

inline int cmd_asymptotics(const Session& s, std::ostream& log) {
  const ExperimentConfig& ex = s.cfg.experiment;
  const AsymptoticsReport rep = run_asymptotics(ex);
  Table t({"n", "k", "agreement", "agreement_se", "used", "excluded", "median_error", "p90_error",
           "median_mle_error", "median_scaled_gap", "max_scaled_residual", "max_abs_residual", "central_cells",
           "excluded_cells", "max_remainder"});
  for (std::size_t g = 0; g < rep.agreement.size(); ++g) {
    const auto& a = rep.agreement[g];
    const auto& r = rep.rate[g];
    const auto& e = rep.residual[g];
    const auto& m = rep.remainder[g];
    t.row({std::to_string(a.n), std::to_string(a.k), fmt(a.rate), fmt(a.bootstrap_se), std::to_string(a.used),
           std::to_string(a.excluded), fmt(r.median_error), fmt(r.p90_error), fmt(r.median_mle_error),
           fmt(r.median_scaled_gap), fmt(e.max_scaled_residual), fmt(e.max_abs_residual),
           std::to_string(e.central_cells), std::to_string(e.excluded_cells), fmt(m.max_remainder)});
  }
  write_table(s.out, "asymptotics", t, s.formats, s.prov);

  const auto trend = [](const TrendTest& tt) {
    return nlohmann::json{{"slope", tt.slope}, {"lower95", tt.lower}, {"upper95", tt.upper}, {"pass", tt.pass}};
  };
  const auto fit = [](const LineFit& f) {
    return nlohmann::json{{"slope", f.fitted ? nlohmann::json(f.slope) : nlohmann::json(nullptr)},
                          {"slope_se", f.fitted ? nlohmann::json(f.slope_se) : nlohmann::json(nullptr)}};
  };
  nlohmann::json summary = s.prov.json();
  summary["model"] = make_model(ex.model, ex.n_grid.back())->descriptor();
  summary["prior"] = ex.prior.descriptor();
  summary["source"] = to_string(ex.source);
  summary["mesh_constant"] = ex.mesh_constant;
  summary["theta0"] = ex.theta0;
  summary["n_grid"] = ex.n_grid;
  summary["replicates"] = ex.replicates;
  summary["uninformative"] = rep.uninformative;
  summary["excluded_fraction_last"] = rep.excluded_fraction_last;
  summary["smml_error_fit"] = fit(rep.smml_fit);
  summary["mle_error_fit"] = fit(rep.mle_fit);
  summary["agreement_trend"] = trend(rep.agreement_trend);
  summary["scaled_gap_trend"] = trend(rep.gap_trend);
  summary["residual_trend"] = trend(rep.residual_trend);
  summary["remainder_trend"] = trend(rep.remainder_trend);
  summary["warnings"] = rep.warnings;
  if (s.cfg.negative_control && ex.model.family == "binomial") {
    const NegativeControl nc = negative_control(ex);
    summary["negative_control"] = {{"n", nc.n},
                                   {"wide_remainder", nc.wide_remainder},
                                   {"mesh_remainder", nc.mesh_remainder},
                                   {"mesh_constant", nc.mesh_constant}};
  }
  write_json(s.out / "asymptotics_summary.json", summary);
  log << "smml slope=" << fmt(rep.smml_fit.slope) << " mle slope=" << fmt(rep.mle_fit.slope) << "\n";
  return kExitOk;
}

/// Parses argv and runs one subcommand. Diagnostics go to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Strict minimum message length codebooks for exponential families", "smml"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));
  std::string config;
  std::string out;
  std::string format;
  std::string codebook;
  std::optional<std::uint64_t> seed;
  std::uint64_t seed_value = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "configuration file")->required();
    sub->add_option("--out", out, "output directory (overrides [output] directory)");
    sub->add_option("--seed", seed_value, "master seed (overrides [solver] seed)");
    sub->add_option("--format", format, "artifact format")->check(CLI::IsMember({"csv", "json"}));
  };
  CLI::App* solve = app.add_subcommand("solve", "optimise a codebook and write it with its sweep trace");
  CLI::App* sweep = app.add_subcommand("sweep-k", "best codelength for each k in the configured range");
  CLI::App* dec = app.add_subcommand("decompose", "assertion / detail split of the codelength");
  CLI::App* vor = app.add_subcommand("voronoi", "exact cells against weighted Fisher-Voronoi cells");
  CLI::App* asym = app.add_subcommand("asymptotics", "large-n experiments over the configured grid");
  for (CLI::App* sub : {solve, sweep, dec, vor, asym}) common(sub);
  dec->add_option("--codebook", codebook, "codebook JSON from a previous solve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    log << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  CLI::App* active = app.get_subcommands().front();
  if (active->count("--seed")) seed = seed_value;

  try {
    if (active == asym) {
      const Session s = open_session(config, seed, out, format, false);
      return cmd_asymptotics(s, log);
    }
    const Session s = open_session(config, seed, out, format);
    if (active == solve) return cmd_solve(s, log);
    if (active == sweep) return cmd_sweep_k(s, log);
    if (active == dec) return cmd_decompose(s, codebook, log);
    return cmd_voronoi(s, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UnsupportedError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

}  // namespace smml
