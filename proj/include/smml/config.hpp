#pragma once

// Run configuration: a sectioned key = value text file.
//
//   [model]   family, n, categories, parameterization, prior, prior_params,
//             truncation, marginal
//   [solver]  method, k, k_min, k_max, restarts, max_sweeps, seed, mesh_constant
//   [experiment] theta0, n_grid, replicates, source, region, exclude_clamped,
//             bootstrap, negative_control
//   [output]  directory, formats
//
// '#' and ';' start comments. Unknown sections and keys are errors.

#include "smml/asymptotics.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace smml {

struct ConfigEntry {
  std::string value;
  int line = 0;
};

/// Parsed file: section -> key -> entry.
using ConfigDocument = std::map<std::string, std::map<std::string, ConfigEntry>>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"model",
       {"family", "n", "categories", "parameterization", "prior", "prior_params", "truncation", "marginal"}},
      {"solver", {"method", "k", "k_min", "k_max", "restarts", "max_sweeps", "seed", "mesh_constant"}},
      {"experiment",
       {"theta0", "n_grid", "replicates", "source", "region", "exclude_clamped", "bootstrap", "negative_control"}},
      {"output", {"directory", "formats"}},
  };
  return keys;
}

}  // namespace detail

inline ConfigDocument parse_config_text(const std::string& text) {
  ConfigDocument doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line = 0;
  const auto& keys = detail::known_keys();
  while (std::getline(in, raw)) {
    ++line;
    const auto cut = raw.find_first_of("#;");
    const std::string s = detail::trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (s.empty()) continue;
    const std::string where = "line " + std::to_string(line) + ": ";
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (!keys.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
      doc[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (section.empty()) throw ConfigError(where + "key '" + key + "' outside any section");
    if (!keys.at(section).count(key)) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    if (doc[section].count(key)) throw ConfigError(where + "duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "empty value for key '" + key + "'");
    doc[section][key] = {value, line};
  }
  return doc;
}

inline ConfigDocument parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

struct SolverConfig {
  std::string method = "dp";  ///< dp | lloyd | polyhedral
  std::size_t k_min = 1;
  std::size_t k_max = 6;
  std::size_t restarts = 20;
  int max_sweeps = 500;
  std::uint64_t seed = 0;
  double mesh_constant = 1.0;
};

struct OutputConfig {
  std::string directory = "out";
  std::vector<std::string> formats{"csv", "json"};
};

struct RunConfig {
  ModelSpec model;
  PriorSpec prior;
  double truncation = kTruncationEpsilon;
  MarginalMethod marginal = MarginalMethod::ClosedForm;
  SolverConfig solver;
  ExperimentConfig experiment;
  bool negative_control = true;
  OutputConfig output;
  /// Canonical "section.key=value" lines, sorted; the basis of the hash.
  std::string canonical;

  std::string hash() const;
};

namespace detail {

class Reader {
 public:
  explicit Reader(const ConfigDocument& doc) : doc_(doc) {}

  const ConfigEntry* find(const std::string& section, const std::string& key) const {
    const auto s = doc_.find(section);
    if (s == doc_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  template <class T, class Parse>
  void read(const std::string& section, const std::string& key, T& out, Parse parse) const {
    const ConfigEntry* e = find(section, key);
    if (!e) return;
    try {
      out = parse(e->value);
    } catch (const ConfigError& err) {
      throw ConfigError(where(*e, key) + err.what());
    } catch (const std::exception&) {
      throw ConfigError(where(*e, key) + "invalid value '" + e->value + "'");
    }
  }

  static std::string where(const ConfigEntry& e, const std::string& key) {
    return "line " + std::to_string(e.line) + ": key '" + key + "': ";
  }

 private:
  const ConfigDocument& doc_;
};

inline long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

inline std::size_t parse_count(const std::string& s) {
  const long long v = parse_int(s);
  if (v < 0) throw ConfigError("expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

inline std::uint64_t parse_u64(const std::string& s) {
  if (s.empty() || s.front() == '-') throw ConfigError("expected an unsigned integer");
  std::size_t pos = 0;
  const unsigned long long v = std::stoull(s, &pos);
  if (pos != s.size()) throw ConfigError("expected an unsigned integer, got '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size() || !std::isfinite(v)) throw ConfigError("expected a finite number, got '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "yes" || s == "1") return true;
  if (s == "false" || s == "no" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double(item));
  if (out.empty()) throw ConfigError("expected a list of numbers");
  return out;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(static_cast<int>(parse_int(item)));
  if (out.empty()) throw ConfigError("expected a list of integers");
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a64(canonical)));
  return buf;
}

/// Typed configuration. A seed override replaces [solver] seed and is part of the hash.
inline RunConfig load_config(const ConfigDocument& doc, std::optional<std::uint64_t> seed_override = std::nullopt) {
  using namespace detail;
  const Reader rd(doc);
  RunConfig cfg;
  const auto text = [](const std::string& s) { return s; };

  if (!rd.find("model", "family")) throw ConfigError("missing required key 'family' in [model]");
  rd.read("model", "family", cfg.model.family, text);
  if (cfg.model.family != "binomial" && cfg.model.family != "multinomial" && cfg.model.family != "poisson") {
    const ConfigEntry& e = *rd.find("model", "family");
    throw ConfigError(Reader::where(e, "family") + "unknown model family '" + e.value + "'");
  }
  rd.read("model", "n", cfg.model.n, [](const std::string& s) { return static_cast<int>(parse_int(s)); });
  rd.read("model", "categories", cfg.model.categories,
          [](const std::string& s) { return static_cast<int>(parse_int(s)); });
  rd.read("model", "parameterization", cfg.model.parameterization, parse_parameterization);
  cfg.prior.family = cfg.model.family == "binomial"      ? PriorFamily::Beta
                     : cfg.model.family == "multinomial" ? PriorFamily::Dirichlet
                                                         : PriorFamily::Gamma;
  cfg.prior.params = cfg.model.family == "multinomial"
                         ? std::vector<double>(static_cast<std::size_t>(std::max(cfg.model.categories, 2)), 1.0)
                         : std::vector<double>{1.0, 1.0};
  rd.read("model", "prior", cfg.prior.family, parse_prior_family);
  rd.read("model", "prior_params", cfg.prior.params, parse_doubles);
  rd.read("model", "truncation", cfg.truncation, parse_double);
  rd.read("model", "marginal", cfg.marginal, [](const std::string& s) {
    if (s == "closed_form") return MarginalMethod::ClosedForm;
    if (s == "quadrature") return MarginalMethod::Quadrature;
    throw ConfigError("marginal must be closed_form or quadrature");
  });
  if (!(cfg.truncation > 0.0 && cfg.truncation < 1.0)) throw ConfigError("truncation must lie in (0, 1)");
  {
    std::unique_ptr<ExponentialFamily> probe;
    try {
      probe = make_model(cfg.model);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("[model]: ") + e.what());
    }
    try {
      validate_prior(cfg.prior, *probe);
    } catch (const ConfigError& e) {
      const ConfigEntry* at = rd.find("model", "prior_params");
      if (!at) at = rd.find("model", "prior");
      throw ConfigError(at ? Reader::where(*at, "prior") + e.what() : std::string("[model]: ") + e.what());
    }
  }

  rd.read("solver", "method", cfg.solver.method, [](const std::string& s) {
    if (s != "dp" && s != "lloyd" && s != "polyhedral") throw ConfigError("method must be dp, lloyd or polyhedral");
    return s;
  });
  if (const ConfigEntry* e = rd.find("solver", "k")) {
    if (rd.find("solver", "k_min") || rd.find("solver", "k_max"))
      throw ConfigError(Reader::where(*e, "k") + "give either k or k_min/k_max");
    rd.read("solver", "k", cfg.solver.k_min, parse_count);
    cfg.solver.k_max = cfg.solver.k_min;
  }
  rd.read("solver", "k_min", cfg.solver.k_min, parse_count);
  rd.read("solver", "k_max", cfg.solver.k_max, parse_count);
  if (cfg.solver.k_min < 1 || cfg.solver.k_max < cfg.solver.k_min)
    throw ConfigError("[solver]: need 1 <= k_min <= k_max");
  rd.read("solver", "restarts", cfg.solver.restarts, parse_count);
  rd.read("solver", "max_sweeps", cfg.solver.max_sweeps,
          [](const std::string& s) { return static_cast<int>(parse_int(s)); });
  rd.read("solver", "seed", cfg.solver.seed, parse_u64);
  rd.read("solver", "mesh_constant", cfg.solver.mesh_constant, parse_double);
  if (seed_override) cfg.solver.seed = *seed_override;
  if (cfg.solver.restarts < 1) throw ConfigError("[solver]: restarts must be >= 1");
  if (cfg.solver.max_sweeps < 1) throw ConfigError("[solver]: max_sweeps must be >= 1");
  if (!(cfg.solver.mesh_constant > 0.0)) throw ConfigError("[solver]: mesh_constant must be > 0");

  ExperimentConfig& ex = cfg.experiment;
  ex.model = cfg.model;
  ex.prior = cfg.prior;
  ex.seed = cfg.solver.seed;
  ex.mesh_constant = cfg.solver.mesh_constant;
  ex.restarts = cfg.solver.restarts;
  ex.k_max = rd.find("solver", "k_max") || rd.find("solver", "k") ? cfg.solver.k_max : 0;
  rd.read("experiment", "theta0", ex.theta0, parse_doubles);
  rd.read("experiment", "n_grid", ex.n_grid, parse_ints);
  rd.read("experiment", "replicates", ex.replicates, parse_count);
  rd.read("experiment", "source", ex.source, parse_codebook_source);
  std::vector<double> region{ex.region_lo, ex.region_hi};
  rd.read("experiment", "region", region, parse_doubles);
  if (region.size() != 2) throw ConfigError("[experiment]: region takes two numbers");
  ex.region_lo = region[0];
  ex.region_hi = region[1];
  rd.read("experiment", "exclude_clamped", ex.exclude_clamped, parse_bool);
  rd.read("experiment", "bootstrap", ex.bootstrap, parse_count);
  rd.read("experiment", "negative_control", cfg.negative_control, parse_bool);

  rd.read("output", "directory", cfg.output.directory, text);
  rd.read("output", "formats", cfg.output.formats, [](const std::string& s) {
    auto v = split_list(s);
    for (const auto& f : v)
      if (f != "csv" && f != "json") throw ConfigError("formats are csv and json");
    if (v.empty()) throw ConfigError("formats must not be empty");
    return v;
  });

  std::vector<std::string> lines;
  for (const auto& [section, keys] : doc)
    for (const auto& [key, entry] : keys)
      if (!(section == "solver" && key == "seed")) lines.push_back(section + "." + key + "=" + entry.value);
  lines.push_back("solver.seed=" + std::to_string(cfg.solver.seed));
  std::sort(lines.begin(), lines.end());
  for (const auto& l : lines) cfg.canonical += l + "\n";
  return cfg;
}

inline RunConfig load_config_file(const std::string& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  return load_config(parse_config_file(path), seed_override);
}

}  // namespace smml
