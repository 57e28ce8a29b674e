#pragma once

// Artifact writers: CSV tables, JSON documents and the codebook file.

#include "smml/config.hpp"

#include <filesystem>

namespace smml {

/// Shortest-exact-enough decimal: 17 significant digits.
inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Stamp carried by every artifact.
struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;

  std::string csv_comment() const {
    return std::string("# smml ") + kToolVersion + " config_hash=" + config_hash + " seed=" + std::to_string(seed);
  }
  nlohmann::json json() const {
    return {{"tool_version", kToolVersion}, {"config_hash", config_hash}, {"seed", seed}};
  }
};

/// Column-ordered table of pre-formatted cells, written as CSV or a JSON array.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}

  Table& row(std::vector<std::string> cells) {
    if (cells.size() != header_.size()) throw InvariantError("table: row width differs from header");
    rows_.push_back(std::move(cells));
    return *this;
  }

  std::string csv(const Provenance& prov) const {
    std::string out = prov.csv_comment() + "\n";
    for (std::size_t i = 0; i < header_.size(); ++i) out += (i ? "," : "") + header_[i];
    out += "\n";
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
      out += "\n";
    }
    return out;
  }

  nlohmann::json json(const Provenance& prov) const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rows_) {
      nlohmann::json obj = nlohmann::json::object();
      for (std::size_t i = 0; i < r.size(); ++i) obj[header_[i]] = r[i];
      rows.push_back(std::move(obj));
    }
    nlohmann::json doc = prov.json();
    doc["columns"] = header_;
    doc["rows"] = std::move(rows);
    return doc;
  }

  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw ConfigError("write failed for '" + path.string() + "'");
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  write_text(path, doc.dump(2) + "\n");
}

inline std::vector<std::filesystem::path> write_table(const std::filesystem::path& dir, const std::string& stem,
                                                      const Table& table, const std::vector<std::string>& formats,
                                                      const Provenance& prov) {
  std::vector<std::filesystem::path> written;
  for (const auto& f : formats) {
    const auto path = dir / (stem + "." + f);
    if (f == "csv") write_text(path, table.csv(prov));
    if (f == "json") write_json(path, table.json(prov));
    written.push_back(path);
  }
  return written;
}

// ---------------------------------------------------------------------------
// Codebook document

inline constexpr const char* kCodebookFormat = "smml-codebook";
inline constexpr int kCodebookVersion = 1;

inline nlohmann::json codebook_document(const SolveResult& result, const ExponentialFamily& model,
                                        const PriorSpec& prior, const MarginalTable& marginal,
                                        const Provenance& prov) {
  nlohmann::json doc = prov.json();
  doc["format"] = kCodebookFormat;
  doc["version"] = kCodebookVersion;
  doc["model"] = model.descriptor();
  doc["prior"] = prior.descriptor();
  doc["method"] = result.method;
  doc["k"] = result.k;
  doc["fixed"] = result.codebook.fixed;
  doc["codelength_nats"] = result.codelength;
  doc["codelength_bits"] = result.codelength / std::log(2.0);
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t j = 0; j < result.codebook.size(); ++j) {
    cells.push_back({{"index", j},
                     {"theta", to_std(result.codebook.codepoints[j])},
                     {"mean", to_std(model.mean_coordinates(result.codebook.codepoints[j]))},
                     {"q", result.codebook.assertion_probs[j]}});
  }
  doc["cells"] = std::move(cells);
  nlohmann::json assignments = nlohmann::json::array();
  for (std::size_t i = 0; i < marginal.size(); ++i)
    assignments.push_back({{"stat", to_std(marginal.point(i).stat)}, {"cell", result.partition.cell_of[i]}});
  doc["assignments"] = std::move(assignments);
  return doc;
}

struct LoadedCodebook {
  Codebook codebook;
  Partition partition;
  double codelength = 0.0;
  std::string method;
  nlohmann::json model;
  nlohmann::json prior;
};

/// Reads a codebook document and maps its assignments onto the enumerated data
/// space of `marginal` by sufficient statistic.
inline LoadedCodebook read_codebook(const nlohmann::json& doc, const MarginalTable& marginal) {
  try {
    if (doc.at("format") != kCodebookFormat) throw ConfigError("not a codebook document");
    if (doc.at("version").get<int>() != kCodebookVersion) throw ConfigError("unsupported codebook version");
    LoadedCodebook out;
    out.method = doc.at("method").get<std::string>();
    out.codelength = doc.at("codelength_nats").get<double>();
    out.model = doc.at("model");
    out.prior = doc.at("prior");
    out.codebook.fixed = doc.value("fixed", false);
    for (const auto& c : doc.at("cells")) {
      out.codebook.codepoints.push_back(from_std(c.at("theta").get<std::vector<double>>()));
      out.codebook.assertion_probs.push_back(c.at("q").get<double>());
    }
    std::map<std::vector<double>, std::size_t> cell_of_stat;
    for (const auto& a : doc.at("assignments"))
      cell_of_stat[a.at("stat").get<std::vector<double>>()] = a.at("cell").get<std::size_t>();
    out.partition.cells = out.codebook.size();
    for (std::size_t i = 0; i < marginal.size(); ++i) {
      const auto it = cell_of_stat.find(to_std(marginal.point(i).stat));
      if (it == cell_of_stat.end()) throw ConfigError("codebook does not assign every data point");
      if (it->second >= out.partition.cells) throw ConfigError("codebook assignment out of range");
      out.partition.cell_of.push_back(it->second);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed codebook document: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read '" + path + "'");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace smml
