#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lsdan/train.hpp"

#ifndef LSDAN_VERSION
#define LSDAN_VERSION "0.1.0-unknown"
#endif

namespace lsdan {

inline std::string version_string() { return LSDAN_VERSION; }

inline std::string format_fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string format_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", p);
  return buf;
}

inline const char* kCsvHeader = "variant,dataset,objective,p,kappa,layers,dim,mean_f1,std_f1,n_trials";

inline std::string csv_row(const TrialSummary& s) {
  return (s.label.empty() ? to_string(s.objective) : s.label) + "," + s.dataset + "," + to_string(s.objective) + "," + format_p(s.p) + "," + std::to_string(s.kappa) + "," +
         std::to_string(s.layers) + "," + std::to_string(s.dim) + "," + format_fixed(s.mean_f1) + "," +
         format_fixed(s.std_f1) + "," + std::to_string(s.trials.size());
}

/// CSV preceded by one comment line carrying version and resolved config.
inline std::string csv_document(std::span<const TrialSummary> rows, const nlohmann::json& config) {
  std::string out = "# lsdan " + version_string() + " config=" + config.dump() + "\n";
  out += kCsvHeader;
  out += '\n';
  for (const auto& r : rows) out += csv_row(r) + '\n';
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(1) + "\n"); }

inline nlohmann::json summary_to_json(const TrialSummary& s) {
  nlohmann::json fails = nlohmann::json::array();
  for (const auto& f : s.failures) fails.push_back({{"seed", f.seed}, {"error", f.message}});
  return {{"dataset", s.dataset},   {"objective", s.objective}, {"p", s.p},
          {"kappa", s.kappa},       {"layers", s.layers},       {"dim", s.dim},
          {"mean_f1", s.mean_f1},   {"std_f1", s.std_f1},       {"n_trials", s.trials.size()},
          {"single_trial", s.single_trial}, {"failures", fails}, {"label", s.label}};
}

inline std::string mean_std(const TrialSummary& s) {
  if (s.trials.empty()) return "failed";
  return format_fixed(s.mean_f1, 3) + "+-" + format_fixed(s.std_f1, 3) + (s.single_trial ? "*" : "");
}

/// Plain-text grid: one line per p, one column per variant.
inline std::string summary_table(const std::string& title, std::span<const std::string> columns,
                                 std::span<const double> p_values,
                                 const std::vector<std::vector<const TrialSummary*>>& cells) {
  std::string out = title + "\n";
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  out += pad("%p", 8);
  for (const auto& c : columns) out += " | " + pad(c, 14);
  out += '\n';
  for (std::size_t r = 0; r < p_values.size(); ++r) {
    out += pad(format_p(p_values[r]), 8);
    for (const auto* s : cells[r]) out += " | " + pad(s ? mean_std(*s) : "-", 14);
    out += '\n';
  }
  return out;
}

}  // namespace lsdan
