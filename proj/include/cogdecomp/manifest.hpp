#pragma once

// Dataset manifest CSV: subject_id,label,path[,age,sex,mmse]

#include <algorithm>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cogdecomp/csv.hpp"
#include "cogdecomp/error.hpp"

namespace cogdecomp {

struct ManifestRow {
  std::string subject_id;
  std::string label;
  std::filesystem::path path;  // resolved against the manifest directory
  std::optional<double> age;
  std::string sex;
  std::optional<double> mmse;
};

using Manifest = std::vector<ManifestRow>;

/// Loads and validates a manifest. An empty `labels` accepts any class label.
inline Manifest load_manifest(const std::filesystem::path& path, std::span<const std::string> labels = {}) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 3 || t.header[0] != "subject_id" || t.header[1] != "label" || t.header[2] != "path")
    throw Error(Errc::InvalidConfig, path.string() + ": header must start with subject_id,label,path");
  for (std::size_t c = 3; c < t.header.size(); ++c)
    if (t.header[c] != "age" && t.header[c] != "sex" && t.header[c] != "mmse")
      throw Error(Errc::InvalidConfig, path.string() + ": unknown manifest column '" + t.header[c] + "'");

  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const std::set<std::string> allowed(labels.begin(), labels.end());
  std::set<std::string> ids;
  Manifest m;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path.string() + ":" + std::to_string(t.line_numbers[r]);
    if (row.size() != t.header.size()) throw Error(Errc::InvalidConfig, where + ": wrong number of fields");
    ManifestRow e{row[0], row[1], row[2], std::nullopt, {}, std::nullopt};
    if (e.subject_id.empty()) throw Error(Errc::InvalidConfig, where + ": empty subject_id");
    if (!ids.insert(e.subject_id).second) throw Error(Errc::InvalidConfig, where + ": duplicate subject " + e.subject_id);
    if (!allowed.empty() && !allowed.count(e.label))
      throw Error(Errc::InvalidConfig, where + ": label '" + e.label + "' not in configured label set");
    if (e.path.is_relative()) e.path = base / e.path;
    for (std::size_t c = 3; c < row.size(); ++c) {
      if (row[c].empty()) continue;
      if (t.header[c] == "sex") {
        e.sex = row[c];
        continue;
      }
      double v;
      if (!csv::parse_double(row[c], v)) throw Error(Errc::InvalidConfig, where + ": non-numeric " + t.header[c]);
      (t.header[c] == "age" ? e.age : e.mmse) = v;
    }
    m.push_back(std::move(e));
  }
  if (m.empty()) throw Error(Errc::InvalidConfig, path.string() + " lists no subjects");
  return m;
}

/// Writes subject_id,label,path (plus any metadata present) with paths
/// relative to the manifest directory when possible.
inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  auto out = csv::open_for_write(path);
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  const bool meta = std::any_of(m.begin(), m.end(), [](const ManifestRow& e) { return e.age || !e.sex.empty() || e.mmse; });
  out << "subject_id,label,path" << (meta ? ",age,sex,mmse" : "") << '\n';
  for (const auto& e : m) {
    // Relative only when the file sits below the manifest's directory.
    auto p = e.path.lexically_relative(base);
    if (p.empty() || *p.begin() == "..") p = e.path;
    out << e.subject_id << ',' << e.label << ',' << p.generic_string();
    if (meta)
      out << ',' << (e.age ? csv::format_double(*e.age) : "") << ',' << e.sex << ','
          << (e.mmse ? csv::format_double(*e.mmse) : "");
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failure in " + path.string());
}

}  // namespace cogdecomp
