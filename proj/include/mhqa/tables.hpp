#pragma once

// Aligned plain-text tables for reports. Cells are separated by " | ", so
// any emitted table parses back into the same cells.

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mhqa/metrics.hpp"
#include "mhqa/util.hpp"

namespace mhqa {

struct TextTable {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  bool operator==(const TextTable&) const = default;

  std::string emit() const {
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    auto line = [&](const std::vector<std::string>& cells) {
      std::string out;
      for (std::size_t c = 0; c < width.size(); ++c) {
        std::string cell = c < cells.size() ? cells[c] : "";
        if (c > 0) out += " | ";
        out += cell;
        if (c + 1 < width.size()) out.append(width[c] - cell.size(), ' ');
      }
      return out;
    };
    std::string out;
    if (!title.empty()) out += title + "\n";
    out += line(header) + "\n";
    std::string rule;
    for (std::size_t c = 0; c < width.size(); ++c) {
      if (c > 0) rule += "-+-";
      rule.append(width[c], '-');
    }
    out += rule + "\n";
    for (const auto& r : rows) out += line(r) + "\n";
    return out;
  }

  /// Inverse of emit(). The title is the text above the header line.
  static TextTable parse(std::string_view text) {
    TextTable t;
    auto lines = util::split_lines(text);
    while (!lines.empty() && util::trim(lines.back()).empty()) lines.pop_back();
    std::size_t rule_at = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
      auto l = util::trim(lines[i]);
      if (!l.empty() && l.find_first_not_of("-+") == std::string_view::npos) {
        rule_at = i;
        break;
      }
    }
    if (rule_at == lines.size() || rule_at == 0) throw std::invalid_argument("not an emitted table");
    auto cells = [](std::string_view l) {
      std::vector<std::string> out;
      std::size_t start = 0;
      while (true) {
        auto pos = l.find(" | ", start);
        out.emplace_back(util::trim(l.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 3;
      }
      return out;
    };
    std::vector<std::string> title_lines;
    for (std::size_t i = 0; i + 1 < rule_at; ++i) title_lines.emplace_back(lines[i]);
    t.title = util::join(title_lines, "\n");
    t.header = cells(lines[rule_at - 1]);
    for (std::size_t i = rule_at + 1; i < lines.size(); ++i) t.rows.push_back(cells(lines[i]));
    return t;
  }
};

/// Percent with two decimals, "-" when absent.
inline std::string pct(std::optional<double> v) { return v ? util::fixed(*v * 100.0, 2) : "-"; }

inline std::optional<double> parse_pct(const std::string& cell) {
  if (cell == "-") return std::nullopt;
  return std::stod(cell);
}

inline std::optional<double> em_of(const std::optional<ScoreMeans>& m) { return m ? std::optional(m->em) : std::nullopt; }
inline std::optional<double> f1_of(const std::optional<ScoreMeans>& m) { return m ? std::optional(m->f1) : std::nullopt; }

}  // namespace mhqa
