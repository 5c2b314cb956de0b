#include "optalloc/cli/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "optalloc/errors.hpp"

namespace optalloc::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads a CSV with a fixed column set and hands each record to the caller
// as named, still-textual cells.
class Reader {
 public:
  Reader(const std::filesystem::path& path, std::vector<std::string> columns)
      : path_(path), columns_(std::move(columns)), in_(path) {
    if (!in_) throw DataError("cannot open data file '" + path.string() + "'");
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      header(split(t));
      return;
    }
    throw DataError(where() + ": missing header row");
  }

  bool next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const std::string t = trim(line);
      if (t.empty() || t.front() == '#') continue;
      cells_ = split(t);
      if (cells_.size() != index_.size()) {
        std::ostringstream msg;
        msg << where() << ": expected " << index_.size() << " fields, found " << cells_.size();
        throw DataError(msg.str());
      }
      return true;
    }
    return false;
  }

  bool blank(const std::string& col) const { return cell(col).empty(); }

  double number(const std::string& col) const {
    const std::string& text = cell(col);
    if (text.empty()) throw DataError(where() + ": column '" + col + "' is blank");
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
      throw DataError(where() + ": column '" + col + "': non-numeric value '" + text + "'");
    }
    return v;
  }

  int binary(const std::string& col) const {
    const double v = number(col);
    if (v != 0.0 && v != 1.0) throw DataError(where() + ": column '" + col + "' must be 0 or 1");
    return static_cast<int>(v);
  }

  double probability(const std::string& col) const {
    const double v = number(col);
    if (!(v > 0.0 && v < 1.0)) {
      throw DataError(where() + ": column '" + col + "' must lie in (0, 1), got " + cell(col));
    }
    return v;
  }

  std::string where() const { return path_.string() + ":" + std::to_string(line_no_); }

 private:
  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (std::find(columns_.begin(), columns_.end(), names[i]) == columns_.end()) {
        throw DataError(where() + ": unexpected column '" + names[i] + "'");
      }
      if (!index_.emplace(names[i], i).second) throw DataError(where() + ": duplicate column '" + names[i] + "'");
    }
    for (const auto& c : columns_) {
      if (!index_.count(c)) throw DataError(where() + ": missing column '" + c + "'");
    }
  }

  const std::string& cell(const std::string& col) const { return cells_[index_.at(col)]; }

  std::filesystem::path path_;
  std::vector<std::string> columns_;
  std::ifstream in_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::string> cells_;
  std::size_t line_no_ = 0;
};

std::ofstream open_output(const std::filesystem::path& path, const std::vector<std::string>& comments) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  return out;
}

}  // namespace

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

est::TrialDataset load_trial_csv(const std::filesystem::path& path) {
  Reader r(path, {"w1", "w2", "a", "y", "p_assign"});
  est::TrialDataset data;
  while (r.next()) {
    data.rows.push_back({{r.number("w1"), r.binary("w2")}, r.binary("a"), r.number("y"), r.probability("p_assign")});
  }
  if (data.rows.empty()) throw DataError(path.string() + ": no data rows");
  return data;
}

est::TargetCohort load_target_csv(const std::filesystem::path& path) {
  Reader r(path, {"w1", "w2"});
  est::TargetCohort data;
  while (r.next()) data.rows.push_back({r.number("w1"), r.binary("w2")});
  if (data.rows.empty()) throw DataError(path.string() + ": no data rows");
  return data;
}

est::GeneralizationCohort load_generalization_csv(const std::filesystem::path& path) {
  Reader r(path, {"w1", "w2", "z", "a", "y", "p_assign"});
  est::GeneralizationCohort data;
  bool any_trial = false, any_other = false;
  while (r.next()) {
    est::CohortRow row;
    row.w = {r.number("w1"), r.binary("w2")};
    row.z = r.binary("z");
    if (row.z == 1) {
      any_trial = true;
      row.a = r.binary("a");
      row.y = r.number("y");
      row.p_assign = r.probability("p_assign");
    } else {
      any_other = true;
      // trial-only fields are optional for non-participants but must be valid if present
      if (!r.blank("a")) row.a = r.binary("a");
      if (!r.blank("y")) row.y = r.number("y");
      if (!r.blank("p_assign")) row.p_assign = r.probability("p_assign");
    }
    data.rows.push_back(row);
  }
  if (!any_trial || !any_other) throw DataError(path.string() + ": needs rows with z = 1 and z = 0");
  return data;
}

std::vector<double> load_weights_csv(const std::filesystem::path& path) {
  Reader r(path, {"stratum_id", "tau_star"});
  std::map<long, double> by_id;
  while (r.next()) {
    const double id = r.number("stratum_id");
    if (id != std::floor(id) || id < 1) throw DataError(r.where() + ": stratum_id must be a positive integer");
    const double tau = r.number("tau_star");
    if (!(tau > 0.0)) throw DataError(r.where() + ": tau_star must be positive");
    if (!by_id.emplace(static_cast<long>(id), tau).second) {
      throw DataError(r.where() + ": duplicate stratum_id " + format_double(id));
    }
  }
  if (by_id.empty()) throw DataError(path.string() + ": no data rows");
  std::vector<double> weights;
  double sum = 0.0;
  long expect = 1;
  for (const auto& [id, tau] : by_id) {
    if (id != expect++) throw DataError(path.string() + ": stratum ids must run 1.." + std::to_string(by_id.size()));
    weights.push_back(tau);
    sum += tau;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError(path.string() + ": tau_star values sum to " + format_double(sum) + ", not 1");
  }
  return weights;
}

void write_trial_csv(const std::filesystem::path& path, const est::TrialDataset& data,
                     const std::vector<std::string>& comments) {
  auto out = open_output(path, comments);
  out << "w1,w2,a,y,p_assign\n";
  for (const auto& r : data.rows) {
    out << format_double(r.w.w1) << ',' << r.w.w2 << ',' << r.a << ',' << format_double(r.y) << ','
        << format_double(r.p_assign) << '\n';
  }
}

void write_target_csv(const std::filesystem::path& path, const est::TargetCohort& data,
                      const std::vector<std::string>& comments) {
  auto out = open_output(path, comments);
  out << "w1,w2\n";
  for (const auto& w : data.rows) out << format_double(w.w1) << ',' << w.w2 << '\n';
}

void write_generalization_csv(const std::filesystem::path& path, const est::GeneralizationCohort& data,
                              const std::vector<std::string>& comments) {
  auto out = open_output(path, comments);
  out << "w1,w2,z,a,y,p_assign\n";
  for (const auto& r : data.rows) {
    out << format_double(r.w.w1) << ',' << r.w.w2 << ',' << r.z << ',';
    if (r.a) out << *r.a;
    out << ',';
    if (r.y) out << format_double(*r.y);
    out << ',';
    if (r.p_assign) out << format_double(*r.p_assign);
    out << '\n';
  }
}

void write_weights_csv(const std::filesystem::path& path, const std::vector<double>& weights,
                       const std::vector<std::string>& comments) {
  auto out = open_output(path, comments);
  out << "stratum_id,tau_star\n";
  for (std::size_t k = 0; k < weights.size(); ++k) out << (k + 1) << ',' << format_double(weights[k]) << '\n';
}

}  // namespace optalloc::cli
