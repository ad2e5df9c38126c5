#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oampsa/error.hpp"

namespace oampsa::harness {

/// Wilson score interval for a binomial proportion (z = 1.96 for 95%).
struct Interval {
  double lo = 0.0;
  double hi = 1.0;
};

inline Interval wilson_interval(std::uint64_t errors, std::uint64_t trials, double z = 1.959963984540054) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(errors) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {errors == 0 ? 0.0 : std::max(0.0, center - half), errors == trials ? 1.0 : std::min(1.0, center + half)};
}

/// One line of the evaluation CSV.
struct EvalRow {
  double snr_db = 0.0;
  std::string detector;
  double ser = 0.0;
  double ser_ci_lo = 0.0;
  double ser_ci_hi = 0.0;
  double ber = 0.0;
  std::uint64_t n = 0;  // symbol vectors
  double runtime_us = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kEvalHeader = "snr_db,detector,ser,ser_ci_lo,ser_ci_hi,ber,n,runtime_us,seed";

/// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = std::string(kEvalHeader) + "\n";
  for (const auto& r : rows) {
    out += format_double(r.snr_db) + "," + r.detector + "," + format_double(r.ser) + "," + format_double(r.ser_ci_lo) +
           "," + format_double(r.ser_ci_hi) + "," + format_double(r.ber) + "," + std::to_string(r.n) + "," +
           format_double(r.runtime_us) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("write failed on '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CsvError : public DataError {
 public:
  CsvError(std::size_t line, const std::string& what) : DataError("line " + std::to_string(line) + ": " + what) {}
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, std::size_t line, const char* field) {
  if (s.empty()) throw CsvError(line, std::string("empty ") + field);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw CsvError(line, std::string("invalid ") + field + " '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(const std::string& s, std::size_t line, const char* field) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw CsvError(line, std::string("invalid ") + field + " '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw CsvError(line, std::string("invalid ") + field + " '" + s + "'");
  }
}

}  // namespace detail

/// Parses an evaluation CSV; every malformed row is reported with its 1-based line number.
inline std::vector<EvalRow> parse_eval_csv(const std::string& text) {
  std::vector<EvalRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != kEvalHeader) throw CsvError(lineno, "expected header '" + std::string(kEvalHeader) + "'");
      header = true;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() != 9) throw CsvError(lineno, "expected 9 fields, found " + std::to_string(f.size()));
    EvalRow r;
    r.snr_db = detail::parse_double(f[0], lineno, "snr_db");
    if (f[1].empty()) throw CsvError(lineno, "empty detector name");
    r.detector = f[1];
    r.ser = detail::parse_double(f[2], lineno, "ser");
    r.ser_ci_lo = detail::parse_double(f[3], lineno, "ser_ci_lo");
    r.ser_ci_hi = detail::parse_double(f[4], lineno, "ser_ci_hi");
    r.ber = detail::parse_double(f[5], lineno, "ber");
    r.n = detail::parse_u64(f[6], lineno, "n");
    r.runtime_us = detail::parse_double(f[7], lineno, "runtime_us");
    r.seed = detail::parse_u64(f[8], lineno, "seed");
    if (r.ser < 0.0 || r.ser > 1.0 || r.ber < 0.0 || r.ber > 1.0) throw CsvError(lineno, "error rate outside [0, 1]");
    if (r.n == 0) throw CsvError(lineno, "n must be positive");
    rows.push_back(std::move(r));
  }
  if (!header) throw CsvError(lineno == 0 ? 1 : lineno, "missing header");
  return rows;
}

}  // namespace oampsa::harness
