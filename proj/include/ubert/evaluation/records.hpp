// Per-document prediction records and the prediction-dump file.
//
// Dump format: UTF-8 text, one record per line, tab-separated:
//   id  length  gold  probability  predicted  model
// Lines starting with '#' are comments (used to echo the run configuration).
#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ubert/evaluation/metrics.hpp"

namespace ubert::eval {

struct PredictionRecord {
  std::string id;
  std::size_t length = 0;  // tokens under the artifact tokenizer
  int gold = 0;
  double probability = 0.5;
  int predicted = 0;
  std::string model;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline ConfusionCounts confusion(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw std::invalid_argument("confusion: empty evaluation set");
  ConfusionCounts c;
  for (const auto& r : records) {
    if (r.gold == 1) {
      (r.predicted == 1 ? c.tp : c.fn)++;
    } else {
      (r.predicted == 1 ? c.fp : c.tn)++;
    }
  }
  return c;
}

inline std::string format_probability(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", p);
  return buf;
}

inline void write_record(std::ostream& out, const PredictionRecord& r) {
  out << r.id << '\t' << r.length << '\t' << r.gold << '\t' << format_probability(r.probability) << '\t'
      << r.predicted << '\t' << r.model << '\n';
}

inline void write_dump(std::ostream& out, const std::vector<PredictionRecord>& records, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  for (const auto& r : records) write_record(out, r);
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class V>
V parse_number(const std::string& s, std::size_t line, const char* field) {
  V v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("prediction dump line " + std::to_string(line) + ": bad " + field + " '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline std::vector<PredictionRecord> read_dump(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto f = detail::split_tabs(line);
    if (f.size() != 6) {
      throw std::runtime_error("prediction dump line " + std::to_string(line_no) + ": expected 6 fields, got " +
                               std::to_string(f.size()));
    }
    PredictionRecord r;
    r.id = f[0];
    r.length = detail::parse_number<std::size_t>(f[1], line_no, "length");
    r.gold = detail::parse_number<int>(f[2], line_no, "gold label");
    r.probability = detail::parse_number<double>(f[3], line_no, "probability");
    r.predicted = detail::parse_number<int>(f[4], line_no, "predicted label");
    r.model = f[5];
    if ((r.gold != 0 && r.gold != 1) || (r.predicted != 0 && r.predicted != 1)) {
      throw std::runtime_error("prediction dump line " + std::to_string(line_no) + ": labels must be 0 or 1");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PredictionRecord> read_dump(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prediction dump " + path.string());
  auto records = read_dump(in);
  if (records.empty()) throw std::runtime_error("prediction dump " + path.string() + " has no records");
  return records;
}

}  // namespace ubert::eval
