#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cle {

// Append-only long-format log: one measurement per row.
struct MetricRow {
  int task = -1;
  std::string stage;  // "stage1", "stage2", "probe", ...
  int epoch = -1;     // -1 for stage-level entries
  std::string metric;
  double value = 0;
};

struct MetricLog {
  std::vector<MetricRow> rows;

  void add(int task, const std::string& stage, int epoch, const std::string& metric, double value);
  void append(const MetricLog& other);
  double get(int task, const std::string& stage, int epoch, const std::string& metric) const;
  std::vector<const MetricRow*> select(int task, const std::string& stage,
                                       const std::string& metric) const;

  void write(std::ostream& out) const;
  static MetricLog read(std::istream& in);
};

}  // namespace cle
