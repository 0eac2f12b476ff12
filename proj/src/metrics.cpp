#include "cle/metrics.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cle {

void MetricLog::add(int task, const std::string& stage, int epoch, const std::string& metric,
                    double value) {
  rows.push_back({task, stage, epoch, metric, value});
}

void MetricLog::append(const MetricLog& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

double MetricLog::get(int task, const std::string& stage, int epoch,
                      const std::string& metric) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
    if (it->task == task && it->stage == stage && it->epoch == epoch && it->metric == metric) {
      return it->value;
    }
  }
  throw std::runtime_error("metric log: no row for task " + std::to_string(task) + " " + stage +
                           " epoch " + std::to_string(epoch) + " " + metric);
}

std::vector<const MetricRow*> MetricLog::select(int task, const std::string& stage,
                                                const std::string& metric) const {
  std::vector<const MetricRow*> out;
  for (const MetricRow& r : rows) {
    if (r.task == task && r.stage == stage && r.metric == metric) out.push_back(&r);
  }
  return out;
}

void MetricLog::write(std::ostream& out) const {
  for (const MetricRow& r : rows) {
    char value[64];
    std::snprintf(value, sizeof value, "%.17g", r.value);
    out << r.task << "\t" << r.stage << "\t" << r.epoch << "\t" << r.metric << "\t" << value
        << "\n";
  }
}

MetricLog MetricLog::read(std::istream& in) {
  MetricLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    MetricRow r;
    std::string value;
    if (!(is >> r.task >> r.stage >> r.epoch >> r.metric >> value)) {
      throw std::runtime_error("metric log: malformed row: " + line);
    }
    r.value = std::stod(value);
    log.rows.push_back(std::move(r));
  }
  return log;
}

}  // namespace cle
