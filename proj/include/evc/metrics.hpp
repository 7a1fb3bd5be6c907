#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace evc {

struct StepMetrics;

/// Line-oriented loss log: "<step>\t<name>\t<value>" per line.
class MetricsLog {
 public:
  /// Keeps existing lines with step <= keep_until (for resumed runs), drops the rest.
  MetricsLog(const std::filesystem::path& path, std::int64_t keep_until);
  void append(const StepMetrics& metrics);

 private:
  std::ofstream out_;
};

struct MetricRecord {
  std::int64_t step = 0;
  std::string name;
  double value = 0.0;
};

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

/// name -> (step, value) series in file order.
std::map<std::string, std::vector<std::pair<std::int64_t, double>>> metric_series(
    const std::vector<MetricRecord>& records);

/// Trailing moving average over `window` entries ending at index `end` (exclusive).
double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window);

}  // namespace evc
