#include "evc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "evc/trainer.hpp"
#include "evc/util.hpp"

namespace evc {

namespace {
std::string format_line(std::int64_t step, const std::string& name, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::to_string(step) + "\t" + name + "\t" + buf + "\n";
}
}  // namespace

MetricsLog::MetricsLog(const std::filesystem::path& path, std::int64_t keep_until) {
  std::string kept;
  if (keep_until > 0 && std::filesystem::exists(path))
    for (const auto& r : read_metrics(path))
      if (r.step <= keep_until) kept += format_line(r.step, r.name, r.value);
  out_.open(path, std::ios::trunc);
  if (!out_) throw Error("cannot write " + path.string());
  out_ << kept;
}

void MetricsLog::append(const StepMetrics& m) {
  for (const auto& [name, value] : m.values) out_ << format_line(m.step, name, value);
  out_.flush();
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<MetricRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    MetricRecord r;
    std::string value;
    if (!(fields >> r.step) || !(fields >> r.name) || !(fields >> value))
      throw Error(path.string() + ":" + std::to_string(lineno) + ": malformed metrics line");
    r.value = std::stod(value);
    out.push_back(std::move(r));
  }
  return out;
}

std::map<std::string, std::vector<std::pair<std::int64_t, double>>> metric_series(
    const std::vector<MetricRecord>& records) {
  std::map<std::string, std::vector<std::pair<std::int64_t, double>>> out;
  for (const auto& r : records) out[r.name].emplace_back(r.step, r.value);
  return out;
}

double moving_average(const std::vector<double>& values, std::size_t end, std::size_t window) {
  end = std::min(end, values.size());
  const std::size_t begin = end > window ? end - window : 0;
  if (end == begin) return 0.0;
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += values[i];
  return sum / static_cast<double>(end - begin);
}

}  // namespace evc
