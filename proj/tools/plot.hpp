#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace evc {

/// Standalone SVG line chart of one (step, value) series, with a trailing
/// moving-average overlay when the series is long enough to be noisy.
std::string render_svg_plot(const std::string& title,
                            const std::vector<std::pair<std::int64_t, double>>& series);

}  // namespace evc
