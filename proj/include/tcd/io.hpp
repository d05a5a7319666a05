#pragma once

#include <string>
#include <vector>

#include "tcd/core.hpp"

namespace tcd {

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// Shortest round-trippable decimal form of `v` ("nan"/"inf" for non-finite values).
std::string format_double(double v);

/// Sample set CSV: `sample_id,label,x0,x1,...`; label is empty for unconditional points.
std::string samples_to_csv(const PointSet& points, const std::vector<Label>& labels);

struct SampleTable {
  PointSet points;
  std::vector<Label> labels;
};
SampleTable samples_from_csv(const std::string& text, const std::string& origin);

struct SeriesPoint {
  double x;
  double y;
};
struct Series {
  std::string name;
  std::vector<SeriesPoint> points;
};

/// Scatter plot of the first two coordinates; at most `max_points` circles,
/// chosen by a fixed stride so the output is deterministic.
std::string scatter_svg(const PointSet& points, const std::vector<Label>& labels, const std::string& title,
                        std::size_t max_points = 5000);

/// Line plot, one polyline per series.
std::string line_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label);

}  // namespace tcd
