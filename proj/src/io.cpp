#include "tcd/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace tcd {

void write_file_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw io_error("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw io_error("cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

std::string samples_to_csv(const PointSet& points, const std::vector<Label>& labels) {
  std::string out = "sample_id,label";
  for (Eigen::Index d = 0; d < points.rows(); ++d) out += ",x" + std::to_string(d);
  out += '\n';
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    out += std::to_string(j);
    out += ',';
    if (!labels.empty() && labels[static_cast<std::size_t>(j)] != null_label)
      out += std::to_string(labels[static_cast<std::size_t>(j)]);
    for (Eigen::Index d = 0; d < points.rows(); ++d) {
      out += ',';
      out += format_double(points(d, j));
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw io_error(where + ": cannot parse number '" + s + "'");
  }
  return v;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* palette(int i) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  if (i < 0) return "#333333";
  return colors[i % 10];
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Frame {
  double x0, x1, y0, y1;
  static constexpr double width = 480, height = 480, margin = 48;
  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (width - 2 * margin); }
  double py(double y) const { return height - margin - (y - y0) / (y1 - y0) * (height - 2 * margin); }
};

std::string svg_open(const Frame& f, const std::string& title) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(Frame::width) + "\" height=\"" +
         fmt(Frame::height) + "\" viewBox=\"0 0 " + fmt(Frame::width) + " " + fmt(Frame::height) + "\">\n";
  out += "<rect x=\"0\" y=\"0\" width=\"" + fmt(Frame::width) + "\" height=\"" + fmt(Frame::height) +
         "\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(Frame::width / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + escape_xml(title) + "</text>\n";
  out += "<rect x=\"" + fmt(Frame::margin) + "\" y=\"" + fmt(Frame::margin) + "\" width=\"" +
         fmt(Frame::width - 2 * Frame::margin) + "\" height=\"" + fmt(Frame::height - 2 * Frame::margin) +
         "\" fill=\"none\" stroke=\"#999999\"/>\n";
  auto tick = [&](double x, double y, const std::string& text, const char* anchor) {
    out += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" text-anchor=\"" + anchor +
           "\" font-family=\"sans-serif\" font-size=\"10\">" + escape_xml(text) + "</text>\n";
  };
  tick(Frame::margin, Frame::height - Frame::margin + 14, fmt(f.x0), "start");
  tick(Frame::width - Frame::margin, Frame::height - Frame::margin + 14, fmt(f.x1), "end");
  tick(Frame::margin - 4, Frame::height - Frame::margin, fmt(f.y0), "end");
  tick(Frame::margin - 4, Frame::margin + 10, fmt(f.y1), "end");
  return out;
}

void pad(double& lo, double& hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi))) {
    lo = -1;
    hi = 1;
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

}  // namespace

SampleTable samples_from_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw io_error(origin + ": empty sample file");
  const auto header = split(line, ',');
  if (header.size() < 3 || header[0] != "sample_id" || header[1] != "label")
    throw io_error(origin + ": expected header sample_id,label,x0,...");
  const Eigen::Index dim = static_cast<Eigen::Index>(header.size()) - 2;
  std::vector<std::vector<double>> cols;
  std::vector<Label> labels;
  bool any_label = false;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    const std::string where = origin + ":" + std::to_string(row);
    if (static_cast<Eigen::Index>(fields.size()) != dim + 2) throw io_error(where + ": wrong field count");
    std::vector<double> p(static_cast<std::size_t>(dim));
    for (Eigen::Index d = 0; d < dim; ++d) p[static_cast<std::size_t>(d)] = parse_double(fields[2 + d], where);
    cols.push_back(std::move(p));
    if (fields[1].empty()) {
      labels.push_back(null_label);
    } else {
      labels.push_back(static_cast<Label>(parse_double(fields[1], where)));
      any_label = true;
    }
  }
  SampleTable table;
  table.points.resize(dim, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (Eigen::Index d = 0; d < dim; ++d) table.points(d, static_cast<Eigen::Index>(j)) = cols[j][d];
  if (any_label) table.labels = std::move(labels);
  return table;
}

std::string scatter_svg(const PointSet& points, const std::vector<Label>& labels, const std::string& title,
                        std::size_t max_points) {
  const Eigen::Index n = points.cols();
  const Eigen::Index stride =
      std::max<Eigen::Index>(1, (n + static_cast<Eigen::Index>(max_points) - 1) / static_cast<Eigen::Index>(max_points));
  Frame f{0, 1, 0, 1};
  if (n > 0 && points.rows() >= 1) {
    const Eigen::Index ycoord = points.rows() >= 2 ? 1 : 0;
    f.x0 = points.row(0).minCoeff();
    f.x1 = points.row(0).maxCoeff();
    f.y0 = points.row(ycoord).minCoeff();
    f.y1 = points.row(ycoord).maxCoeff();
  }
  pad(f.x0, f.x1);
  pad(f.y0, f.y1);
  std::string out = svg_open(f, title);
  const Eigen::Index ycoord = points.rows() >= 2 ? 1 : 0;
  for (Eigen::Index j = 0; j < n; j += stride) {
    const double x = points(0, j), y = points(ycoord, j);
    if (!std::isfinite(x) || !std::isfinite(y)) continue;
    const Label l = labels.empty() ? null_label : labels[static_cast<std::size_t>(j)];
    out += "<circle cx=\"" + fmt(f.px(x)) + "\" cy=\"" + fmt(f.py(y)) + "\" r=\"1.5\" fill=\"" + palette(l) +
           "\" fill-opacity=\"0.5\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string line_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                     const std::string& y_label) {
  Frame f{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
          std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
      f.x0 = std::min(f.x0, p.x);
      f.x1 = std::max(f.x1, p.x);
      f.y0 = std::min(f.y0, p.y);
      f.y1 = std::max(f.y1, p.y);
    }
  pad(f.x0, f.x1);
  pad(f.y0, f.y1);
  std::string out = svg_open(f, title);
  out += "<text x=\"" + fmt(Frame::width / 2) + "\" y=\"" + fmt(Frame::height - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape_xml(x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"" + fmt(Frame::height / 2) + "\" transform=\"rotate(-90 14 " + fmt(Frame::height / 2) +
         ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + escape_xml(y_label) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (const auto& p : series[i].points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) continue;
      if (!pts.empty()) pts += ' ';
      pts += fmt(f.px(p.x)) + "," + fmt(f.py(p.y));
    }
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + palette(static_cast<int>(i)) +
           "\" stroke-width=\"2\"/>\n";
    out += "<text x=\"" + fmt(Frame::width - Frame::margin - 4) + "\" y=\"" + fmt(Frame::margin + 14 + 14.0 * i) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" +
           palette(static_cast<int>(i)) + "\">" + escape_xml(series[i].name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace tcd
