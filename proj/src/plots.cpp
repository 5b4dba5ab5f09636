#include "coworld/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

double parse_cell(const std::string& s, const std::string& where) {
  if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw FormatError("metrics: bad cell \"" + s + "\" " + where);
  }
  if (used != s.size()) throw FormatError("metrics: bad cell \"" + s + "\" " + where);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// one (x, y) point list with NaNs already dropped
struct Series {
  std::vector<double> x, y;
};

Series finite_points(const std::vector<double>& xs, const std::vector<double>& ys) {
  Series s;
  for (size_t i = 0; i < xs.size(); ++i)
    if (std::isfinite(xs[i]) && std::isfinite(ys[i])) {
      s.x.push_back(xs[i]);
      s.y.push_back(ys[i]);
    }
  return s;
}

struct Range {
  double lo = 0.0, hi = 1.0;
  void widen(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (hi <= lo) {
      lo -= 0.5;
      hi += 0.5;
    } else {
      const double m = 0.06 * (hi - lo);
      lo -= m;
      hi += m;
    }
  }
};

// fixed geometry shared by all figures
constexpr double kW = 640, kH = 400;
constexpr double kL = 64, kR = 16, kT = 44, kB = 44;  // margins

struct Frame {
  Range xr, yr;
  double sx(double x) const { return kL + (x - xr.lo) / (xr.hi - xr.lo) * (kW - kL - kR); }
  double sy(double y) const { return kH - kB - (y - yr.lo) / (yr.hi - yr.lo) * (kH - kT - kB); }
};

void open_svg(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
    << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"#ffffff\"/>\n"
    << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
    << " font-size=\"16\" fill=\"#222\">" << title << "</text>\n";
}

void draw_axes(std::ostringstream& o, const Frame& f, const std::string& xlab,
               const std::string& ylab) {
  o << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kW - kL - kR << "\" height=\""
    << kH - kT - kB << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double tx = f.xr.lo + (f.xr.hi - f.xr.lo) * i / 4.0;
    const double ty = f.yr.lo + (f.yr.hi - f.yr.lo) * i / 4.0;
    o << "<line x1=\"" << fmt(f.sx(tx)) << "\" y1=\"" << kH - kB << "\" x2=\"" << fmt(f.sx(tx))
      << "\" y2=\"" << kH - kB + 4 << "\" stroke=\"#888\"/>\n"
      << "<text x=\"" << fmt(f.sx(tx)) << "\" y=\"" << kH - kB + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">"
      << fmt_tick(tx) << "</text>\n"
      << "<line x1=\"" << kL - 4 << "\" y1=\"" << fmt(f.sy(ty)) << "\" x2=\"" << kL << "\" y2=\""
      << fmt(f.sy(ty)) << "\" stroke=\"#888\"/>\n"
      << "<text x=\"" << kL - 7 << "\" y=\"" << fmt(f.sy(ty) + 4)
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">"
      << fmt_tick(ty) << "</text>\n";
  }
  o << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 8
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222\">"
    << xlab << "</text>\n"
    << "<text x=\"14\" y=\"" << (kT + kH - kB) / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222\""
    << " transform=\"rotate(-90 14 " << (kT + kH - kB) / 2 << ")\">" << ylab << "</text>\n";
}

void no_data(std::ostringstream& o) {
  o << "<text x=\"" << kW / 2 << "\" y=\"" << kH / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#999\">"
    << "no data points</text>\n";
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("plots: cannot open " + path.string());
  out << body;
  if (!out) throw DataError("plots: write failed for " + path.string());
}

std::string line_figure(const std::string& title, const std::string& ylab, const Series& pts,
                        const Series* band_hi, const Series* band_lo, const char* color) {
  std::ostringstream o;
  open_svg(o, title);
  if (pts.x.empty()) {
    no_data(o);
    o << "</svg>\n";
    return o.str();
  }
  Frame f;
  f.xr.lo = f.xr.hi = pts.x[0];
  f.yr.lo = f.yr.hi = pts.y[0];
  for (size_t i = 0; i < pts.x.size(); ++i) {
    f.xr.widen(pts.x[i]);
    f.yr.widen(pts.y[i]);
  }
  if (band_hi)
    for (size_t i = 0; i < band_hi->x.size(); ++i) {
      f.yr.widen(band_hi->y[i]);
      f.yr.widen(band_lo->y[i]);
    }
  f.xr.pad();
  f.yr.pad();
  draw_axes(o, f, "step", ylab);

  if (band_hi && !band_hi->x.empty()) {
    o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
    for (size_t i = 0; i < band_hi->x.size(); ++i)
      o << fmt(f.sx(band_hi->x[i])) << "," << fmt(f.sy(band_hi->y[i])) << " ";
    for (size_t i = band_lo->x.size(); i-- > 0;)
      o << fmt(f.sx(band_lo->x[i])) << "," << fmt(f.sy(band_lo->y[i])) << " ";
    o << "\"/>\n";
  }
  o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
  for (size_t i = 0; i < pts.x.size(); ++i)
    o << fmt(f.sx(pts.x[i])) << "," << fmt(f.sy(pts.y[i])) << " ";
  o << "\"/>\n";
  for (size_t i = 0; i < pts.x.size(); ++i)
    o << "<circle cx=\"" << fmt(f.sx(pts.x[i])) << "\" cy=\"" << fmt(f.sy(pts.y[i]))
      << "\" r=\"3\" fill=\"" << color << "\"/>\n";
  o << "</svg>\n";
  return o.str();
}

std::string bar_figure(const std::string& title, const std::string& ylab, const Series& pts) {
  std::ostringstream o;
  open_svg(o, title);
  if (pts.x.empty()) {
    no_data(o);
    o << "</svg>\n";
    return o.str();
  }
  Frame f;
  f.xr.lo = f.xr.hi = pts.x[0];
  f.yr.lo = f.yr.hi = 0.0;  // bars hang off the zero line
  for (size_t i = 0; i < pts.x.size(); ++i) {
    f.xr.widen(pts.x[i]);
    f.yr.widen(pts.y[i]);
  }
  f.xr.pad();
  f.yr.pad();
  draw_axes(o, f, "step", ylab);

  const double slot = (kW - kL - kR) / pts.x.size();
  const double bw = std::min(28.0, 0.6 * slot);
  for (size_t i = 0; i < pts.x.size(); ++i) {
    const double cx = f.sx(pts.x[i]);
    const double y0 = f.sy(0.0), y1 = f.sy(pts.y[i]);
    // overestimation (positive gap) in red, conservatism in blue
    const char* color = pts.y[i] >= 0.0 ? "#c0392b" : "#2471a3";
    o << "<rect x=\"" << fmt(cx - bw / 2) << "\" y=\"" << fmt(std::min(y0, y1)) << "\" width=\""
      << fmt(bw) << "\" height=\"" << fmt(std::abs(y1 - y0)) << "\" fill=\"" << color
      << "\" fill-opacity=\"0.85\"/>\n";
  }
  o << "<line x1=\"" << kL << "\" y1=\"" << fmt(f.sy(0.0)) << "\" x2=\"" << kW - kR << "\" y2=\""
    << fmt(f.sy(0.0)) << "\" stroke=\"#222\" stroke-width=\"1\"/>\n";
  o << "</svg>\n";
  return o.str();
}

}  // namespace

int MetricsTable::column(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

std::vector<double> MetricsTable::series(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw UsageError("metrics: no column named " + name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

MetricsTable load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("metrics: cannot open " + path);
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("metrics: empty file " + path);
  t.columns = split_csv(line);
  if (t.columns.empty()) throw FormatError("metrics: empty header in " + path);
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != t.columns.size())
      throw FormatError("metrics: row " + std::to_string(n) + " has " +
                        std::to_string(cells.size()) + " cells, header " +
                        std::to_string(t.columns.size()));
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(parse_cell(c, "in row " + std::to_string(n)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::vector<std::string> render_run_plots(const std::string& metrics_csv,
                                          const std::string& out_dir) {
  const MetricsTable t = load_metrics_csv(metrics_csv);
  for (const char* need : {"step", "eval_mean_return", "eval_std_return", "value_gap",
                           "align_kl"})
    if (t.column(need) < 0) throw FormatError("metrics: no column named " + std::string(need));

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::vector<double> step = t.series("step");

  const std::vector<double> mean = t.series("eval_mean_return");
  const std::vector<double> sd = t.series("eval_std_return");
  const Series ret = finite_points(step, mean);
  Series hi, lo;
  for (size_t i = 0; i < step.size(); ++i)
    if (std::isfinite(step[i]) && std::isfinite(mean[i]) && std::isfinite(sd[i])) {
      hi.x.push_back(step[i]);
      hi.y.push_back(mean[i] + sd[i]);
      lo.x.push_back(step[i]);
      lo.y.push_back(mean[i] - sd[i]);
    }

  std::vector<std::string> written;
  const auto emit = [&](const char* name, const std::string& body) {
    const fs::path p = fs::path(out_dir) / name;
    write_file(p, body);
    written.push_back(p.string());
  };
  emit("returns.svg",
       line_figure("Evaluation return", "mean return", ret, &hi, &lo, "#1e8449"));
  emit("value_gap.svg", bar_figure("Value estimation gap (estimated - true)", "gap",
                                   finite_points(step, t.series("value_gap"))));
  emit("alignment.svg", line_figure("Cross-domain encoder KL", "mean KL",
                                    finite_points(step, t.series("align_kl")), nullptr, nullptr,
                                    "#7d3c98"));
  return written;
}

}  // namespace coworld
