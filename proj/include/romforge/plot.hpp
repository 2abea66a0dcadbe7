#pragma once

// CSV tables and dependency-free SVG figures for the coefficient and
// maximum-displacement comparisons.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "romforge/error.hpp"
#include "romforge/gpr.hpp"
#include "romforge/metrics.hpp"
#include "romforge/rom.hpp"

namespace romforge {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(const CsvTable& table, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + file.string() + "' for writing");
  for (std::size_t i = 0; i < table.header.size(); ++i) out << (i ? "," : "") << table.header[i];
  out << "\r\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\r\n";
  }
  if (!out) throw WriteError("write to '" + file.string() + "' failed");
}

/// Numeric CSV with a header row. Accepts LF or CRLF line ends.
inline CsvTable read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot open '" + file.string() + "'");
  CsvTable table;
  std::string line;
  auto split = [](std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  if (!std::getline(in, line)) throw FormatError("'" + file.string() + "' has no header row");
  table.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (const auto& c : split(line)) {
      try {
        row.push_back(std::stod(c));
      } catch (const std::exception&) {
        throw FormatError("'" + file.string() + "' has non-numeric cell '" + c + "'");
      }
    }
    if (row.size() != table.header.size()) throw FormatError("'" + file.string() + "' has a ragged row");
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace svg {

inline constexpr double kPanelWidth = 800.0;
inline constexpr double kPanelHeight = 600.0;
inline constexpr double kLeft = 90.0, kRight = 30.0, kTop = 50.0, kBottom = 70.0;

/// Tick positions at 1, 2 or 5 times a power of ten.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0.0 ? 0.1 * std::abs(lo) : 1.0;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double f : {1.0, 2.0, 5.0, 10.0})
    if (f * mag >= raw) {
      step = f * mag;
      break;
    }
  std::vector<double> ticks;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) ticks.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return ticks;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

/// One axes panel; maps data coordinates into its 800x600 box.
class Panel {
 public:
  Panel(double x_lo, double x_hi, double y_lo, double y_hi) {
    xt_ = nice_ticks(x_lo, x_hi);
    yt_ = nice_ticks(y_lo, y_hi);
    x0_ = std::min(x_lo, xt_.front());
    x1_ = std::max(x_hi, xt_.back());
    y0_ = std::min(y_lo, yt_.front());
    y1_ = std::max(y_hi, yt_.back());
    if (!(x1_ > x0_)) x1_ = x0_ + 1.0;
    if (!(y1_ > y0_)) y1_ = y0_ + 1.0;
  }

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kPanelWidth - kLeft - kRight); }
  double py(double y) const { return kPanelHeight - kBottom - (y - y0_) / (y1_ - y0_) * (kPanelHeight - kTop - kBottom); }

  std::string axes(const std::string& title, const std::string& xlabel, const std::string& ylabel) const {
    std::ostringstream s;
    s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPanelWidth - kLeft - kRight << "\" height=\""
      << kPanelHeight - kTop - kBottom << "\" fill=\"white\" stroke=\"black\"/>\n";
    for (double t : xt_) {
      if (t < x0_ || t > x1_) continue;
      s << "<line x1=\"" << num(px(t)) << "\" y1=\"" << kPanelHeight - kBottom << "\" x2=\"" << num(px(t))
        << "\" y2=\"" << kPanelHeight - kBottom + 6 << "\" stroke=\"black\"/>\n";
      s << "<text x=\"" << num(px(t)) << "\" y=\"" << kPanelHeight - kBottom + 22
        << "\" font-size=\"14\" text-anchor=\"middle\">" << num(t) << "</text>\n";
    }
    for (double t : yt_) {
      if (t < y0_ || t > y1_) continue;
      s << "<line x1=\"" << kLeft - 6 << "\" y1=\"" << num(py(t)) << "\" x2=\"" << kLeft << "\" y2=\"" << num(py(t))
        << "\" stroke=\"black\"/>\n";
      s << "<text x=\"" << kLeft - 10 << "\" y=\"" << num(py(t) + 5) << "\" font-size=\"14\" text-anchor=\"end\">"
        << num(t) << "</text>\n";
    }
    s << "<text x=\"" << kPanelWidth / 2 << "\" y=\"30\" font-size=\"18\" text-anchor=\"middle\">" << escape(title)
      << "</text>\n";
    s << "<text x=\"" << kPanelWidth / 2 << "\" y=\"" << kPanelHeight - 20
      << "\" font-size=\"15\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
    s << "<text x=\"22\" y=\"" << kPanelHeight / 2 << "\" font-size=\"15\" text-anchor=\"middle\" transform=\"rotate(-90 22 "
      << kPanelHeight / 2 << ")\">" << escape(ylabel) << "</text>\n";
    return s.str();
  }

  std::string polyline(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                       bool dashed = false) const {
    if (x.empty()) return {};
    std::ostringstream s;
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"" << (dashed ? " stroke-dasharray=\"6 4\"" : "")
      << " points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) s << (i ? " " : "") << num(px(x[i])) << "," << num(py(y[i]));
    s << "\"/>\n";
    return s.str();
  }

  std::string band(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi,
                   const std::string& color) const {
    if (x.empty()) return {};
    std::ostringstream s;
    s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (std::size_t i = 0; i < x.size(); ++i) s << (i ? " " : "") << num(px(x[i])) << "," << num(py(hi[i]));
    for (std::size_t i = x.size(); i-- > 0;) s << " " << num(px(x[i])) << "," << num(py(lo[i]));
    s << "\"/>\n";
    return s.str();
  }

  std::string markers(const std::vector<double>& x, const std::vector<double>& y, const std::string& color,
                      bool square = false) const {
    std::ostringstream s;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (square)
        s << "<rect x=\"" << num(px(x[i]) - 5) << "\" y=\"" << num(py(y[i]) - 5)
          << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
      else
        s << "<circle cx=\"" << num(px(x[i])) << "\" cy=\"" << num(py(y[i])) << "\" r=\"5\" fill=\"" << color << "\"/>\n";
    }
    return s.str();
  }

 private:
  std::vector<double> xt_, yt_;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
};

inline std::string document(const std::vector<std::string>& panels) {
  const double height = kPanelHeight * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kPanelWidth << "\" height=\"" << height
    << "\" viewBox=\"0 0 " << kPanelWidth << " " << height << "\">\n";
  for (std::size_t i = 0; i < panels.size(); ++i)
    s << "<g transform=\"translate(0," << kPanelHeight * static_cast<double>(i) << ")\">\n" << panels[i] << "</g>\n";
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const std::string& text, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw WriteError("cannot open '" + file.string() + "' for writing");
  out << text;
  if (!out) throw WriteError("write to '" + file.string() + "' failed");
}

}  // namespace svg

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return stem.string() + ext;
}

/// Writes `<stem>.csv` (dt, then mean/lo/hi per mode) and `<stem>.svg` with
/// one panel per mode: 95% band, posterior mean, training coefficients.
inline void emit_coefficient_plot(const PodGprRom& rom, const std::vector<double>& dts, int first_k,
                                  const std::filesystem::path& stem) {
  if (first_k < 1 || first_k > rom.rank())
    throw ConfigError("emit_coefficient_plot: first_k=" + std::to_string(first_k) + " outside [1, rank=" +
                      std::to_string(rom.rank()) + "]");
  const auto k = static_cast<std::size_t>(first_k);

  CsvTable table;
  table.header.push_back("dt");
  for (std::size_t j = 1; j <= k; ++j)
    for (const char* s : {"_mean", "_lo", "_hi"}) table.header.push_back("mode_" + std::to_string(j) + s);
  for (double dt : dts) {
    std::vector<double> row{dt};
    const double t = rom.input_norm(dt);
    for (std::size_t j = 0; j < k; ++j) {
      const auto p = predict_gpr(rom.gprs[j], t);
      const double half = kZ95 * std::sqrt(p.variance);
      row.insert(row.end(), {p.mean, p.mean - half, p.mean + half});
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(table, with_suffix(stem, ".csv"));

  std::vector<double> train_dt;
  for (const auto& p : rom.training_params) train_dt.push_back(p.dwell_time);
  double x_lo = train_dt.empty() ? 0.0 : *std::min_element(train_dt.begin(), train_dt.end());
  double x_hi = train_dt.empty() ? 1.0 : *std::max_element(train_dt.begin(), train_dt.end());
  for (double dt : dts) {
    x_lo = std::min(x_lo, dt);
    x_hi = std::max(x_hi, dt);
  }

  std::vector<std::string> panels;
  for (std::size_t j = 0; j < k; ++j) {
    const auto& gpr = rom.gprs[j];
    std::vector<double> gx, gm, glo, ghi;
    if (!dts.empty()) {
      constexpr int kSamples = 121;
      for (int s = 0; s < kSamples; ++s) {
        const double dt = x_lo + (x_hi - x_lo) * s / (kSamples - 1);
        const auto p = predict_gpr(gpr, rom.input_norm(dt));
        const double half = kZ95 * std::sqrt(p.variance);
        gx.push_back(dt);
        gm.push_back(p.mean);
        glo.push_back(p.mean - half);
        ghi.push_back(p.mean + half);
      }
    }
    std::vector<double> query_mean;
    for (const auto& row : table.rows) query_mean.push_back(row[1 + 3 * j]);
    double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
    for (const std::vector<double>* v : std::array<const std::vector<double>*, 3>{&glo, &ghi, &gpr.train_targets})
      for (double y : *v) {
        y_lo = std::min(y_lo, y);
        y_hi = std::max(y_hi, y);
      }
    if (!std::isfinite(y_lo)) y_lo = 0.0, y_hi = 1.0;
    svg::Panel panel(x_lo, x_hi, y_lo, y_hi);
    std::string body = panel.axes("POD coefficient " + std::to_string(j + 1) + " (final layer)", "dwell time [s]",
                                  "a_" + std::to_string(j + 1));
    body += panel.band(gx, glo, ghi, "#1f77b4");
    body += panel.polyline(gx, gm, "#1f77b4");
    if (!dts.empty()) {
      body += panel.markers(train_dt, gpr.train_targets, "black");
      body += panel.markers(dts, query_mean, "#d62728", true);
    }
    panels.push_back(std::move(body));
  }
  svg::write_text(svg::document(panels), with_suffix(stem, ".svg"));
}

/// Writes `<stem>.csv` (dt, max_disp_true, max_disp_pred) and `<stem>.svg`.
inline void emit_max_displacement_plot(const std::vector<EvalRow>& rows, const std::filesystem::path& stem,
                                       const std::string& title = "Maximum displacement") {
  if (rows.empty()) throw ConfigError("emit_max_displacement_plot: no rows");
  CsvTable table{{"dt", "max_disp_true", "max_disp_pred"}, {}};
  std::vector<double> x, yt, yp;
  for (const auto& r : rows) {
    table.rows.push_back({r.dt, r.max_disp_true, r.max_disp_pred});
    x.push_back(r.dt);
    yt.push_back(r.max_disp_true);
    yp.push_back(r.max_disp_pred);
  }
  write_csv(table, with_suffix(stem, ".csv"));

  const auto [xl, xh] = std::minmax_element(x.begin(), x.end());
  double y_lo = std::min(*std::min_element(yt.begin(), yt.end()), *std::min_element(yp.begin(), yp.end()));
  double y_hi = std::max(*std::max_element(yt.begin(), yt.end()), *std::max_element(yp.begin(), yp.end()));
  svg::Panel panel(*xl, *xh, y_lo, y_hi);
  std::string body = panel.axes(title, "dwell time [s]", "max displacement [mm]");
  body += panel.polyline(x, yt, "black");
  body += panel.markers(x, yt, "black");
  body += panel.polyline(x, yp, "#d62728", true);
  body += panel.markers(x, yp, "#d62728", true);
  body += "<text x=\"620\" y=\"80\" font-size=\"14\" fill=\"black\">ground truth</text>\n"
          "<text x=\"620\" y=\"100\" font-size=\"14\" fill=\"#d62728\">prediction</text>\n";
  svg::write_text(svg::document({body}), with_suffix(stem, ".svg"));
}

}  // namespace romforge
