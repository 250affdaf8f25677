#include "evgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace evgen::eval {

namespace {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  bool dashed = false;
  bool steps = false;
};

constexpr double kWidth = 640;
constexpr double kHeight = 400;
constexpr double kLeft = 70;
constexpr double kRight = 20;
constexpr double kTop = 40;
constexpr double kBottom = 50;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Minimal line chart; log_y plots log10 of the values.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, std::vector<Series> series, bool log_y) {
  if (log_y) {
    for (auto& s : series)
      for (auto& v : s.y) v = std::log10(std::max(v, kSpectralFloor));
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (const double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (const double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (!(x1 > x0)) x1 = x0 + 1.0;
  if (!(y1 > y0)) y1 = y0 + 1.0;
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto py = [&](double v) { return kTop + ph - (v - y0) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << title << "</text>\n"
     << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18)
       << "\" text-anchor=\"middle\">" << tick(xv) << "</text>\n"
       << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(py(yv) + 4)
       << "\" text-anchor=\"end\">" << (log_y ? "1e" + tick(yv) : tick(yv)) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10
     << "\" text-anchor=\"middle\">" << x_label << "</text>\n"
     << "<text transform=\"translate(16," << kTop + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << y_label << "</text>\n";
  double legend_y = kTop + 16;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
       << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.steps && i > 0) os << num(px(s.x[i])) << ',' << num(py(s.y[i - 1])) << ' ';
      os << num(px(s.x[i])) << ',' << num(py(s.y[i])) << ' ';
    }
    os << "\"/>\n";
    if (!s.label.empty()) {
      os << "<line x1=\"" << kLeft + pw - 150 << "\" y1=\"" << legend_y - 4 << "\" x2=\""
         << kLeft + pw - 130 << "\" y2=\"" << legend_y - 4 << "\" stroke=\"" << s.color << "\""
         << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n"
         << "<text x=\"" << kLeft + pw - 125 << "\" y=\"" << legend_y << "\">" << s.label
         << "</text>\n";
      legend_y += 16;
    }
  }
  os << "</svg>\n";
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write plot " + path.string());
  out << text;
}

std::vector<double> slot_hours() {
  std::vector<double> x(kSlots);
  for (int k = 0; k < kSlots; ++k) x[k] = k * kSlotHours;
  return x;
}

}  // namespace

void write_plots(const std::filesystem::path& dir, const EvalReport& r) {
  std::filesystem::create_directories(dir);
  const std::string real = "#1f77b4";
  const std::string synth = "#d62728";
  write_text(dir / "cdf.svg",
             line_chart("Load CDF", "load (" + r.units + ")", "P(X <= x)",
                        {{r.real_name, r.real_cdf.support, r.real_cdf.probabilities, real, false, true},
                         {r.synthetic_name, r.synthetic_cdf.support, r.synthetic_cdf.probabilities,
                          synth, false, true}},
                        false));
  write_text(dir / "psd.svg",
             line_chart("Power spectral density", "frequency (cycles/day)", "density",
                        {{r.real_name, r.real_psd.frequencies, r.real_psd.density, real},
                         {r.synthetic_name, r.synthetic_psd.frequencies, r.synthetic_psd.density,
                          synth}},
                        true));
  const auto x = slot_hours();
  write_text(dir / "intervals.svg",
             line_chart("Per-interval mean and 10th/90th percentiles", "hour of day",
                        "load (" + r.units + ")",
                        {{r.real_name, x, r.real_stats.mean, real},
                         {"", x, r.real_stats.p10, real, true},
                         {"", x, r.real_stats.p90, real, true},
                         {r.synthetic_name, x, r.synthetic_stats.mean, synth},
                         {"", x, r.synthetic_stats.p10, synth, true},
                         {"", x, r.synthetic_stats.p90, synth, true}},
                        false));
}

/// Condition-sweep chart: one mean track per swept value.
void write_sweep_plot(const std::filesystem::path& path, int var_index,
                      const std::vector<std::pair<double, SummaryStats>>& entries) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::vector<Series> series;
  const auto x = slot_hours();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string color = palette[i % 8];
    series.push_back({"c" + std::to_string(var_index) + "=" + tick(entries[i].first), x,
                      entries[i].second.mean, color});
    series.push_back({"", x, entries[i].second.p90, color, true});
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, line_chart("Condition sweep (mean solid, 90th percentile dashed)",
                              "hour of day", "load (kW)", std::move(series), false));
}

}  // namespace evgen::eval
