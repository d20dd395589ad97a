#include "forgetlab/plot.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "forgetlab/errors.hpp"
#include "forgetlab/report.hpp"

namespace forgetlab {
namespace {

using nlohmann::json;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr double kLeft = 64, kRight = 616, kTop = 28, kBottom = 352;

const char* color(std::size_t i) { return kPalette[i % (sizeof kPalette / sizeof *kPalette)]; }

struct Scale {
  double lo, hi;
  double pix_lo, pix_hi;
  double at(double v) const {
    const double span = hi - lo;
    const double t = span > 1e-12 ? (v - lo) / span : 0.5;
    return pix_lo + t * (pix_hi - pix_lo);
  }
};

std::string svg_open(const std::string& title) {
  return fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "viewBox=\"0 0 {} {}\" font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"16\" font-size=\"13\">{}</text>\n",
      kWidth, kHeight, kWidth, kHeight, kWidth, kHeight, kLeft, title);
}

std::string axes(const Scale& x, const Scale& y, const std::string& xlabel,
                 const std::string& ylabel) {
  std::string out;
  out += fmt::format(
      "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n"
      "<line x1=\"{0}\" y1=\"{3}\" x2=\"{0}\" y2=\"{1}\" stroke=\"black\"/>\n",
      kLeft, kBottom, kRight, kTop);
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    const double py = y.at(v);
    out += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"#dddddd\"/>\n"
        "<text x=\"{3}\" y=\"{4:.1f}\" text-anchor=\"end\">{5:.3f}</text>\n",
        kLeft, py, kRight, kLeft - 6, py + 4, v);
  }
  const int xlo = static_cast<int>(std::lround(x.lo));
  const int xhi = static_cast<int>(std::lround(x.hi));
  for (int t = xlo; t <= xhi; ++t) {
    const double px = x.at(t);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px,
                       kBottom + 16, t);
  }
  out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     (kLeft + kRight) / 2, kHeight - 12, xlabel);
  out += fmt::format(
      "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
      (kTop + kBottom) / 2, (kTop + kBottom) / 2, ylabel);
  return out;
}

std::string legend(const std::vector<RunSeries>& runs) {
  std::string out;
  double ly = kTop + 6;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out += fmt::format(
        "<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"{3}\" "
        "stroke-width=\"2\"/>\n<text x=\"{4}\" y=\"{5:.1f}\">{6}</text>\n",
        kRight - 150, ly, kRight - 130, color(i), kRight - 124, ly + 4, runs[i].label);
    ly += 16;
  }
  return out;
}

std::string polylines(const std::vector<RunSeries>& runs, const Scale& x, const Scale& y,
                      const std::vector<double> RunSeries::* field) {
  std::string out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunSeries& r = runs[i];
    const std::vector<double>& vals = r.*field;
    std::string pts;
    for (std::size_t k = 0; k < vals.size(); ++k)
      pts += fmt::format("{:.1f},{:.1f} ", x.at(r.after_task[k]), y.at(vals[k]));
    out += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
                       pts, color(i));
    for (std::size_t k = 0; k < vals.size(); ++k)
      out += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n",
                         x.at(r.after_task[k]), y.at(vals[k]), color(i));
  }
  return out;
}

std::string line_chart(const std::vector<RunSeries>& runs, const std::string& title,
                       const std::string& ylabel, const std::vector<double> RunSeries::* field) {
  if (runs.empty()) throw ConfigError("nothing to plot");
  double lo = 0.0, hi = 0.0;
  int xlo = runs[0].after_task.front(), xhi = runs[0].after_task.back();
  for (const RunSeries& r : runs) {
    for (int t : r.after_task) {
      xlo = std::min(xlo, t);
      xhi = std::max(xhi, t);
    }
    for (double v : r.*field) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const Scale x{static_cast<double>(xlo), static_cast<double>(xhi), kLeft + 10, kRight - 10};
  const Scale y{lo, hi, kBottom, kTop};
  std::string out = svg_open(title);
  out += axes(x, y, "after task", ylabel);
  out += polylines(runs, x, y, field);
  out += legend(runs);
  out += "</svg>\n";
  return out;
}

}  // namespace

RunSeries series_from_summary(const json& summary, const std::string& label) {
  RunSeries s;
  s.label = label;
  try {
    for (const json& row : summary.at("rows")) {
      s.after_task.push_back(row.at("after_task").get<int>());
      double vl_sum = 0.0;
      long vl_n = 0;
      bool nl_seen = false;
      for (const json& t : row.at("tasks")) {
        if (t.at("task_id").get<int>() == 1) {
          s.nl_omega.push_back(t.at("omega").get<double>());
          s.nl_delta.push_back(t.at("delta").get<double>());
          nl_seen = true;
        } else {
          for (const json& d : t.at("datasets")) {
            vl_sum += d.at("accuracy").get<double>();
            ++vl_n;
          }
        }
      }
      if (!nl_seen) throw ConfigError("summary row lacks the NL task: " + label);
      s.vl_mean.push_back(vl_n > 0 ? vl_sum / static_cast<double>(vl_n) : 0.0);
    }
  } catch (const json::exception& e) {
    throw IoError("summary is not in the expected shape (" + label + "): " + e.what());
  }
  if (s.after_task.empty()) throw ConfigError("summary has no rows: " + label);
  return s;
}

std::string render_delta_svg(const std::vector<RunSeries>& runs) {
  return line_chart(runs, "NL forgetting (reference - current score)", "delta",
                    &RunSeries::nl_delta);
}

std::string render_vl_svg(const std::vector<RunSeries>& runs) {
  return line_chart(runs, "Mean VL accuracy on learned tasks", "accuracy", &RunSeries::vl_mean);
}

std::string render_bars_svg(const std::vector<RunSeries>& runs) {
  if (runs.empty()) throw ConfigError("nothing to plot");
  double lo = 0.0, hi = 0.0;
  for (const RunSeries& r : runs) {
    lo = std::min(lo, r.nl_delta.back());
    hi = std::max(hi, r.nl_delta.back());
  }
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const Scale y{lo, hi, kBottom, kTop};
  std::string out = svg_open("Final NL forgetting by run");
  const double zero = y.at(0.0);
  out += fmt::format("<line x1=\"{0}\" y1=\"{1:.1f}\" x2=\"{2}\" y2=\"{1:.1f}\" stroke=\"black\"/>\n",
                     kLeft, zero, kRight);
  const double band = (kRight - kLeft) / static_cast<double>(runs.size());
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double v = runs[i].nl_delta.back();
    const double px = kLeft + band * (static_cast<double>(i) + 0.5);
    const double py = y.at(v);
    const double top = std::min(py, zero);
    const double h = std::abs(py - zero);
    out += fmt::format(
        "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\"/>\n",
        px - band * 0.3, top, band * 0.6, h, color(i));
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.4f}</text>\n",
                       px, top - 4, v);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px,
                       kBottom + 16, runs[i].label);
  }
  out += "</svg>\n";
  return out;
}

std::string render_plot_csv(const std::vector<RunSeries>& runs) {
  std::string out = "run,after_task,nl_omega,nl_delta,vl_mean\n";
  for (const RunSeries& r : runs)
    for (std::size_t k = 0; k < r.after_task.size(); ++k)
      out += fmt::format("{},{},{:.4f},{:.4f},{:.4f}\n", r.label, r.after_task[k], r.nl_omega[k],
                         r.nl_delta[k], r.vl_mean[k]);
  return out;
}

void write_plots(const std::vector<RunSeries>& runs, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_text_file(out_dir / "forgetting.svg", render_delta_svg(runs));
  write_text_file(out_dir / "vl_accuracy.svg", render_vl_svg(runs));
  write_text_file(out_dir / "methods.svg", render_bars_svg(runs));
  write_text_file(out_dir / "plot_data.csv", render_plot_csv(runs));
}

}  // namespace forgetlab
