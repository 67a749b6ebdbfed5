#include "subdistill/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <set>

#include <json.hpp>

#include "subdistill/errors.hpp"
#include "subdistill/textio.hpp"

namespace subdistill {

SvgCanvas::SvgCanvas(double width, double height, bool deterministic)
    : width_(width), height_(height), deterministic_(deterministic) {}

void SvgCanvas::rect(double x, double y, double w, double h, const std::string& fill) {
  body_ += "<rect x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" width=\"" +
           fmt_double(w) + "\" height=\"" + fmt_double(h) + "\" fill=\"" + fill + "\"/>\n";
}

void SvgCanvas::circle(double cx, double cy, double r, const std::string& fill) {
  body_ += "<circle cx=\"" + fmt_double(cx) + "\" cy=\"" + fmt_double(cy) + "\" r=\"" +
           fmt_double(r) + "\" fill=\"" + fill + "\"/>\n";
}

void SvgCanvas::line(double x1, double y1, double x2, double y2, const std::string& stroke,
                     double width) {
  body_ += "<line x1=\"" + fmt_double(x1) + "\" y1=\"" + fmt_double(y1) + "\" x2=\"" +
           fmt_double(x2) + "\" y2=\"" + fmt_double(y2) + "\" stroke=\"" + stroke +
           "\" stroke-width=\"" + fmt_double(width) + "\"/>\n";
}

void SvgCanvas::polyline(const std::vector<std::pair<double, double>>& points,
                         const std::string& stroke, double width) {
  body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
           fmt_double(width) + "\" points=\"";
  for (const auto& [x, y] : points) body_ += fmt_double(x) + "," + fmt_double(y) + " ";
  body_ += "\"/>\n";
}

void SvgCanvas::text(double x, double y, const std::string& body, double size) {
  std::string escaped;
  for (char c : body) {
    if (c == '<')
      escaped += "&lt;";
    else if (c == '>')
      escaped += "&gt;";
    else if (c == '&')
      escaped += "&amp;";
    else
      escaped += c;
  }
  body_ += "<text x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" font-size=\"" +
           fmt_double(size) + "\" font-family=\"monospace\">" + escaped + "</text>\n";
}

std::string SvgCanvas::finish() const {
  std::string head = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  if (!deterministic_) {
    std::time_t now = std::time(nullptr);
    char buf[64];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    head += std::string("<!-- generated ") + buf + " -->\n";
  }
  head += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_double(width_) +
          "\" height=\"" + fmt_double(height_) + "\">\n";
  return head + body_ + "</svg>\n";
}

void SvgCanvas::save(const std::filesystem::path& path) const {
  write_text_file(path, finish());
}

std::string gray_fill(double value) {
  double v = std::min(1.0, std::max(0.0, value));
  int g = static_cast<int>(std::lround(255.0 * (1.0 - v)));  // dark = large
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", g, g, g);
  return buf;
}

namespace {

Matrix downsample(const Matrix& m, std::size_t max_side) {
  if (m.rows() <= max_side) return m;
  std::size_t block = (m.rows() + max_side - 1) / max_side;
  std::size_t side = (m.rows() + block - 1) / block;
  Matrix out(side, side);
  Matrix counts(side, side);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      out(i / block, j / block) += m(i, j);
      counts(i / block, j / block) += 1.0;
    }
  for (std::size_t i = 0; i < side; ++i)
    for (std::size_t j = 0; j < side; ++j) out(i, j) /= counts(i, j);
  return out;
}

}  // namespace

void write_kernel_panels_svg(const std::vector<std::pair<std::string, const Matrix*>>& panels,
                             const std::filesystem::path& path, bool deterministic) {
  const double panel = 220.0, margin = 30.0, title = 22.0;
  SvgCanvas svg(margin + panels.size() * (panel + margin), panel + title + 2 * margin,
                deterministic);
  double x0 = margin;
  for (const auto& [label, matrix] : panels) {
    Matrix m = downsample(*matrix, 160);
    double scale = m.max_abs();
    if (scale <= 0.0) scale = 1.0;
    double cell = panel / static_cast<double>(m.rows());
    svg.text(x0, title, label);
    for (std::size_t i = 0; i < m.rows(); ++i)
      for (std::size_t j = 0; j < m.cols(); ++j)
        svg.rect(x0 + static_cast<double>(j) * cell, title + margin / 2 + static_cast<double>(i) * cell,
                 cell + 0.2, cell + 0.2, gray_fill(std::abs(m(i, j)) / scale));
    x0 += panel + margin;
  }
  svg.save(path);
}

void write_scatter_svg(const std::vector<std::pair<double, double>>& points, double pearson,
                       const std::string& x_label, const std::string& y_label,
                       const std::filesystem::path& path, bool deterministic) {
  const double size = 320.0, margin = 45.0;
  SvgCanvas svg(size + 2 * margin, size + 2 * margin, deterministic);
  double lo = 0.0, hi = 1.0;
  if (!points.empty()) {
    lo = points[0].first;
    hi = points[0].first;
    for (const auto& [x, y] : points) {
      lo = std::min({lo, x, y});
      hi = std::max({hi, x, y});
    }
    if (hi <= lo) hi = lo + 1.0;
  }
  auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * size; };
  auto sy = [&](double v) { return margin + size - (v - lo) / (hi - lo) * size; };

  svg.line(margin, margin + size, margin + size, margin + size, "#000000");
  svg.line(margin, margin, margin, margin + size, "#000000");
  svg.line(sx(lo), sy(lo), sx(hi), sy(hi), "#999999");
  for (const auto& [x, y] : points) svg.circle(sx(x), sy(y), 2.2, "#1f6fb5");
  svg.text(margin, margin - 10, "corr = " + fmt_double(pearson));
  svg.text(margin + size / 2 - 30, margin + size + 30, x_label);
  svg.text(5, margin - 10, y_label);
  svg.save(path);
}

void write_lines_svg(const std::vector<LineSeries>& series, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path,
                     bool deterministic) {
  const double w = 420.0, h = 280.0, margin = 50.0;
  SvgCanvas svg(w + 2 * margin, h + 2 * margin, deterministic);
  double xlo = 0.0, xhi = 1.0, ylo = 0.0, yhi = 1.0;
  bool first = true;
  for (const LineSeries& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double err = i < s.y_err.size() ? s.y_err[i] : 0.0;
      if (first) {
        xlo = xhi = s.x[i];
        ylo = s.y[i] - err;
        yhi = s.y[i] + err;
        first = false;
      }
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      ylo = std::min(ylo, s.y[i] - err);
      yhi = std::max(yhi, s.y[i] + err);
    }
  if (xhi <= xlo) xhi = xlo + 1.0;
  if (yhi <= ylo) yhi = ylo + 1.0;
  auto sx = [&](double v) { return margin + (v - xlo) / (xhi - xlo) * w; };
  auto sy = [&](double v) { return margin + h - (v - ylo) / (yhi - ylo) * h; };

  svg.line(margin, margin + h, margin + w, margin + h, "#000000");
  svg.line(margin, margin, margin, margin + h, "#000000");
  svg.text(margin + w / 2 - 30, margin + h + 32, x_label);
  svg.text(5, margin - 14, y_label);
  svg.text(margin, margin + h + 18, fmt_double(xlo));
  svg.text(margin + w - 20, margin + h + 18, fmt_double(xhi));
  svg.text(5, margin + h, fmt_double(ylo));
  svg.text(5, margin + 8, fmt_double(yhi));

  static const char* palette[] = {"#1f6fb5", "#c44e52", "#55a868", "#8172b2", "#ccb974"};
  for (std::size_t k = 0; k < series.size(); ++k) {
    const LineSeries& s = series[k];
    const std::string color = palette[k % 5];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) pts.emplace_back(sx(s.x[i]), sy(s.y[i]));
    svg.polyline(pts, color);
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg.circle(sx(s.x[i]), sy(s.y[i]), 2.5, color);
      if (i < s.y_err.size() && s.y_err[i] > 0.0)
        svg.line(sx(s.x[i]), sy(s.y[i] - s.y_err[i]), sx(s.x[i]), sy(s.y[i] + s.y_err[i]), color);
    }
    svg.text(margin + w - 110, margin + 16 + 16 * static_cast<double>(k), s.label);
  }
  svg.save(path);
}

RunInfo read_run_info(const std::filesystem::path& dir) {
  auto json_path = dir / "run.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(json_path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("cannot parse " + json_path.string() + ": " + e.what());
  }
  RunInfo info;
  info.dir = dir;
  try {
    info.label = j.at("label").get<std::string>();
    info.seed = j.at("seed").get<std::uint64_t>();
    info.val_accuracy = j.at("final_val_accuracy").get<double>();
    info.test_accuracy = j.at("final_test_accuracy").get<double>();
    const auto& cfg = j.at("config");
    info.training_fraction = cfg.at("training_fraction").get<double>();
    info.layer_bindings = cfg.at("layer_bindings").get<std::vector<int>>();
    info.method = cfg.at("method").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("run record " + json_path.string() + " is missing fields: " + e.what());
  }
  return info;
}

namespace {

struct Group {
  std::vector<RunInfo> runs;
  double mean = 0.0;
  double se = 0.0;
};

std::map<std::string, Group> group_runs(const std::vector<RunInfo>& runs) {
  std::map<std::string, Group> groups;
  for (const RunInfo& r : runs) groups[r.label].runs.push_back(r);
  for (auto& [label, g] : groups) {
    for (const RunInfo& r : g.runs) g.mean += r.val_accuracy;
    g.mean /= static_cast<double>(g.runs.size());
    if (g.runs.size() >= 2) {
      double ss = 0.0;
      for (const RunInfo& r : g.runs) {
        double d = r.val_accuracy - g.mean;
        ss += d * d;
      }
      g.se = std::sqrt(ss / static_cast<double>(g.runs.size() - 1)) /
             std::sqrt(static_cast<double>(g.runs.size()));
    }
  }
  return groups;
}

}  // namespace

void write_report(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir, bool deterministic) {
  if (run_dirs.empty()) throw SchemaError("report needs at least one run directory");
  std::filesystem::create_directories(out_dir);

  std::vector<RunInfo> runs;
  for (const auto& dir : run_dirs) runs.push_back(read_run_info(dir));
  auto groups = group_runs(runs);

  double largest_se = 0.0;
  for (const auto& [label, g] : groups) largest_se = std::max(largest_se, g.se);

  std::string csv = "label,runs,mean_val_accuracy,standard_error,largest_se\n";
  for (const auto& [label, g] : groups) {
    std::vector<std::string> cells{label, std::to_string(g.runs.size()), fmt_double(g.mean),
                                   fmt_double(g.se), fmt_double(largest_se)};
    csv += csv_join(cells) + "\n";
  }
  write_text_file(out_dir / "summary.csv", csv);

  // accuracy vs number of guided layers, when the labels describe subsets
  {
    std::vector<std::pair<std::size_t, const Group*>> points;
    for (const auto& [label, g] : groups)
      if (label.rfind("layers", 0) == 0)
        points.emplace_back(g.runs.front().layer_bindings.size(), &g);
    if (points.size() >= 2) {
      std::sort(points.begin(), points.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      LineSeries s;
      s.label = "val accuracy";
      for (const auto& [count, g] : points) {
        s.x.push_back(static_cast<double>(count));
        s.y.push_back(g->mean);
        s.y_err.push_back(g->se);
      }
      write_lines_svg({s}, "guided layers", "accuracy", out_dir / "accuracy_vs_layers.svg",
                      deterministic);
    }
  }

  // accuracy vs training fraction: one curve per method, one point per
  // (method, fraction) averaged over its runs
  {
    std::map<std::string, std::map<double, std::vector<double>>> by_method;
    std::set<double> fractions;
    for (const RunInfo& run : runs) {
      by_method[run.method][run.training_fraction].push_back(run.val_accuracy);
      fractions.insert(run.training_fraction);
    }
    if (fractions.size() >= 2) {
      std::vector<LineSeries> series;
      for (const auto& [method, points] : by_method) {
        LineSeries s;
        s.label = method;
        for (const auto& [fraction, accs] : points) {
          double mean = 0.0;
          for (double a : accs) mean += a;
          mean /= static_cast<double>(accs.size());
          double ss = 0.0;
          for (double a : accs) ss += (a - mean) * (a - mean);
          double se = accs.size() > 1 ? std::sqrt(ss / static_cast<double>(accs.size() - 1)) /
                                            std::sqrt(static_cast<double>(accs.size()))
                                      : 0.0;
          s.x.push_back(fraction);
          s.y.push_back(mean);
          s.y_err.push_back(se);
        }
        series.push_back(std::move(s));
      }
      write_lines_svg(series, "training fraction", "accuracy",
                      out_dir / "accuracy_vs_fraction.svg", deterministic);
    }
  }

  // kernel panels for any run that carries kernel matrices
  for (const RunInfo& r : runs) {
    auto teacher = r.dir / "kernels_teacher.sdmx";
    if (!std::filesystem::exists(teacher)) continue;
    Matrix kt = read_sdmx(teacher);
    Matrix ks = read_sdmx(r.dir / "kernels_subdistill.sdmx");
    Matrix kw = read_sdmx(r.dir / "kernels_wb.sdmx");
    write_kernel_panels_svg({{"teacher", &kt}, {"subdistill", &ks}, {"wb", &kw}},
                            out_dir / (r.label + "_kernels.svg"), deterministic);
  }
}

}  // namespace subdistill
