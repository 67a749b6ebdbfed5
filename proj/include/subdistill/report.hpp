#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "subdistill/matrix.hpp"

namespace subdistill {

// Minimal SVG emitter; every double is formatted deterministically so
// identical inputs give identical bytes. With timestamps enabled a comment
// with the generation time is prepended (suppressed in deterministic mode).
class SvgCanvas {
 public:
  SvgCanvas(double width, double height, bool deterministic);

  void rect(double x, double y, double w, double h, const std::string& fill);
  void circle(double cx, double cy, double r, const std::string& fill);
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0);
  void polyline(const std::vector<std::pair<double, double>>& points, const std::string& stroke,
                double width = 1.5);
  void text(double x, double y, const std::string& body, double size = 12.0);

  std::string finish() const;
  void save(const std::filesystem::path& path) const;

 private:
  double width_, height_;
  bool deterministic_;
  std::string body_;
};

std::string gray_fill(double value);  // value in [0,1] -> #rrggbb gray

// Side-by-side heatmaps of symmetric kernels, one panel per entry. Kernels
// larger than 160 rows are block-averaged down to keep files small.
void write_kernel_panels_svg(const std::vector<std::pair<std::string, const Matrix*>>& panels,
                             const std::filesystem::path& path, bool deterministic);

void write_scatter_svg(const std::vector<std::pair<double, double>>& points, double pearson,
                       const std::string& x_label, const std::string& y_label,
                       const std::filesystem::path& path, bool deterministic);

struct LineSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> y_err;  // may be empty
};

void write_lines_svg(const std::vector<LineSeries>& series, const std::string& x_label,
                     const std::string& y_label, const std::filesystem::path& path,
                     bool deterministic);

// One aggregated run directory (written by write_run_record).
struct RunInfo {
  std::filesystem::path dir;
  std::string label;
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double training_fraction = 0.0;
  std::vector<int> layer_bindings;
  std::string method;
};

RunInfo read_run_info(const std::filesystem::path& dir);

// Groups runs by label: summary.csv plus accuracy-vs-layers and
// accuracy-vs-fraction plots where the labels support them, and kernel
// panels for any directory carrying kernel matrices.
void write_report(const std::vector<std::filesystem::path>& run_dirs,
                  const std::filesystem::path& out_dir, bool deterministic);

}  // namespace subdistill
