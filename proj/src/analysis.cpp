#include "subdistill/analysis.hpp"

#include <cmath>
#include <sstream>

#include "subdistill/errors.hpp"

namespace subdistill {

double linear_cka(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw DimensionError("linear_cka: row count mismatch");
  if (x.rows() < 2) throw DegenerateError("linear_cka needs at least 2 rows");
  Matrix xc = x.centered_rows();
  Matrix yc = y.centered_rows();
  double xx = at_b(xc, xc).frobenius_norm();
  double yy = at_b(yc, yc).frobenius_norm();
  if (xx <= 0.0 || yy <= 0.0)
    throw DegenerateError("linear_cka: an argument has zero centered norm");
  double xy = at_b(xc, yc).frobenius_norm();
  return (xy * xy) / (xx * yy);
}

KernelMatrix centered_kernel(const Matrix& batch) {
  if (batch.rows() < 2) throw DegenerateError("centered_kernel needs at least 2 rows");
  Matrix c = batch.centered_rows();
  return KernelMatrix{a_bt(c, c), true};
}

std::string LrpRule::describe() const {
  std::ostringstream s;
  s << (kind == Kind::epsilon ? "epsilon(" : "gamma(") << value << ")";
  return s.str();
}

double RelevanceMap::total() const {
  double t = 0.0;
  for (double v : values) t += v;
  return t;
}

std::vector<LrpRule> uniform_rules(const NetworkState& state, LrpRule rule) {
  return std::vector<LrpRule>(state.spec.layer_count(), rule);
}

RelevanceMap lrp_attribute(const NetworkState& state, std::span<const double> input_row,
                           int target_class, std::span<const LrpRule> rules) {
  const std::size_t layers = state.spec.layer_count();
  if (input_row.size() != state.spec.input_dim())
    throw DimensionError("lrp_attribute: input length mismatch");
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= state.spec.output_dim())
    throw DimensionError("lrp_attribute: target class out of range");
  if (rules.size() != layers)
    throw ConfigError("lrp_attribute: need one rule per layer (" + std::to_string(layers) +
                      " expected, " + std::to_string(rules.size()) + " given)");

  ForwardTrace trace = forward(state, Matrix::from_row(input_row));

  RelevanceMap map;
  map.target = target_class;
  map.rule_trace.reserve(layers);
  for (const LrpRule& r : rules) map.rule_trace.push_back(r.describe());

  // relevance starts as the target logit, all other outputs zero
  std::vector<double> relevance(state.spec.output_dim(), 0.0);
  relevance[static_cast<std::size_t>(target_class)] =
      trace.logits()(0, static_cast<std::size_t>(target_class));

  for (std::size_t l = layers; l >= 1; --l) {
    const Matrix& w = state.weights[l - 1];
    const std::vector<double>& bias = state.biases[l - 1];
    auto lower = trace.activations[l - 1].row(0);
    const LrpRule& rule = rules[l - 1];

    const bool gamma = rule.kind == LrpRule::Kind::gamma;
    const double g = gamma ? rule.value : 0.0;
    const double eps = gamma ? 0.0 : rule.value;

    std::vector<double> next(lower.size(), 0.0);
    for (std::size_t k = 0; k < w.rows(); ++k) {
      if (relevance[k] == 0.0) continue;
      double denom = bias[k] + (gamma && bias[k] > 0.0 ? g * bias[k] : 0.0);
      for (std::size_t j = 0; j < lower.size(); ++j) {
        double wjk = w(k, j);
        if (gamma && wjk > 0.0) wjk += g * wjk;
        denom += lower[j] * wjk;
      }
      denom += eps * (denom >= 0.0 ? 1.0 : -1.0);
      if (denom == 0.0) continue;  // nothing contributed; relevance is dropped
      double share = relevance[k] / denom;
      for (std::size_t j = 0; j < lower.size(); ++j) {
        double wjk = w(k, j);
        if (gamma && wjk > 0.0) wjk += g * wjk;
        next[j] += lower[j] * wjk * share;
      }
    }
    relevance = std::move(next);
  }
  map.values = std::move(relevance);
  return map;
}

std::vector<double> patch_sums(std::span<const double> values, std::size_t grid_width,
                               std::size_t patch_size) {
  if (grid_width == 0 || patch_size == 0)
    throw ConfigError("patch decomposition needs positive sizes");
  if (values.size() % grid_width != 0)
    throw DimensionError("map length " + std::to_string(values.size()) +
                         " is not divisible by grid width " + std::to_string(grid_width));
  const std::size_t height = values.size() / grid_width;
  const std::size_t patches_x = (grid_width + patch_size - 1) / patch_size;
  const std::size_t patches_y = (height + patch_size - 1) / patch_size;

  std::vector<double> sums(patches_x * patches_y, 0.0);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < grid_width; ++c)
      sums[(r / patch_size) * patches_x + (c / patch_size)] += values[r * grid_width + c];
  return sums;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) throw DegenerateError("pearson needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0)
    throw DegenerateError("pearson: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

PatchCorrelation patch_correlation(const RelevanceMap& map_a, const RelevanceMap& map_b,
                                   std::size_t patch_size, std::size_t grid_width) {
  if (map_a.values.size() != map_b.values.size())
    throw DimensionError("patch_correlation: maps cover different feature grids");
  auto a = patch_sums(map_a.values, grid_width, patch_size);
  auto b = patch_sums(map_b.values, grid_width, patch_size);
  PatchCorrelation out;
  out.pearson = pearson(a, b);
  out.points.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.points.emplace_back(a[i], b[i]);
  return out;
}

PatchCorrelation patch_correlation(const RelevanceMap& map_a, const RelevanceMap& map_b,
                                   std::size_t patch_size) {
  auto side = static_cast<std::size_t>(
      std::lround(std::sqrt(static_cast<double>(map_a.values.size()))));
  std::size_t width = (side * side == map_a.values.size()) ? side : map_a.values.size();
  return patch_correlation(map_a, map_b, patch_size, width);
}

double band_alignment_score(const KernelMatrix& teacher_kernel,
                            const KernelMatrix& student_kernel, std::size_t lo, std::size_t hi) {
  const Matrix& t = teacher_kernel.values;
  const Matrix& s = student_kernel.values;
  if (t.rows() != s.rows() || t.cols() != s.cols())
    throw DimensionError("band_alignment_score: kernel size mismatch");
  if (lo >= hi || hi > t.rows()) throw DegenerateError("band_alignment_score: empty block");

  double tn = t.frobenius_norm();
  double sn = s.frobenius_norm();
  if (tn <= 0.0 || sn <= 0.0)
    throw DegenerateError("band_alignment_score: zero kernel");

  std::vector<double> tb, sb;
  tb.reserve((hi - lo) * (hi - lo));
  sb.reserve((hi - lo) * (hi - lo));
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = lo; j < hi; ++j) {
      tb.push_back(t(i, j) / tn);
      sb.push_back(s(i, j) / sn);
    }
  return pearson(tb, sb);
}

double block_mass_fraction(const KernelMatrix& kernel, std::size_t lo, std::size_t hi) {
  const Matrix& k = kernel.values;
  if (lo >= hi || hi > k.rows()) throw DegenerateError("block_mass_fraction: empty block");
  double total = 0.0;
  for (double v : k.flat()) total += v * v;
  if (total <= 0.0) throw DegenerateError("block_mass_fraction: zero kernel");
  double block = 0.0;
  for (std::size_t i = lo; i < hi; ++i)
    for (std::size_t j = lo; j < hi; ++j) block += k(i, j) * k(i, j);
  return block / total;
}

}  // namespace subdistill
