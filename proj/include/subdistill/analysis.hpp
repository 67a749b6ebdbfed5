#pragma once

#include <span>
#include <string>
#include <vector>

#include "subdistill/matrix.hpp"
#include "subdistill/network.hpp"

namespace subdistill {

struct KernelMatrix {
  Matrix values;  // n x n, symmetric
  bool centered = false;
};

// Linear centered kernel alignment between two row-aligned representations:
// ||X~^T Y~||_F^2 / (||X~^T X~||_F ||Y~^T Y~||_F) on column-centered data.
// Invariant to orthogonal transforms and isotropic scaling of either side.
double linear_cka(const Matrix& x, const Matrix& y);

// Gram matrix of the row-centered batch, K = X~ X~^T.
KernelMatrix centered_kernel(const Matrix& batch);

struct LrpRule {
  enum class Kind { epsilon, gamma } kind = Kind::epsilon;
  double value = 1e-6;

  static LrpRule eps(double e) { return {Kind::epsilon, e}; }
  static LrpRule gam(double g) { return {Kind::gamma, g}; }
  std::string describe() const;
};

// Relevance per input feature for one prediction. Bias relevance is
// absorbed, so conservation is exact only on zero-bias networks.
struct RelevanceMap {
  std::vector<double> values;
  int target = 0;
  std::vector<std::string> rule_trace;

  double total() const;
};

// Backward relevance decomposition of the target logit through a dense
// ReLU/identity network. `rules` holds one rule per weight layer, listed
// from layer 1 upward.
RelevanceMap lrp_attribute(const NetworkState& state, std::span<const double> input_row,
                           int target_class, std::span<const LrpRule> rules);

std::vector<LrpRule> uniform_rules(const NetworkState& state, LrpRule rule);

// Relevance summed over patch_size x patch_size tiles of the feature grid,
// row-major; ragged tiles at the edges are summed as-is. The map length
// must be divisible by grid_width.
std::vector<double> patch_sums(std::span<const double> values, std::size_t grid_width,
                               std::size_t patch_size);

struct PatchCorrelation {
  double pearson;
  std::vector<std::pair<double, double>> points;
};

PatchCorrelation patch_correlation(const RelevanceMap& map_a, const RelevanceMap& map_b,
                                   std::size_t patch_size, std::size_t grid_width);
// Square grid inferred when the feature count is a perfect square, one row
// otherwise.
PatchCorrelation patch_correlation(const RelevanceMap& map_a, const RelevanceMap& map_b,
                                   std::size_t patch_size);

double pearson(std::span<const double> x, std::span<const double> y);

// Pearson correlation of the two kernels restricted to the
// [lo, hi) x [lo, hi) block, after each kernel is scaled to unit Frobenius
// norm.
double band_alignment_score(const KernelMatrix& teacher_kernel,
                            const KernelMatrix& student_kernel, std::size_t lo, std::size_t hi);

// Fraction of the kernel's squared Frobenius mass inside the block.
double block_mass_fraction(const KernelMatrix& kernel, std::size_t lo, std::size_t hi);

}  // namespace subdistill
