#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "subdistill/analysis.hpp"
#include "subdistill/errors.hpp"
#include "subdistill/numerics.hpp"
#include "testing.hpp"

using namespace subdistill;
using testing::random_matrix;

TEST_CASE("linear_cka identity and invariance class") {
  Rng rng(1);
  Matrix x = random_matrix(rng, 12, 5);
  CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  // orthogonal transform plus constant row offset
  Matrix r = qr_orthonormalize(random_matrix(rng, 5, 5));
  Matrix y = x * r;
  y.add_row_vector(std::vector<double>{3.0, -1.0, 0.0, 9.0, 2.0});
  CHECK(std::abs(linear_cka(x, y) - 1.0) <= 1e-10);

  // isotropic rescaling
  Matrix z = 0.37 * x;
  CHECK(std::abs(linear_cka(x, z) - 1.0) <= 1e-10);

  // symmetry and range on random inputs
  Matrix w = random_matrix(rng, 12, 4);
  double ab = linear_cka(x, w);
  double ba = linear_cka(w, x);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK(ab >= 0.0);
  CHECK(ab <= 1.0);

  CHECK_THROWS_AS(linear_cka(x, Matrix(12, 3, 0.0)), DegenerateError);
  CHECK_THROWS_AS(linear_cka(Matrix{{1.0}}, Matrix{{1.0}}), DegenerateError);
}

TEST_CASE("linear_cka vanishes on orthogonal column spaces") {
  Rng rng(2);
  const std::size_t n = 10;
  // orthonormal basis with the constant vector first, so all later columns
  // are centered already
  Matrix basis(n, n);
  for (std::size_t i = 0; i < n; ++i) basis(i, 0) = 1.0;
  Matrix rest = random_matrix(rng, n, n - 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < n; ++j) basis(i, j) = rest(i, j - 1);
  Matrix q = qr_orthonormalize(basis);

  std::vector<std::size_t> xi{1, 2, 3};
  std::vector<std::size_t> yi{4, 5};
  Matrix x = q.selected_cols(xi);
  Matrix y = q.selected_cols(yi);
  CHECK(linear_cka(x, y) <= 1e-16);
}

TEST_CASE("centered_kernel cases") {
  Matrix same{{1.0, 2.0}, {1.0, 2.0}};
  KernelMatrix k0 = centered_kernel(same);
  CHECK(k0.values.max_abs() <= 1e-15);
  CHECK(k0.centered);

  Matrix pm{{3.0, -4.0}, {-3.0, 4.0}};  // rows +/- v with ||v||^2 = 25
  KernelMatrix k1 = centered_kernel(pm);
  CHECK(max_abs_diff(k1.values, Matrix{{25.0, -25.0}, {-25.0, 25.0}}) <= 1e-12);

  Rng rng(3);
  Matrix batch = random_matrix(rng, 9, 4);
  KernelMatrix k = centered_kernel(batch);
  // row sums vanish after centering
  for (std::size_t i = 0; i < k.values.rows(); ++i) {
    double sum = 0.0;
    for (double v : k.values.row(i)) sum += v;
    CHECK(std::abs(sum) <= 1e-8 * k.values.frobenius_norm());
  }
  auto eig = sym_eig(k.values);
  double trace = 0.0;
  for (double ev : eig.eigenvalues) trace += ev;
  for (double ev : eig.eigenvalues) CHECK(ev >= -1e-10 * trace);
}

TEST_CASE("lrp single layer decomposes the logit exactly") {
  auto spec = NetworkSpec::mlp({4, 2}, Activation::relu, 5);
  auto state = init_network(spec);  // biases are zero
  std::vector<double> input{0.5, -1.0, 2.0, 0.25};

  std::vector<LrpRule> rules{LrpRule::eps(0.0)};
  RelevanceMap map = lrp_attribute(state, input, 1, rules);
  double logit = forward(state, Matrix::from_row(input)).logits()(0, 1);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(map.values[j] == doctest::Approx(input[j] * state.weights[0](1, j)).epsilon(1e-12));
  CHECK(map.total() == doctest::Approx(logit).epsilon(1e-12));
  CHECK(map.rule_trace.size() == 1);
  CHECK(map.rule_trace[0] == "epsilon(0)");
}

TEST_CASE("lrp gamma zero equals epsilon zero on positive weights") {
  auto spec = NetworkSpec::mlp({3, 4, 2}, Activation::relu, 6);
  auto state = init_network(spec);
  for (auto& w : state.weights)
    for (double& v : w.flat()) v = std::abs(v);
  std::vector<double> input{0.2, 0.9, 0.5};

  auto eps_map = lrp_attribute(state, input, 0, uniform_rules(state, LrpRule::eps(0.0)));
  auto gam_map = lrp_attribute(state, input, 0, uniform_rules(state, LrpRule::gam(0.0)));
  for (std::size_t j = 0; j < 3; ++j)
    CHECK(eps_map.values[j] == doctest::Approx(gam_map.values[j]).epsilon(1e-12));
}

TEST_CASE("lrp conservation on deep zero-bias networks") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto spec = NetworkSpec::mlp({6, 10, 8, 5}, Activation::relu, 100 + trial);
    auto state = init_network(spec);
    Matrix input = random_matrix(rng, 1, 6);

    auto trace = forward(state, input);
    std::size_t target = 0;
    for (std::size_t j = 1; j < 5; ++j)
      if (std::abs(trace.logits()(0, j)) > std::abs(trace.logits()(0, target))) target = j;
    double logit = trace.logits()(0, target);

    auto map = lrp_attribute(state, input.row(0), static_cast<int>(target),
                             uniform_rules(state, LrpRule::eps(1e-9)));
    CHECK(std::abs(map.total() - logit) <= 1e-6 * std::max(std::abs(logit), 1e-3));
  }
}

TEST_CASE("patch sums and correlation") {
  RelevanceMap a;
  a.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
  RelevanceMap b = a;

  auto sums = patch_sums(a.values, 4, 2);
  CHECK(sums == std::vector<double>{1 + 2 + 5 + 6, 3 + 4 + 7 + 8, 9 + 10 + 13 + 14,
                                    11 + 12 + 15 + 16});

  // ragged edge tiles are summed as-is
  auto ragged = patch_sums(a.values, 4, 3);
  CHECK(ragged.size() == 4);
  CHECK(ragged[0] == 1 + 2 + 3 + 5 + 6 + 7 + 9 + 10 + 11);
  CHECK(ragged[1] == 4 + 8 + 12);

  CHECK(patch_correlation(a, b, 2, 4).pearson == doctest::Approx(1.0).epsilon(1e-12));

  RelevanceMap neg = a;
  for (double& v : neg.values) v = -v;
  CHECK(patch_correlation(a, neg, 2, 4).pearson == doctest::Approx(-1.0).epsilon(1e-12));

  RelevanceMap affine = a;
  for (double& v : affine.values) v = 2.0 * v + 13.0;
  CHECK(patch_correlation(a, affine, 2, 4).pearson == doctest::Approx(1.0).epsilon(1e-12));

  RelevanceMap flat = a;
  for (double& v : flat.values) v = 3.0;
  CHECK_THROWS_AS(patch_correlation(a, flat, 2, 4), DegenerateError);

  // square-grid inference for a 16-entry map
  CHECK(patch_correlation(a, b, 2).points.size() == 4);

  RelevanceMap other;
  other.values = {1, 2, 3};
  CHECK_THROWS_AS(patch_correlation(a, other, 2, 4), DimensionError);
}

TEST_CASE("band alignment score") {
  Rng rng(8);
  Matrix base = random_matrix(rng, 12, 5);
  KernelMatrix teacher = centered_kernel(base);
  KernelMatrix scaled{7.5 * teacher.values, true};
  CHECK(band_alignment_score(teacher, scaled, 3, 9) == doctest::Approx(1.0).epsilon(1e-12));

  // permuting rows inside the block breaks alignment
  Matrix permuted = teacher.values;
  std::vector<std::size_t> perm{3, 4, 5, 6, 7, 8};
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t j = 0; j < perm.size(); ++j)
      permuted(3 + i, 3 + j) = teacher.values(perm[perm.size() - 1 - i], perm[j]);
  KernelMatrix shuffled{permuted, true};
  CHECK(band_alignment_score(teacher, shuffled, 3, 9) < 1.0 - 1e-6);

  KernelMatrix zero{Matrix(12, 12), true};
  CHECK_THROWS_AS(band_alignment_score(teacher, zero, 3, 9), DegenerateError);
  CHECK_THROWS_AS(band_alignment_score(teacher, scaled, 9, 3), DegenerateError);

  double frac = block_mass_fraction(teacher, 3, 9);
  CHECK(frac > 0.0);
  CHECK(frac < 1.0);
  CHECK(block_mass_fraction(teacher, 0, 12) == doctest::Approx(1.0));
}
