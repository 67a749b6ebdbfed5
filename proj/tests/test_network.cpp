#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "subdistill/errors.hpp"
#include "subdistill/network.hpp"
#include "testing.hpp"

using namespace subdistill;
using testing::central_differences;
using testing::max_rel_err;
using testing::random_matrix;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "subdistill_test_network";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Straight-line re-evaluation, layer by layer, independent of forward().
Matrix straight_line_eval(const NetworkState& s, const Matrix& inputs) {
  Matrix a = inputs;
  for (std::size_t l = 0; l < s.spec.layer_count(); ++l) {
    Matrix z(a.rows(), s.spec.layer_widths[l + 1]);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < z.cols(); ++j) {
        double acc = s.biases[l][j];
        for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * s.weights[l](j, k);
        bool relu = l + 1 < s.spec.layer_count() &&
                    s.spec.hidden_activations[l] == Activation::relu;
        z(i, j) = relu ? std::max(acc, 0.0) : acc;
      }
    a = std::move(z);
  }
  return a;
}

}  // namespace

TEST_CASE("init_network determinism and shapes") {
  auto spec = NetworkSpec::mlp({4, 3, 2}, Activation::relu, 99);
  auto a = init_network(spec);
  auto b = init_network(spec);
  CHECK(a == b);

  CHECK(a.weights[0].rows() == 3);
  CHECK(a.weights[0].cols() == 4);
  CHECK(a.weights[1].rows() == 2);
  CHECK(a.weights[1].cols() == 3);
  CHECK(a.biases[0].size() == 3);
  CHECK(a.biases[1].size() == 2);
  for (const auto& bias : a.biases)
    for (double v : bias) CHECK(v == 0.0);

  auto spec_zero = NetworkSpec::mlp({4, 3, 2}, Activation::relu, 0);
  auto spec_one = NetworkSpec::mlp({4, 3, 2}, Activation::relu, 1);
  CHECK(init_network(spec_zero) != init_network(spec_one));

  // save -> load bit-exact
  auto path = temp_file("roundtrip.sdck");
  save_checkpoint(a, path);
  CHECK(load_checkpoint(path) == a);
}

TEST_CASE("forward zero network and identity layer") {
  auto spec = NetworkSpec::mlp({3, 4, 2}, Activation::relu, 1);
  auto state = init_network(spec);
  for (auto& w : state.weights)
    for (double& x : w.flat()) x = 0.0;
  Rng rng(3);
  auto trace = forward(state, random_matrix(rng, 5, 3));
  CHECK(trace.activations[1].max_abs() == 0.0);
  CHECK(trace.logits().max_abs() == 0.0);

  auto id_spec = NetworkSpec::mlp({3, 3}, Activation::relu, 1);
  auto id_state = init_network(id_spec);
  id_state.weights[0] = Matrix::identity(3);
  Matrix inputs = random_matrix(rng, 4, 3);
  CHECK(max_abs_diff(forward(id_state, inputs).logits(), inputs) == 0.0);

  CHECK_THROWS_AS(forward(state, Matrix(2, 7)), DimensionError);
}

TEST_CASE("forward matches straight-line evaluator") {
  auto spec = NetworkSpec::mlp({6, 5, 4, 3}, Activation::relu, 21);
  auto state = init_network(spec);
  Rng rng(22);
  Matrix inputs = random_matrix(rng, 7, 6);
  auto trace = forward(state, inputs);
  CHECK(max_abs_diff(trace.logits(), straight_line_eval(state, inputs)) <= 1e-12);
  // forward determinism: bit-identical traces
  auto again = forward(state, inputs);
  for (std::size_t l = 0; l < trace.activations.size(); ++l)
    CHECK(trace.activations[l] == again.activations[l]);
}

TEST_CASE("backward zero cotangent") {
  auto spec = NetworkSpec::mlp({4, 3, 2}, Activation::relu, 7);
  auto state = init_network(spec);
  Rng rng(8);
  auto trace = forward(state, random_matrix(rng, 6, 4));
  auto grads = backward(state, trace, Matrix(6, 2));
  for (const auto& g : grads.weights) CHECK(g.max_abs() == 0.0);
  for (const auto& g : grads.biases)
    for (double v : g) CHECK(v == 0.0);
  CHECK(grads.inputs.max_abs() == 0.0);
}

TEST_CASE("backward matches central finite differences") {
  auto spec = NetworkSpec::mlp({5, 6, 4, 3}, Activation::relu, 17);
  auto state = init_network(spec);
  Rng rng(18);
  Matrix inputs = random_matrix(rng, 4, 5);
  Matrix logit_grad = random_matrix(rng, 4, 3);
  Matrix extra = random_matrix(rng, 4, 6);

  std::vector<std::pair<std::size_t, Matrix>> extras{{1, extra}};
  auto trace = forward(state, inputs);
  auto grads = backward(state, trace, logit_grad, extras);

  auto scalar_loss = [&]() {
    auto t = forward(state, inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < t.logits().flat().size(); ++i)
      s += t.logits().flat()[i] * logit_grad.flat()[i];
    for (std::size_t i = 0; i < t.activations[1].flat().size(); ++i)
      s += t.activations[1].flat()[i] * extra.flat()[i];
    return s;
  };

  for (std::size_t l = 0; l < state.weights.size(); ++l) {
    Matrix numeric = central_differences(state.weights[l], scalar_loss);
    CHECK(max_rel_err(grads.weights[l], numeric) <= 1e-5);
    std::vector<double> numeric_b = central_differences(state.biases[l], scalar_loss);
    CHECK(max_rel_err(grads.biases[l], numeric_b) <= 1e-5);
  }
  {
    Matrix numeric = central_differences(inputs, scalar_loss);
    CHECK(max_rel_err(grads.inputs, numeric) <= 1e-5);
  }
}

TEST_CASE("extra activation gradient equals isolated backpropagation") {
  auto spec = NetworkSpec::mlp({4, 5, 3, 2}, Activation::relu, 4);
  auto state = init_network(spec);
  Rng rng(5);
  Matrix inputs = random_matrix(rng, 3, 4);
  Matrix extra = random_matrix(rng, 3, 5);
  auto trace = forward(state, inputs);

  auto with_extra = backward(state, trace, Matrix(3, 2), {{1, extra}});
  auto with_logits = backward(state, trace, random_matrix(rng, 3, 2), {{1, extra}});

  // zero logit gradient: everything below layer 1 comes from the extra alone
  auto isolated = backward(state, trace, Matrix(3, 2), {{1, extra}});
  CHECK(max_abs_diff(with_extra.inputs, isolated.inputs) == 0.0);
  // gradient at the injected layer includes the injection itself
  CHECK(max_abs_diff(with_extra.activations[1], extra) <= 1e-15);
  // later layers see nothing from an upstream injection
  CHECK(with_extra.weights[2].max_abs() == 0.0);
  CHECK(with_logits.weights[2].max_abs() > 0.0);

  CHECK_THROWS_AS(backward(state, trace, Matrix(3, 2), {{9, extra}}), DimensionError);
}

TEST_CASE("softmax_probs") {
  Matrix uniform(3, 4, 0.7);
  Matrix p = softmax_probs(uniform, 2.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(p(i, j) == doctest::Approx(0.25).epsilon(1e-12));

  Matrix logits{{std::log(8.0), std::log(1.0), std::log(1.0)}};
  Matrix probs = softmax_probs(logits, 1.0);
  CHECK(probs(0, 0) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(probs(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(probs(0, 2) == doctest::Approx(0.1).epsilon(1e-12));

  // rows sum to one, entries in (0,1)
  Rng rng(6);
  Matrix r = random_matrix(rng, 5, 6, 3.0);
  Matrix pr = softmax_probs(r, 1.0);
  for (std::size_t i = 0; i < pr.rows(); ++i) {
    double sum = 0.0;
    for (double v : pr.row(i)) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  // large temperature flattens bounded logits
  Matrix hot = softmax_probs(r, 1e4);
  for (std::size_t i = 0; i < hot.rows(); ++i)
    for (double v : hot.row(i)) CHECK(std::abs(v - 1.0 / 6.0) <= 1e-3);

  CHECK_THROWS_AS(softmax_probs(r, 0.0), ConfigError);
  CHECK_THROWS_AS(softmax_probs(r, -1.0), ConfigError);
}

TEST_CASE("checkpoint corruption is rejected") {
  auto spec = NetworkSpec::mlp({3, 2}, Activation::relu, 12);
  auto state = init_network(spec);
  auto path = temp_file("corrupt.sdck");
  save_checkpoint(state, path);

  auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  auto bad_magic = temp_file("bad_magic.sdck");
  std::ofstream out(bad_magic, std::ios::binary);
  out << "NOPE         ";
  out.close();
  CHECK_THROWS_AS(load_checkpoint(bad_magic), FormatError);

  CHECK_THROWS_AS(load_checkpoint(temp_file("missing.sdck")), IoError);
}
