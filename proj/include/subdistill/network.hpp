#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "subdistill/matrix.hpp"

namespace subdistill {

enum class Activation : std::uint8_t { relu = 0, identity = 1 };
enum class ModelTag : std::uint8_t { teacher = 0, student = 1 };

// Feedforward net description: layer_widths[0] is the input dimension, the
// last width is the class count. The output layer is always identity
// (logits); hidden_activations covers layers 1..L-1.
struct NetworkSpec {
  std::vector<std::size_t> layer_widths;
  std::vector<Activation> hidden_activations;
  std::uint64_t seed = 0;

  std::size_t layer_count() const { return layer_widths.size() - 1; }
  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  void validate() const;

  static NetworkSpec mlp(std::vector<std::size_t> widths, Activation hidden,
                         std::uint64_t seed);

  bool operator==(const NetworkSpec&) const = default;
};

struct NetworkState {
  NetworkSpec spec;
  std::vector<Matrix> weights;               // W_l: d_l x d_{l-1}
  std::vector<std::vector<double>> biases;   // b_l: length d_l

  bool operator==(const NetworkState&) const = default;
};

// Post-activation values at one layer for a batch; layer_index 0 is the input.
struct ActivationBatch {
  std::size_t layer_index = 0;
  Matrix values;
  ModelTag model_tag = ModelTag::teacher;
};

struct ForwardTrace {
  std::vector<Matrix> activations;  // 0..L, activations[L] are the logits
  const Matrix& logits() const { return activations.back(); }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  Matrix inputs;                      // d(loss)/d(input rows)
  std::vector<Matrix> activations;    // d(loss)/d(a^(l)) for l = 0..L
};

// Weights ~ seeded uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
NetworkState init_network(const NetworkSpec& spec);

ForwardTrace forward(const NetworkState& state, const Matrix& inputs);

// Reverse-mode gradients of the scalar whose logit cotangents are supplied.
// Each (layer_index, matrix) entry in `extra_activation_gradients` is added
// to d(loss)/d(a^(layer_index)) when the sweep reaches that layer.
Gradients backward(const NetworkState& state, const ForwardTrace& trace,
                   const Matrix& logit_gradients,
                   const std::vector<std::pair<std::size_t, Matrix>>&
                       extra_activation_gradients = {});

// Row-stochastic softmax of logits / temperature, stabilized by row-max
// subtraction. temperature must be > 0.
Matrix softmax_probs(const Matrix& logits, double temperature);

ActivationBatch trace_batch(const ForwardTrace& trace, std::size_t layer_index,
                            ModelTag tag);

// Checkpoint format `SDCK`: magic, u32 width count, u32 widths, u8 activation
// codes for hidden layers, u64 seed, then per layer the weight matrix and the
// bias (1 x d) in SDMX blocks. Round-trips are bit-exact.
void save_checkpoint(const NetworkState& state, const std::filesystem::path& path);
NetworkState load_checkpoint(const std::filesystem::path& path);

}  // namespace subdistill
