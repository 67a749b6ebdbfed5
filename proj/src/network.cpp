#include "subdistill/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "subdistill/errors.hpp"
#include "subdistill/rng.hpp"

namespace subdistill {

void NetworkSpec::validate() const {
  if (layer_widths.size() < 2)
    throw ConfigError("network spec needs at least input and output widths");
  for (std::size_t w : layer_widths)
    if (w < 1) throw ConfigError("network spec widths must be >= 1");
  if (hidden_activations.size() != layer_widths.size() - 2)
    throw ConfigError("network spec needs one activation per hidden layer (" +
                      std::to_string(layer_widths.size() - 2) + " expected, " +
                      std::to_string(hidden_activations.size()) + " given)");
}

NetworkSpec NetworkSpec::mlp(std::vector<std::size_t> widths, Activation hidden,
                             std::uint64_t seed) {
  NetworkSpec spec;
  spec.layer_widths = std::move(widths);
  if (spec.layer_widths.size() >= 2)
    spec.hidden_activations.assign(spec.layer_widths.size() - 2, hidden);
  spec.seed = seed;
  spec.validate();
  return spec;
}

NetworkState init_network(const NetworkSpec& spec) {
  spec.validate();
  NetworkState state;
  state.spec = spec;
  Rng rng(spec.seed);
  const std::size_t layers = spec.layer_count();
  state.weights.reserve(layers);
  state.biases.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    std::size_t fan_in = spec.layer_widths[l];
    std::size_t fan_out = spec.layer_widths[l + 1];
    double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_out, fan_in);
    for (double& x : w.flat()) x = rng.uniform(-scale, scale);
    state.weights.push_back(std::move(w));
    state.biases.emplace_back(fan_out, 0.0);
  }
  return state;
}

namespace {

Activation layer_activation(const NetworkSpec& spec, std::size_t layer) {
  // layer in 1..L; the output layer is identity by construction
  if (layer == spec.layer_count()) return Activation::identity;
  return spec.hidden_activations[layer - 1];
}

// z = a_prev W^T + 1 b^T
Matrix affine(const Matrix& a_prev, const Matrix& w, const std::vector<double>& b) {
  Matrix z = a_bt(a_prev, w);
  z.add_row_vector(b);
  return z;
}

}  // namespace

ForwardTrace forward(const NetworkState& state, const Matrix& inputs) {
  if (inputs.cols() != state.spec.input_dim())
    throw DimensionError("forward: input has " + std::to_string(inputs.cols()) +
                         " columns, spec expects " + std::to_string(state.spec.input_dim()));
  ForwardTrace trace;
  trace.activations.reserve(state.spec.layer_count() + 1);
  trace.activations.push_back(inputs);
  for (std::size_t l = 1; l <= state.spec.layer_count(); ++l) {
    Matrix z = affine(trace.activations.back(), state.weights[l - 1], state.biases[l - 1]);
    if (layer_activation(state.spec, l) == Activation::relu)
      for (double& x : z.flat()) x = std::max(x, 0.0);
    trace.activations.push_back(std::move(z));
  }
  return trace;
}

Gradients backward(const NetworkState& state, const ForwardTrace& trace,
                   const Matrix& logit_gradients,
                   const std::vector<std::pair<std::size_t, Matrix>>& extra_activation_gradients) {
  const std::size_t layers = state.spec.layer_count();
  if (trace.activations.size() != layers + 1)
    throw DimensionError("backward: trace does not match network depth");
  if (logit_gradients.rows() != trace.logits().rows() ||
      logit_gradients.cols() != trace.logits().cols())
    throw DimensionError("backward: logit gradient shape mismatch");
  for (const auto& [layer, grad] : extra_activation_gradients) {
    if (layer > layers)
      throw DimensionError("backward: extra gradient layer index " + std::to_string(layer) +
                           " out of range");
    if (grad.rows() != trace.activations[layer].rows() ||
        grad.cols() != trace.activations[layer].cols())
      throw DimensionError("backward: extra gradient shape mismatch at layer " +
                           std::to_string(layer));
  }

  Gradients grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);
  grads.activations.resize(layers + 1);

  Matrix g = logit_gradients;  // d(loss)/d(a^(l)) while sweeping down
  for (std::size_t l = layers; l >= 1; --l) {
    for (const auto& [layer, grad] : extra_activation_gradients)
      if (layer == l) g += grad;
    grads.activations[l] = g;

    // d(loss)/d(z^(l)) through the activation
    Matrix gz = std::move(g);
    if (layer_activation(state.spec, l) == Activation::relu) {
      const Matrix& a = trace.activations[l];
      for (std::size_t i = 0; i < gz.flat().size(); ++i)
        if (a.flat()[i] <= 0.0) gz.flat()[i] = 0.0;
    }

    grads.weights[l - 1] = at_b(gz, trace.activations[l - 1]);
    std::vector<double>& bg = grads.biases[l - 1];
    bg.assign(state.biases[l - 1].size(), 0.0);
    for (std::size_t i = 0; i < gz.rows(); ++i) {
      const double* r = gz.row(i).data();
      for (std::size_t j = 0; j < gz.cols(); ++j) bg[j] += r[j];
    }
    g = gz * state.weights[l - 1];
  }
  for (const auto& [layer, grad] : extra_activation_gradients)
    if (layer == 0) g += grad;
  grads.activations[0] = g;
  grads.inputs = std::move(g);
  return grads;
}

Matrix softmax_probs(const Matrix& logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("softmax temperature must be positive");
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    double mx = in[0];
    for (double x : in) mx = std::max(mx, x);
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp((in[j] - mx) / temperature);
      sum += out[j];
    }
    for (std::size_t j = 0; j < in.size(); ++j) out[j] /= sum;
  }
  return p;
}

ActivationBatch trace_batch(const ForwardTrace& trace, std::size_t layer_index, ModelTag tag) {
  if (layer_index >= trace.activations.size())
    throw DimensionError("trace_batch: layer index out of range");
  return ActivationBatch{layer_index, trace.activations[layer_index], tag};
}

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u64le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64le(std::istream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(std::string("truncated checkpoint while reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const NetworkState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write("SDCK", 4);
  put_u32le(out, static_cast<std::uint32_t>(state.spec.layer_widths.size()));
  for (std::size_t w : state.spec.layer_widths) put_u32le(out, static_cast<std::uint32_t>(w));
  for (Activation a : state.spec.hidden_activations)
    out.put(static_cast<char>(static_cast<std::uint8_t>(a)));
  put_u64le(out, state.spec.seed);
  for (std::size_t l = 0; l < state.weights.size(); ++l) {
    write_sdmx(state.weights[l], out);
    write_sdmx(Matrix::from_row(state.biases[l]), out);
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

NetworkState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint for reading: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated checkpoint while reading magic");
  if (std::memcmp(magic, "SDCK", 4) != 0)
    throw FormatError("bad checkpoint magic in " + path.string());

  NetworkSpec spec;
  std::uint32_t widths = get_u32le(in, "width count");
  if (widths < 2 || widths > 1024) throw FormatError("implausible checkpoint width count");
  spec.layer_widths.resize(widths);
  for (auto& w : spec.layer_widths) w = get_u32le(in, "width");
  spec.hidden_activations.resize(widths - 2);
  for (auto& a : spec.hidden_activations) {
    int c = in.get();
    if (c == EOF) throw FormatError("truncated checkpoint while reading activations");
    if (c != 0 && c != 1) throw FormatError("unknown activation code in checkpoint");
    a = static_cast<Activation>(c);
  }
  spec.seed = get_u64le(in, "seed");
  spec.validate();

  NetworkState state;
  state.spec = spec;
  for (std::size_t l = 0; l + 1 < widths; ++l) {
    Matrix w = read_sdmx(in);
    Matrix b = read_sdmx(in);
    if (w.rows() != spec.layer_widths[l + 1] || w.cols() != spec.layer_widths[l])
      throw FormatError("checkpoint weight shape does not match its spec at layer " +
                        std::to_string(l + 1));
    if (b.rows() != 1 || b.cols() != spec.layer_widths[l + 1])
      throw FormatError("checkpoint bias shape does not match its spec at layer " +
                        std::to_string(l + 1));
    state.weights.push_back(std::move(w));
    state.biases.emplace_back(b.flat().begin(), b.flat().end());
  }
  return state;
}

}  // namespace subdistill
