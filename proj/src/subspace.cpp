#include "subdistill/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "subdistill/errors.hpp"
#include "subdistill/numerics.hpp"
#include "subdistill/rng.hpp"

namespace subdistill {

double Subspace::orthonormality_defect() const {
  return (at_b(u, u) - Matrix::identity(u.cols())).frobenius_norm();
}

MarginDelta margin_delta(std::span<const double> probs_row, const SubtaskSpec& subtask) {
  if (subtask.class_ids.size() < 2)
    throw ConfigError("margin needs at least 2 subtask classes");
  int j_star = -1, j_dagger = -1;
  double p_star = -1.0, p_dagger = -1.0;
  for (int id : subtask.class_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= probs_row.size())
      throw DimensionError("subtask class id " + std::to_string(id) +
                           " outside the probability row");
    double p = probs_row[static_cast<std::size_t>(id)];
    // strict comparisons keep the lowest id on ties (ids scanned in subtask
    // order, but equal probabilities must resolve by class id)
    if (p > p_star || (p == p_star && id < j_star)) {
      if (j_star >= 0 && (p_star > p_dagger || (p_star == p_dagger && j_star < j_dagger))) {
        p_dagger = p_star;
        j_dagger = j_star;
      }
      p_star = p;
      j_star = id;
    } else if (p > p_dagger || (p == p_dagger && id < j_dagger)) {
      p_dagger = p;
      j_dagger = id;
    }
  }
  if (!(p_star > 0.0) || !(p_dagger > 0.0))
    throw DegenerateError("margin undefined: non-positive probability over the subtask");
  return MarginDelta{std::log(p_star / p_dagger), j_star, j_dagger};
}

ResponseBatch response_vectors(const NetworkState& teacher, const Matrix& inputs,
                               std::size_t layer_index, const SubtaskSpec& subtask) {
  const std::size_t layers = teacher.spec.layer_count();
  if (layer_index < 1 || layer_index >= layers)
    throw DimensionError("response layer index " + std::to_string(layer_index) +
                         " outside [1, " + std::to_string(layers - 1) + "]");
  subtask.validate(teacher.spec.output_dim());

  ForwardTrace trace = forward(teacher, inputs);
  Matrix probs = softmax_probs(trace.logits(), 1.0);

  // d(margin)/d(logits) = e_{j*} - e_{j+} per row
  Matrix logit_grad(inputs.rows(), teacher.spec.output_dim());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    MarginDelta md = margin_delta(probs.row(i), subtask);
    logit_grad(i, static_cast<std::size_t>(md.j_star)) += 1.0;
    logit_grad(i, static_cast<std::size_t>(md.j_dagger)) -= 1.0;
  }

  Gradients grads = backward(teacher, trace, logit_grad);
  return ResponseBatch{std::move(grads.activations[layer_index]), layer_index};
}

SubspaceMoments subspace_moments(const Matrix& activations, const Matrix& responses) {
  if (activations.rows() < 2) throw DegenerateError("subspace needs at least 2 rows");
  if (responses.rows() != activations.rows() || responses.cols() != activations.cols())
    throw DimensionError("response batch is not row-aligned with the activations");

  SubspaceMoments m;
  m.mu = activations.column_means();
  Matrix centered = activations;
  centered.subtract_row_vector(m.mu);

  const double inv_n = 1.0 / static_cast<double>(activations.rows());
  m.sigma_a = inv_n * at_b(centered, centered);
  m.sigma_c = inv_n * at_b(responses, responses);
  m.sigma_ac = inv_n * at_b(centered, responses);
  for (std::size_t i = 0; i < m.sigma_a.rows(); ++i) {
    m.trace_a += m.sigma_a(i, i);
    m.trace_c += m.sigma_c(i, i);
  }
  return m;
}

Matrix relevance_objective_matrix(const SubspaceMoments& m, double beta) {
  if (!(beta > 0.0)) throw DegenerateError("objective needs beta > 0");
  const std::size_t d = m.sigma_a.rows();
  Matrix obj(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      obj(i, j) = 0.5 * (m.sigma_ac(i, j) + m.sigma_ac(j, i)) + m.sigma_a(i, j) / beta +
                  beta * m.sigma_c(i, j);
  return obj;
}

namespace {

Subspace top_k_subspace(const Matrix& objective, std::size_t k, std::vector<double> mu,
                        std::size_t layer_index, double beta, SubspaceMethod method) {
  const std::size_t d = objective.rows();
  if (k < 1 || k > d)
    throw DimensionError("subspace k = " + std::to_string(k) + " outside [1, " +
                         std::to_string(d) + "]");
  EigenResult eig = sym_eig(objective);
  std::vector<std::size_t> cols(k);
  for (std::size_t i = 0; i < k; ++i) cols[i] = i;
  Subspace s;
  s.u = eig.eigenvectors.selected_cols(cols);
  s.mu_teacher = std::move(mu);
  s.layer_index = layer_index;
  s.k = k;
  s.beta_used = beta;
  s.method = method;
  return s;
}

}  // namespace

Subspace prca_subspace(const ActivationBatch& activations, const ResponseBatch& responses,
                       std::size_t k, std::optional<double> fixed_beta) {
  if (responses.layer_index != activations.layer_index)
    throw DimensionError("activation and response batches come from different layers");
  SubspaceMoments m = subspace_moments(activations.values, responses.values);

  double beta;
  if (fixed_beta) {
    beta = *fixed_beta;
    if (!(beta > 0.0)) throw DegenerateError("fixed beta must be positive");
  } else {
    if (m.trace_c <= 0.0)
      throw DegenerateError("degenerate responses: tr(S_c) = 0, balanced beta undefined");
    if (m.trace_a <= 0.0)
      throw DegenerateError("degenerate activations: tr(S_a) = 0, balanced beta undefined");
    beta = std::sqrt(m.trace_a / m.trace_c);
  }
  return top_k_subspace(relevance_objective_matrix(m, beta), k, std::move(m.mu),
                        activations.layer_index, beta, SubspaceMethod::prca);
}

Subspace pca_subspace(const ActivationBatch& activations, std::size_t k) {
  if (activations.values.rows() < 2) throw DegenerateError("subspace needs at least 2 rows");
  Matrix cov = covariance(activations.values, true);
  return top_k_subspace(cov, k, activations.values.column_means(), activations.layer_index,
                        0.0, SubspaceMethod::pca);
}

Subspace random_subspace(std::size_t d, std::size_t k, std::uint64_t seed,
                         std::vector<double> mu_teacher, std::size_t layer_index) {
  if (k < 1 || k > d)
    throw DimensionError("subspace k = " + std::to_string(k) + " outside [1, " +
                         std::to_string(d) + "]");
  if (mu_teacher.size() != d) throw DimensionError("random_subspace mean length mismatch");
  Rng rng(seed);
  Matrix g(d, k);
  for (double& x : g.flat()) x = rng.gaussian();
  Subspace s;
  s.u = qr_orthonormalize(g);
  s.mu_teacher = std::move(mu_teacher);
  s.layer_index = layer_index;
  s.k = k;
  s.beta_used = 0.0;
  s.method = SubspaceMethod::random;
  return s;
}

namespace {

void put_u32le(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32le(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("truncated subspace file while reading ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_subspace(const Subspace& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open subspace file for writing: " + path.string());
  out.write("SDSU", 4);
  put_u32le(out, static_cast<std::uint32_t>(s.layer_index));
  out.put(static_cast<char>(static_cast<std::uint8_t>(s.method)));
  put_u32le(out, static_cast<std::uint32_t>(s.k));
  std::uint64_t bits;
  std::memcpy(&bits, &s.beta_used, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
  write_sdmx(Matrix::from_row(s.mu_teacher), out);
  write_sdmx(s.u, out);
  if (!out) throw IoError("subspace write failed: " + path.string());
}

Subspace load_subspace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open subspace file for reading: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated subspace file while reading magic");
  if (std::memcmp(magic, "SDSU", 4) != 0)
    throw FormatError("bad subspace magic in " + path.string());
  Subspace s;
  s.layer_index = get_u32le(in, "layer index");
  int method = in.get();
  if (method < 0 || method > 3) throw FormatError("unknown subspace method code");
  s.method = static_cast<SubspaceMethod>(method);
  s.k = get_u32le(in, "k");
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated subspace file while reading beta");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  std::memcpy(&s.beta_used, &bits, 8);
  Matrix mu = read_sdmx(in);
  s.mu_teacher.assign(mu.flat().begin(), mu.flat().end());
  s.u = read_sdmx(in);
  if (s.u.cols() != s.k || s.u.rows() != s.mu_teacher.size())
    throw FormatError("subspace file shapes are inconsistent: " + path.string());
  return s;
}

}  // namespace subdistill
