#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "subdistill/matrix.hpp"
#include "subdistill/network.hpp"
#include "subdistill/subtask.hpp"

namespace subdistill {

// Per-sample gradients of the margin surrogate with respect to one layer's
// activations, row-aligned with the activation batch they were taken from.
struct ResponseBatch {
  Matrix values;
  std::size_t layer_index = 0;
};

// `identity` marks the no-reduction variants where U is fixed to I_d.
enum class SubspaceMethod : std::uint8_t { prca = 0, pca = 1, random = 2, identity = 3 };

// A d x K column-orthonormal frame plus the teacher mean of its layer.
// Serializes to the `SDSU` format: magic, u32 layer_index, u8 method, u32 k,
// f64 beta, then mu (1 x d) and U (d x K) as SDMX blocks.
struct Subspace {
  Matrix u;
  std::vector<double> mu_teacher;
  std::size_t layer_index = 0;
  std::size_t k = 0;
  double beta_used = 0.0;
  SubspaceMethod method = SubspaceMethod::prca;

  double orthonormality_defect() const;  // ||U^T U - I||_F
};

struct MarginDelta {
  double delta;
  int j_star;
  int j_dagger;
};

// Margin between the best and runner-up subtask classes of one probability
// row; ties resolved toward the lower class id.
MarginDelta margin_delta(std::span<const double> probs_row, const SubtaskSpec& subtask);

// Gradient of the margin with respect to the teacher's layer activations,
// one row per input. The margin's log-ratio reduces to a logit difference,
// so the backward pass injects e_{j*} - e_{j+} at the logits.
ResponseBatch response_vectors(const NetworkState& teacher, const Matrix& inputs,
                               std::size_t layer_index, const SubtaskSpec& subtask);

// Second moments entering the relevant-subspace objective. Activations are
// centered by the batch mean first; responses are used as-is. All moments
// are uncentered averages over rows.
struct SubspaceMoments {
  Matrix sigma_a;   // E[a~ a~^T]
  Matrix sigma_c;   // E[c c^T]
  Matrix sigma_ac;  // E[a~ c^T]
  std::vector<double> mu;
  double trace_a = 0.0;
  double trace_c = 0.0;
};

SubspaceMoments subspace_moments(const Matrix& activations, const Matrix& responses);

// Symmetric objective matrix 1/2 (S_ac + S_ca) + beta^-1 S_a + beta S_c.
Matrix relevance_objective_matrix(const SubspaceMoments& m, double beta);

// Top-k eigenvectors of the objective matrix; beta defaults to the balanced
// heuristic sqrt(tr S_a / tr S_c) when no fixed value is given.
Subspace prca_subspace(const ActivationBatch& activations, const ResponseBatch& responses,
                       std::size_t k, std::optional<double> fixed_beta = std::nullopt);

// Top-k eigenvectors of the centered activation covariance.
Subspace pca_subspace(const ActivationBatch& activations, std::size_t k);

// QR-orthonormalized seeded Gaussian frame; the mean comes from the caller.
Subspace random_subspace(std::size_t d, std::size_t k, std::uint64_t seed,
                         std::vector<double> mu_teacher, std::size_t layer_index);

void save_subspace(const Subspace& s, const std::filesystem::path& path);
Subspace load_subspace(const std::filesystem::path& path);

}  // namespace subdistill
