#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "subdistill/matrix.hpp"
#include "subdistill/subspace.hpp"

namespace subdistill {

enum class OrthMode : std::uint8_t { stiefel = 0, soft_penalty = 1 };
enum class MuPolicy : std::uint8_t { batch_mean = 0, zero = 1 };

// Learnable map from the student's layer space into the matching subspace.
// v is K x K in the reduced formulation and d x K when the reduction is
// switched off. frozen_mu holds the running student mean for evaluation-time
// loss reports; training always uses the policy.
struct Adapter {
  Matrix v;
  OrthMode orthogonality_mode = OrthMode::stiefel;
  double penalty_weight = 1000.0;
  MuPolicy mu_student_policy = MuPolicy::batch_mean;
  std::vector<double> frozen_mu;

  double orthonormality_defect() const;  // ||V^T V - I||_F
};

// Unconstrained affine map from student space into the teacher's full layer
// space: residual W a + b - a_T.
struct WbAdapter {
  Matrix w;                // d x K
  std::vector<double> b;   // length d
};

// One teacher/student layer pairing with its frame, adapter and weight.
struct LayerBinding {
  std::size_t teacher_layer = 0;
  std::size_t student_layer = 0;
  Subspace subspace;
  Adapter adapter;
  double alpha_l = 1.0;
  std::size_t k = 0;
};

struct LossReport {
  double output_loss = 0.0;
  std::vector<double> per_layer_losses;
  std::vector<double> penalty_terms;
  std::vector<double> alphas;
  double total = 0.0;
  double recompute_total() const;
};

struct KlResult {
  double loss;
  Matrix student_logit_grad;
};

// Mean KL(teacher || student) of the tempered softmax rows, with the exact
// gradient for the student logits. Callers slice logits to the subtask
// classes before calling.
KlResult output_kl(const Matrix& teacher_logits, const Matrix& student_logits,
                   double temperature);

struct LayerLossResult {
  double loss;
  Matrix v_grad;
  Matrix activation_grad;  // w.r.t. the student batch, centering included
};

// Mean squared residual || V (a - mu) - U^T (a_T - mu_T) ||^2 over the batch.
// The student mean follows the adapter policy; `mu_override` replaces it for
// evaluation-time reporting (gradients then ignore the centering coupling).
LayerLossResult subdistill_layer_loss(const LayerBinding& binding, const Matrix& teacher_batch,
                                      const Matrix& student_batch,
                                      const std::vector<double>* mu_override = nullptr);

// alpha / E || U^T (a_T - mu_T) ||^2 over the provided batches.
double alpha_normalizer(const Subspace& subspace, const std::vector<Matrix>& teacher_batches,
                        double alpha);

struct WbLossResult {
  double loss;
  Matrix w_grad;
  std::vector<double> b_grad;
  Matrix activation_grad;
};

// Mean squared residual || W a + b - a_T ||^2 in the teacher's layer space.
WbLossResult wb_layer_loss(const WbAdapter& adapter, const Matrix& teacher_batch,
                           const Matrix& student_batch);

struct PenaltyResult {
  double value;
  Matrix grad;
};

// weight * || M^T M - I ||_F^2 with gradient 4 * weight * M (M^T M - I).
PenaltyResult orthogonality_penalty(const Matrix& m, double weight);

}  // namespace subdistill
