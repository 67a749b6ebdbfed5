#include "subdistill/distill_loss.hpp"

#include <cmath>
#include <string>

#include "subdistill/errors.hpp"

namespace subdistill {

double Adapter::orthonormality_defect() const {
  return (at_b(v, v) - Matrix::identity(v.cols())).frobenius_norm();
}

double LossReport::recompute_total() const {
  double t = output_loss;
  for (std::size_t i = 0; i < per_layer_losses.size(); ++i)
    t += (i < alphas.size() ? alphas[i] : 1.0) * per_layer_losses[i];
  for (double p : penalty_terms) t += p;
  return t;
}

KlResult output_kl(const Matrix& teacher_logits, const Matrix& student_logits,
                   double temperature) {
  if (teacher_logits.rows() != student_logits.rows() ||
      teacher_logits.cols() != student_logits.cols())
    throw DimensionError("output_kl: logit shape mismatch (" +
                         std::to_string(teacher_logits.rows()) + "x" +
                         std::to_string(teacher_logits.cols()) + " vs " +
                         std::to_string(student_logits.rows()) + "x" +
                         std::to_string(student_logits.cols()) + ")");
  const std::size_t n = teacher_logits.rows();
  if (n == 0) throw DegenerateError("output_kl: empty batch");

  Matrix p_t = softmax_probs(teacher_logits, temperature);
  Matrix p_s = softmax_probs(student_logits, temperature);

  double loss = 0.0;
  Matrix grad(n, teacher_logits.cols());
  const double scale = 1.0 / (temperature * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < teacher_logits.cols(); ++j) {
      loss += p_t(i, j) * (std::log(p_t(i, j)) - std::log(p_s(i, j)));
      grad(i, j) = scale * (p_s(i, j) - p_t(i, j));
    }
  }
  return KlResult{loss / static_cast<double>(n), std::move(grad)};
}

LayerLossResult subdistill_layer_loss(const LayerBinding& binding, const Matrix& teacher_batch,
                                      const Matrix& student_batch,
                                      const std::vector<double>* mu_override) {
  const Matrix& u = binding.subspace.u;
  const Matrix& v = binding.adapter.v;
  const std::size_t n = student_batch.rows();
  if (n == 0) throw DegenerateError("layer loss: empty batch");
  if (teacher_batch.rows() != n)
    throw DimensionError("layer loss: batches are not row-aligned");
  if (teacher_batch.cols() != u.rows())
    throw DimensionError("layer loss: teacher width " + std::to_string(teacher_batch.cols()) +
                         " does not match the subspace (" + std::to_string(u.rows()) + ")");
  if (student_batch.cols() != v.cols())
    throw DimensionError("layer loss: student width " + std::to_string(student_batch.cols()) +
                         " does not match the adapter (" + std::to_string(v.cols()) + ")");
  if (v.rows() != u.cols())
    throw DimensionError("layer loss: adapter rows do not match the subspace width");

  bool center = binding.adapter.mu_student_policy == MuPolicy::batch_mean;
  Matrix student_centered = student_batch;
  if (mu_override != nullptr) {
    student_centered.subtract_row_vector(*mu_override);
    center = false;  // fixed mean: no batch coupling in the gradient
  } else if (center) {
    student_centered = student_batch.centered_rows();
  }

  Matrix teacher_centered = teacher_batch;
  teacher_centered.subtract_row_vector(binding.subspace.mu_teacher);

  // residual rows: (a - mu) V^T - (a_T - mu_T) U
  Matrix residual = a_bt(student_centered, v) - teacher_centered * u;

  double loss = 0.0;
  for (double r : residual.flat()) loss += r * r;
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;

  Matrix v_grad = (2.0 * inv_n) * at_b(residual, student_centered);
  Matrix act_grad = (2.0 * inv_n) * (residual * v);
  if (center) {
    // d(mu)/d(a) folds in as subtraction of the gradient's own batch mean
    act_grad = act_grad.centered_rows();
  }
  return LayerLossResult{loss, std::move(v_grad), std::move(act_grad)};
}

double alpha_normalizer(const Subspace& subspace, const std::vector<Matrix>& teacher_batches,
                        double alpha) {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  double sum = 0.0;
  std::size_t count = 0;
  for (const Matrix& batch : teacher_batches) {
    Matrix centered = batch;
    centered.subtract_row_vector(subspace.mu_teacher);
    Matrix projected = centered * subspace.u;
    for (double p : projected.flat()) sum += p * p;
    count += batch.rows();
  }
  if (count == 0) throw DegenerateError("alpha normalizer: no teacher rows");
  double mean_sq = sum / static_cast<double>(count);
  if (mean_sq <= 0.0)
    throw DegenerateError("degenerate layer: projected teacher variance is zero");
  return alpha / mean_sq;
}

WbLossResult wb_layer_loss(const WbAdapter& adapter, const Matrix& teacher_batch,
                           const Matrix& student_batch) {
  const std::size_t n = student_batch.rows();
  if (n == 0) throw DegenerateError("layer loss: empty batch");
  if (teacher_batch.rows() != n)
    throw DimensionError("layer loss: batches are not row-aligned");
  if (adapter.w.cols() != student_batch.cols() || adapter.w.rows() != teacher_batch.cols() ||
      adapter.b.size() != teacher_batch.cols())
    throw DimensionError("wb adapter shapes do not match the batches");

  Matrix residual = a_bt(student_batch, adapter.w);
  residual.add_row_vector(adapter.b);
  residual -= teacher_batch;

  double loss = 0.0;
  for (double r : residual.flat()) loss += r * r;
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;

  Matrix w_grad = (2.0 * inv_n) * at_b(residual, student_batch);
  std::vector<double> b_grad(adapter.b.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = residual.row(i).data();
    for (std::size_t j = 0; j < b_grad.size(); ++j) b_grad[j] += r[j];
  }
  for (double& g : b_grad) g *= 2.0 * inv_n;
  Matrix act_grad = (2.0 * inv_n) * (residual * adapter.w);
  return WbLossResult{loss, std::move(w_grad), std::move(b_grad), std::move(act_grad)};
}

PenaltyResult orthogonality_penalty(const Matrix& m, double weight) {
  if (weight < 0.0) throw ConfigError("penalty weight must be >= 0");
  Matrix gram = at_b(m, m) - Matrix::identity(m.cols());
  double value = gram.frobenius_norm();
  value = weight * value * value;
  Matrix grad = (4.0 * weight) * (m * gram);
  return PenaltyResult{value, std::move(grad)};
}

}  // namespace subdistill
