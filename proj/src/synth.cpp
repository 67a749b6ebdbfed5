#include "subdistill/synth.hpp"

#include <cmath>
#include <numbers>

#include "subdistill/errors.hpp"
#include "subdistill/numerics.hpp"
#include "subdistill/report.hpp"
#include "subdistill/rng.hpp"
#include "subdistill/textio.hpp"
#include "subdistill/trainer.hpp"

namespace subdistill {

ManifoldDataset generate_manifold(std::size_t n, std::size_t d0, std::uint64_t seed,
                                  double noise_scale) {
  if (n < 16) throw ConfigError("manifold needs n >= 16");
  if (d0 < 2) throw ConfigError("manifold needs d0 >= 2");
  if (noise_scale < 0.0) throw ConfigError("noise_scale must be >= 0");

  Rng rng(seed);
  // frequencies reach well past the circle's so the curve is rough: its
  // Gram spectrum decays slowly and a low-rank fit cannot capture all of it
  std::vector<double> freq(d0, 0.0), phase(d0, 0.0), amp(d0, 0.0);
  for (std::size_t j = 2; j < d0; ++j) {
    freq[j] = rng.uniform(1.0, 8.0);
    phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    amp[j] = rng.uniform(0.3, 1.0);
  }

  ManifoldDataset ds;
  ds.inputs = Matrix(n, d0);
  ds.t.resize(n);
  ds.labels.resize(n);
  ds.relevant_lo = n / 3;
  ds.relevant_hi = 2 * n / 3;
  const std::size_t mid = (ds.relevant_lo + ds.relevant_hi) / 2;

  for (std::size_t i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / static_cast<double>(n - 1);
    ds.t[i] = t;
    // circle coordinates keep adjacent gaps bounded away from zero
    ds.inputs(i, 0) = std::cos(2.0 * std::numbers::pi * t);
    ds.inputs(i, 1) = std::sin(2.0 * std::numbers::pi * t);
    for (std::size_t j = 2; j < d0; ++j)
      ds.inputs(i, j) = amp[j] * std::sin(2.0 * std::numbers::pi * freq[j] * t + phase[j]);
    bool relevant = i >= ds.relevant_lo && i < ds.relevant_hi;
    ds.labels[i] = relevant ? (i < mid ? 0 : 1) : 2;
  }
  if (noise_scale > 0.0)
    for (double& v : ds.inputs.flat()) v += noise_scale * rng.gaussian();
  return ds;
}

LabeledDataset to_labeled(const ManifoldDataset& manifold) {
  LabeledDataset ds;
  ds.inputs = manifold.inputs;
  ds.labels = manifold.labels;
  ds.class_names = {"relevant_a", "relevant_b", "background"};
  ds.original_ids = {0, 1, 2};
  ds.source_digest = 0;
  ds.validate();
  return ds;
}

std::vector<double> kernel_lag_profile(const KernelMatrix& kernel,
                                       const std::vector<std::size_t>& lags) {
  const Matrix& k = kernel.values;
  std::vector<double> profile;
  for (std::size_t lag : lags) {
    if (lag >= k.rows()) throw DimensionError("lag exceeds kernel size");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i + lag < k.rows(); ++i) {
      double den = std::sqrt(std::max(k(i, i), 1e-300) * std::max(k(i + lag, i + lag), 1e-300));
      sum += k(i, i + lag) / den;
      ++count;
    }
    profile.push_back(sum / static_cast<double>(count));
  }
  return profile;
}

namespace {

// One student representation a = relu(W x + b) trained against a single
// layer target through its adapter, no output head. `subdistill` matches
// the projected teacher through an orthonormal V; otherwise the (W,b)
// reconstruction runs in the teacher's full layer space.
NetworkState fit_representation(const BandExperimentConfig& config, const Matrix& inputs,
                                const Matrix& teacher_acts, const Subspace* subspace,
                                bool use_wb) {
  const std::size_t k = config.student_hidden;
  auto spec = NetworkSpec::mlp({config.d0, k, k}, Activation::relu, config.seed);
  NetworkState student = init_network(spec);

  LayerBinding binding;
  WbAdapter wb{Matrix(teacher_acts.cols(), k), std::vector<double>(teacher_acts.cols(), 0.0)};
  double scale;
  if (use_wb) {
    Matrix centered = teacher_acts.centered_rows();
    double sum = 0.0;
    for (double v : centered.flat()) sum += v * v;
    scale = static_cast<double>(teacher_acts.rows()) / sum;
  } else {
    binding.student_layer = 1;
    binding.teacher_layer = 1;
    binding.k = k;
    binding.subspace = *subspace;
    binding.adapter.v = Matrix::identity(k);
    scale = alpha_normalizer(*subspace, {teacher_acts}, 1.0);
  }

  Rng shuffle_rng(Rng::mix(config.seed, 0xba42dULL));
  const std::size_t n = inputs.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.distill_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += 16) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() +
                                        static_cast<std::ptrdiff_t>(std::min(n, start + 16)));
      Matrix bx = inputs.selected_rows(rows);
      Matrix bt = teacher_acts.selected_rows(rows);
      ForwardTrace trace = forward(student, bx);
      const Matrix& s_act = trace.activations[1];

      Matrix act_grad;
      if (use_wb) {
        WbLossResult r = wb_layer_loss(wb, bt, s_act);
        act_grad = scale * r.activation_grad;
        for (std::size_t i = 0; i < wb.w.flat().size(); ++i)
          wb.w.flat()[i] -= config.distill_lr * scale * r.w_grad.flat()[i];
        for (std::size_t i = 0; i < wb.b.size(); ++i)
          wb.b[i] -= config.distill_lr * scale * r.b_grad[i];
      } else {
        LayerLossResult r = subdistill_layer_loss(binding, bt, s_act);
        act_grad = scale * r.activation_grad;
        binding.adapter.v =
            stiefel_retract(binding.adapter.v, config.distill_lr * scale * r.v_grad);
      }

      Gradients grads =
          backward(student, trace, Matrix(bx.rows(), k), {{1, std::move(act_grad)}});
      Matrix& w = student.weights[0];
      for (std::size_t i = 0; i < w.flat().size(); ++i)
        w.flat()[i] -= config.distill_lr * grads.weights[0].flat()[i];
      for (std::size_t i = 0; i < student.biases[0].size(); ++i)
        student.biases[0][i] -= config.distill_lr * grads.biases[0][i];
    }
  }
  return student;
}

}  // namespace

BandExperimentResult run_band_experiment(const BandExperimentConfig& config) {
  ManifoldDataset manifold =
      generate_manifold(config.n, config.d0, config.seed, config.noise_scale);
  LabeledDataset dataset = to_labeled(manifold);

  auto teacher_spec = NetworkSpec::mlp(
      {config.d0, config.teacher_hidden, config.teacher_hidden2, 3}, Activation::relu, 0);
  BandExperimentResult result;
  NetworkState teacher =
      train_teacher(teacher_spec, dataset, config.teacher_epochs, config.teacher_lr,
                    Rng::mix(config.seed, 0x7eacULL), &result.teacher_accuracy);

  Matrix teacher_acts = forward(teacher, manifold.inputs).activations[1];

  // frame estimated on the relevant segment, against the margin over the
  // two relevant classes
  SubtaskSpec subtask{{0, 1}, "relevant"};
  std::vector<std::size_t> relevant_rows;
  for (std::size_t i = manifold.relevant_lo; i < manifold.relevant_hi; ++i)
    relevant_rows.push_back(i);
  Matrix relevant_inputs = manifold.inputs.selected_rows(relevant_rows);
  ActivationBatch relevant_acts{1, teacher_acts.selected_rows(relevant_rows),
                                ModelTag::teacher};
  ResponseBatch responses = response_vectors(teacher, relevant_inputs, 1, subtask);
  Subspace frame = prca_subspace(relevant_acts, responses, config.student_hidden);

  // both representations train on the full manifold at matched budgets;
  // only the target differs
  NetworkState sub_student =
      fit_representation(config, manifold.inputs, teacher_acts, &frame, false);
  NetworkState wb_student =
      fit_representation(config, manifold.inputs, teacher_acts, nullptr, true);

  result.teacher_kernel = centered_kernel(teacher_acts);
  result.subdistill_kernel =
      centered_kernel(forward(sub_student, manifold.inputs).activations[1]);
  result.wb_kernel = centered_kernel(forward(wb_student, manifold.inputs).activations[1]);
  result.relevant_lo = manifold.relevant_lo;
  result.relevant_hi = manifold.relevant_hi;

  result.subdistill_score = band_alignment_score(result.teacher_kernel, result.subdistill_kernel,
                                                 result.relevant_lo, result.relevant_hi);
  result.wb_score = band_alignment_score(result.teacher_kernel, result.wb_kernel,
                                         result.relevant_lo, result.relevant_hi);
  result.subdistill_mass =
      block_mass_fraction(result.subdistill_kernel, result.relevant_lo, result.relevant_hi);
  result.wb_mass = block_mass_fraction(result.wb_kernel, result.relevant_lo, result.relevant_hi);

  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    write_sdmx(result.teacher_kernel.values, config.out_dir / "kernels_teacher.sdmx");
    write_sdmx(result.subdistill_kernel.values, config.out_dir / "kernels_subdistill.sdmx");
    write_sdmx(result.wb_kernel.values, config.out_dir / "kernels_wb.sdmx");
    write_kernel_panels_svg({{"teacher", &result.teacher_kernel.values},
                             {"subdistill", &result.subdistill_kernel.values},
                             {"wb", &result.wb_kernel.values}},
                            config.out_dir / "kernels.svg", config.deterministic);
    std::string csv = "seed,subdistill_score,wb_score,subdistill_mass,wb_mass,teacher_accuracy\n";
    csv += csv_join({std::to_string(config.seed), fmt_double(result.subdistill_score),
                     fmt_double(result.wb_score), fmt_double(result.subdistill_mass),
                     fmt_double(result.wb_mass), fmt_double(result.teacher_accuracy)}) +
           "\n";
    write_text_file(config.out_dir / "scores.csv", csv);
  }
  return result;
}

}  // namespace subdistill
