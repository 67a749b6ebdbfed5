#include "subdistill/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "subdistill/errors.hpp"
#include "subdistill/numerics.hpp"
#include "subdistill/rng.hpp"
#include "subdistill/textio.hpp"

namespace subdistill {

std::string method_name(Method m) {
  switch (m) {
    case Method::subdistill: return "subdistill";
    case Method::wb_baseline: return "wb_baseline";
    case Method::output_only: return "output_only";
  }
  throw ConfigError("unknown method");
}

Method method_from_name(const std::string& name) {
  if (name == "subdistill") return Method::subdistill;
  if (name == "wb_baseline") return Method::wb_baseline;
  if (name == "output_only") return Method::output_only;
  throw ConfigError("unknown method: " + name);
}

void DistillConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(training_fraction > 0.0 && training_fraction <= 1.0))
    throw ConfigError("training_fraction must be in (0, 1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (ablations.any() && method != Method::subdistill)
    throw ConfigError("ablation flags apply to the subdistill method only");
  int subspace_swaps = int(ablations.no_dimred_v1) + int(ablations.no_dimred_v2) +
                       int(ablations.pca_subspace) + int(ablations.random_subspace);
  if (subspace_swaps > 1)
    throw ConfigError("at most one subspace-replacement ablation may be active");
  for (int b : layer_bindings)
    if (b < 1) throw ConfigError("layer binding ids start at 1");
}

std::vector<BindingPlanEntry> default_binding_map(const NetworkSpec& teacher,
                                                  const NetworkSpec& student) {
  const std::size_t teacher_hidden = teacher.layer_count() - 1;
  const std::size_t student_hidden = student.layer_count() - 1;
  std::vector<BindingPlanEntry> map;
  if (teacher_hidden == 5 && student_hidden == 4) {
    map = {{1, 1}, {2, 2}, {3, 3}, {5, 4}};
  } else {
    for (std::size_t l = 1; l <= std::min(teacher_hidden, student_hidden); ++l)
      map.push_back({l, l});
  }
  return map;
}

namespace {

std::string mode_name(TrainingMode m) {
  return m == TrainingMode::joint ? "joint" : "decoupled";
}

std::string orth_name(OrthMode m) {
  return m == OrthMode::stiefel ? "stiefel" : "soft_penalty";
}

}  // namespace

void to_json(nlohmann::json& j, const DistillConfig& c) {
  j = nlohmann::json{
      {"alpha", c.alpha},
      {"temperature", c.temperature},
      {"layer_bindings", c.layer_bindings},
      {"method", method_name(c.method)},
      {"ablations",
       {{"no_centering", c.ablations.no_centering},
        {"no_normalization", c.ablations.no_normalization},
        {"no_dimred_v1", c.ablations.no_dimred_v1},
        {"no_dimred_v2", c.ablations.no_dimred_v2},
        {"pca_subspace", c.ablations.pca_subspace},
        {"random_subspace", c.ablations.random_subspace}}},
      {"training_fraction", c.training_fraction},
      {"epochs", c.epochs},
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"training_mode", mode_name(c.training_mode)},
      {"orth_mode", orth_name(c.orth_mode)},
      {"penalty_weight", c.penalty_weight},
      {"momentum", c.momentum},
      {"split_fractions", c.split_fractions},
  };
  if (c.decoupled_output_epochs != kSameAsEpochs)
    j["decoupled_output_epochs"] = c.decoupled_output_epochs;
  if (!c.binding_map.empty()) {
    nlohmann::json bm = nlohmann::json::array();
    for (const auto& e : c.binding_map)
      bm.push_back({{"teacher_layer", e.teacher_layer}, {"student_layer", e.student_layer}});
    j["binding_map"] = bm;
  }
}

void from_json(const nlohmann::json& j, DistillConfig& c) {
  static const std::vector<std::string> known = {
      "alpha",         "temperature",   "layer_bindings", "method",
      "ablations",     "training_fraction", "epochs",     "learning_rate",
      "batch_size",    "seed",          "training_mode",  "orth_mode",
      "penalty_weight", "momentum",     "split_fractions", "decoupled_output_epochs",
      "binding_map"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown distill config key: '" + key + "'");

  c = DistillConfig{};
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
  if (j.contains("layer_bindings")) c.layer_bindings = j.at("layer_bindings").get<std::vector<int>>();
  if (j.contains("method")) c.method = method_from_name(j.at("method").get<std::string>());
  if (j.contains("ablations")) {
    const auto& a = j.at("ablations");
    static const std::vector<std::string> flags = {"no_centering",  "no_normalization",
                                                   "no_dimred_v1", "no_dimred_v2",
                                                   "pca_subspace", "random_subspace"};
    for (const auto& [key, value] : a.items())
      if (std::find(flags.begin(), flags.end(), key) == flags.end())
        throw ConfigError("unknown ablation flag: '" + key + "'");
    if (a.contains("no_centering")) c.ablations.no_centering = a.at("no_centering").get<bool>();
    if (a.contains("no_normalization"))
      c.ablations.no_normalization = a.at("no_normalization").get<bool>();
    if (a.contains("no_dimred_v1")) c.ablations.no_dimred_v1 = a.at("no_dimred_v1").get<bool>();
    if (a.contains("no_dimred_v2")) c.ablations.no_dimred_v2 = a.at("no_dimred_v2").get<bool>();
    if (a.contains("pca_subspace")) c.ablations.pca_subspace = a.at("pca_subspace").get<bool>();
    if (a.contains("random_subspace"))
      c.ablations.random_subspace = a.at("random_subspace").get<bool>();
  }
  if (j.contains("training_fraction"))
    c.training_fraction = j.at("training_fraction").get<double>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("training_mode")) {
    std::string m = j.at("training_mode").get<std::string>();
    if (m == "joint")
      c.training_mode = TrainingMode::joint;
    else if (m == "decoupled")
      c.training_mode = TrainingMode::decoupled;
    else
      throw ConfigError("unknown training_mode: " + m);
  }
  if (j.contains("orth_mode")) {
    std::string m = j.at("orth_mode").get<std::string>();
    if (m == "stiefel")
      c.orth_mode = OrthMode::stiefel;
    else if (m == "soft_penalty")
      c.orth_mode = OrthMode::soft_penalty;
    else
      throw ConfigError("unknown orth_mode: " + m);
  }
  if (j.contains("penalty_weight")) c.penalty_weight = j.at("penalty_weight").get<double>();
  if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
  if (j.contains("split_fractions"))
    c.split_fractions = j.at("split_fractions").get<std::array<double, 3>>();
  if (j.contains("decoupled_output_epochs"))
    c.decoupled_output_epochs = j.at("decoupled_output_epochs").get<std::size_t>();
  if (j.contains("binding_map")) {
    for (const auto& e : j.at("binding_map"))
      c.binding_map.push_back(
          {e.at("teacher_layer").get<std::size_t>(), e.at("student_layer").get<std::size_t>()});
  }
  c.validate();
}

double classification_accuracy(const NetworkState& state, const Matrix& inputs,
                               const std::vector<int>& labels) {
  if (inputs.rows() == 0) throw DegenerateError("accuracy over an empty set");
  ForwardTrace trace = forward(state, inputs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    auto row = trace.logits().row(i);
    std::size_t arg = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[arg]) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(inputs.rows());
}

NetworkState train_teacher(const NetworkSpec& spec, const LabeledDataset& dataset,
                           std::size_t epochs, double learning_rate, std::uint64_t seed,
                           double* train_accuracy, std::size_t batch_size) {
  dataset.validate();
  if (dataset.class_count() > spec.output_dim())
    throw ConfigError("dataset has more classes than the network outputs");
  NetworkSpec seeded = spec;
  seeded.seed = seed;
  NetworkState state = init_network(seeded);
  Rng shuffle_rng(Rng::mix(seed, 0x7eac4e5ULL));

  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() +
                                         static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
      Matrix x = dataset.inputs.selected_rows(batch);
      ForwardTrace trace = forward(state, x);
      Matrix probs = softmax_probs(trace.logits(), 1.0);
      Matrix grad = probs;
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i)
        grad(i, static_cast<std::size_t>(dataset.labels[batch[i]])) -= 1.0;
      grad *= inv_b;
      Gradients grads = backward(state, trace, grad);
      for (std::size_t l = 0; l < state.weights.size(); ++l) {
        Matrix& w = state.weights[l];
        for (std::size_t i = 0; i < w.flat().size(); ++i)
          w.flat()[i] -= learning_rate * grads.weights[l].flat()[i];
        for (std::size_t i = 0; i < state.biases[l].size(); ++i)
          state.biases[l][i] -= learning_rate * grads.biases[l][i];
      }
    }
  }
  if (train_accuracy != nullptr)
    *train_accuracy = classification_accuracy(state, dataset.inputs, dataset.labels);
  return state;
}

namespace {

struct PreparedData {
  LabeledDataset sub;
  SplitPlan split;
  Matrix train_x, val_x, test_x;
  std::vector<int> train_y, val_y, test_y;
  std::vector<Matrix> teacher_acts;  // per layer over the training rows
  Matrix teacher_logits_sub;         // train rows, subtask columns
  std::vector<std::size_t> sub_cols;
};

PreparedData prepare_data(const NetworkState& teacher, const DistillConfig& cfg,
                          const LabeledDataset& dataset, const SubtaskSpec& subtask) {
  subtask.validate(teacher.spec.output_dim());
  PreparedData d;
  d.sub = apply_subtask(dataset, subtask);
  d.split = make_split(d.sub, cfg.split_fractions, cfg.training_fraction, cfg.seed);
  auto train_rows = d.split.effective_train();
  if (train_rows.empty()) throw DegenerateError("training split is empty");
  d.train_x = gather_rows(d.sub.inputs, train_rows);
  d.train_y = gather_labels(d.sub.labels, train_rows);
  d.val_x = gather_rows(d.sub.inputs, d.split.val);
  d.val_y = gather_labels(d.sub.labels, d.split.val);
  d.test_x = gather_rows(d.sub.inputs, d.split.test);
  d.test_y = gather_labels(d.sub.labels, d.split.test);

  ForwardTrace t = forward(teacher, d.train_x);
  d.teacher_acts = std::move(t.activations);
  for (int id : subtask.class_ids) d.sub_cols.push_back(static_cast<std::size_t>(id));
  d.teacher_logits_sub = d.teacher_acts.back().selected_cols(d.sub_cols);
  return d;
}

struct ActiveBinding {
  std::size_t teacher_layer;
  std::size_t student_layer;
  int id;
};

std::vector<ActiveBinding> resolve_bindings(const NetworkSpec& teacher_spec,
                                            const NetworkSpec& student_spec,
                                            const DistillConfig& cfg) {
  if (cfg.method == Method::output_only) return {};
  std::vector<BindingPlanEntry> map =
      cfg.binding_map.empty() ? default_binding_map(teacher_spec, student_spec) : cfg.binding_map;
  std::vector<ActiveBinding> active;
  for (int id : cfg.layer_bindings) {
    if (static_cast<std::size_t>(id) > map.size())
      throw ConfigError("layer binding " + std::to_string(id) + " has no entry in the binding map");
    const auto& entry = map[static_cast<std::size_t>(id) - 1];
    if (entry.teacher_layer < 1 || entry.teacher_layer >= teacher_spec.layer_count())
      throw ConfigError("binding " + std::to_string(id) + " names a non-hidden teacher layer");
    if (entry.student_layer < 1 || entry.student_layer >= student_spec.layer_count())
      throw ConfigError("binding " + std::to_string(id) + " names a non-hidden student layer");
    active.push_back({entry.teacher_layer, entry.student_layer, id});
  }
  std::sort(active.begin(), active.end(),
            [](const ActiveBinding& a, const ActiveBinding& b) {
              return a.student_layer < b.student_layer;
            });
  return active;
}

Matrix padded_identity(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
  return m;
}

std::vector<LayerBinding> build_bindings(const NetworkState& teacher,
                                         const NetworkSpec& student_spec,
                                         const DistillConfig& cfg, const PreparedData& data,
                                         const SubtaskSpec& subtask,
                                         const std::vector<ActiveBinding>& active) {
  std::vector<LayerBinding> bindings;
  for (const ActiveBinding& ab : active) {
    const Matrix& acts = data.teacher_acts[ab.teacher_layer];
    const std::size_t d = acts.cols();
    const std::size_t k = student_spec.layer_widths[ab.student_layer];

    LayerBinding b;
    b.teacher_layer = ab.teacher_layer;
    b.student_layer = ab.student_layer;
    b.k = k;

    ActivationBatch batch{ab.teacher_layer, acts, ModelTag::teacher};
    const bool no_dimred = cfg.ablations.no_dimred_v1 || cfg.ablations.no_dimred_v2;
    if (no_dimred) {
      b.subspace.u = Matrix::identity(d);
      b.subspace.mu_teacher = acts.column_means();
      b.subspace.layer_index = ab.teacher_layer;
      b.subspace.k = d;
      b.subspace.method = SubspaceMethod::identity;
    } else if (cfg.ablations.pca_subspace) {
      b.subspace = pca_subspace(batch, k);
    } else if (cfg.ablations.random_subspace) {
      b.subspace = random_subspace(d, k, Rng::mix(cfg.seed, 0xa110c + ab.id),
                                   acts.column_means(), ab.teacher_layer);
    } else {
      ResponseBatch responses =
          response_vectors(teacher, data.train_x, ab.teacher_layer, subtask);
      b.subspace = prca_subspace(batch, responses, k);
    }

    b.alpha_l = cfg.ablations.no_normalization ? cfg.alpha
                                               : alpha_normalizer(b.subspace, {acts}, cfg.alpha);

    b.adapter.v = no_dimred ? padded_identity(d, k) : Matrix::identity(k);
    b.adapter.orthogonality_mode = cfg.ablations.no_dimred_v1  ? OrthMode::soft_penalty
                                   : cfg.ablations.no_dimred_v2 ? OrthMode::stiefel
                                                                : cfg.orth_mode;
    b.adapter.penalty_weight = cfg.penalty_weight;
    b.adapter.mu_student_policy =
        cfg.ablations.no_centering ? MuPolicy::zero : MuPolicy::batch_mean;
    bindings.push_back(std::move(b));
  }
  return bindings;
}

std::vector<WbAdapter> build_wb_adapters(const NetworkSpec& student_spec,
                                         const PreparedData& data,
                                         const std::vector<ActiveBinding>& active) {
  std::vector<WbAdapter> adapters;
  for (const ActiveBinding& ab : active) {
    const std::size_t d = data.teacher_acts[ab.teacher_layer].cols();
    const std::size_t k = student_spec.layer_widths[ab.student_layer];
    adapters.push_back(WbAdapter{Matrix(d, k), std::vector<double>(d, 0.0)});
  }
  return adapters;
}

// alpha scale for the wb baseline: the identity-frame analogue of the
// subdistill normalizer, so alpha means the same thing across methods.
std::vector<double> wb_alphas(const DistillConfig& cfg, const PreparedData& data,
                              const std::vector<ActiveBinding>& active) {
  std::vector<double> alphas;
  for (const ActiveBinding& ab : active) {
    const Matrix& acts = data.teacher_acts[ab.teacher_layer];
    Matrix centered = acts.centered_rows();
    double sum = 0.0;
    for (double v : centered.flat()) sum += v * v;
    double mean_sq = sum / static_cast<double>(acts.rows());
    if (mean_sq <= 0.0) throw DegenerateError("degenerate layer: teacher variance is zero");
    alphas.push_back(cfg.alpha / mean_sq);
  }
  return alphas;
}

struct SgdState {
  std::vector<Matrix> w_vel;
  std::vector<std::vector<double>> b_vel;

  explicit SgdState(const NetworkState& s) {
    for (const Matrix& w : s.weights) w_vel.emplace_back(w.rows(), w.cols());
    for (const auto& b : s.biases) b_vel.emplace_back(b.size(), 0.0);
  }
};

void sgd_step(NetworkState& state, SgdState& opt, const Gradients& grads, double lr,
              double momentum, std::size_t first_layer, std::size_t last_layer) {
  for (std::size_t l = first_layer; l <= last_layer; ++l) {
    Matrix& w = state.weights[l - 1];
    Matrix& vel = opt.w_vel[l - 1];
    for (std::size_t i = 0; i < w.flat().size(); ++i) {
      vel.flat()[i] = momentum * vel.flat()[i] + grads.weights[l - 1].flat()[i];
      w.flat()[i] -= lr * vel.flat()[i];
    }
    for (std::size_t i = 0; i < state.biases[l - 1].size(); ++i) {
      opt.b_vel[l - 1][i] = momentum * opt.b_vel[l - 1][i] + grads.biases[l - 1][i];
      state.biases[l - 1][i] -= lr * opt.b_vel[l - 1][i];
    }
  }
}

// Freezes per-binding student means over the training split and reports the
// validation losses against them, so the numbers do not depend on how the
// validation set is batched.
void finalize_eval_report(RunRecord& record, const NetworkState& teacher,
                          const NetworkState& student, const PreparedData& data,
                          double temperature) {
  if (data.val_x.rows() == 0) return;
  ForwardTrace train_trace = forward(student, data.train_x);
  for (LayerBinding& b : record.bindings)
    b.adapter.frozen_mu = train_trace.activations[b.student_layer].column_means();

  ForwardTrace val_s = forward(student, data.val_x);
  ForwardTrace val_t = forward(teacher, data.val_x);
  Matrix t_logits = val_t.logits().selected_cols(data.sub_cols);

  LossReport report;
  report.output_loss = output_kl(t_logits, val_s.logits(), temperature).loss;
  for (LayerBinding& b : record.bindings) {
    report.per_layer_losses.push_back(
        subdistill_layer_loss(b, val_t.activations[b.teacher_layer],
                              val_s.activations[b.student_layer], &b.adapter.frozen_mu)
            .loss);
    report.penalty_terms.push_back(0.0);
    report.alphas.push_back(b.alpha_l);
  }
  for (std::size_t w = 0; w < record.wb_adapters.size(); ++w) {
    const BindingPlanEntry& entry = record.active_plan[w];
    report.per_layer_losses.push_back(
        wb_layer_loss(record.wb_adapters[w], val_t.activations[entry.teacher_layer],
                      val_s.activations[entry.student_layer])
            .loss);
    report.penalty_terms.push_back(0.0);
    report.alphas.push_back(0.0);
  }
  report.total = report.recompute_total();
  record.final_val_losses = report;
}

void check_divergence(double total, std::size_t epoch) {
  if (!std::isfinite(total) || total > 1e6)
    throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                              " (total loss " + fmt_double(total) + ")",
                          epoch);
}

}  // namespace

RunRecord distill_joint(const NetworkState& teacher, const NetworkSpec& student_spec,
                        const DistillConfig& config, const LabeledDataset& dataset,
                        const SubtaskSpec& subtask) {
  auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (student_spec.output_dim() != subtask.size())
    throw ConfigError("student output width must equal the subtask class count");

  PreparedData data = prepare_data(teacher, config, dataset, subtask);
  std::vector<ActiveBinding> active = resolve_bindings(teacher.spec, student_spec, config);

  RunRecord record;
  record.config = config;
  record.seed = config.seed;
  for (const ActiveBinding& ab : active)
    record.active_plan.push_back({ab.teacher_layer, ab.student_layer});

  const bool use_wb = config.method == Method::wb_baseline;
  if (config.method == Method::subdistill)
    record.bindings = build_bindings(teacher, student_spec, config, data, subtask, active);
  std::vector<double> wb_alpha;
  if (use_wb) {
    record.wb_adapters = build_wb_adapters(student_spec, data, active);
    wb_alpha = wb_alphas(config, data, active);
  }

  NetworkSpec seeded = student_spec;
  seeded.seed = config.seed;
  NetworkState student = init_network(seeded);
  SgdState opt(student);
  Rng shuffle_rng(Rng::mix(config.seed, 0xd15711ULL));

  const std::size_t n = data.train_x.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double out_sum = 0.0;
    std::vector<double> layer_sums(active.size(), 0.0);
    std::vector<double> penalty_sums(active.size(), 0.0);
    std::size_t batches = 0;

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(
                                                        std::min(n, start + config.batch_size)));
      Matrix bx = data.train_x.selected_rows(rows);
      ForwardTrace s_trace = forward(student, bx);
      Matrix t_logits = data.teacher_logits_sub.selected_rows(rows);

      KlResult kl = output_kl(t_logits, s_trace.logits(), config.temperature);
      double batch_total = kl.loss;
      out_sum += kl.loss;

      std::vector<std::pair<std::size_t, Matrix>> extras;
      std::vector<Matrix> adapter_grads(active.size());
      std::vector<double> adapter_alphas(active.size(), 0.0);
      std::vector<std::vector<double>> wb_bias_grads(active.size());
      std::vector<PenaltyResult> penalties(active.size());

      for (std::size_t b = 0; b < active.size(); ++b) {
        Matrix t_act = data.teacher_acts[active[b].teacher_layer].selected_rows(rows);
        const Matrix& s_act = s_trace.activations[active[b].student_layer];
        if (use_wb) {
          WbLossResult r = wb_layer_loss(record.wb_adapters[b], t_act, s_act);
          layer_sums[b] += r.loss;
          batch_total += wb_alpha[b] * r.loss;
          extras.emplace_back(active[b].student_layer, wb_alpha[b] * r.activation_grad);
          adapter_grads[b] = std::move(r.w_grad);
          adapter_alphas[b] = wb_alpha[b];
          wb_bias_grads[b] = std::move(r.b_grad);
        } else {
          LayerBinding& binding = record.bindings[b];
          LayerLossResult r = subdistill_layer_loss(binding, t_act, s_act);
          layer_sums[b] += r.loss;
          batch_total += binding.alpha_l * r.loss;
          extras.emplace_back(active[b].student_layer, binding.alpha_l * r.activation_grad);
          adapter_grads[b] = std::move(r.v_grad);
          adapter_alphas[b] = binding.alpha_l;
          if (binding.adapter.orthogonality_mode == OrthMode::soft_penalty) {
            penalties[b] = orthogonality_penalty(binding.adapter.v,
                                                 binding.adapter.penalty_weight);
            penalty_sums[b] += penalties[b].value;
            batch_total += penalties[b].value;
          }
        }
      }

      // abort before touching parameters so a blow-up surfaces as a
      // divergence, not as a numerics failure inside the retraction
      check_divergence(batch_total, epoch);

      Gradients grads = backward(student, s_trace, kl.student_logit_grad, extras);
      sgd_step(student, opt, grads, config.learning_rate, config.momentum, 1,
               student_spec.layer_count());

      for (std::size_t b = 0; b < active.size(); ++b) {
        if (use_wb) {
          WbAdapter& a = record.wb_adapters[b];
          for (std::size_t i = 0; i < a.w.flat().size(); ++i)
            a.w.flat()[i] -= config.learning_rate * adapter_alphas[b] * adapter_grads[b].flat()[i];
          for (std::size_t i = 0; i < a.b.size(); ++i)
            a.b[i] -= config.learning_rate * adapter_alphas[b] * wb_bias_grads[b][i];
        } else {
          Adapter& a = record.bindings[b].adapter;
          if (a.orthogonality_mode == OrthMode::stiefel) {
            a.v = stiefel_retract(
                a.v, config.learning_rate * adapter_alphas[b] * adapter_grads[b]);
          } else {
            Matrix step = adapter_alphas[b] * adapter_grads[b] + penalties[b].grad;
            a.v -= config.learning_rate * step;
          }
          record.max_orth_violation =
              std::max(record.max_orth_violation, a.orthonormality_defect());
        }
      }
      ++batches;
    }

    EpochRecord er;
    er.epoch = epoch;
    er.losses.output_loss = out_sum / static_cast<double>(batches);
    for (std::size_t b = 0; b < active.size(); ++b) {
      er.losses.per_layer_losses.push_back(layer_sums[b] / static_cast<double>(batches));
      er.losses.penalty_terms.push_back(penalty_sums[b] / static_cast<double>(batches));
      er.losses.alphas.push_back(use_wb ? wb_alpha[b] : record.bindings[b].alpha_l);
    }
    er.losses.total = er.losses.recompute_total();
    er.val_accuracy = classification_accuracy(student, data.val_x, data.val_y);
    record.epochs.push_back(std::move(er));
  }

  for (const LayerBinding& b : record.bindings)
    record.final_orth_violation =
        std::max(record.final_orth_violation, b.adapter.orthonormality_defect());
  finalize_eval_report(record, teacher, student, data, config.temperature);
  record.student = std::move(student);
  record.final_val_accuracy = classification_accuracy(record.student, data.val_x, data.val_y);
  record.final_test_accuracy = classification_accuracy(record.student, data.test_x, data.test_y);
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

RunRecord distill_decoupled(const NetworkState& teacher, const NetworkSpec& student_spec,
                            const DistillConfig& config, const LabeledDataset& dataset,
                            const SubtaskSpec& subtask) {
  auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (student_spec.output_dim() != subtask.size())
    throw ConfigError("student output width must equal the subtask class count");

  PreparedData data = prepare_data(teacher, config, dataset, subtask);
  std::vector<ActiveBinding> active = resolve_bindings(teacher.spec, student_spec, config);

  RunRecord record;
  record.config = config;
  record.seed = config.seed;
  for (const ActiveBinding& ab : active)
    record.active_plan.push_back({ab.teacher_layer, ab.student_layer});
  if (config.method == Method::subdistill)
    record.bindings = build_bindings(teacher, student_spec, config, data, subtask, active);
  else if (config.method == Method::wb_baseline)
    throw ConfigError("decoupled training is defined for subdistill and output_only");

  // Each stage minimizes its own normalized loss; no alpha enters.
  std::vector<double> stage_scale(active.size(), 1.0);
  for (std::size_t b = 0; b < active.size(); ++b)
    if (!config.ablations.no_normalization)
      stage_scale[b] = alpha_normalizer(record.bindings[b].subspace,
                                        {data.teacher_acts[active[b].teacher_layer]}, 1.0);

  NetworkSpec seeded = student_spec;
  seeded.seed = config.seed;
  NetworkState student = init_network(seeded);
  Rng shuffle_rng(Rng::mix(config.seed, 0xd15711ULL));

  const std::size_t n = data.train_x.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t first_trainable = 1;
  std::size_t stage = 1;

  auto run_stage = [&](std::size_t last_trainable, std::size_t epochs, std::size_t binding_idx) {
    SgdState opt(student);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      double out_sum = 0.0;
      std::vector<double> layer_sums(active.size(), 0.0);
      std::vector<double> penalty_sums(active.size(), 0.0);
      std::size_t batches = 0;

      for (std::size_t start = 0; start < n; start += config.batch_size) {
        std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(n, start + config.batch_size)));
        Matrix bx = data.train_x.selected_rows(rows);
        ForwardTrace s_trace = forward(student, bx);
        double batch_total = 0.0;

        if (binding_idx == active.size()) {
          // final stage: output loss only
          Matrix t_logits = data.teacher_logits_sub.selected_rows(rows);
          KlResult kl = output_kl(t_logits, s_trace.logits(), config.temperature);
          out_sum += kl.loss;
          batch_total = kl.loss;
          check_divergence(batch_total, epoch);
          Gradients grads = backward(student, s_trace, kl.student_logit_grad);
          sgd_step(student, opt, grads, config.learning_rate, config.momentum, first_trainable,
                   last_trainable);
        } else {
          LayerBinding& binding = record.bindings[binding_idx];
          Matrix t_act = data.teacher_acts[active[binding_idx].teacher_layer].selected_rows(rows);
          const Matrix& s_act = s_trace.activations[binding.student_layer];
          LayerLossResult r = subdistill_layer_loss(binding, t_act, s_act);
          layer_sums[binding_idx] += r.loss;
          batch_total = stage_scale[binding_idx] * r.loss;

          PenaltyResult pen{0.0, Matrix()};
          if (binding.adapter.orthogonality_mode == OrthMode::soft_penalty) {
            pen = orthogonality_penalty(binding.adapter.v, binding.adapter.penalty_weight);
            penalty_sums[binding_idx] += pen.value;
            batch_total += pen.value;
          }
          check_divergence(batch_total, epoch);

          std::vector<std::pair<std::size_t, Matrix>> extras;
          extras.emplace_back(binding.student_layer,
                              stage_scale[binding_idx] * r.activation_grad);
          Gradients grads =
              backward(student, s_trace, Matrix(bx.rows(), student_spec.output_dim()), extras);
          sgd_step(student, opt, grads, config.learning_rate, config.momentum, first_trainable,
                   last_trainable);

          Adapter& a = binding.adapter;
          if (a.orthogonality_mode == OrthMode::stiefel) {
            a.v = stiefel_retract(a.v, config.learning_rate * stage_scale[binding_idx] *
                                           r.v_grad);
          } else {
            Matrix step = stage_scale[binding_idx] * r.v_grad + pen.grad;
            a.v -= config.learning_rate * step;
          }
          record.max_orth_violation =
              std::max(record.max_orth_violation, a.orthonormality_defect());
        }
        ++batches;
      }

      EpochRecord er;
      er.epoch = record.epochs.size();
      er.stage = stage;
      er.losses.output_loss = out_sum / static_cast<double>(batches);
      for (std::size_t b = 0; b < active.size(); ++b) {
        er.losses.per_layer_losses.push_back(layer_sums[b] / static_cast<double>(batches));
        er.losses.penalty_terms.push_back(penalty_sums[b] / static_cast<double>(batches));
        er.losses.alphas.push_back(stage_scale[b]);
      }
      er.losses.total = er.losses.recompute_total();
      er.val_accuracy = classification_accuracy(student, data.val_x, data.val_y);
      record.epochs.push_back(std::move(er));
    }
  };

  for (std::size_t b = 0; b < active.size(); ++b) {
    run_stage(active[b].student_layer, config.epochs, b);
    first_trainable = active[b].student_layer + 1;
    ++stage;
  }
  std::size_t output_epochs = config.decoupled_output_epochs == kSameAsEpochs
                                  ? config.epochs
                                  : config.decoupled_output_epochs;
  if (first_trainable <= student_spec.layer_count() && output_epochs > 0)
    run_stage(student_spec.layer_count(), output_epochs, active.size());

  for (const LayerBinding& b : record.bindings)
    record.final_orth_violation =
        std::max(record.final_orth_violation, b.adapter.orthonormality_defect());
  finalize_eval_report(record, teacher, student, data, config.temperature);
  record.student = std::move(student);
  record.final_val_accuracy = classification_accuracy(record.student, data.val_x, data.val_y);
  record.final_test_accuracy = classification_accuracy(record.student, data.test_x, data.test_y);
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

RunRecord distill(const NetworkState& teacher, const NetworkSpec& student_spec,
                  const DistillConfig& config, const LabeledDataset& dataset,
                  const SubtaskSpec& subtask) {
  return config.training_mode == TrainingMode::joint
             ? distill_joint(teacher, student_spec, config, dataset, subtask)
             : distill_decoupled(teacher, student_spec, config, dataset, subtask);
}

void write_run_record(RunRecord& record, const std::filesystem::path& dir, bool deterministic) {
  std::filesystem::create_directories(dir);
  record.dir = dir;

  record.student_path = dir / "student.sdck";
  save_checkpoint(record.student, record.student_path);

  record.subspace_paths.clear();
  for (const LayerBinding& b : record.bindings) {
    auto path = dir / ("subspace_l" + std::to_string(b.student_layer) + ".sdsu");
    save_subspace(b.subspace, path);
    record.subspace_paths.push_back(path);
  }

  std::string csv = "epoch,stage,output_loss";
  std::size_t layer_cols =
      record.epochs.empty() ? 0 : record.epochs.front().losses.per_layer_losses.size();
  for (std::size_t b = 0; b < layer_cols; ++b) csv += ",layer_" + std::to_string(b + 1);
  for (std::size_t b = 0; b < layer_cols; ++b) csv += ",penalty_" + std::to_string(b + 1);
  csv += ",total,val_accuracy\n";
  for (const EpochRecord& er : record.epochs) {
    std::vector<std::string> cells{std::to_string(er.epoch), std::to_string(er.stage),
                                   fmt_double(er.losses.output_loss)};
    for (double v : er.losses.per_layer_losses) cells.push_back(fmt_double(v));
    for (double v : er.losses.penalty_terms) cells.push_back(fmt_double(v));
    cells.push_back(fmt_double(er.losses.total));
    cells.push_back(fmt_double(er.val_accuracy));
    csv += csv_join(cells) + "\n";
  }
  write_text_file(dir / "losses.csv", csv);

  nlohmann::json j;
  j["config"] = record.config;
  j["label"] = record.label;
  j["seed"] = record.seed;
  j["final_val_accuracy"] = record.final_val_accuracy;
  j["final_test_accuracy"] = record.final_test_accuracy;
  j["final_val_losses"] = {{"output_loss", record.final_val_losses.output_loss},
                           {"per_layer_losses", record.final_val_losses.per_layer_losses},
                           {"total", record.final_val_losses.total}};
  j["max_orth_violation"] = record.max_orth_violation;
  j["final_orth_violation"] = record.final_orth_violation;
  j["wall_seconds"] = deterministic ? 0.0 : record.wall_seconds;
  j["student"] = record.student_path.filename().string();
  nlohmann::json plan = nlohmann::json::array();
  for (const auto& e : record.active_plan)
    plan.push_back({{"teacher_layer", e.teacher_layer}, {"student_layer", e.student_layer}});
  j["active_bindings"] = plan;
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& p : record.subspace_paths) subs.push_back(p.filename().string());
  j["subspaces"] = subs;
  write_text_file(dir / "run.json", j.dump(2) + "\n");
}

namespace {

std::size_t worker_count() {
  if (const char* env = std::getenv("SUBDISTILL_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

DistillConfig apply_ablation(const DistillConfig& base, const std::string& name) {
  DistillConfig cfg = base;
  if (name == "no_centering")
    cfg.ablations.no_centering = true;
  else if (name == "no_normalization")
    cfg.ablations.no_normalization = true;
  else if (name == "no_dimred_v1")
    cfg.ablations.no_dimred_v1 = true;
  else if (name == "no_dimred_v2")
    cfg.ablations.no_dimred_v2 = true;
  else if (name == "pca_subspace")
    cfg.ablations.pca_subspace = true;
  else if (name == "random_subspace")
    cfg.ablations.random_subspace = true;
  else if (name == "wb_baseline" || name == "output_only") {
    cfg.method = method_from_name(name);
    cfg.ablations = AblationFlags{};
  } else
    throw ConfigError("unknown ablation cell: " + name);
  return cfg;
}

std::string subset_cell_name(const std::vector<int>& subset) {
  if (subset.empty()) return "layers_none";
  std::string name = "layers";
  for (int b : subset) name += "_" + std::to_string(b);
  return name;
}

}  // namespace

std::vector<AblationCellResult> run_ablation_suite(
    const NetworkState& teacher, const NetworkSpec& student_spec, const DistillConfig& base,
    const LabeledDataset& dataset, const SubtaskSpec& subtask,
    const std::vector<std::string>& ablation_names,
    const std::vector<std::vector<int>>& layer_subsets, const std::vector<std::uint64_t>& seeds,
    const std::filesystem::path& out_dir) {
  base.validate();
  struct Cell {
    std::string name;
    DistillConfig cfg;
  };
  std::vector<Cell> cells;
  cells.push_back({"base", base});
  for (const std::string& name : ablation_names) cells.push_back({name, apply_ablation(base, name)});
  for (const auto& subset : layer_subsets) {
    DistillConfig cfg = base;
    cfg.layer_bindings = subset;
    cells.push_back({subset_cell_name(subset), cfg});
  }

  std::vector<AblationCellResult> results(cells.size() * seeds.size());
  std::vector<std::size_t> queue(results.size());
  for (std::size_t i = 0; i < queue.size(); ++i) queue[i] = i;
  std::mutex queue_mutex;

  auto work = [&]() {
    for (;;) {
      std::size_t job;
      {
        std::lock_guard<std::mutex> lock(queue_mutex);
        if (queue.empty()) return;
        job = queue.back();
        queue.pop_back();
      }
      const Cell& cell = cells[job / seeds.size()];
      std::uint64_t seed = seeds[job % seeds.size()];
      AblationCellResult& r = results[job];
      r.cell = cell.name;
      r.seed = seed;
      try {
        DistillConfig cfg = cell.cfg;
        cfg.seed = seed;
        RunRecord record = distill(teacher, student_spec, cfg, dataset, subtask);
        record.label = cell.name;
        if (!out_dir.empty())
          write_run_record(record,
                           out_dir / (cell.name + "_seed" + std::to_string(seed)), false);
        r.ok = true;
        r.val_accuracy = record.final_val_accuracy;
        r.test_accuracy = record.final_test_accuracy;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };

  std::size_t workers = std::min(worker_count(), results.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

std::vector<CellSummary> summarize_cells(const std::vector<AblationCellResult>& results) {
  std::vector<CellSummary> summaries;
  for (const AblationCellResult& r : results) {
    auto it = std::find_if(summaries.begin(), summaries.end(),
                           [&](const CellSummary& s) { return s.cell == r.cell; });
    if (it == summaries.end()) {
      summaries.push_back({r.cell, 0, 0.0, 0.0});
      it = summaries.end() - 1;
    }
    if (r.ok) {
      ++it->runs;
      it->mean_accuracy += r.val_accuracy;
    }
  }
  for (CellSummary& s : summaries)
    if (s.runs > 0) s.mean_accuracy /= static_cast<double>(s.runs);
  for (CellSummary& s : summaries) {
    if (s.runs < 2) continue;
    double ss = 0.0;
    for (const AblationCellResult& r : results)
      if (r.ok && r.cell == s.cell) {
        double d = r.val_accuracy - s.mean_accuracy;
        ss += d * d;
      }
    double sd = std::sqrt(ss / static_cast<double>(s.runs - 1));
    s.standard_error = sd / std::sqrt(static_cast<double>(s.runs));
  }
  return summaries;
}

void write_ablation_csv(const std::vector<AblationCellResult>& results,
                        const std::filesystem::path& path) {
  std::string csv = "cell,seed,status,val_accuracy,test_accuracy,error\n";
  for (const AblationCellResult& r : results) {
    std::string error = r.error;
    for (char& c : error)
      if (c == ',' || c == '\n') c = ';';
    std::vector<std::string> cells{r.cell, std::to_string(r.seed), r.ok ? "ok" : "failed",
                                   r.ok ? fmt_double(r.val_accuracy) : "",
                                   r.ok ? fmt_double(r.test_accuracy) : "", error};
    csv += csv_join(cells) + "\n";
  }
  csv += "\ncell,runs,mean_val_accuracy,standard_error\n";
  for (const CellSummary& s : summarize_cells(results)) {
    std::vector<std::string> cells{s.cell, std::to_string(s.runs), fmt_double(s.mean_accuracy),
                                   fmt_double(s.standard_error)};
    csv += csv_join(cells) + "\n";
  }
  write_text_file(path, csv);
}

}  // namespace subdistill
