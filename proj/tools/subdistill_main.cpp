// Command-line front end: every pipeline stage as a subcommand over a JSON
// run config. Exit codes: 0 ok, 2 bad input, 3 degenerate math, 4 training
// divergence, 5 aggregation/schema problems.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subdistill/analysis.hpp"
#include "subdistill/dataset.hpp"
#include "subdistill/errors.hpp"
#include "subdistill/network.hpp"
#include "subdistill/numerics.hpp"
#include "subdistill/report.hpp"
#include "subdistill/shapes.hpp"
#include "subdistill/subspace.hpp"
#include "subdistill/synth.hpp"
#include "subdistill/textio.hpp"
#include "subdistill/trainer.hpp"

namespace subdistill {
namespace {

struct TeacherConfig {
  std::string checkpoint;
  std::vector<std::size_t> widths;
  std::string activation = "relu";
  std::size_t epochs = 60;
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

struct RunConfigFile {
  std::string dataset_format;  // csv_labeled | idx_pair
  std::string dataset_path;    // csv path or "<images>,<labels>"
  std::string subtask_path;
  TeacherConfig teacher;
  std::vector<std::size_t> student_widths;
  std::string student_activation = "relu";
  DistillConfig distill;
  std::string out_dir;
  nlohmann::json resolved;
};

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation: " + name);
}

RunConfigFile load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  reject_unknown(j, {"dataset", "subtask", "teacher", "student", "distill", "out_dir"},
                 path.string());

  RunConfigFile cfg;
  cfg.resolved = j;
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown(d, {"format", "path", "images", "labels"}, "dataset");
    cfg.dataset_format = d.value("format", "csv_labeled");
    if (cfg.dataset_format == "idx_pair" && d.contains("images"))
      cfg.dataset_path =
          d.at("images").get<std::string>() + "," + d.at("labels").get<std::string>();
    else if (d.contains("path"))
      cfg.dataset_path = d.at("path").get<std::string>();
  }
  if (j.contains("subtask")) cfg.subtask_path = j.at("subtask").get<std::string>();
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    reject_unknown(t,
                   {"checkpoint", "widths", "activation", "epochs", "learning_rate",
                    "batch_size", "seed"},
                   "teacher");
    cfg.teacher.checkpoint = t.value("checkpoint", "");
    if (t.contains("widths")) cfg.teacher.widths = t.at("widths").get<std::vector<std::size_t>>();
    cfg.teacher.activation = t.value("activation", "relu");
    cfg.teacher.epochs = t.value("epochs", std::size_t{60});
    cfg.teacher.learning_rate = t.value("learning_rate", 0.1);
    cfg.teacher.batch_size = t.value("batch_size", std::size_t{64});
    cfg.teacher.seed = t.value("seed", std::uint64_t{1});
  }
  if (j.contains("student")) {
    const auto& s = j.at("student");
    reject_unknown(s, {"widths", "activation"}, "student");
    if (s.contains("widths"))
      cfg.student_widths = s.at("widths").get<std::vector<std::size_t>>();
    cfg.student_activation = s.value("activation", "relu");
  }
  if (j.contains("distill")) from_json(j.at("distill"), cfg.distill);
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

LabeledDataset load_config_dataset(const RunConfigFile& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("config is missing the dataset path");
  DatasetFormat fmt = cfg.dataset_format == "idx_pair" ? DatasetFormat::idx_pair
                                                       : DatasetFormat::csv_labeled;
  if (cfg.dataset_format != "idx_pair" && cfg.dataset_format != "csv_labeled")
    throw ConfigError("unknown dataset format: " + cfg.dataset_format);
  return load_dataset(cfg.dataset_path, fmt);
}

SubtaskSpec load_config_subtask(const RunConfigFile& cfg) {
  if (cfg.subtask_path.empty()) throw ConfigError("config is missing the subtask path");
  return load_subtask(cfg.subtask_path);
}

NetworkState load_config_teacher(const RunConfigFile& cfg) {
  if (cfg.teacher.checkpoint.empty())
    throw ConfigError("config is missing the teacher checkpoint path");
  return load_checkpoint(cfg.teacher.checkpoint);
}

void write_resolved_config(const RunConfigFile& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j = cfg.resolved;
  j["distill"] = cfg.distill;  // normalized form
  write_text_file(dir / "config.json", j.dump(2) + "\n");
}

int cmd_gen_shapes(const std::string& out, std::size_t per_class, std::size_t size,
                   std::uint64_t seed, double noise) {
  ShapesConfig cfg;
  cfg.per_class = per_class;
  cfg.image_size = size;
  cfg.seed = seed;
  cfg.noise = noise;
  LabeledDataset ds = make_shapes_dataset(cfg);
  write_shapes_idx(ds, out);
  std::printf("wrote %zu images (%zux%zu, %zu classes) under %s\n", ds.size(), size, size,
              ds.class_count(), out.c_str());
  return 0;
}

int cmd_train_teacher(const std::string& config_path) {
  RunConfigFile cfg = load_run_config(config_path);
  LabeledDataset ds = load_config_dataset(cfg);
  if (cfg.teacher.widths.empty()) throw ConfigError("config is missing teacher widths");
  if (cfg.teacher.checkpoint.empty())
    throw ConfigError("config is missing the teacher checkpoint path");
  auto spec = NetworkSpec::mlp(cfg.teacher.widths,
                               activation_from_name(cfg.teacher.activation), cfg.teacher.seed);
  double accuracy = 0.0;
  NetworkState teacher = train_teacher(spec, ds, cfg.teacher.epochs, cfg.teacher.learning_rate,
                                       cfg.teacher.seed, &accuracy, cfg.teacher.batch_size);
  save_checkpoint(teacher, cfg.teacher.checkpoint);
  std::printf("teacher: %zu layers, train accuracy %.4f, checkpoint %s\n",
              teacher.spec.layer_count(), accuracy, cfg.teacher.checkpoint.c_str());
  return 0;
}

int cmd_extract_subspaces(const std::string& config_path, const std::string& method) {
  RunConfigFile cfg = load_run_config(config_path);
  LabeledDataset ds = load_config_dataset(cfg);
  SubtaskSpec subtask = load_config_subtask(cfg);
  NetworkState teacher = load_config_teacher(cfg);
  if (cfg.student_widths.empty()) throw ConfigError("config is missing student widths");
  if (cfg.out_dir.empty()) throw ConfigError("config is missing out_dir");
  auto student = NetworkSpec::mlp(cfg.student_widths,
                                  activation_from_name(cfg.student_activation), 0);

  LabeledDataset sub = apply_subtask(ds, subtask);
  SplitPlan split = make_split(sub, cfg.distill.split_fractions, cfg.distill.training_fraction,
                               cfg.distill.seed);
  Matrix train_x = gather_rows(sub.inputs, split.effective_train());
  ForwardTrace trace = forward(teacher, train_x);

  std::vector<BindingPlanEntry> map = cfg.distill.binding_map.empty()
                                          ? default_binding_map(teacher.spec, student)
                                          : cfg.distill.binding_map;
  std::filesystem::create_directories(cfg.out_dir);
  write_resolved_config(cfg, cfg.out_dir);

  for (int id : cfg.distill.layer_bindings) {
    if (static_cast<std::size_t>(id) > map.size())
      throw ConfigError("layer binding " + std::to_string(id) + " has no binding map entry");
    const auto& entry = map[static_cast<std::size_t>(id) - 1];
    const Matrix& acts = trace.activations[entry.teacher_layer];
    std::size_t k = student.layer_widths[entry.student_layer];
    ActivationBatch batch{entry.teacher_layer, acts, ModelTag::teacher};

    Subspace s;
    if (method == "pca") {
      s = pca_subspace(batch, k);
    } else if (method == "random") {
      s = random_subspace(acts.cols(), k, cfg.distill.seed, acts.column_means(),
                          entry.teacher_layer);
    } else if (method == "prca") {
      ResponseBatch responses = response_vectors(teacher, train_x, entry.teacher_layer, subtask);
      s = prca_subspace(batch, responses, k);
      SubspaceMoments m = subspace_moments(acts, responses.values);
      EigenResult eig = sym_eig(relevance_objective_matrix(m, s.beta_used));
      std::printf("layer %zu: beta = %s, top eigenvalues:", entry.teacher_layer,
                  fmt_double(s.beta_used).c_str());
      for (std::size_t i = 0; i < std::min<std::size_t>(k, 5); ++i)
        std::printf(" %s", fmt_double(eig.eigenvalues[i]).c_str());
      std::printf("\n");
    } else {
      throw ConfigError("unknown extraction method: " + method);
    }
    auto path = std::filesystem::path(cfg.out_dir) /
                ("subspace_l" + std::to_string(entry.student_layer) + ".sdsu");
    save_subspace(s, path);
    std::printf("wrote %s (method %s, k %zu)\n", path.c_str(), method.c_str(), s.k);
  }
  return 0;
}

int cmd_distill(const std::string& config_path, const std::string& mode,
                const std::string& method, const std::string& layers, bool alpha_sweep,
                const std::string& out_override, bool deterministic) {
  RunConfigFile cfg = load_run_config(config_path);
  LabeledDataset ds = load_config_dataset(cfg);
  SubtaskSpec subtask = load_config_subtask(cfg);
  NetworkState teacher = load_config_teacher(cfg);
  if (cfg.student_widths.empty()) throw ConfigError("config is missing student widths");
  auto student = NetworkSpec::mlp(cfg.student_widths,
                                  activation_from_name(cfg.student_activation), 0);

  if (!mode.empty()) {
    if (mode == "joint")
      cfg.distill.training_mode = TrainingMode::joint;
    else if (mode == "decoupled")
      cfg.distill.training_mode = TrainingMode::decoupled;
    else
      throw ConfigError("unknown mode: " + mode);
  }
  if (!method.empty()) cfg.distill.method = method_from_name(method);
  if (!layers.empty()) {
    cfg.distill.layer_bindings.clear();
    if (layers != "none") {
      std::istringstream ss(layers);
      std::string tok;
      while (std::getline(ss, tok, ','))
        cfg.distill.layer_bindings.push_back(std::stoi(tok));
    }
  }
  std::string out = out_override.empty() ? cfg.out_dir : out_override;
  if (out.empty()) throw ConfigError("no output directory (config out_dir or --out)");

  if (alpha_sweep) {
    const double grid[] = {1e-2, 1e-1, 1.0, 1e1, 1e2};
    std::string csv = "alpha,status,val_accuracy,test_accuracy\n";
    double best_alpha = grid[0], best_acc = -1.0;
    std::optional<RunRecord> best;
    for (double alpha : grid) {
      DistillConfig c = cfg.distill;
      c.alpha = alpha;
      try {
        RunRecord run = distill(teacher, student, c, ds, subtask);
        csv += csv_join({fmt_double(alpha), "ok", fmt_double(run.final_val_accuracy),
                         fmt_double(run.final_test_accuracy)}) +
               "\n";
        if (run.final_val_accuracy > best_acc) {
          best_acc = run.final_val_accuracy;
          best_alpha = alpha;
          best = std::move(run);
        }
      } catch (const DivergenceError&) {
        // a too-hot grid cell is a result, not a crash
        csv += csv_join({fmt_double(alpha), "diverged", "", ""}) + "\n";
      }
    }
    if (!best) throw DivergenceError("every alpha grid cell diverged", 0);
    std::filesystem::create_directories(out);
    write_text_file(std::filesystem::path(out) / "alpha_sweep.csv", csv);
    best->label = "alpha_selected";
    write_run_record(*best, out, deterministic);
    cfg.distill.alpha = best_alpha;
    write_resolved_config(cfg, out);
    std::printf("selected alpha = %s (val accuracy %.4f) -> %s\n", fmt_double(best_alpha).c_str(),
                best_acc, out.c_str());
    return 0;
  }

  RunRecord run = distill(teacher, student, cfg.distill, ds, subtask);
  run.label = method_name(cfg.distill.method);
  write_run_record(run, out, deterministic);
  write_resolved_config(cfg, out);
  std::printf("distilled %s: val accuracy %.4f, test accuracy %.4f -> %s\n",
              method_name(cfg.distill.method).c_str(), run.final_val_accuracy,
              run.final_test_accuracy, out.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out,
               const std::vector<std::string>& ablations, const std::string& subsets,
               const std::vector<std::uint64_t>& seeds) {
  RunConfigFile cfg = load_run_config(config_path);
  LabeledDataset ds = load_config_dataset(cfg);
  SubtaskSpec subtask = load_config_subtask(cfg);
  NetworkState teacher = load_config_teacher(cfg);
  auto student = NetworkSpec::mlp(cfg.student_widths,
                                  activation_from_name(cfg.student_activation), 0);

  std::vector<std::vector<int>> layer_subsets;
  if (!subsets.empty()) {
    std::istringstream groups(subsets);
    std::string group;
    while (std::getline(groups, group, ';')) {
      std::vector<int> subset;
      if (group != "none") {
        std::istringstream ss(group);
        std::string tok;
        while (std::getline(ss, tok, ','))
          subset.push_back(std::stoi(tok));
      }
      layer_subsets.push_back(std::move(subset));
    }
  }

  auto results = run_ablation_suite(teacher, student, cfg.distill, ds, subtask, ablations,
                                    layer_subsets, seeds, out);
  write_ablation_csv(results, std::filesystem::path(out) / "league.csv");
  write_resolved_config(cfg, out);
  std::size_t failed = 0;
  for (const auto& r : results)
    if (!r.ok) ++failed;
  std::printf("%zu cells (%zu failed) -> %s/league.csv\n", results.size(), failed, out.c_str());
  return 0;
}

int cmd_band(const std::string& out, std::uint64_t seed, std::size_t epochs, bool deterministic) {
  BandExperimentConfig cfg;
  cfg.seed = seed;
  if (epochs > 0) cfg.distill_epochs = epochs;
  cfg.out_dir = out;
  cfg.deterministic = deterministic;
  BandExperimentResult r = run_band_experiment(cfg);
  std::printf("band experiment seed %llu: subdistill score %.4f (mass %.4f), wb score %.4f "
              "(mass %.4f) -> %s\n",
              static_cast<unsigned long long>(seed), r.subdistill_score, r.subdistill_mass,
              r.wb_score, r.wb_mass, out.c_str());
  return 0;
}

int cmd_xai(const std::string& config_path, const std::vector<std::string>& student_paths,
            std::size_t patch, double epsilon, double gamma, bool composite,
            const std::string& out, bool deterministic) {
  RunConfigFile cfg = load_run_config(config_path);
  LabeledDataset ds = load_config_dataset(cfg);
  SubtaskSpec subtask = load_config_subtask(cfg);
  NetworkState teacher = load_config_teacher(cfg);
  if (student_paths.empty()) throw ConfigError("xai needs at least one student checkpoint");

  std::vector<NetworkState> students;
  for (const auto& p : student_paths) students.push_back(load_checkpoint(p));

  LabeledDataset sub = apply_subtask(ds, subtask);
  SplitPlan split = make_split(sub, cfg.distill.split_fractions, cfg.distill.training_fraction,
                               cfg.distill.seed);
  Matrix eval_x = gather_rows(sub.inputs, split.test);

  auto rules_for = [&](const NetworkState& net) {
    std::vector<LrpRule> rules(net.spec.layer_count(), LrpRule::eps(epsilon));
    if (composite)
      for (std::size_t l = 0; l < rules.size() / 2; ++l) rules[l] = LrpRule::gam(gamma);
    return rules;
  };

  ForwardTrace teacher_trace = forward(teacher, eval_x);
  Matrix teacher_probs = softmax_probs(teacher_trace.logits(), 1.0);

  std::vector<std::pair<double, double>> points;
  std::vector<double> teacher_patches_all, student_patches_all;
  std::size_t grid_width = eval_x.cols();
  auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(eval_x.cols()))));
  if (side * side == eval_x.cols()) grid_width = side;

  auto teacher_rules = rules_for(teacher);
  for (std::size_t i = 0; i < eval_x.rows(); ++i) {
    MarginDelta md = margin_delta(teacher_probs.row(i), subtask);
    RelevanceMap t_map =
        lrp_attribute(teacher, eval_x.row(i), md.j_star, teacher_rules);

    // student target: the subtask-relative index of the teacher's choice
    int student_target = 0;
    for (std::size_t c = 0; c < subtask.class_ids.size(); ++c)
      if (subtask.class_ids[c] == md.j_star) student_target = static_cast<int>(c);

    // average maps over the provided students (runs of different seeds)
    std::vector<double> mean_map(eval_x.cols(), 0.0);
    for (const NetworkState& s : students) {
      RelevanceMap m = lrp_attribute(s, eval_x.row(i), student_target, rules_for(s));
      for (std::size_t j = 0; j < mean_map.size(); ++j) mean_map[j] += m.values[j];
    }
    for (double& v : mean_map) v /= static_cast<double>(students.size());

    auto t_sums = patch_sums(t_map.values, grid_width, patch);
    auto s_sums = patch_sums(mean_map, grid_width, patch);
    for (std::size_t p = 0; p < t_sums.size(); ++p) {
      points.emplace_back(s_sums[p], t_sums[p]);
      teacher_patches_all.push_back(t_sums[p]);
      student_patches_all.push_back(s_sums[p]);
    }
  }
  double corr = pearson(student_patches_all, teacher_patches_all);

  std::filesystem::create_directories(out);
  std::string csv = "patch,student_relevance,teacher_relevance\n";
  for (std::size_t i = 0; i < points.size(); ++i)
    csv += csv_join({std::to_string(i), fmt_double(points[i].first),
                     fmt_double(points[i].second)}) +
           "\n";
  csv += "\npearson," + fmt_double(corr) + "\n";
  write_text_file(std::filesystem::path(out) / "attribution_scatter.csv", csv);
  write_scatter_svg(points, corr, "student relevance", "teacher relevance",
                    std::filesystem::path(out) / "attribution_scatter.svg", deterministic);
  std::printf("patch correlation (%zu points, patch %zu): %.4f -> %s\n", points.size(), patch,
              corr, out.c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out,
               bool deterministic) {
  if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");
  std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
  write_report(dirs, out, deterministic);
  std::printf("aggregated %zu runs -> %s/summary.csv\n", dirs.size(), out.c_str());
  return 0;
}

int error_code_for(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return 4;
  if (dynamic_cast<const SchemaError*>(&e)) return 5;
  if (dynamic_cast<const DegenerateError*>(&e) || dynamic_cast<const RankError*>(&e) ||
      dynamic_cast<const NumericError*>(&e))
    return 3;
  return 2;
}

}  // namespace
}  // namespace subdistill

int main(int argc, char** argv) {
  using namespace subdistill;

  CLI::App app{"subtask distillation pipeline"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic,
               "suppress timestamps and wall-clock fields in outputs");

  auto* gen = app.add_subcommand("gen-shapes", "render the procedural image benchmark");
  std::string gen_out = "data";
  std::size_t gen_per_class = 150, gen_size = 16;
  std::uint64_t gen_seed = 7;
  double gen_noise = 0.08;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--per-class", gen_per_class, "samples per class");
  gen->add_option("--size", gen_size, "image side length");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--noise", gen_noise, "pixel noise sigma");

  auto* tt = app.add_subcommand("train-teacher", "train and checkpoint a teacher");
  std::string tt_config;
  tt->add_option("--config", tt_config, "run config JSON")->required();

  auto* ex = app.add_subcommand("extract-subspaces", "write per-binding subspace files");
  std::string ex_config, ex_method = "prca";
  ex->add_option("--config", ex_config, "run config JSON")->required();
  ex->add_option("--method", ex_method, "prca | pca | random");

  auto* di = app.add_subcommand("distill", "run joint or decoupled distillation");
  std::string di_config, di_mode, di_method, di_layers, di_out;
  bool di_sweep = false;
  di->add_option("--config", di_config, "run config JSON")->required();
  di->add_option("--mode", di_mode, "joint | decoupled");
  di->add_option("--method", di_method, "subdistill | wb_baseline | output_only");
  di->add_option("--layers", di_layers, "comma list of binding ids, or 'none'");
  di->add_option("--out", di_out, "output directory (overrides config)");
  di->add_flag("--alpha-sweep", di_sweep, "run the alpha grid and keep the best");

  auto* ab = app.add_subcommand("ablate", "run the ablation suite");
  std::string ab_config, ab_out = "ablation", ab_subsets;
  std::vector<std::string> ab_names;
  std::vector<std::uint64_t> ab_seeds{1, 2, 3};
  ab->add_option("--config", ab_config, "run config JSON")->required();
  ab->add_option("--out", ab_out, "output directory");
  ab->add_option("--ablations", ab_names, "ablation cells to run");
  ab->add_option("--layer-subsets", ab_subsets,
                 "semicolon-separated comma lists, e.g. 'none;1;1,2'");
  ab->add_option("--seeds", ab_seeds, "seeds per cell");

  auto* bd = app.add_subcommand("band", "synthetic manifold kernel experiment");
  std::string bd_out = "band";
  std::uint64_t bd_seed = 1;
  std::size_t bd_epochs = 0;
  bd->add_option("--out", bd_out, "output directory");
  bd->add_option("--seed", bd_seed, "experiment seed");
  bd->add_option("--epochs", bd_epochs, "override the training budget");

  auto* xa = app.add_subcommand("xai", "compare teacher and student attributions");
  std::string xa_config, xa_out = "xai";
  std::vector<std::string> xa_students;
  std::size_t xa_patch = 8;
  double xa_eps = 1e-6, xa_gamma = 0.25;
  bool xa_flat = false;
  xa->add_option("--config", xa_config, "run config JSON")->required();
  xa->add_option("--students", xa_students, "student checkpoints (one per seed)")->required();
  xa->add_option("--patch", xa_patch, "patch side length");
  xa->add_option("--epsilon", xa_eps, "epsilon rule stabilizer");
  xa->add_option("--gamma", xa_gamma, "gamma rule weight");
  xa->add_flag("--epsilon-only", xa_flat, "use the epsilon rule on every layer");
  xa->add_option("--out", xa_out, "output directory");

  auto* rp = app.add_subcommand("report", "aggregate run directories");
  std::vector<std::string> rp_dirs;
  std::string rp_out = "report";
  rp->add_option("dirs", rp_dirs, "run directories");
  rp->add_option("--out", rp_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_shapes(gen_out, gen_per_class, gen_size, gen_seed, gen_noise);
    if (tt->parsed()) return cmd_train_teacher(tt_config);
    if (ex->parsed()) return cmd_extract_subspaces(ex_config, ex_method);
    if (di->parsed())
      return cmd_distill(di_config, di_mode, di_method, di_layers, di_sweep, di_out,
                         deterministic);
    if (ab->parsed()) return cmd_ablate(ab_config, ab_out, ab_names, ab_subsets, ab_seeds);
    if (bd->parsed()) return cmd_band(bd_out, bd_seed, bd_epochs, deterministic);
    if (xa->parsed())
      return cmd_xai(xa_config, xa_students, xa_patch, xa_eps, xa_gamma, !xa_flat, xa_out,
                     deterministic);
    if (rp->parsed()) return cmd_report(rp_dirs, rp_out, deterministic);
  } catch (const std::exception& e) {
    int code = error_code_for(e);
    nlohmann::json err{{"error", e.what()}, {"code", code}};
    std::cerr << err.dump() << "\n";
    return code;
  }
  return 2;
}
