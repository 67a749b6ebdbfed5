#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdistill/dataset.hpp"
#include "subdistill/distill_loss.hpp"
#include "subdistill/network.hpp"
#include "subdistill/subspace.hpp"
#include "subdistill/subtask.hpp"

namespace subdistill {

enum class Method : std::uint8_t { subdistill = 0, wb_baseline = 1, output_only = 2 };
enum class TrainingMode : std::uint8_t { joint = 0, decoupled = 1 };

struct AblationFlags {
  bool no_centering = false;      // student mean fixed to zero in the layer loss
  bool no_normalization = false;  // alpha_l = alpha
  bool no_dimred_v1 = false;      // U = I_d, tall adapter, soft penalty
  bool no_dimred_v2 = false;      // U = I_d, tall adapter, manifold retraction
  bool pca_subspace = false;
  bool random_subspace = false;

  bool any() const {
    return no_centering || no_normalization || no_dimred_v1 || no_dimred_v2 || pca_subspace ||
           random_subspace;
  }
  bool operator==(const AblationFlags&) const = default;
};

// Pairs one student layer with the teacher layer it matches.
struct BindingPlanEntry {
  std::size_t teacher_layer = 0;
  std::size_t student_layer = 0;
  bool operator==(const BindingPlanEntry&) const = default;
};

constexpr std::size_t kSameAsEpochs = std::numeric_limits<std::size_t>::max();

struct DistillConfig {
  double alpha = 1.0;
  double temperature = 1.0;
  std::vector<int> layer_bindings{1, 2, 3, 4};  // active entries of the binding map
  Method method = Method::subdistill;
  AblationFlags ablations;
  double training_fraction = 0.8;
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  TrainingMode training_mode = TrainingMode::joint;
  OrthMode orth_mode = OrthMode::stiefel;
  double penalty_weight = 1000.0;
  double momentum = 0.0;
  std::array<double, 3> split_fractions{0.7, 0.15, 0.15};
  std::size_t decoupled_output_epochs = kSameAsEpochs;
  // Empty means the default: student hidden layers 1..4 matched to teacher
  // hidden layers 1,2,3,5 when the depths allow it, 1:1 otherwise.
  std::vector<BindingPlanEntry> binding_map;

  void validate() const;
  bool operator==(const DistillConfig&) const = default;
};

std::vector<BindingPlanEntry> default_binding_map(const NetworkSpec& teacher,
                                                  const NetworkSpec& student);

void to_json(nlohmann::json& j, const DistillConfig& c);
// Strict: unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, DistillConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t stage = 0;  // decoupled stage index; 0 for joint runs
  LossReport losses;
  double val_accuracy = 0.0;
};

struct RunRecord {
  DistillConfig config;
  std::string label = "run";
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  NetworkState student;
  std::vector<LayerBinding> bindings;    // final adapters (subdistill family)
  std::vector<WbAdapter> wb_adapters;    // final adapters (wb baseline)
  std::vector<BindingPlanEntry> active_plan;  // resolved (teacher, student) layer pairs
  double final_val_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  // validation losses computed with the frozen student means, independent of
  // evaluation batching
  LossReport final_val_losses;
  double max_orth_violation = 0.0;       // over every recorded adapter update
  double final_orth_violation = 0.0;
  double wall_seconds = 0.0;

  std::filesystem::path dir;             // set by write_run_record
  std::filesystem::path student_path;
  std::vector<std::filesystem::path> subspace_paths;
};

// Seeded mini-batch SGD with cross-entropy. epochs = 0 returns the freshly
// initialized network.
NetworkState train_teacher(const NetworkSpec& spec, const LabeledDataset& dataset,
                           std::size_t epochs, double learning_rate, std::uint64_t seed,
                           double* train_accuracy = nullptr, std::size_t batch_size = 64);

double classification_accuracy(const NetworkState& state, const Matrix& inputs,
                               const std::vector<int>& labels);

// Joint optimization of the output loss plus the weighted layer losses.
// The student spec's seed is replaced by config.seed so a config fully
// determines the run.
RunRecord distill_joint(const NetworkState& teacher, const NetworkSpec& student_spec,
                        const DistillConfig& config, const LabeledDataset& dataset,
                        const SubtaskSpec& subtask);

// Stage-wise training: each binding trains the student layers up to it
// against its own normalized layer loss, freezing earlier layers; a final
// stage trains the remaining layers on the output loss alone.
RunRecord distill_decoupled(const NetworkState& teacher, const NetworkSpec& student_spec,
                            const DistillConfig& config, const LabeledDataset& dataset,
                            const SubtaskSpec& subtask);

RunRecord distill(const NetworkState& teacher, const NetworkSpec& student_spec,
                  const DistillConfig& config, const LabeledDataset& dataset,
                  const SubtaskSpec& subtask);

// run.json + losses.csv + student.sdck + subspace_l*.sdsu under dir.
void write_run_record(RunRecord& record, const std::filesystem::path& dir, bool deterministic);

struct AblationCellResult {
  std::string cell;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double val_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Base config plus each named ablation plus each layer subset, across seeds.
// Failures are recorded per cell, not thrown. Cells run in parallel worker
// threads when SUBDISTILL_THREADS allows; results do not depend on the
// schedule.
std::vector<AblationCellResult> run_ablation_suite(
    const NetworkState& teacher, const NetworkSpec& student_spec, const DistillConfig& base,
    const LabeledDataset& dataset, const SubtaskSpec& subtask,
    const std::vector<std::string>& ablation_names,
    const std::vector<std::vector<int>>& layer_subsets, const std::vector<std::uint64_t>& seeds,
    const std::filesystem::path& out_dir = {});

struct CellSummary {
  std::string cell;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double standard_error = 0.0;
};

std::vector<CellSummary> summarize_cells(const std::vector<AblationCellResult>& results);
void write_ablation_csv(const std::vector<AblationCellResult>& results,
                        const std::filesystem::path& path);

std::string method_name(Method m);
Method method_from_name(const std::string& name);

}  // namespace subdistill
