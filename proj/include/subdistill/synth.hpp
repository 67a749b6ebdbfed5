#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "subdistill/analysis.hpp"
#include "subdistill/dataset.hpp"
#include "subdistill/network.hpp"

namespace subdistill {

// Points along a smooth 1-D curve embedded in d0 dimensions, ordered by the
// manifold coordinate t in [0,1]. The middle third is the task-relevant
// segment: its points split into classes 0 and 1 by t, everything else is
// the background class 2.
struct ManifoldDataset {
  Matrix inputs;
  std::vector<double> t;
  std::vector<int> labels;
  std::size_t relevant_lo = 0;
  std::size_t relevant_hi = 0;
};

// Embedding: two coordinates trace a unit circle so adjacent gaps never
// collapse, the rest are seeded random sinusoids; Gaussian noise of the
// given scale is added per coordinate.
ManifoldDataset generate_manifold(std::size_t n, std::size_t d0, std::uint64_t seed,
                                  double noise_scale);

LabeledDataset to_labeled(const ManifoldDataset& manifold);

struct BandExperimentConfig {
  std::size_t n = 240;
  std::size_t d0 = 16;
  double noise_scale = 0.02;
  std::uint64_t seed = 1;
  std::size_t teacher_hidden = 64;
  std::size_t teacher_hidden2 = 24;
  std::size_t student_hidden = 8;  // also the subspace width K
  std::size_t teacher_epochs = 300;
  double teacher_lr = 0.1;
  std::size_t distill_epochs = 200;
  double distill_lr = 0.05;
  std::filesystem::path out_dir;  // empty: no files written
  bool deterministic = false;
};

struct BandExperimentResult {
  KernelMatrix teacher_kernel;
  KernelMatrix subdistill_kernel;
  KernelMatrix wb_kernel;
  std::size_t relevant_lo = 0;
  std::size_t relevant_hi = 0;
  double subdistill_score = 0.0;  // band alignment on the relevant block
  double wb_score = 0.0;
  double subdistill_mass = 0.0;   // kernel mass fraction in the relevant block
  double wb_mass = 0.0;
  double teacher_accuracy = 0.0;
};

// Trains a teacher on the synthetic 3-class task, distills one student with
// the subspace formulation and one with the (W,b) formulation at matched
// budgets, and compares their kernels against the teacher's on the relevant
// block. Writes kernels_{teacher,subdistill,wb}.sdmx, kernels.svg and
// scores.csv when out_dir is set.
BandExperimentResult run_band_experiment(const BandExperimentConfig& config);

// Mean normalized kernel entry at each lag, used to check the band decay.
std::vector<double> kernel_lag_profile(const KernelMatrix& kernel,
                                       const std::vector<std::size_t>& lags);

}  // namespace subdistill
