#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "subdistill/matrix.hpp"
#include "subdistill/subtask.hpp"

namespace subdistill {

struct LabeledDataset {
  Matrix inputs;                         // n x d0
  std::vector<int> labels;               // dense ids in [0, C)
  std::vector<std::string> class_names;  // may be empty
  std::uint64_t source_digest = 0;
  // Maps this dataset's dense label ids back to the source's class ids;
  // identity unless the dataset came out of apply_subtask.
  std::vector<int> original_ids;

  std::size_t size() const { return inputs.rows(); }
  std::size_t class_count() const { return original_ids.size(); }
  void validate() const;
};

enum class DatasetFormat { csv_labeled, idx_pair };

// csv_labeled: header row, final column holds the integer label.
// idx_pair: `path` is "<images>,<labels>"; images are flattened row-major
// and scaled to [0,1].
LabeledDataset load_dataset(const std::string& path, DatasetFormat format);
LabeledDataset load_dataset_csv(const std::filesystem::path& path);
LabeledDataset load_dataset_idx(const std::filesystem::path& images,
                                const std::filesystem::path& labels);

// Keeps only the subtask's classes and relabels densely in subtask order.
LabeledDataset apply_subtask(const LabeledDataset& dataset, const SubtaskSpec& subtask);

struct SplitPlan {
  std::vector<std::size_t> train;  // full train list, pre-fraction
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  double training_fraction = 1.0;
  std::uint64_t seed = 0;

  // Prefix of the shuffled train list; smaller fractions nest inside larger.
  std::vector<std::size_t> effective_train() const;
};

// Seeded stratified split. Per-class streams are derived from the class id,
// so filtering to a subtask before or after splitting selects the same rows.
SplitPlan make_split(const LabeledDataset& dataset, std::array<double, 3> fractions,
                     double training_fraction, std::uint64_t seed);

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& indices);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& indices);

}  // namespace subdistill
