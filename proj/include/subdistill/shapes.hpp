#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "subdistill/dataset.hpp"
#include "subdistill/subtask.hpp"

namespace subdistill {

// Procedurally rendered grayscale image benchmark: ten shape classes grouped
// into four superclasses, with per-sample position/intensity jitter and pixel
// noise. Stands in for a downloaded image corpus so the full pipeline can run
// offline and deterministically.
//
// Classes: 0 h_bar, 1 v_bar, 2 diagonal, 3 cross (superclass "strokes"),
//          4 disk, 5 ring ("blobs"), 6 tl_corner, 7 br_corner ("corners"),
//          8 checker, 9 gradient ("textures").
struct ShapesConfig {
  std::size_t image_size = 16;
  std::size_t per_class = 150;
  std::uint64_t seed = 7;
  double noise = 0.1;
};

LabeledDataset make_shapes_dataset(const ShapesConfig& config);

const std::vector<std::string>& shapes_class_names();
// Superclass name -> subtask over the original ten classes.
SubtaskSpec shapes_superclass(const std::string& name);

// Writes <dir>/shapes-images.idx, <dir>/shapes-labels.idx and one subtask
// JSON per superclass.
void write_shapes_idx(const LabeledDataset& ds, const std::filesystem::path& dir);

}  // namespace subdistill
