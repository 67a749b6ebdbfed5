#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace subdistill {

// A subtask is an ordered set of teacher class ids (a superclass).
struct SubtaskSpec {
  std::vector<int> class_ids;
  std::string name;

  std::size_t size() const { return class_ids.size(); }
  // Checks >= 2 classes, no duplicates, ids within [0, teacher_classes).
  void validate(std::size_t teacher_classes) const;
};

// JSON file with fields: name, class_ids, optional class_names.
SubtaskSpec load_subtask(const std::filesystem::path& path);
void save_subtask(const SubtaskSpec& spec, const std::vector<std::string>& class_names,
                  const std::filesystem::path& path);

}  // namespace subdistill
