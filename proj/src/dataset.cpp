#include "subdistill/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "subdistill/errors.hpp"
#include "subdistill/rng.hpp"

namespace subdistill {

void SubtaskSpec::validate(std::size_t teacher_classes) const {
  if (class_ids.size() < 2)
    throw ConfigError("subtask '" + name + "' needs at least 2 classes");
  std::set<int> seen;
  for (int id : class_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= teacher_classes)
      throw ConfigError("subtask '" + name + "' has class id " + std::to_string(id) +
                        " outside [0, " + std::to_string(teacher_classes) + ")");
    if (!seen.insert(id).second)
      throw ConfigError("subtask '" + name + "' repeats class id " + std::to_string(id));
  }
}

SubtaskSpec load_subtask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open subtask file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("subtask file " + path.string() + ": " + e.what());
  }
  SubtaskSpec spec;
  if (!j.contains("name") || !j.contains("class_ids"))
    throw FormatError("subtask file " + path.string() + " needs 'name' and 'class_ids'");
  spec.name = j.at("name").get<std::string>();
  spec.class_ids = j.at("class_ids").get<std::vector<int>>();
  for (const auto& [key, value] : j.items())
    if (key != "name" && key != "class_ids" && key != "class_names")
      throw FormatError("subtask file " + path.string() + ": unknown key '" + key + "'");
  return spec;
}

void save_subtask(const SubtaskSpec& spec, const std::vector<std::string>& class_names,
                  const std::filesystem::path& path) {
  nlohmann::json j;
  j["name"] = spec.name;
  j["class_ids"] = spec.class_ids;
  if (!class_names.empty()) j["class_names"] = class_names;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write subtask file: " + path.string());
  out << j.dump(2) << "\n";
}

void LabeledDataset::validate() const {
  if (inputs.rows() == 0) throw DegenerateError("dataset is empty");
  if (labels.size() != inputs.rows())
    throw DimensionError("dataset has " + std::to_string(inputs.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw FormatError("negative label in dataset");
    max_label = std::max(max_label, l);
  }
  std::vector<bool> present(static_cast<std::size_t>(max_label) + 1, false);
  for (int l : labels) present[static_cast<std::size_t>(l)] = true;
  for (std::size_t c = 0; c < present.size(); ++c)
    if (!present[c])
      throw FormatError("label ids are not dense: class " + std::to_string(c) + " has no samples");
  if (original_ids.size() != present.size())
    throw DimensionError("class id map size does not match label range");
}

namespace {

std::uint64_t fnv1a(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void finish_labels(LabeledDataset& ds) {
  int max_label = -1;
  for (int l : ds.labels) max_label = std::max(max_label, l);
  ds.original_ids.resize(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t c = 0; c < ds.original_ids.size(); ++c)
    ds.original_ids[c] = static_cast<int>(c);
  ds.validate();
}

}  // namespace

LabeledDataset load_dataset_csv(const std::filesystem::path& path) {
  std::string bytes = slurp(path);
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw FormatError(path.string() + ": missing header row (line 1)");
  std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2)
    throw FormatError(path.string() + ": header must declare at least one feature and the label "
                      "(line 1)");

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t col = 0;
    double last = 0.0;
    while (std::getline(row, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        last = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": cannot parse '" + cell + "' (line " +
                          std::to_string(line_no) + ")");
      }
      if (col < columns) values.push_back(last);
    }
    if (col != columns)
      throw FormatError(path.string() + ": ragged row, expected " + std::to_string(columns) +
                        " cells, got " + std::to_string(col) + " (line " +
                        std::to_string(line_no) + ")");
    double rounded = std::round(last);
    if (std::abs(last - rounded) > 1e-9 || rounded < 0)
      throw FormatError(path.string() + ": label must be a non-negative integer (line " +
                        std::to_string(line_no) + ")");
    labels.push_back(static_cast<int>(rounded));
  }
  if (labels.empty()) throw FormatError(path.string() + ": no data rows");

  LabeledDataset ds;
  std::size_t d = columns - 1;
  ds.inputs = Matrix(labels.size(), d);
  std::copy(values.begin(), values.end(), ds.inputs.flat().begin());
  ds.labels = std::move(labels);
  ds.source_digest = fnv1a(bytes);
  finish_labels(ds);
  return ds;
}

namespace {

std::uint32_t idx_u32be(const std::string& bytes, std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size())
    throw FormatError(path + ": truncated IDX header at byte offset " + std::to_string(offset));
  auto b = [&](std::size_t i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])); };
  return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
}

}  // namespace

LabeledDataset load_dataset_idx(const std::filesystem::path& images,
                                const std::filesystem::path& labels) {
  std::string img = slurp(images);
  std::string lab = slurp(labels);

  std::uint32_t img_magic = idx_u32be(img, 0, images.string());
  if (img_magic != 0x00000803u)
    throw FormatError(images.string() + ": bad IDX image magic at byte offset 0 (got 0x" +
                      [&] { std::ostringstream s; s << std::hex << img_magic; return s.str(); }() +
                      ", want 0x803)");
  std::uint32_t n = idx_u32be(img, 4, images.string());
  std::uint32_t h = idx_u32be(img, 8, images.string());
  std::uint32_t w = idx_u32be(img, 12, images.string());
  std::size_t expected = 16 + static_cast<std::size_t>(n) * h * w;
  if (img.size() != expected)
    throw FormatError(images.string() + ": image payload has " + std::to_string(img.size() - 16) +
                      " bytes, header promises " + std::to_string(expected - 16));

  std::uint32_t lab_magic = idx_u32be(lab, 0, labels.string());
  if (lab_magic != 0x00000801u)
    throw FormatError(labels.string() + ": bad IDX label magic at byte offset 0");
  std::uint32_t ln = idx_u32be(lab, 4, labels.string());
  if (ln != n)
    throw FormatError(labels.string() + ": label count " + std::to_string(ln) +
                      " does not match image count " + std::to_string(n));
  if (lab.size() != 8 + static_cast<std::size_t>(ln))
    throw FormatError(labels.string() + ": truncated label payload");

  LabeledDataset ds;
  ds.inputs = Matrix(n, static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < ds.inputs.flat().size(); ++i)
    ds.inputs.flat()[i] = static_cast<unsigned char>(img[16 + i]) / 255.0;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.labels[i] = static_cast<unsigned char>(lab[8 + i]);
  ds.source_digest = fnv1a(lab, fnv1a(img));
  finish_labels(ds);
  return ds;
}

LabeledDataset load_dataset(const std::string& path, DatasetFormat format) {
  if (format == DatasetFormat::csv_labeled) return load_dataset_csv(path);
  auto comma = path.find(',');
  if (comma == std::string::npos)
    throw ConfigError("idx_pair path must be '<images>,<labels>', got: " + path);
  return load_dataset_idx(path.substr(0, comma), path.substr(comma + 1));
}

LabeledDataset apply_subtask(const LabeledDataset& dataset, const SubtaskSpec& subtask) {
  subtask.validate(dataset.class_count());
  std::vector<int> relabel(dataset.class_count(), -1);
  for (std::size_t k = 0; k < subtask.class_ids.size(); ++k)
    relabel[static_cast<std::size_t>(subtask.class_ids[k])] = static_cast<int>(k);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (relabel[static_cast<std::size_t>(dataset.labels[i])] >= 0) keep.push_back(i);
  if (keep.empty()) throw DegenerateError("subtask '" + subtask.name + "' selects no rows");

  LabeledDataset out;
  out.inputs = gather_rows(dataset.inputs, keep);
  out.labels.reserve(keep.size());
  for (std::size_t i : keep)
    out.labels.push_back(relabel[static_cast<std::size_t>(dataset.labels[i])]);
  out.source_digest = dataset.source_digest;
  out.original_ids.reserve(subtask.class_ids.size());
  for (int id : subtask.class_ids)
    out.original_ids.push_back(dataset.original_ids[static_cast<std::size_t>(id)]);
  if (!dataset.class_names.empty())
    for (int id : subtask.class_ids)
      out.class_names.push_back(dataset.class_names[static_cast<std::size_t>(id)]);
  out.validate();
  return out;
}

std::vector<std::size_t> SplitPlan::effective_train() const {
  std::size_t take = static_cast<std::size_t>(
      std::floor(training_fraction * static_cast<double>(train.size()) + 0.5));
  take = std::min(take, train.size());
  return {train.begin(), train.begin() + static_cast<std::ptrdiff_t>(take)};
}

SplitPlan make_split(const LabeledDataset& dataset, std::array<double, 3> fractions,
                     double training_fraction, std::uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  if (!(training_fraction > 0.0 && training_fraction <= 1.0))
    throw ConfigError("training_fraction must be in (0, 1]");
  dataset.validate();

  std::vector<std::vector<std::size_t>> by_class(dataset.class_count());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);

  SplitPlan plan;
  plan.training_fraction = training_fraction;
  plan.seed = seed;

  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    // Stream keyed by the source class id so subtask filtering commutes
    // with splitting.
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(dataset.original_ids[c])));
    rng.shuffle(rows);

    const std::size_t m = rows.size();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (int b = 0; b < 3; ++b) {
      double want = fractions[static_cast<std::size_t>(b)] * static_cast<double>(m);
      counts[static_cast<std::size_t>(b)] = static_cast<std::size_t>(std::floor(want));
      remainders[static_cast<std::size_t>(b)] = want - std::floor(want);
      assigned += counts[static_cast<std::size_t>(b)];
    }
    while (assigned < m) {
      int best = 0;
      for (int b = 1; b < 3; ++b)
        if (remainders[static_cast<std::size_t>(b)] > remainders[static_cast<std::size_t>(best)])
          best = b;
      ++counts[static_cast<std::size_t>(best)];
      remainders[static_cast<std::size_t>(best)] = -1.0;
      ++assigned;
    }
    if (counts[0] == 0 && fractions[0] > 0.0 && m > 0)
      throw DegenerateError("class " + std::to_string(c) + " has too few samples (" +
                            std::to_string(m) + ") for the requested split");

    std::size_t pos = 0;
    for (std::size_t i = 0; i < counts[0]; ++i) plan.train.push_back(rows[pos++]);
    for (std::size_t i = 0; i < counts[1]; ++i) plan.val.push_back(rows[pos++]);
    for (std::size_t i = 0; i < counts[2]; ++i) plan.test.push_back(rows[pos++]);
  }

  // One more seeded shuffle of the train list; training_fraction subsampling
  // takes a prefix, so smaller fractions nest inside larger ones.
  Rng rng(Rng::mix(seed, 0xf7a6e3ULL));
  rng.shuffle(plan.train);
  return plan;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& indices) {
  return m.selected_rows(indices);
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

}  // namespace subdistill
