#include "subdistill/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "subdistill/errors.hpp"
#include "subdistill/rng.hpp"

namespace subdistill {

namespace {

struct Canvas {
  std::size_t size;
  std::vector<double>& px;
  double& at(std::size_t r, std::size_t c) { return px[r * size + c]; }

  void stamp(double r, double c, double value) {
    if (r < 0 || c < 0) return;
    auto ri = static_cast<std::size_t>(r), ci = static_cast<std::size_t>(c);
    if (ri < size && ci < size) at(ri, ci) = std::max(at(ri, ci), value);
  }
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// class-independent nuisance: an affine shading plus a faint checker, so a
// large share of pixel variance carries no label information at all
void render_background(Canvas& cv, Rng& rng) {
  const double n = static_cast<double>(cv.size);
  double base = rng.uniform(0.0, 0.25);
  double gx = rng.uniform(-0.35, 0.35);
  double gy = rng.uniform(-0.35, 0.35);
  std::size_t cell = rng.uniform() < 0.5 ? 3 : 5;
  double checker = rng.uniform(0.0, 0.15);
  std::size_t phase = static_cast<std::size_t>(rng.next_below(2));
  for (std::size_t r = 0; r < cv.size; ++r)
    for (std::size_t c = 0; c < cv.size; ++c) {
      double v = base + gx * (static_cast<double>(c) / n - 0.5) +
                 gy * (static_cast<double>(r) / n - 0.5);
      if (((r / cell + c / cell) + phase) % 2 == 0) v += checker;
      cv.at(r, c) = clamp01(v);
    }
}

void render_class(Canvas& cv, int cls, Rng& rng) {
  const double n = static_cast<double>(cv.size);
  const double amp = rng.uniform(0.65, 1.0);
  const double cx = n / 2.0 + rng.uniform(-3.0, 3.0);
  const double cy = n / 2.0 + rng.uniform(-3.0, 3.0);
  const int thick = rng.uniform() < 0.5 ? 2 : 3;

  auto hline = [&](double row) {
    for (int t = 0; t < thick; ++t)
      for (std::size_t c = 2; c + 2 < cv.size; ++c)
        cv.stamp(row + t, static_cast<double>(c), amp);
  };
  auto vline = [&](double col) {
    for (int t = 0; t < thick; ++t)
      for (std::size_t r = 2; r + 2 < cv.size; ++r)
        cv.stamp(static_cast<double>(r), col + t, amp);
  };

  switch (cls) {
    case 0:  // h_bar
      hline(cy);
      break;
    case 1:  // v_bar
      vline(cx);
      break;
    case 2: {  // diagonal
      double off = rng.uniform(-2.0, 2.0);
      for (std::size_t i = 1; i + 1 < cv.size; ++i)
        for (int t = 0; t < thick; ++t)
          cv.stamp(static_cast<double>(i), static_cast<double>(i) + off + t, amp);
      break;
    }
    case 3:  // cross
      hline(cy);
      vline(cx);
      break;
    case 4: {  // disk
      double rad = rng.uniform(3.0, 4.5);
      for (std::size_t r = 0; r < cv.size; ++r)
        for (std::size_t c = 0; c < cv.size; ++c) {
          double d = std::hypot(static_cast<double>(r) - cy, static_cast<double>(c) - cx);
          if (d <= rad) cv.at(r, c) = std::max(cv.at(r, c), amp);
        }
      break;
    }
    case 5: {  // ring
      double rad = rng.uniform(4.0, 5.5);
      for (std::size_t r = 0; r < cv.size; ++r)
        for (std::size_t c = 0; c < cv.size; ++c) {
          double d = std::hypot(static_cast<double>(r) - cy, static_cast<double>(c) - cx);
          if (std::abs(d - rad) <= 1.2) cv.at(r, c) = std::max(cv.at(r, c), amp);
        }
      break;
    }
    case 6: {  // tl_corner
      double len = rng.uniform(0.45, 0.7) * n;
      for (int t = 0; t < thick; ++t) {
        for (double i = 1; i < len; ++i) {
          cv.stamp(1.0 + t, i, amp);
          cv.stamp(i, 1.0 + t, amp);
        }
      }
      break;
    }
    case 7: {  // br_corner
      double len = rng.uniform(0.45, 0.7) * n;
      for (int t = 0; t < thick; ++t) {
        for (double i = 1; i < len; ++i) {
          cv.stamp(n - 2.0 - t, n - 1.0 - i, amp);
          cv.stamp(n - 1.0 - i, n - 2.0 - t, amp);
        }
      }
      break;
    }
    case 8: {  // h_double: two parallel bars
      double gap = rng.uniform(3.0, 5.0);
      hline(cy - gap);
      hline(cy + gap - thick);
      break;
    }
    case 9: {  // frame
      double m = rng.uniform(1.0, 3.0);
      for (int t = 0; t < thick; ++t) {
        for (double i = m; i < n - m; ++i) {
          cv.stamp(m + t, i, amp);
          cv.stamp(n - 1.0 - m - t, i, amp);
          cv.stamp(i, m + t, amp);
          cv.stamp(i, n - 1.0 - m - t, amp);
        }
      }
      break;
    }
    default:
      throw ConfigError("unknown shape class " + std::to_string(cls));
  }
}

}  // namespace

const std::vector<std::string>& shapes_class_names() {
  static const std::vector<std::string> names = {
      "h_bar", "v_bar", "diagonal",  "cross",     "disk",
      "ring",  "tl_corner", "br_corner", "h_double", "frame"};
  return names;
}

SubtaskSpec shapes_superclass(const std::string& name) {
  if (name == "strokes") return SubtaskSpec{{0, 1, 2, 3}, "strokes"};
  if (name == "blobs") return SubtaskSpec{{4, 5}, "blobs"};
  if (name == "corners") return SubtaskSpec{{6, 7}, "corners"};
  if (name == "composites") return SubtaskSpec{{8, 9}, "composites"};
  throw ConfigError("unknown shapes superclass: " + name);
}

LabeledDataset make_shapes_dataset(const ShapesConfig& config) {
  if (config.image_size < 8) throw ConfigError("shapes image_size must be >= 8");
  if (config.per_class < 1) throw ConfigError("shapes per_class must be >= 1");
  const std::size_t classes = shapes_class_names().size();
  const std::size_t n = classes * config.per_class;
  const std::size_t d = config.image_size * config.image_size;

  LabeledDataset ds;
  ds.inputs = Matrix(n, d);
  ds.labels.resize(n);
  ds.class_names = shapes_class_names();

  std::size_t row = 0;
  for (std::size_t cls = 0; cls < classes; ++cls) {
    Rng rng(Rng::mix(config.seed, cls));
    for (std::size_t s = 0; s < config.per_class; ++s, ++row) {
      std::vector<double> px(d, 0.0);
      Canvas cv{config.image_size, px};
      render_background(cv, rng);
      render_class(cv, static_cast<int>(cls), rng);
      for (double& v : px) v = clamp01(v + config.noise * rng.gaussian());
      std::copy(px.begin(), px.end(), ds.inputs.row(row).begin());
      ds.labels[row] = static_cast<int>(cls);
    }
  }
  ds.original_ids.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) ds.original_ids[c] = static_cast<int>(c);
  ds.source_digest = Rng::mix(config.seed, 0x5a5a5a);
  ds.validate();
  return ds;
}

namespace {

void put_u32be(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(b, 4);
}

}  // namespace

void write_shapes_idx(const LabeledDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t n = ds.size();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ds.inputs.cols()))));
  if (side * side != ds.inputs.cols())
    throw ConfigError("write_shapes_idx expects square images");

  {
    std::ofstream out(dir / "shapes-images.idx", std::ios::binary);
    if (!out) throw IoError("cannot write shapes-images.idx");
    put_u32be(out, 0x00000803u);
    put_u32be(out, static_cast<std::uint32_t>(n));
    put_u32be(out, static_cast<std::uint32_t>(side));
    put_u32be(out, static_cast<std::uint32_t>(side));
    for (double v : ds.inputs.flat())
      out.put(static_cast<char>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0)));
  }
  {
    std::ofstream out(dir / "shapes-labels.idx", std::ios::binary);
    if (!out) throw IoError("cannot write shapes-labels.idx");
    put_u32be(out, 0x00000801u);
    put_u32be(out, static_cast<std::uint32_t>(n));
    for (int l : ds.labels) out.put(static_cast<char>(l));
  }
  for (const char* name : {"strokes", "blobs", "corners", "composites"}) {
    SubtaskSpec sub = shapes_superclass(name);
    std::vector<std::string> names;
    for (int id : sub.class_ids) names.push_back(shapes_class_names()[static_cast<std::size_t>(id)]);
    save_subtask(sub, names, dir / (std::string(name) + ".json"));
  }
}

}  // namespace subdistill
