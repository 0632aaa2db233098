#include "lpn/render.hpp"

#include "lpn/errors.hpp"
#include "lpn/io.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace lpn {

Eigen::Vector2d cell_center(const Bounds& bounds, int resolution, int row, int col) {
  const double dx = (bounds.xmax - bounds.xmin) / resolution;
  const double dy = (bounds.ymax - bounds.ymin) / resolution;
  return {bounds.xmin + (col + 0.5) * dx, bounds.ymax - (row + 0.5) * dy};
}

ClassGrid decision_grid(const BatchPredictor& classifier, const Bounds& bounds, int resolution) {
  if (resolution < 2) throw DomainError("grid resolution must be >= 2");
  if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin)) throw DomainError("empty grid bounds");
  ClassGrid grid;
  grid.width = resolution;
  grid.height = resolution;
  grid.classes.reserve(static_cast<std::size_t>(resolution) * resolution);
  Matrix row_points(resolution, 2);
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) row_points.row(c) = cell_center(bounds, resolution, r, c).transpose();
    const auto pred = classifier(row_points);
    grid.classes.insert(grid.classes.end(), pred.begin(), pred.end());
  }
  return grid;
}

ClassGrid decision_grid(const Classifier& model, const Bounds& bounds, int resolution) {
  if (model.spec().input_dim != 2) {
    throw DomainError("decision grids need a 2-D input model, got input_dim " + std::to_string(model.spec().input_dim));
  }
  return decision_grid(model.predictor(), bounds, resolution);
}

double grid_disagreement(const ClassGrid& a, const ClassGrid& b) {
  if (a.width != b.width || a.height != b.height) throw DimensionError("grids differ in size");
  std::size_t diff = 0;
  for (std::size_t i = 0; i < a.classes.size(); ++i) diff += a.classes[i] != b.classes[i];
  return static_cast<double>(diff) / static_cast<double>(a.classes.size());
}

std::uint8_t class_gray(int cls, int num_classes) {
  if (num_classes < 2 || cls < 0 || cls >= num_classes) {
    throw IndexError("class " + std::to_string(cls) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  return static_cast<std::uint8_t>((255 * cls) / (num_classes - 1));
}

std::string pgm_bytes(const ClassGrid& grid, int num_classes) {
  if (num_classes > 256) throw DomainError("PGM output supports at most 256 classes");
  std::string out = "P5\n" + std::to_string(grid.width) + " " + std::to_string(grid.height) + "\n255\n";
  out.reserve(out.size() + grid.classes.size());
  for (int c : grid.classes) out.push_back(static_cast<char>(class_gray(c, num_classes)));
  return out;
}

void write_pgm(const ClassGrid& grid, int num_classes, const std::filesystem::path& path) {
  try {
    write_file_atomic(path, pgm_bytes(grid, num_classes));
  } catch (const std::filesystem::filesystem_error& e) {
    throw std::runtime_error("cannot write '" + path.string() + "': " + e.what());
  }
}

ClassGrid read_pgm(const std::filesystem::path& path, int num_classes) {
  const std::string data = read_file(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0;
  int h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw DomainError(path.string() + ": not a P5 class grid");
  in.get();  // single whitespace before payload
  const auto offset = static_cast<std::size_t>(in.tellg());
  if (data.size() - offset != static_cast<std::size_t>(w) * h) throw DomainError(path.string() + ": payload size mismatch");

  std::array<int, 256> class_of_gray;
  class_of_gray.fill(-1);
  for (int k = 0; k < num_classes; ++k) class_of_gray[class_gray(k, num_classes)] = k;
  ClassGrid grid{w, h, {}};
  grid.classes.reserve(static_cast<std::size_t>(w) * h);
  for (std::size_t i = offset; i < data.size(); ++i) {
    const int k = class_of_gray[static_cast<unsigned char>(data[i])];
    if (k < 0) throw DomainError(path.string() + ": gray level does not correspond to a class");
    grid.classes.push_back(k);
  }
  return grid;
}

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette = {{
    {31, 119, 180},   // blue
    {255, 127, 14},   // orange
    {44, 160, 44},    // green
    {214, 39, 40},    // red
    {148, 103, 189},  // purple
    {140, 86, 75},    // brown
}};

}  // namespace

std::string scatter_ppm_bytes(const Matrix& points, std::span<const int> labels, const Bounds& bounds, int size) {
  if (points.cols() != 2) throw DimensionError("scatter plots need 2-D points, got " + shape_string(points));
  if (static_cast<std::size_t>(points.rows()) != labels.size()) throw DimensionError("one label per point required");
  if (size < 2) throw DomainError("canvas size must be >= 2");
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(size) * size * 3, 255);

  // light axes through the origin
  auto px = [&](double x) { return static_cast<int>(std::floor((x - bounds.xmin) / (bounds.xmax - bounds.xmin) * size)); };
  auto py = [&](double y) { return static_cast<int>(std::floor((bounds.ymax - y) / (bounds.ymax - bounds.ymin) * size)); };
  auto set = [&](int r, int c, const std::array<std::uint8_t, 3>& rgb) {
    if (r < 0 || c < 0 || r >= size || c >= size) return;
    auto* p = &pixels[(static_cast<std::size_t>(r) * size + c) * 3];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  };
  const std::array<std::uint8_t, 3> axis = {210, 210, 210};
  const int ax = px(0.0);
  const int ay = py(0.0);
  for (int i = 0; i < size; ++i) {
    set(ay, i, axis);
    set(i, ax, axis);
  }
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto& rgb = kPalette[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]) % kPalette.size()];
    const int c = px(points(i, 0));
    const int r = py(points(i, 1));
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) set(r + dr, c + dc, rgb);
    }
  }
  std::string out = "P6\n" + std::to_string(size) + " " + std::to_string(size) + "\n255\n";
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

void write_scatter_ppm(const Matrix& points, std::span<const int> labels, const Bounds& bounds,
                       const std::filesystem::path& path, int size) {
  write_file_atomic(path, scatter_ppm_bytes(points, labels, bounds, size));
}

std::string grid_csv(const ClassGrid& grid, const Bounds& bounds) {
  std::ostringstream os;
  os << "x,y,class\n";
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const auto p = cell_center(bounds, grid.width, r, c);
      os << format_double(p.x()) << ',' << format_double(p.y()) << ',' << grid.at(r, c) << '\n';
    }
  }
  return os.str();
}

}  // namespace lpn
