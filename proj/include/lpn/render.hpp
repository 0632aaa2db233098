#pragma once

#include "lpn/autodiff.hpp"
#include "lpn/model.hpp"
#include "lpn/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lpn {

struct Bounds {
  double xmin = -5.0;
  double xmax = 5.0;
  double ymin = -5.0;
  double ymax = 5.0;
};

/// Class indices on a width x height lattice, row-major. Row 0 is the top (y near ymax),
/// column 0 the left edge (x near xmin).
struct ClassGrid {
  int width = 0;
  int height = 0;
  std::vector<int> classes;

  int at(int row, int col) const { return classes[static_cast<std::size_t>(row) * width + col]; }
};

/// Center of cell (row, col).
Eigen::Vector2d cell_center(const Bounds& bounds, int resolution, int row, int col);

/// Predictions at every cell center of a resolution x resolution lattice.
ClassGrid decision_grid(const BatchPredictor& classifier, const Bounds& bounds, int resolution);
/// Throws DomainError unless the model takes 2-D input.
ClassGrid decision_grid(const Classifier& model, const Bounds& bounds, int resolution);

/// Fraction of cells where the two grids differ.
double grid_disagreement(const ClassGrid& a, const ClassGrid& b);

/// Class k maps to gray floor(255 k / (K - 1)).
std::uint8_t class_gray(int cls, int num_classes);

/// Binary PGM: `P5\n<w> <h>\n255\n` followed by one byte per cell.
std::string pgm_bytes(const ClassGrid& grid, int num_classes);
void write_pgm(const ClassGrid& grid, int num_classes, const std::filesystem::path& path);
/// Reads a P5 file written by write_pgm back into class indices.
ClassGrid read_pgm(const std::filesystem::path& path, int num_classes);

/// Binary PPM (P6) scatter plot of 2-D points on a white square canvas, colored by label.
std::string scatter_ppm_bytes(const Matrix& points, std::span<const int> labels, const Bounds& bounds, int size = 256);
void write_scatter_ppm(const Matrix& points, std::span<const int> labels, const Bounds& bounds,
                       const std::filesystem::path& path, int size = 256);

/// `x,y,class` per cell center.
std::string grid_csv(const ClassGrid& grid, const Bounds& bounds);

}  // namespace lpn
