#pragma once

#include <map>
#include <string>
#include <vector>

#include "sfmm/common.hpp"

namespace sfmm {

struct SurfaceGrid {
  std::size_t n_meridional = 0;
  std::size_t n_circumferential = 0;
  double theta_min = 9.0;
  double theta_max = 24.0;

  std::size_t size() const { return n_meridional * n_circumferential; }
  double theta(std::size_t i) const {
    return n_meridional < 2 ? theta_min : theta_min + (theta_max - theta_min) * i / (n_meridional - 1.0);
  }
  double phi(std::size_t j) const { return 360.0 * j / n_circumferential; }
  // Column-stacked location index of grid point (i, j).
  std::size_t location(std::size_t i, std::size_t j) const { return i + n_meridional * j; }
  void validate() const;
  bool operator==(const SurfaceGrid&) const = default;
};

struct FunctionRecord {
  std::string id;
  std::string subject_id;
  std::string unit_id;
  double serial_level = 0.0;
  std::map<std::string, double> covariates;
};

struct FunctionalDataset {
  SurfaceGrid grid;
  std::vector<FunctionRecord> records;
  std::vector<Matrix> values;  // n_meridional x n_circumferential each

  std::size_t size() const { return records.size(); }
  void validate() const;
  // N x T matrix, row i = column-stacked values of function i.
  Matrix stacked() const;
};

}  // namespace sfmm
