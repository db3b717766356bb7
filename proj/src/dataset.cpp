#include "sfmm/dataset.hpp"

#include <cmath>
#include <set>

namespace sfmm {

void SurfaceGrid::validate() const {
  if (n_meridional < 8 || n_circumferential < 8)
    fail("grid_too_small", "grid must have at least 8 points in each direction");
  if (!(theta_max > theta_min)) fail("invalid_grid", "theta range must be increasing");
}

void FunctionalDataset::validate() const {
  grid.validate();
  if (records.size() != values.size()) fail("dimension_mismatch", "records and value matrices differ in count");
  std::set<std::string> ids;
  for (const auto& r : records)
    if (!ids.insert(r.id).second) fail("duplicate_id", "function id '" + r.id + "' appears twice");
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Matrix& v = values[i];
    if (static_cast<std::size_t>(v.rows()) != grid.n_meridional ||
        static_cast<std::size_t>(v.cols()) != grid.n_circumferential)
      fail("dimension_mismatch", "function '" + records[i].id + "' has shape " + std::to_string(v.rows()) + "x" +
                                     std::to_string(v.cols()) + ", grid is " + std::to_string(grid.n_meridional) +
                                     "x" + std::to_string(grid.n_circumferential));
    for (Index c = 0; c < v.cols(); ++c)
      for (Index r = 0; r < v.rows(); ++r)
        if (!std::isfinite(v(r, c)))
          fail("non_finite_value", "function '" + records[i].id + "' has a non-finite value at grid index (" +
                                       std::to_string(r) + ", " + std::to_string(c) + ")");
  }
}

Matrix FunctionalDataset::stacked() const {
  Matrix out(values.size(), grid.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out.row(i) = Eigen::Map<const Vector>(values[i].data(), grid.size()).transpose();
  return out;
}

}  // namespace sfmm
