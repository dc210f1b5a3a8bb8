#pragma once

#include <vector>

#include "csa/data.h"

namespace csa {

/// Monte Carlo draws of both potential event times; row i is subject i.
struct EventTimeSamples {
  RowMatrix arm[2];  ///< n x S draws under control [0] and treatment [1]

  std::size_t subjects() const { return static_cast<std::size_t>(arm[0].rows()); }
  std::size_t draws() const { return static_cast<std::size_t>(arm[0].cols()); }
  /// Throws unless both arms have the same positive shape and every draw is
  /// positive and finite.
  void validate() const;
  /// Restriction to the given subjects, in the given order.
  EventTimeSamples rows(const std::vector<std::size_t>& subjects) const;
};

/// Step function on a strictly increasing grid; value[0] is at grid[0].
struct SurvivalCurve {
  std::vector<double> time;
  std::vector<double> survival;

  std::size_t size() const { return time.size(); }
  /// Right-continuous step evaluation; 1 before the first grid time.
  double at(double t) const;
  /// Start at 1, nonincreasing, within [0, 1], strictly increasing grid.
  bool valid() const;
};

}  // namespace csa
