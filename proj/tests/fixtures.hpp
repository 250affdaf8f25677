#pragma once

#include "evgen/dataio.hpp"

#include <cstdint>

namespace evgen::testing {

// The three-mode example population with flat (untapered, unjittered)
// sessions, so that every curve is exactly representable by a
// (start, duration, power) triple. On the tapered population the pooled-load
// KS of a triple mixture bottoms out near 0.035 for every K.
inline dataio::SyntheticPopulation rectangular_three_mode(int n, std::uint64_t seed) {
  auto spec = dataio::example_population(3, n, seed);
  for (auto& m : spec.modes) {
    m.taper_fraction = 0.0;
    m.taper_floor = 1.0;
    m.jitter = 0.0;
  }
  return dataio::synth_population(spec);
}

}  // namespace evgen::testing
