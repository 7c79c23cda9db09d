#pragma once

#include <cstdint>

#include "tamba/scenario.hpp"

namespace tamba {

// Synthetic scene recipe. Vehicles follow lanes; each lane is either straight
// or a constant-curvature arc, chosen by the motif weights. A vehicle on a
// straight lane either holds constant velocity or yields (decelerates toward
// a floor speed); a vehicle on an arc lane turns at constant curvature.
// Pedestrians cross on foot, gated by the first traffic light when one exists
// (standing until the light turns red for vehicles, then walking).
struct GeneratorSpec {
  int observed = 20;
  int future = 30;
  double sample_rate_hz = 10.0;

  int n_vehicles = 3;
  int n_lanes = 3;
  int n_pedestrians = 1;
  int n_traffic_lights = 1;
  int n_targets = 1;  // targets are the first n_targets vehicles

  // Motif mix (relative weights, need not sum to 1).
  double w_straight = 1.0;
  double w_turn = 1.0;
  double w_yield = 1.0;

  double speed_min = 4.0;  // m/s, vehicles
  double speed_max = 14.0;

  // Chance that a non-target agent's step is unobserved (zero-filled).
  double state_dropout = 0.0;

  friend bool operator==(const GeneratorSpec&, const GeneratorSpec&) = default;
};

// Deterministic in (seed, spec). Output always passes validate_scenario and
// carries ground truth for every target. Throws ConfigError on infeasible
// specs (no lanes for lane-following vehicles, empty motif mix, bad ranges).
Scenario generate_synthetic(uint64_t seed, const GeneratorSpec& spec);

}  // namespace tamba
