#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tamba/common.hpp"

namespace tamba {

inline constexpr double kPi = 3.14159265358979323846;

// Wraps an angle into [-pi, pi).
double normalize_heading(double h);

enum class Category {
  vehicle,
  motorcycle,
  pedestrian,
  traffic_light,
  lane,
  map_edge,
  sidewalk,
  traffic_sign,
};

const char* to_string(Category c);
Category category_from_string(const std::string& name);

// Moving agents with state sequences.
bool is_dynamic(Category c);
// Elements that regulate traffic flow: pedestrians and traffic lights.
bool is_traffic_control(Category c);
// Static scene geometry (everything else).
bool is_static_scene(Category c);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, [-pi, pi)
  int timestep = 0;
  double vx = 0.0;
  double vy = 0.0;
  bool valid = false;

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

struct Agent {
  std::string id;
  Category category = Category::vehicle;
  std::vector<AgentState> states;  // length = horizon.observed

  friend bool operator==(const Agent&, const Agent&) = default;
};

// Ordered point sequence. Each point is [x, y, ...attrs]; all points in one
// polyline share a dimensionality. Traffic lights are single-point polylines
// whose attrs hold one state value per observed timestep
// (0 = unknown, 1 = red, 2 = green).
struct Polyline {
  std::string id;
  Category category = Category::lane;
  std::vector<std::vector<double>> points;

  friend bool operator==(const Polyline&, const Polyline&) = default;
};

struct Horizon {
  int observed = 0;
  int future = 0;

  friend bool operator==(const Horizon&, const Horizon&) = default;
};

// Future positions per target id, each of length horizon.future.
using GroundTruth = std::map<std::string, std::vector<std::array<double, 2>>>;

struct Scenario {
  double sample_rate_hz = 10.0;
  Horizon horizon;
  std::vector<Agent> agents;
  std::vector<Polyline> map;
  std::vector<std::string> target_ids;
  GroundTruth ground_truth;  // may be empty at pure inference

  const Agent* find_agent(const std::string& id) const;

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

// Enforces the structural invariants (state lengths, category routing, id
// uniqueness, heading range, target validity, polyline regularity). Throws
// ValidationError naming the offending element.
void validate_scenario(const Scenario& s);

// Strict JSON I/O. Unknown fields are rejected at every nesting level; parse
// failures carry line/column context; headings normalize into [-pi, pi) on
// load. load/parse run validate_scenario before returning.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
std::string scenario_to_json(const Scenario& s);
void save_scenario(const Scenario& s, const std::string& path);

// Rigid transform between the source frame and an agent-centric frame whose
// origin is the target's final observed pose with heading zero.
struct FrameTransform {
  double tx = 0.0;
  double ty = 0.0;
  double theta = 0.0;  // target's final pose in the source frame

  std::array<double, 2> apply(double x, double y) const;   // source -> agent
  std::array<double, 2> invert(double x, double y) const;  // agent -> source
  std::array<double, 2> apply_vec(double x, double y) const;
  std::array<double, 2> invert_vec(double x, double y) const;
  double apply_heading(double h) const;
  double invert_heading(double h) const;
};

// Re-expresses every position, heading, velocity, map point and ground-truth
// waypoint relative to the target's final observed pose. Invalid (zero-filled)
// states stay zero-filled. Throws ValidationError if the target is missing or
// has no valid final state.
std::pair<Scenario, FrameTransform> to_agent_frame(const Scenario& s,
                                                   const std::string& target_id);

}  // namespace tamba
