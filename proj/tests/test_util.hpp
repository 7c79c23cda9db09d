#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tamba/scenario.hpp"
#include "tamba/tensor.hpp"

namespace testutil {

using namespace tamba;

inline Agent moving_agent(const std::string& id, Category cat, int L, double x0,
                          double y0, double vx, double vy) {
  Agent a;
  a.id = id;
  a.category = cat;
  for (int t = 0; t < L; ++t) {
    AgentState st;
    st.x = x0 + vx * 0.1 * t;
    st.y = y0 + vy * 0.1 * t;
    st.heading = normalize_heading(std::atan2(vy, vx));
    st.vx = vx;
    st.vy = vy;
    st.valid = true;
    st.timestep = t;
    a.states.push_back(st);
  }
  return a;
}

inline Polyline lane_at(const std::string& id, double y, int n = 4) {
  Polyline p;
  p.id = id;
  p.category = Category::lane;
  for (int i = 0; i < n; ++i) p.points.push_back({1.5 * i, y});
  return p;
}

inline Polyline light_at(const std::string& id, double x, double y, int L) {
  Polyline p;
  p.id = id;
  p.category = Category::traffic_light;
  std::vector<double> pt = {x, y};
  for (int t = 0; t < L; ++t) pt.push_back(t % 2 == 0 ? 1.0 : 2.0);
  p.points.push_back(pt);
  return p;
}

// Two vehicles, optional pedestrian and light, three lanes; veh0 is the
// target and carries ground truth continuing its constant velocity.
inline Scenario crossing_scene(int L, int future = 4, bool with_traffic = true) {
  Scenario s;
  s.sample_rate_hz = 10.0;
  s.horizon = {L, future};
  s.agents.push_back(moving_agent("veh0", Category::vehicle, L, 0, 0, 6, 0));
  s.agents.push_back(moving_agent("veh1", Category::vehicle, L, 5, 3, 0, 5));
  if (with_traffic)
    s.agents.push_back(moving_agent("ped0", Category::pedestrian, L, -2, 1, 1, 0.4));
  s.map.push_back(lane_at("lane0", 0.0));
  s.map.push_back(lane_at("lane1", 3.5));
  s.map.push_back(lane_at("lane2", -3.5));
  if (with_traffic) s.map.push_back(light_at("light0", 1.5, 2.0, L));
  s.target_ids = {"veh0"};
  const AgentState& last = s.agents[0].states.back();
  for (int j = 0; j < future; ++j)
    s.ground_truth["veh0"].push_back(
        {last.x + last.vx * 0.1 * (j + 1), last.y + last.vy * 0.1 * (j + 1)});
  validate_scenario(s);
  return s;
}

// Rigidly moves the whole scenario: rotate by ang about the origin, then
// translate by (dx, dy). Zero-filled invalid states stay untouched.
inline Scenario rigid_motion(const Scenario& src, double dx, double dy, double ang) {
  Scenario s = src;
  double c = std::cos(ang), sn = std::sin(ang);
  auto rot = [&](double x, double y) {
    return std::array<double, 2>{c * x - sn * y, sn * x + c * y};
  };
  for (Agent& a : s.agents)
    for (AgentState& st : a.states) {
      if (!st.valid) continue;
      auto p = rot(st.x, st.y);
      st.x = p[0] + dx;
      st.y = p[1] + dy;
      auto v = rot(st.vx, st.vy);
      st.vx = v[0];
      st.vy = v[1];
      st.heading = normalize_heading(st.heading + ang);
    }
  for (Polyline& pl : s.map)
    for (auto& pt : pl.points) {
      auto p = rot(pt[0], pt[1]);
      pt[0] = p[0] + dx;
      pt[1] = p[1] + dy;
    }
  for (auto& [id, pts] : s.ground_truth)
    for (auto& pt : pts) {
      auto p = rot(pt[0], pt[1]);
      pt[0] = p[0] + dx;
      pt[1] = p[1] + dy;
    }
  validate_scenario(s);
  return s;
}

inline bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return 1e300;
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testutil
