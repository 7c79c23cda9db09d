#include "tamba/generator.hpp"

#include <algorithm>
#include <cmath>

namespace tamba {

namespace {

struct LaneGeom {
  bool arc = false;
  double ax = 0, ay = 0, phi = 0;              // straight: anchor + direction
  double cx = 0, cy = 0, radius = 0, sgn = 1;  // arc: center, radius, travel sign
  double lo = 0, hi = 0;  // covered arclength (straight) or angle (arc) range
  bool touched = false;
};

void cover(LaneGeom& g, double lo, double hi) {
  if (!g.touched) {
    g.lo = lo;
    g.hi = hi;
    g.touched = true;
  } else {
    g.lo = std::min(g.lo, lo);
    g.hi = std::max(g.hi, hi);
  }
}

Polyline lay_straight(const std::string& id, Category cat, double ax, double ay, double phi,
                      double lo, double hi, double lateral) {
  Polyline p;
  p.id = id;
  p.category = cat;
  const double cx = std::cos(phi), sy = std::sin(phi);
  const double nx = -sy, ny = cx;
  int n = std::max(2, static_cast<int>(std::floor((hi - lo) / 2.0)) + 1);
  for (int k = 0; k < n; ++k) {
    double s = lo + (hi - lo) * k / (n - 1);
    p.points.push_back({ax + cx * s + nx * lateral, ay + sy * s + ny * lateral});
  }
  return p;
}

Polyline lay_arc(const std::string& id, Category cat, double cx, double cy, double radius,
                 double lo, double hi) {
  Polyline p;
  p.id = id;
  p.category = cat;
  int n = std::max(2, static_cast<int>(std::floor((hi - lo) * radius / 2.0)) + 1);
  for (int k = 0; k < n; ++k) {
    double psi = lo + (hi - lo) * k / (n - 1);
    p.points.push_back({cx + radius * std::cos(psi), cy + radius * std::sin(psi)});
  }
  return p;
}

}  // namespace

Scenario generate_synthetic(uint64_t seed, const GeneratorSpec& spec) {
  if (spec.observed < 2) throw ConfigError("generator: observed must be >= 2");
  if (spec.future < 1) throw ConfigError("generator: future must be >= 1");
  if (!(spec.sample_rate_hz > 0.0))
    throw ConfigError("generator: sample_rate_hz must be positive");
  if (spec.n_targets < 1) throw ConfigError("generator: need at least one target");
  if (spec.n_vehicles < spec.n_targets)
    throw ConfigError("generator: more targets than vehicles");
  if (spec.n_lanes < 1)
    throw ConfigError("generator: lane-following vehicles need at least one lane");
  if (spec.n_pedestrians < 0 || spec.n_traffic_lights < 0)
    throw ConfigError("generator: negative element count");
  if (spec.w_straight < 0 || spec.w_turn < 0 || spec.w_yield < 0 ||
      spec.w_straight + spec.w_turn + spec.w_yield <= 0)
    throw ConfigError("generator: motif weights must be nonnegative with positive sum");
  if (!(spec.speed_min > 0) || spec.speed_max < spec.speed_min)
    throw ConfigError("generator: speed range must satisfy 0 < min <= max");
  if (spec.state_dropout < 0 || spec.state_dropout >= 1)
    throw ConfigError("generator: state_dropout must be in [0, 1)");

  Rng rng(seed);
  const int T = spec.observed;
  const int F = spec.future;
  const double dt = 1.0 / spec.sample_rate_hz;

  Scenario s;
  s.sample_rate_hz = spec.sample_rate_hz;
  s.horizon = {T, F};

  // Lane geometries. Arc lanes host the turn motif; straight lanes host
  // constant-velocity and yielding vehicles.
  const double w_sum = spec.w_straight + spec.w_turn + spec.w_yield;
  std::vector<LaneGeom> lanes(spec.n_lanes);
  for (auto& g : lanes) {
    g.arc = rng.uniform() < spec.w_turn / w_sum;
    if (g.arc) {
      g.cx = rng.uniform(-25.0, 25.0);
      g.cy = rng.uniform(-25.0, 25.0);
      g.radius = rng.uniform(12.0, 40.0);
      g.sgn = rng.uniform() < 0.5 ? 1.0 : -1.0;
    } else {
      g.ax = rng.uniform(-25.0, 25.0);
      g.ay = rng.uniform(-25.0, 25.0);
      g.phi = rng.uniform(-kPi, kPi);
    }
  }

  for (int i = 0; i < spec.n_vehicles; ++i) {
    LaneGeom& g = lanes[i % spec.n_lanes];
    const bool is_target = i < spec.n_targets;

    Agent a;
    a.id = "veh" + std::to_string(i);
    a.category = (!is_target && rng.uniform() < 0.25) ? Category::motorcycle
                                                      : Category::vehicle;
    const double speed = rng.uniform(spec.speed_min, spec.speed_max);
    std::vector<std::array<double, 2>> gt;

    if (g.arc) {
      // Constant-curvature turn on the exact circle.
      const double omega = g.sgn * speed / g.radius;
      const double psi0 = rng.uniform(-kPi, kPi);
      for (int t = 0; t < T; ++t) {
        const double psi = psi0 + omega * (t * dt);
        AgentState st;
        st.x = g.cx + g.radius * std::cos(psi);
        st.y = g.cy + g.radius * std::sin(psi);
        st.vx = -speed * g.sgn * std::sin(psi);
        st.vy = speed * g.sgn * std::cos(psi);
        st.heading = normalize_heading(psi + g.sgn * kPi / 2.0);
        st.valid = true;
        a.states.push_back(st);
      }
      if (is_target)
        for (int j = 0; j < F; ++j) {
          const double psi = psi0 + omega * ((T + j) * dt);
          gt.push_back({g.cx + g.radius * std::cos(psi), g.cy + g.radius * std::sin(psi)});
        }
      const double psi_end = psi0 + omega * ((T - 1 + F) * dt);
      cover(g, std::min(psi0, psi_end) - 8.0 / g.radius,
            std::max(psi0, psi_end) + 8.0 / g.radius);
    } else {
      const double dx = std::cos(g.phi), dy = std::sin(g.phi);
      const double s0 = rng.uniform(-30.0, 10.0);
      const bool yields =
          spec.w_straight + spec.w_yield > 0 &&
          rng.uniform() < spec.w_yield / (spec.w_straight + spec.w_yield);
      if (yields) {
        // Deceleration toward a floor speed; positions integrate the stored
        // per-step velocities at the sample rate.
        const double decel = rng.uniform(0.6, 1.6);
        const double v_floor = rng.uniform(0.2, 0.8);
        double px = g.ax + dx * s0, py = g.ay + dy * s0;
        for (int t = 0; t < T + F; ++t) {
          const double v = std::max(speed - decel * (t * dt), v_floor);
          if (t < T) {
            AgentState st;
            st.x = px;
            st.y = py;
            st.vx = dx * v;
            st.vy = dy * v;
            st.heading = normalize_heading(g.phi);
            st.valid = true;
            a.states.push_back(st);
          } else if (is_target) {
            gt.push_back({px, py});
          }
          px += dx * v * dt;
          py += dy * v * dt;
        }
      } else {
        // Constant velocity; future waypoints extrapolate analytically from
        // the final observed state.
        for (int t = 0; t < T; ++t) {
          AgentState st;
          st.x = g.ax + dx * (s0 + speed * (t * dt));
          st.y = g.ay + dy * (s0 + speed * (t * dt));
          st.vx = dx * speed;
          st.vy = dy * speed;
          st.heading = normalize_heading(g.phi);
          st.valid = true;
          a.states.push_back(st);
        }
        if (is_target) {
          const AgentState& last = a.states.back();
          for (int j = 0; j < F; ++j)
            gt.push_back({last.x + last.vx * ((j + 1) * dt),
                          last.y + last.vy * ((j + 1) * dt)});
        }
      }
      cover(g, s0 - 8.0, s0 + speed * ((T - 1 + F) * dt) + 8.0);
    }

    if (is_target) {
      s.target_ids.push_back(a.id);
      s.ground_truth[a.id] = std::move(gt);
    }
    s.agents.push_back(std::move(a));
  }

  // Pedestrian crossing, gated by the first traffic light when one exists:
  // everyone stands until the light goes red for vehicles, then walks.
  const double qx = rng.uniform(-15.0, 15.0);
  const double qy = rng.uniform(-15.0, 15.0);
  const double cross_dir = lanes[0].arc ? rng.uniform(-kPi, kPi)
                                        : normalize_heading(lanes[0].phi + kPi / 2.0);
  int wait = 0;
  if (spec.n_traffic_lights > 0 && spec.n_pedestrians > 0)
    wait = static_cast<int>(rng.uniform_int(T / 4, T / 2));

  std::vector<std::array<double, 2>> ped_anchor;
  std::vector<double> ped_dist;
  for (int k = 0; k < spec.n_pedestrians; ++k) {
    Agent a;
    a.id = "ped" + std::to_string(k);
    a.category = Category::pedestrian;
    const double px0 = qx + rng.uniform(-3.0, 3.0);
    const double py0 = qy + rng.uniform(-3.0, 3.0);
    const double walk = rng.uniform(1.0, 1.8);
    const double wx = std::cos(cross_dir) * walk, wy = std::sin(cross_dir) * walk;
    double px = px0, py = py0;
    for (int t = 0; t < T; ++t) {
      AgentState st;
      st.x = px;
      st.y = py;
      st.heading = cross_dir;
      st.valid = true;
      if (t >= wait) {
        st.vx = wx;
        st.vy = wy;
      }
      a.states.push_back(st);
      if (t >= wait) {
        px += wx * dt;
        py += wy * dt;
      }
    }
    s.agents.push_back(std::move(a));
    ped_anchor.push_back({px0, py0});
    ped_dist.push_back(walk * ((T - wait + F) * dt));
  }

  for (int l = 0; l < spec.n_lanes; ++l) {
    LaneGeom& g = lanes[l];
    if (!g.touched) {
      if (g.arc) {
        double psi_a = rng.uniform(-kPi, kPi);
        cover(g, psi_a, psi_a + 40.0 / g.radius);
      } else {
        cover(g, -20.0, 20.0);
      }
    }
    const std::string id = "lane" + std::to_string(l);
    s.map.push_back(g.arc ? lay_arc(id, Category::lane, g.cx, g.cy, g.radius, g.lo, g.hi)
                          : lay_straight(id, Category::lane, g.ax, g.ay, g.phi, g.lo, g.hi, 0.0));
  }

  // Road edges bracketing the first lane.
  {
    const LaneGeom& g = lanes[0];
    for (int e = 0; e < 2; ++e) {
      const double off = e == 0 ? 4.0 : -4.0;
      const std::string id = "edge" + std::to_string(e);
      s.map.push_back(
          g.arc ? lay_arc(id, Category::map_edge, g.cx, g.cy,
                          std::max(1.0, g.radius + off), g.lo, g.hi)
                : lay_straight(id, Category::map_edge, g.ax, g.ay, g.phi, g.lo, g.hi, off));
    }
  }

  for (int k = 0; k < spec.n_pedestrians; ++k)
    s.map.push_back(lay_straight("walk" + std::to_string(k), Category::sidewalk,
                                 ped_anchor[k][0], ped_anchor[k][1], cross_dir, -2.0,
                                 ped_dist[k] + 2.0, 0.0));

  for (int j = 0; j < spec.n_traffic_lights; ++j) {
    Polyline p;
    p.id = "light" + std::to_string(j);
    p.category = Category::traffic_light;
    std::vector<double> pt;
    if (j == 0 && spec.n_pedestrians > 0) {
      pt = {qx + rng.uniform(-1.0, 1.0), qy + rng.uniform(-1.0, 1.0)};
      const int unknown_until = std::min(2, wait);
      for (int t = 0; t < T; ++t)
        pt.push_back(t < unknown_until ? 0.0 : (t < wait ? 2.0 : 1.0));
    } else {
      pt = {rng.uniform(-20.0, 20.0), rng.uniform(-20.0, 20.0)};
      const int sw = static_cast<int>(rng.uniform_int(0, T));
      const int unknown_until = std::min(static_cast<int>(rng.uniform_int(0, 2)), sw);
      for (int t = 0; t < T; ++t)
        pt.push_back(t < unknown_until ? 0.0 : (t < sw ? 2.0 : 1.0));
    }
    p.points.push_back(std::move(pt));
    s.map.push_back(std::move(p));
  }

  if (spec.state_dropout > 0.0) {
    for (auto& a : s.agents) {
      bool is_target = false;
      for (const auto& tid : s.target_ids)
        if (tid == a.id) is_target = true;
      if (is_target) continue;
      for (auto& st : a.states)
        if (rng.uniform() < spec.state_dropout) st = AgentState{};
    }
  }

  for (auto& a : s.agents)
    for (int t = 0; t < T; ++t) a.states[t].timestep = t;

  validate_scenario(s);
  return s;
}

}  // namespace tamba
