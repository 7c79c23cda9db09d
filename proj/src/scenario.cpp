#include "tamba/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tamba {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

double normalize_heading(double h) {
  const double two_pi = 2.0 * kPi;
  double r = std::fmod(h + kPi, two_pi);
  if (r < 0) r += two_pi;
  double out = r - kPi;
  if (out >= kPi) out -= two_pi;  // fp rounding at the wrap seam
  return out;
}

const char* to_string(Category c) {
  switch (c) {
    case Category::vehicle: return "vehicle";
    case Category::motorcycle: return "motorcycle";
    case Category::pedestrian: return "pedestrian";
    case Category::traffic_light: return "traffic_light";
    case Category::lane: return "lane";
    case Category::map_edge: return "map_edge";
    case Category::sidewalk: return "sidewalk";
    case Category::traffic_sign: return "traffic_sign";
  }
  return "?";
}

Category category_from_string(const std::string& name) {
  static const std::map<std::string, Category> table = {
      {"vehicle", Category::vehicle},
      {"motorcycle", Category::motorcycle},
      {"pedestrian", Category::pedestrian},
      {"traffic_light", Category::traffic_light},
      {"lane", Category::lane},
      {"map_edge", Category::map_edge},
      {"sidewalk", Category::sidewalk},
      {"traffic_sign", Category::traffic_sign},
  };
  auto it = table.find(name);
  if (it == table.end()) throw ValidationError("unknown category '" + name + "'");
  return it->second;
}

bool is_dynamic(Category c) {
  return c == Category::vehicle || c == Category::motorcycle || c == Category::pedestrian;
}

bool is_traffic_control(Category c) {
  return c == Category::pedestrian || c == Category::traffic_light;
}

bool is_static_scene(Category c) { return !is_dynamic(c) && c != Category::traffic_light; }

const Agent* Scenario::find_agent(const std::string& id) const {
  for (const auto& a : agents)
    if (a.id == id) return &a;
  return nullptr;
}

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_state(const AgentState& st, const std::string& who, int t, int T) {
  std::string ctx = "agent '" + who + "' state " + std::to_string(t);
  if (!std::isfinite(st.x) || !std::isfinite(st.y) || !std::isfinite(st.heading) ||
      !std::isfinite(st.vx) || !std::isfinite(st.vy))
    throw ValidationError(ctx + ": non-finite value");
  if (st.timestep != t)
    throw ValidationError(ctx + ": timestep " + std::to_string(st.timestep) +
                          " out of order (expected " + std::to_string(t) + " of " +
                          std::to_string(T) + ")");
  if (st.valid) {
    if (!(st.heading >= -kPi && st.heading < kPi))
      throw ValidationError(ctx + ": heading " + std::to_string(st.heading) +
                            " outside [-pi, pi)");
  } else {
    if (st.x != 0.0 || st.y != 0.0 || st.heading != 0.0 || st.vx != 0.0 || st.vy != 0.0)
      throw ValidationError(ctx + ": unobserved step must be zero-filled");
  }
}

}  // namespace

void validate_scenario(const Scenario& s) {
  if (!(s.sample_rate_hz > 0.0) || !std::isfinite(s.sample_rate_hz))
    throw ValidationError("sample_rate_hz must be positive and finite");
  if (s.horizon.observed < 1)
    throw ValidationError("horizon.observed must be >= 1");
  if (s.horizon.future < 1)
    throw ValidationError("horizon.future must be >= 1");

  const int T = s.horizon.observed;

  std::set<std::string> agent_ids;
  for (const auto& a : s.agents) {
    if (a.id.empty()) throw ValidationError("agent with empty id");
    if (!agent_ids.insert(a.id).second)
      throw ValidationError("duplicate agent id '" + a.id + "'");
    if (!is_dynamic(a.category))
      throw ValidationError("agent '" + a.id + "': category '" +
                            to_string(a.category) + "' is not a dynamic category");
    if (static_cast<int>(a.states.size()) != T)
      throw ValidationError("agent '" + a.id + "': " + std::to_string(a.states.size()) +
                            " states, horizon.observed is " + std::to_string(T));
    for (int t = 0; t < T; ++t) check_state(a.states[t], a.id, t, T);
  }

  std::set<std::string> poly_ids;
  for (const auto& p : s.map) {
    if (p.id.empty()) throw ValidationError("polyline with empty id");
    if (!poly_ids.insert(p.id).second)
      throw ValidationError("duplicate polyline id '" + p.id + "'");
    if (is_dynamic(p.category))
      throw ValidationError("polyline '" + p.id + "': category '" +
                            to_string(p.category) + "' belongs in agents, not map");
    if (p.points.empty())
      throw ValidationError("polyline '" + p.id + "': no points");
    const size_t dims = p.points.front().size();
    if (dims < 2)
      throw ValidationError("polyline '" + p.id + "': points need at least x and y");
    for (const auto& pt : p.points) {
      if (pt.size() != dims)
        throw ValidationError("polyline '" + p.id + "': ragged point dimensions (" +
                              std::to_string(pt.size()) + " vs " + std::to_string(dims) + ")");
      if (!all_finite(pt))
        throw ValidationError("polyline '" + p.id + "': non-finite point value");
    }
    if (p.category == Category::traffic_light) {
      if (p.points.size() != 1)
        throw ValidationError("traffic light '" + p.id + "': must be a single point");
      if (dims != static_cast<size_t>(2 + T))
        throw ValidationError("traffic light '" + p.id + "': expected x, y plus " +
                              std::to_string(T) + " per-step states, got " +
                              std::to_string(dims) + " values");
      for (size_t k = 2; k < dims; ++k) {
        double v = p.points[0][k];
        if (v != 0.0 && v != 1.0 && v != 2.0)
          throw ValidationError("traffic light '" + p.id + "': state " +
                                std::to_string(v) + " not in {0, 1, 2}");
      }
    }
  }

  std::set<std::string> seen_targets;
  for (const auto& tid : s.target_ids) {
    if (!seen_targets.insert(tid).second)
      throw ValidationError("duplicate target id '" + tid + "'");
    const Agent* a = s.find_agent(tid);
    if (!a) throw ValidationError("target '" + tid + "' not found among agents");
    if (!a->states.back().valid)
      throw ValidationError("target '" + tid + "' not observed at the final step");
  }

  for (const auto& [tid, pts] : s.ground_truth) {
    if (!s.find_agent(tid))
      throw ValidationError("ground_truth for unknown agent '" + tid + "'");
    if (static_cast<int>(pts.size()) != s.horizon.future)
      throw ValidationError("ground_truth for '" + tid + "': " +
                            std::to_string(pts.size()) + " waypoints, horizon.future is " +
                            std::to_string(s.horizon.future));
    for (const auto& pt : pts)
      if (!std::isfinite(pt[0]) || !std::isfinite(pt[1]))
        throw ValidationError("ground_truth for '" + tid + "': non-finite waypoint");
  }
}

namespace {

// Strict field access: every object must carry exactly its schema keys.
void check_keys(const json& j, const std::string& ctx,
                std::initializer_list<const char*> required,
                std::initializer_list<const char*> optional = {}) {
  if (!j.is_object()) throw ValidationError(ctx + ": expected an object");
  for (const char* k : required)
    if (!j.contains(k)) throw ValidationError(ctx + ": missing field '" + k + "'");
  for (const auto& [key, val] : j.items()) {
    bool known = false;
    for (const char* k : required)
      if (key == k) { known = true; break; }
    if (!known)
      for (const char* k : optional)
        if (key == k) { known = true; break; }
    if (!known) throw ValidationError(ctx + ": unknown field '" + key + "'");
  }
}

double get_num(const json& j, const std::string& ctx, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number()) throw ValidationError(ctx + ": field '" + key + "' must be a number");
  return v.get<double>();
}

int get_int(const json& j, const std::string& ctx, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_integer())
    throw ValidationError(ctx + ": field '" + key + "' must be an integer");
  return v.get<int>();
}

bool get_bool(const json& j, const std::string& ctx, const char* key) {
  const json& v = j.at(key);
  if (!v.is_boolean()) throw ValidationError(ctx + ": field '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string get_str(const json& j, const std::string& ctx, const char* key) {
  const json& v = j.at(key);
  if (!v.is_string()) throw ValidationError(ctx + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

const json& get_arr(const json& j, const std::string& ctx, const char* key) {
  const json& v = j.at(key);
  if (!v.is_array()) throw ValidationError(ctx + ": field '" + key + "' must be an array");
  return v;
}

Scenario scenario_from_json(const json& root, const std::string& origin) {
  check_keys(root, origin, {"version", "sample_rate_hz", "horizon", "agents", "map", "targets"},
             {"ground_truth"});

  int version = get_int(root, origin, "version");
  if (version != 1)
    throw ValidationError(origin + ": unsupported version " + std::to_string(version));

  Scenario s;
  s.sample_rate_hz = get_num(root, origin, "sample_rate_hz");

  {
    const json& h = root.at("horizon");
    check_keys(h, origin + ": horizon", {"observed", "future"});
    s.horizon.observed = get_int(h, origin + ": horizon", "observed");
    s.horizon.future = get_int(h, origin + ": horizon", "future");
  }

  const json& agents = get_arr(root, origin, "agents");
  for (size_t i = 0; i < agents.size(); ++i) {
    std::string ctx = origin + ": agents[" + std::to_string(i) + "]";
    const json& ja = agents[i];
    check_keys(ja, ctx, {"id", "category", "states"});
    Agent a;
    a.id = get_str(ja, ctx, "id");
    try {
      a.category = category_from_string(get_str(ja, ctx, "category"));
    } catch (const ValidationError& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    const json& states = get_arr(ja, ctx, "states");
    for (size_t t = 0; t < states.size(); ++t) {
      std::string sctx = ctx + ".states[" + std::to_string(t) + "]";
      const json& js = states[t];
      check_keys(js, sctx, {"x", "y", "heading", "vx", "vy", "valid"});
      AgentState st;
      st.x = get_num(js, sctx, "x");
      st.y = get_num(js, sctx, "y");
      st.heading = normalize_heading(get_num(js, sctx, "heading"));
      st.vx = get_num(js, sctx, "vx");
      st.vy = get_num(js, sctx, "vy");
      st.valid = get_bool(js, sctx, "valid");
      st.timestep = static_cast<int>(t);
      a.states.push_back(st);
    }
    s.agents.push_back(std::move(a));
  }

  const json& map = get_arr(root, origin, "map");
  for (size_t i = 0; i < map.size(); ++i) {
    std::string ctx = origin + ": map[" + std::to_string(i) + "]";
    const json& jp = map[i];
    check_keys(jp, ctx, {"id", "category", "points"});
    Polyline p;
    p.id = get_str(jp, ctx, "id");
    try {
      p.category = category_from_string(get_str(jp, ctx, "category"));
    } catch (const ValidationError& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    const json& points = get_arr(jp, ctx, "points");
    for (size_t k = 0; k < points.size(); ++k) {
      const json& jpt = points[k];
      if (!jpt.is_array())
        throw ValidationError(ctx + ".points[" + std::to_string(k) + "]: expected an array");
      std::vector<double> pt;
      for (const auto& v : jpt) {
        if (!v.is_number())
          throw ValidationError(ctx + ".points[" + std::to_string(k) +
                                "]: non-numeric coordinate");
        pt.push_back(v.get<double>());
      }
      p.points.push_back(std::move(pt));
    }
    s.map.push_back(std::move(p));
  }

  for (const auto& v : get_arr(root, origin, "targets")) {
    if (!v.is_string()) throw ValidationError(origin + ": targets must be strings");
    s.target_ids.push_back(v.get<std::string>());
  }

  if (root.contains("ground_truth")) {
    const json& gt = root.at("ground_truth");
    if (!gt.is_object()) throw ValidationError(origin + ": ground_truth must be an object");
    for (const auto& [tid, arr] : gt.items()) {
      std::string ctx = origin + ": ground_truth['" + tid + "']";
      if (!arr.is_array()) throw ValidationError(ctx + ": expected an array");
      std::vector<std::array<double, 2>> pts;
      for (const auto& jpt : arr) {
        if (!jpt.is_array() || jpt.size() != 2 || !jpt[0].is_number() || !jpt[1].is_number())
          throw ValidationError(ctx + ": waypoints must be [x, y] pairs");
        pts.push_back({jpt[0].get<double>(), jpt[1].get<double>()});
      }
      s.ground_truth[tid] = std::move(pts);
    }
  }

  try {
    validate_scenario(s);
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  return s;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(origin + ": " + e.what());
  }
  return scenario_from_json(root, origin);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path);
}

std::string scenario_to_json(const Scenario& s) {
  ojson root;
  root["version"] = 1;
  root["sample_rate_hz"] = s.sample_rate_hz;
  root["horizon"] = {{"observed", s.horizon.observed}, {"future", s.horizon.future}};

  ojson agents = ojson::array();
  for (const auto& a : s.agents) {
    ojson states = ojson::array();
    for (const auto& st : a.states)
      states.push_back({{"x", st.x},
                        {"y", st.y},
                        {"heading", st.heading},
                        {"vx", st.vx},
                        {"vy", st.vy},
                        {"valid", st.valid}});
    agents.push_back(
        {{"id", a.id}, {"category", to_string(a.category)}, {"states", std::move(states)}});
  }
  root["agents"] = std::move(agents);

  ojson map = ojson::array();
  for (const auto& p : s.map)
    map.push_back({{"id", p.id}, {"category", to_string(p.category)}, {"points", p.points}});
  root["map"] = std::move(map);

  root["targets"] = s.target_ids;

  if (!s.ground_truth.empty()) {
    ojson gt = ojson::object();
    for (const auto& [tid, pts] : s.ground_truth) {
      ojson arr = ojson::array();
      for (const auto& pt : pts) arr.push_back({pt[0], pt[1]});
      gt[tid] = std::move(arr);
    }
    root["ground_truth"] = std::move(gt);
  }

  return root.dump(1);
}

void save_scenario(const Scenario& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write scenario file '" + path + "'");
  out << scenario_to_json(s) << "\n";
  if (!out) throw ValidationError("write failed for scenario file '" + path + "'");
}

std::array<double, 2> FrameTransform::apply(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double dx = x - tx, dy = y - ty;
  return {c * dx + s * dy, -s * dx + c * dy};
}

std::array<double, 2> FrameTransform::invert(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  return {tx + c * x - s * y, ty + s * x + c * y};
}

std::array<double, 2> FrameTransform::apply_vec(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * x + s * y, -s * x + c * y};
}

std::array<double, 2> FrameTransform::invert_vec(double x, double y) const {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * x - s * y, s * x + c * y};
}

double FrameTransform::apply_heading(double h) const { return normalize_heading(h - theta); }

double FrameTransform::invert_heading(double h) const { return normalize_heading(h + theta); }

std::pair<Scenario, FrameTransform> to_agent_frame(const Scenario& s,
                                                   const std::string& target_id) {
  const Agent* target = s.find_agent(target_id);
  if (!target) throw ValidationError("target '" + target_id + "' not found among agents");
  if (target->states.empty() || !target->states.back().valid)
    throw ValidationError("target '" + target_id + "' not observed at the final step");

  const AgentState& pose = target->states.back();
  FrameTransform tf{pose.x, pose.y, pose.heading};

  Scenario out = s;
  for (auto& a : out.agents) {
    for (auto& st : a.states) {
      if (!st.valid) continue;  // stays zero-filled
      auto p = tf.apply(st.x, st.y);
      auto v = tf.apply_vec(st.vx, st.vy);
      st.x = p[0];
      st.y = p[1];
      st.vx = v[0];
      st.vy = v[1];
      st.heading = tf.apply_heading(st.heading);
    }
  }
  for (auto& poly : out.map) {
    for (auto& pt : poly.points) {
      auto p = tf.apply(pt[0], pt[1]);
      pt[0] = p[0];
      pt[1] = p[1];
    }
  }
  for (auto& [tid, pts] : out.ground_truth) {
    for (auto& pt : pts) {
      auto p = tf.apply(pt[0], pt[1]);
      pt = {p[0], p[1]};
    }
  }
  return {std::move(out), tf};
}

}  // namespace tamba
