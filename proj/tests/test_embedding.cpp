#include <cmath>
#include <vector>

#include "doctest.h"
#include "tamba/embedding.hpp"
#include "tamba/grad_check.hpp"

using namespace tamba;

namespace {

Embedder zero_embedder(int d_raw, int d) {
  Embedder e;
  e.W1 = Tensor::zeros({d_raw, d});
  e.b1 = Tensor::zeros({d});
  e.g1 = Tensor::zeros({d});
  e.n1 = Tensor::zeros({d});
  e.W2 = Tensor::zeros({d, d});
  e.b2 = Tensor::zeros({d});
  e.g2 = Tensor::zeros({d});
  e.n2 = Tensor::zeros({d});
  return e;
}

Agent straight_agent(const std::string& id, Category cat, int L, double x0, double y0,
                     double vx, double vy) {
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

Polyline simple_lane(const std::string& id, Category cat, double y, int n = 5) {
  Polyline p;
  p.id = id;
  p.category = cat;
  for (int i = 0; i < n; ++i) p.points.push_back({2.0 * i, y});
  return p;
}

Polyline simple_light(const std::string& id, double x, double y, int L) {
  Polyline p;
  p.id = id;
  p.category = Category::traffic_light;
  std::vector<double> pt = {x, y};
  for (int t = 0; t < L; ++t) pt.push_back(t < L / 2 ? 2.0 : 1.0);
  p.points.push_back(pt);
  return p;
}

// 2 vehicles, 3 lanes, 1 pedestrian, 1 light
Scenario example_scene(int L) {
  Scenario s;
  s.sample_rate_hz = 10.0;
  s.horizon = {L, 3};
  s.agents.push_back(straight_agent("veh0", Category::vehicle, L, 0, 0, 5, 0));
  s.agents.push_back(straight_agent("veh1", Category::vehicle, L, 4, 3, 0, 4));
  s.agents.push_back(straight_agent("ped0", Category::pedestrian, L, -2, 1, 1, 0.5));
  s.map.push_back(simple_lane("lane0", Category::lane, 0.0));
  s.map.push_back(simple_lane("lane1", Category::lane, 3.5));
  s.map.push_back(simple_lane("lane2", Category::lane, -3.5));
  s.map.push_back(simple_light("light0", 1.0, 2.0, L));
  s.target_ids = {"veh0"};
  validate_scenario(s);
  return s;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto da = a.data(), db = b.data();
  for (size_t i = 0; i < da.size(); ++i)
    if (da[i] != db[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("embedding") {

TEST_CASE("positional table: origin row, distinctness, capacity") {
  Tensor table = positional_table(512, 8);
  for (int c = 0; c < 8; ++c)
    CHECK(table.at({0, c}) == (c % 2 == 0 ? 0.0 : 1.0));

  // all rows pairwise distinct up to L = 512
  double min_d2 = 1e300;
  for (int p = 0; p < 512; ++p)
    for (int q = p + 1; q < 512; ++q) {
      double d2 = 0;
      for (int c = 0; c < 8; ++c) {
        double diff = table.at({p, c}) - table.at({q, c});
        d2 += diff * diff;
      }
      min_d2 = std::min(min_d2, d2);
    }
  CHECK(min_d2 > 0.0);

  Tensor x = Tensor::zeros({4, 8});
  Tensor enc = positional_encode(x, 512);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 8; ++c) CHECK(enc.at({t, c}) == table.at({t, c}));

  CHECK_THROWS_AS(positional_encode(Tensor::zeros({513, 8}), 512), ConfigError);
}

TEST_CASE("zero initialized embedder maps zero input to zero") {
  Rng rng(1);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);
  bank.joint = zero_embedder(8, 8);
  Tensor out = embed_category(Tensor::zeros({5, 8}), Category::pedestrian, bank);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("pedestrian and traffic light share the joint embedder") {
  Rng rng(2);
  EmbedderBank bank = make_embedder_bank({.d = 16}, rng);
  Rng data_rng(3);
  Tensor x = rand_uniform({6, 8}, data_rng, -1, 1);
  Tensor ep = embed_category(x, Category::pedestrian, bank);
  Tensor et = embed_category(x, Category::traffic_light, bank);
  CHECK(tensors_equal(ep, et));

  EmbedderBank split = make_embedder_bank({.d = 16, .joint = false}, rng);
  Tensor sp = embed_category(x, Category::pedestrian, split);
  Tensor st = embed_category(x, Category::traffic_light, split);
  CHECK(!tensors_equal(sp, st));
}

TEST_CASE("perturbing one embedder leaves other categories untouched") {
  Rng rng(4);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);
  Rng data_rng(5);
  Tensor xa = rand_uniform({4, 8}, data_rng, -1, 1);
  Tensor xl = rand_uniform({3, 2}, data_rng, -1, 1);

  Tensor veh0 = embed_category(xa, Category::vehicle, bank);
  Tensor lane0 = embed_category(xl, Category::lane, bank);
  for (double& w : bank.independent.at(Category::vehicle).W1.raw()) w += 0.125;
  Tensor veh1 = embed_category(xa, Category::vehicle, bank);
  Tensor lane1 = embed_category(xl, Category::lane, bank);

  CHECK(!tensors_equal(veh0, veh1));
  CHECK(tensors_equal(lane0, lane1));
}

TEST_CASE("fusion: zero weights emit the norm bias, gradients reach both inputs") {
  Rng rng(6);
  const int d = 8;
  EmbedderBank bank = make_embedder_bank({.d = d}, rng);

  SUBCASE("zero-initialized fusion broadcasts its bias") {
    EmbedderBank zbank = bank;
    zbank.fusion.W = Tensor::zeros({2 * d, d});
    zbank.fusion.b = Tensor::zeros({d});
    zbank.fusion.gain = Tensor::zeros({d});
    zbank.fusion.bias = rand_uniform({d}, rng, -1, 1);
    Tensor out = fuse_joint(Tensor::zeros({3, d}), Tensor::zeros({3, d}), zbank);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < d; ++c) CHECK(out.at({r, c}) == zbank.fusion.bias.data()[c]);
  }

  SUBCASE("gradient flows to both sides") {
    Tensor ped = rand_uniform({3, d}, rng, -1, 1, true);
    Tensor tl = rand_uniform({3, d}, rng, -1, 1, true);
    // weight the output so the loss is not invariant to the norm's centering
    Tensor R = rand_uniform({3, d}, rng, -1, 1);
    auto loss_fn = [&] { return sum(mul(fuse_joint(ped, tl, bank), R)); };
    Tensor loss = loss_fn();
    loss.backward();
    double gp = 0, gt = 0;
    for (double v : ped.grad()) gp += std::abs(v);
    for (double v : tl.grad()) gt += std::abs(v);
    CHECK(gp > 1e-6);
    CHECK(gt > 1e-6);

    auto report = grad_check(loss_fn, {{"ped", ped}, {"tl", tl}});
    CHECK(report.pass);
  }

  SUBCASE("width mismatch is a dimension error") {
    CHECK_THROWS_AS(fuse_joint(Tensor::zeros({3, d}), Tensor::zeros({3, d + 1}), bank),
                    DimensionError);
  }
}

TEST_CASE("encode_inputs shape contract") {
  Rng rng(7);
  EmbedderBank bank = make_embedder_bank({.d = 16}, rng);
  Scenario s = example_scene(10);
  EncodedScene enc = encode_inputs(s, bank);

  REQUIRE(enc.agent_tokens.size() == 2);  // vehicles only
  for (const auto& t : enc.agent_tokens) CHECK(t.shape() == Shape{10, 16});
  CHECK(enc.scene_tokens.shape() == Shape{3, 16});
  REQUIRE(enc.traffic_tokens.size() == 2);  // pedestrian + light
  for (const auto& t : enc.traffic_tokens) CHECK(t.shape() == Shape{10, 16});
  CHECK(enc.L == 10);
  CHECK(enc.agent_category[0] == Category::vehicle);
  CHECK(enc.agent_index == std::vector<int>{0, 1});
  CHECK(enc.scene_index == std::vector<int>{0, 1, 2});
}

TEST_CASE("invalid steps produce zero token rows and false mask") {
  Rng rng(8);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);
  Scenario s = example_scene(6);

  Agent ghost = straight_agent("veh2", Category::vehicle, 6, 1, 1, 2, 0);
  for (auto& st : ghost.states) {
    int keep = st.timestep;
    st = AgentState{};
    st.timestep = keep;
  }
  s.agents.push_back(ghost);
  Agent partial = straight_agent("veh3", Category::vehicle, 6, 2, 2, 3, 1);
  partial.states[2] = AgentState{};
  partial.states[2].timestep = 2;
  partial.states[3] = AgentState{};
  partial.states[3].timestep = 3;
  s.agents.push_back(partial);
  validate_scenario(s);

  EncodedScene enc = encode_inputs(s, bank);
  REQUIRE(enc.agent_tokens.size() == 4);

  const Tensor& tok_ghost = enc.agent_tokens[2];
  for (double v : tok_ghost.data()) CHECK(v == 0.0);
  for (double m : enc.agent_mask[2]) CHECK(m == 0.0);

  const Tensor& tok_partial = enc.agent_tokens[3];
  double row0 = 0, row2 = 0, row3 = 0;
  for (int c = 0; c < 8; ++c) {
    row0 += std::abs(tok_partial.at({0, c}));
    row2 += std::abs(tok_partial.at({2, c}));
    row3 += std::abs(tok_partial.at({3, c}));
  }
  CHECK(row0 > 1e-9);
  CHECK(row2 == 0.0);
  CHECK(row3 == 0.0);
}

TEST_CASE("permuting map polylines permutes scene tokens identically") {
  Rng rng(9);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);
  Scenario s = example_scene(5);
  EncodedScene enc = encode_inputs(s, bank);

  Scenario p = s;
  std::swap(p.map[0], p.map[2]);  // lane0 <-> lane2
  EncodedScene enc_p = encode_inputs(p, bank);

  for (int c = 0; c < 8; ++c) {
    CHECK(enc_p.scene_tokens.at({0, c}) == enc.scene_tokens.at({2, c}));
    CHECK(enc_p.scene_tokens.at({2, c}) == enc.scene_tokens.at({0, c}));
    CHECK(enc_p.scene_tokens.at({1, c}) == enc.scene_tokens.at({1, c}));
  }
}

TEST_CASE("raw feature schemas") {
  SUBCASE("agent: deltas, heading trig, speed, one-hot") {
    Agent a = straight_agent("v", Category::vehicle, 4, 1.0, 2.0, 3.0, 4.0);
    Tensor f = agent_raw_features(a);
    CHECK(f.shape() == Shape{4, 8});
    CHECK(f.at({0, 0}) == 0.0);  // no previous step
    CHECK(f.at({1, 0}) == doctest::Approx(0.3));
    CHECK(f.at({1, 1}) == doctest::Approx(0.4));
    double h = std::atan2(4.0, 3.0);
    CHECK(f.at({2, 2}) == doctest::Approx(std::cos(h)));
    CHECK(f.at({2, 3}) == doctest::Approx(std::sin(h)));
    CHECK(f.at({2, 4}) == doctest::Approx(5.0));  // hypot(3,4)
    CHECK(f.at({2, 5}) == 1.0);
    CHECK(f.at({2, 6}) == 0.0);
    CHECK(f.at({2, 7}) == 0.0);

    Agent p = straight_agent("p", Category::pedestrian, 3, 0, 0, 1, 0);
    Tensor fp = agent_raw_features(p);
    CHECK(fp.at({1, 5}) == 0.0);
    CHECK(fp.at({1, 7}) == 1.0);

    // delta needs two consecutive observed steps
    Agent gap = straight_agent("g", Category::vehicle, 4, 0, 0, 2, 0);
    gap.states[1] = AgentState{};
    gap.states[1].timestep = 1;
    Tensor fg = agent_raw_features(gap);
    for (int c = 0; c < 8; ++c) CHECK(fg.at({1, c}) == 0.0);  // invalid row
    CHECK(fg.at({2, 0}) == 0.0);                              // no valid predecessor
    CHECK(fg.at({3, 0}) == doctest::Approx(0.2));
  }

  SUBCASE("traffic light: position plus state one-hot") {
    Polyline l;
    l.id = "tl";
    l.category = Category::traffic_light;
    l.points.push_back({7.0, -3.0, 0.0, 1.0, 2.0});
    Tensor f = light_raw_features(l, 3);
    CHECK(f.shape() == Shape{3, 8});
    for (int t = 0; t < 3; ++t) {
      CHECK(f.at({t, 0}) == 7.0);
      CHECK(f.at({t, 1}) == -3.0);
    }
    CHECK(f.at({0, 4}) == 1.0);  // unknown
    CHECK(f.at({1, 2}) == 1.0);  // red
    CHECK(f.at({2, 3}) == 1.0);  // green
    CHECK(f.at({0, 2}) == 0.0);
    CHECK(f.at({2, 2}) == 0.0);
    for (int t = 0; t < 3; ++t)
      for (int c = 5; c < 8; ++c) CHECK(f.at({t, c}) == 0.0);

    CHECK_THROWS_AS(light_raw_features(l, 5), ValidationError);
  }
}

TEST_CASE("parameter naming and the joint ablation delta") {
  const int d = 16;
  Rng rng(10);
  EmbedderBank joint = make_embedder_bank({.d = d}, rng);
  EmbedderBank split = make_embedder_bank({.d = d, .joint = false}, rng);

  ParamStore sj, ss;
  register_embedder_params(joint, sj);
  register_embedder_params(split, ss);

  CHECK(sj.has("embed.joint.l1.W"));
  CHECK(sj.has("embed.fusion.W"));
  CHECK(sj.has("embed.vehicle.l2.norm.gain"));
  CHECK(!sj.has("embed.pedestrian.l1.W"));
  CHECK(!sj.has("embed.traffic_light.l1.W"));

  CHECK(ss.has("embed.pedestrian.l1.W"));
  CHECK(ss.has("embed.traffic_light.l1.W"));
  CHECK(!ss.has("embed.joint.l1.W"));
  CHECK(!ss.has("embed.fusion.W"));

  // joint mode trades two 8-wide embedders for one plus the fusion layer:
  // fusion (2d*d + 3d) minus one embedder (8d + d*d + 6d) = d*d - 11d
  CHECK(sj.total_params() - ss.total_params() == d * d - 11 * d);
}

TEST_CASE("unknown category is a routing error") {
  Rng rng(11);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);
  CHECK_THROWS_WITH_AS(
      embed_category(Tensor::zeros({2, 8}), static_cast<Category>(99), bank),
      doctest::Contains("no embedder"), ValidationError);
}

TEST_CASE("bank construction and encoding are deterministic") {
  Rng r1(12), r2(12);
  EmbedderBank b1 = make_embedder_bank({.d = 8}, r1);
  EmbedderBank b2 = make_embedder_bank({.d = 8}, r2);
  CHECK(tensors_equal(b1.joint.W1, b2.joint.W1));
  CHECK(tensors_equal(b1.fusion.W, b2.fusion.W));
  CHECK(tensors_equal(b1.independent.at(Category::lane).W2,
                      b2.independent.at(Category::lane).W2));

  Scenario s = example_scene(6);
  EncodedScene e1 = encode_inputs(s, b1);
  EncodedScene e2 = encode_inputs(s, b1);
  CHECK(tensors_equal(e1.scene_tokens, e2.scene_tokens));
  for (size_t i = 0; i < e1.traffic_tokens.size(); ++i)
    CHECK(tensors_equal(e1.traffic_tokens[i], e2.traffic_tokens[i]));
}

TEST_CASE("traffic stream with a missing counterpart uses zero context") {
  Rng rng(13);
  EmbedderBank bank = make_embedder_bank({.d = 8}, rng);

  Scenario s = example_scene(5);
  s.map.pop_back();  // drop the light; pedestrian remains
  validate_scenario(s);
  EncodedScene enc = encode_inputs(s, bank);
  REQUIRE(enc.traffic_tokens.size() == 1);
  CHECK(enc.traffic_tokens[0].shape() == Shape{5, 8});

  Scenario s2 = example_scene(5);
  s2.agents.erase(s2.agents.begin() + 2);  // drop the pedestrian; light remains
  validate_scenario(s2);
  EncodedScene enc2 = encode_inputs(s2, bank);
  REQUIRE(enc2.traffic_tokens.size() == 1);

  // with no peds and no lights the stream is empty
  Scenario s3 = s2;
  s3.map.pop_back();
  validate_scenario(s3);
  CHECK(encode_inputs(s3, bank).traffic_tokens.empty());
}

}  // TEST_SUITE
