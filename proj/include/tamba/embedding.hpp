#pragma once

#include <map>
#include <vector>

#include "tamba/checkpoint.hpp"
#include "tamba/scenario.hpp"
#include "tamba/tensor.hpp"

namespace tamba {

struct EmbedderConfig {
  int d = 32;
  bool joint = true;  // shared pedestrian/traffic-light embedder plus fusion
  int max_len = 512;  // positional table capacity

  friend bool operator==(const EmbedderConfig&, const EmbedderConfig&) = default;
};

// Raw feature width per category. Dynamic agents and traffic lights share one
// width so the joint embedder can serve both streams.
int raw_dim(Category c);

// Per-step agent features: [dx, dy, cos h, sin h, speed, one-hot category].
// Unobserved steps are zero rows; position deltas need two consecutive
// observed steps.
Tensor agent_raw_features(const Agent& a);
// Per-step light features: [x, y, red, green, unknown, 0, 0, 0].
Tensor light_raw_features(const Polyline& light, int observed);
// Per-point map features: [x, y].
Tensor polyline_raw_features(const Polyline& p);
std::vector<double> agent_valid_mask(const Agent& a);

// Sinusoidal rows: even channels sin(pos / 10000^(c/width)), odd channels the
// matching cosine.
Tensor positional_table(int len, int width);
// Adds the table slice to x (L, w). ConfigError when L exceeds max_len.
Tensor positional_encode(const Tensor& x, int max_len);

struct Embedder {
  Tensor W1, b1, g1, n1;  // affine -> gelu -> norm
  Tensor W2, b2, g2, n2;
};

struct FusionLayer {
  Tensor W, b, gain, bias;  // concat on features -> affine -> gelu -> norm
};

struct EmbedderBank {
  EmbedderConfig cfg;
  std::map<Category, Embedder> independent;
  Embedder joint;      // pedestrian/traffic-light shared path (joint mode)
  FusionLayer fusion;  // joint mode only
};

EmbedderBank make_embedder_bank(const EmbedderConfig& cfg, Rng& rng);
void register_embedder_params(const EmbedderBank& bank, ParamStore& store);

// Two-layer embedder for the category; pedestrian and traffic_light route to
// the shared parameters in joint mode. Rows where mask is 0 come out zero.
Tensor embed_category(const Tensor& x, Category c, const EmbedderBank& bank,
                      const std::vector<double>& mask = {});

// Cross-category fusion: pedestrian-side features in the first slot,
// traffic-light-side features in the second.
Tensor fuse_joint(const Tensor& ped, const Tensor& tl, const EmbedderBank& bank);

struct EncodedScene {
  // Vehicles and motorcycles, in scenario order; each (L, d).
  std::vector<Tensor> agent_tokens;
  std::vector<std::vector<double>> agent_mask;
  std::vector<int> agent_index;  // into scenario.agents
  std::vector<Category> agent_category;

  // One pooled row per static polyline, (n_scene, d).
  Tensor scene_tokens;
  std::vector<int> scene_index;  // into scenario.map

  // Traffic-control stream: pedestrians (agent order) then lights (map
  // order); each (L, d).
  std::vector<Tensor> traffic_tokens;
  std::vector<std::vector<double>> traffic_mask;

  int L = 0;
};

EncodedScene encode_inputs(const Scenario& s, const EmbedderBank& bank);

}  // namespace tamba
