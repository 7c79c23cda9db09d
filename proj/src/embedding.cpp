#include "tamba/embedding.hpp"

#include <cmath>

namespace tamba {

namespace {
constexpr int kDynRaw = 8;
}

int raw_dim(Category c) {
  return (is_dynamic(c) || c == Category::traffic_light) ? kDynRaw : 2;
}

Tensor agent_raw_features(const Agent& a) {
  const int L = static_cast<int>(a.states.size());
  std::vector<double> v(static_cast<size_t>(L) * kDynRaw, 0.0);
  double c0 = a.category == Category::vehicle ? 1.0 : 0.0;
  double c1 = a.category == Category::motorcycle ? 1.0 : 0.0;
  double c2 = a.category == Category::pedestrian ? 1.0 : 0.0;
  for (int t = 0; t < L; ++t) {
    const AgentState& st = a.states[t];
    if (!st.valid) continue;
    double* row = v.data() + static_cast<size_t>(t) * kDynRaw;
    if (t > 0 && a.states[t - 1].valid) {
      row[0] = st.x - a.states[t - 1].x;
      row[1] = st.y - a.states[t - 1].y;
    }
    row[2] = std::cos(st.heading);
    row[3] = std::sin(st.heading);
    row[4] = std::hypot(st.vx, st.vy);
    row[5] = c0;
    row[6] = c1;
    row[7] = c2;
  }
  return Tensor::from_vec({L, kDynRaw}, std::move(v));
}

Tensor light_raw_features(const Polyline& light, int observed) {
  if (light.category != Category::traffic_light || light.points.size() != 1 ||
      light.points[0].size() != static_cast<size_t>(2 + observed))
    throw ValidationError("light_raw_features: '" + light.id +
                          "' is not a valid traffic light polyline");
  const auto& pt = light.points[0];
  std::vector<double> v(static_cast<size_t>(observed) * kDynRaw, 0.0);
  for (int t = 0; t < observed; ++t) {
    double* row = v.data() + static_cast<size_t>(t) * kDynRaw;
    row[0] = pt[0];
    row[1] = pt[1];
    double s = pt[2 + t];
    row[2] = s == 1.0 ? 1.0 : 0.0;  // red
    row[3] = s == 2.0 ? 1.0 : 0.0;  // green
    row[4] = s == 0.0 ? 1.0 : 0.0;  // unknown
  }
  return Tensor::from_vec({observed, kDynRaw}, std::move(v));
}

Tensor polyline_raw_features(const Polyline& p) {
  const int n = static_cast<int>(p.points.size());
  std::vector<double> v(static_cast<size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    v[2 * i] = p.points[i][0];
    v[2 * i + 1] = p.points[i][1];
  }
  return Tensor::from_vec({n, 2}, std::move(v));
}

std::vector<double> agent_valid_mask(const Agent& a) {
  std::vector<double> m(a.states.size());
  for (size_t t = 0; t < a.states.size(); ++t) m[t] = a.states[t].valid ? 1.0 : 0.0;
  return m;
}

Tensor positional_table(int len, int width) {
  std::vector<double> v(static_cast<size_t>(len) * width);
  for (int pos = 0; pos < len; ++pos)
    for (int c = 0; c < width; ++c) {
      double expo = static_cast<double>(c - (c % 2)) / width;
      double angle = pos / std::pow(10000.0, expo);
      v[static_cast<size_t>(pos) * width + c] = (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from_vec({len, width}, std::move(v));
}

Tensor positional_encode(const Tensor& x, int max_len) {
  if (x.ndim() != 2) throw DimensionError("positional_encode: want (L, width)");
  const int L = static_cast<int>(x.rows());
  if (L > max_len)
    throw ConfigError("positional_encode: length " + std::to_string(L) +
                      " exceeds table capacity " + std::to_string(max_len));
  return add(x, positional_table(L, static_cast<int>(x.cols())));
}

namespace {

Embedder make_embedder(int d_raw, int d, Rng& rng) {
  Embedder e;
  double s1 = 1.0 / std::sqrt(static_cast<double>(d_raw));
  double s2 = 1.0 / std::sqrt(static_cast<double>(d));
  e.W1 = rand_uniform({d_raw, d}, rng, -s1, s1, true);
  e.b1 = Tensor::zeros({d}, true);
  e.g1 = Tensor::full({d}, 1.0, true);
  e.n1 = Tensor::zeros({d}, true);
  e.W2 = rand_uniform({d, d}, rng, -s2, s2, true);
  e.b2 = Tensor::zeros({d}, true);
  e.g2 = Tensor::full({d}, 1.0, true);
  e.n2 = Tensor::zeros({d}, true);
  return e;
}

void register_embedder(const Embedder& e, ParamStore& store, const std::string& prefix) {
  store.add(prefix + ".l1.W", e.W1);
  store.add(prefix + ".l1.b", e.b1);
  store.add(prefix + ".l1.norm.gain", e.g1);
  store.add(prefix + ".l1.norm.bias", e.n1);
  store.add(prefix + ".l2.W", e.W2);
  store.add(prefix + ".l2.b", e.b2);
  store.add(prefix + ".l2.norm.gain", e.g2);
  store.add(prefix + ".l2.norm.bias", e.n2);
}

const Embedder& route(const EmbedderBank& bank, Category c) {
  if (bank.cfg.joint && is_traffic_control(c)) return bank.joint;
  auto it = bank.independent.find(c);
  if (it == bank.independent.end())
    throw ValidationError(std::string("no embedder for category '") + to_string(c) + "'");
  return it->second;
}

Tensor run_embedder(const Tensor& x, const Embedder& e) {
  Tensor h = layer_norm(gelu(affine(x, e.W1, e.b1)), e.g1, e.n1);
  return layer_norm(gelu(affine(h, e.W2, e.b2)), e.g2, e.n2);
}

// Per-step mean of already-masked (L, d) tokens; steps with no contributors
// stay zero.
Tensor pool_other_category(const std::vector<Tensor>& toks,
                           const std::vector<std::vector<double>>& masks, int L, int d) {
  if (toks.empty()) return Tensor::zeros({L, d});
  Tensor acc = toks[0];
  for (size_t j = 1; j < toks.size(); ++j) acc = add(acc, toks[j]);
  std::vector<double> w(static_cast<size_t>(L) * d, 0.0);
  for (int t = 0; t < L; ++t) {
    double cnt = 0;
    for (const auto& m : masks) cnt += m[t];
    if (cnt > 0)
      for (int c = 0; c < d; ++c) w[static_cast<size_t>(t) * d + c] = 1.0 / cnt;
  }
  return mul(acc, Tensor::from_vec({L, d}, std::move(w)));
}

}  // namespace

EmbedderBank make_embedder_bank(const EmbedderConfig& cfg, Rng& rng) {
  if (cfg.d < 1) throw ConfigError("embedder width d must be >= 1");
  EmbedderBank bank;
  bank.cfg = cfg;
  const std::vector<Category> independent_cats = [&] {
    std::vector<Category> cats = {Category::vehicle, Category::motorcycle, Category::lane,
                                  Category::map_edge, Category::sidewalk,
                                  Category::traffic_sign};
    if (!cfg.joint) {
      cats.push_back(Category::pedestrian);
      cats.push_back(Category::traffic_light);
    }
    return cats;
  }();
  for (Category c : independent_cats)
    bank.independent.emplace(c, make_embedder(raw_dim(c), cfg.d, rng));
  if (cfg.joint) {
    bank.joint = make_embedder(kDynRaw, cfg.d, rng);
    double s = 1.0 / std::sqrt(static_cast<double>(2 * cfg.d));
    bank.fusion.W = rand_uniform({2 * cfg.d, cfg.d}, rng, -s, s, true);
    bank.fusion.b = Tensor::zeros({cfg.d}, true);
    bank.fusion.gain = Tensor::full({cfg.d}, 1.0, true);
    bank.fusion.bias = Tensor::zeros({cfg.d}, true);
  }
  return bank;
}

void register_embedder_params(const EmbedderBank& bank, ParamStore& store) {
  for (const auto& [cat, e] : bank.independent)
    register_embedder(e, store, std::string("embed.") + to_string(cat));
  if (bank.cfg.joint) {
    register_embedder(bank.joint, store, "embed.joint");
    store.add("embed.fusion.W", bank.fusion.W);
    store.add("embed.fusion.b", bank.fusion.b);
    store.add("embed.fusion.norm.gain", bank.fusion.gain);
    store.add("embed.fusion.norm.bias", bank.fusion.bias);
  }
}

Tensor embed_category(const Tensor& x, Category c, const EmbedderBank& bank,
                      const std::vector<double>& mask) {
  Tensor out = run_embedder(x, route(bank, c));
  if (!mask.empty()) out = mask_rows(out, mask);
  return out;
}

Tensor fuse_joint(const Tensor& ped, const Tensor& tl, const EmbedderBank& bank) {
  if (!bank.cfg.joint) throw ConfigError("fuse_joint: bank built without the joint path");
  Tensor h = affine(concat_cols({ped, tl}), bank.fusion.W, bank.fusion.b);
  return layer_norm(gelu(h), bank.fusion.gain, bank.fusion.bias);
}

EncodedScene encode_inputs(const Scenario& s, const EmbedderBank& bank) {
  EncodedScene enc;
  enc.L = s.horizon.observed;
  const int d = bank.cfg.d;

  std::vector<Tensor> ped_tokens;
  std::vector<std::vector<double>> ped_masks;
  std::vector<Tensor> light_tokens;
  std::vector<std::vector<double>> light_masks;

  for (size_t i = 0; i < s.agents.size(); ++i) {
    const Agent& a = s.agents[i];
    Tensor x = positional_encode(agent_raw_features(a), bank.cfg.max_len);
    std::vector<double> mask = agent_valid_mask(a);
    if (a.category == Category::pedestrian) {
      ped_tokens.push_back(embed_category(x, Category::pedestrian, bank, mask));
      ped_masks.push_back(std::move(mask));
    } else {
      enc.agent_tokens.push_back(embed_category(x, a.category, bank, mask));
      enc.agent_mask.push_back(std::move(mask));
      enc.agent_index.push_back(static_cast<int>(i));
      enc.agent_category.push_back(a.category);
    }
  }

  std::vector<Tensor> scene_rows;
  for (size_t i = 0; i < s.map.size(); ++i) {
    const Polyline& p = s.map[i];
    if (p.category == Category::traffic_light) {
      Tensor x = positional_encode(light_raw_features(p, enc.L), bank.cfg.max_len);
      light_tokens.push_back(embed_category(x, Category::traffic_light, bank));
      light_masks.push_back(std::vector<double>(enc.L, 1.0));
    } else {
      Tensor x = positional_encode(polyline_raw_features(p), bank.cfg.max_len);
      Tensor tok = embed_category(x, p.category, bank);
      const int n = static_cast<int>(tok.rows());
      Tensor w = Tensor::from_vec({1, n}, std::vector<double>(n, 1.0 / n));
      scene_rows.push_back(matmul(w, tok));  // masked mean over points
      enc.scene_index.push_back(static_cast<int>(i));
    }
  }
  enc.scene_tokens = scene_rows.empty() ? Tensor::zeros({0, d}) : concat_rows(scene_rows);

  if (bank.cfg.joint) {
    Tensor ped_ctx = pool_other_category(ped_tokens, ped_masks, enc.L, d);
    Tensor light_ctx = pool_other_category(light_tokens, light_masks, enc.L, d);
    for (size_t k = 0; k < ped_tokens.size(); ++k) {
      enc.traffic_tokens.push_back(
          mask_rows(fuse_joint(ped_tokens[k], light_ctx, bank), ped_masks[k]));
      enc.traffic_mask.push_back(ped_masks[k]);
    }
    for (size_t k = 0; k < light_tokens.size(); ++k) {
      enc.traffic_tokens.push_back(fuse_joint(ped_ctx, light_tokens[k], bank));
      enc.traffic_mask.push_back(light_masks[k]);
    }
  } else {
    for (size_t k = 0; k < ped_tokens.size(); ++k) {
      enc.traffic_tokens.push_back(ped_tokens[k]);
      enc.traffic_mask.push_back(ped_masks[k]);
    }
    for (size_t k = 0; k < light_tokens.size(); ++k) {
      enc.traffic_tokens.push_back(light_tokens[k]);
      enc.traffic_mask.push_back(light_masks[k]);
    }
  }

  return enc;
}

}  // namespace tamba
