#include "tamba/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tamba {

namespace {

Tensor init_proj(int64_t d, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(d));
  return rand_uniform({d, d}, rng, -s, s, true);
}

std::vector<BlockParams> make_stack(const EncoderConfig& cfg, Rng& rng) {
  std::vector<BlockParams> stack;
  for (int i = 0; i < cfg.depth; ++i)
    stack.push_back(make_block(cfg.kind, cfg.block, rng));
  return stack;
}

Tensor run_stack(Tensor x, const std::vector<BlockParams>& stack,
                 const std::vector<double>* mask) {
  for (const BlockParams& b : stack) {
    if (mask) x = mask_rows(x, *mask);
    x = block_forward(x, b);
  }
  if (mask) x = mask_rows(x, *mask);
  return x;
}

Tensor last_row(const Tensor& x) { return slice_rows(x, x.rows() - 1, 1); }

bool all_zero(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0) return false;
  return true;
}

}  // namespace

EncoderParams make_encoder(const EncoderConfig& cfg, Rng& rng) {
  if (cfg.depth < 1) throw ConfigError("encoder stacks need depth >= 1");
  EncoderParams p;
  p.cfg = cfg;
  p.temporal = make_stack(cfg, rng);
  p.scene = make_stack(cfg, rng);
  p.traffic = make_stack(cfg, rng);
  const int64_t d = cfg.block.d;
  p.scene_cross = {init_proj(d, rng), init_proj(d, rng), init_proj(d, rng)};
  p.traffic_cross = {init_proj(d, rng), init_proj(d, rng), init_proj(d, rng)};
  double s = 1.0 / std::sqrt(static_cast<double>(3 * d));
  p.W_mem = rand_uniform({3 * d, d}, rng, -s, s, true);
  p.b_mem = Tensor::zeros({d}, true);
  return p;
}

void register_encoder_params(const EncoderParams& p, ParamStore& store) {
  auto put_stack = [&](const std::vector<BlockParams>& stack, const std::string& name) {
    for (size_t i = 0; i < stack.size(); ++i)
      register_block_params(stack[i], store,
                            "encoder." + name + ".block" + std::to_string(i));
  };
  put_stack(p.temporal, "temporal");
  put_stack(p.scene, "scene");
  put_stack(p.traffic, "traffic");
  auto put_cross = [&](const CrossAttention& c, const std::string& name) {
    store.add("encoder." + name + ".cross.Wq", c.Wq);
    store.add("encoder." + name + ".cross.Wk", c.Wk);
    store.add("encoder." + name + ".cross.Wv", c.Wv);
  };
  put_cross(p.scene_cross, "scene");
  put_cross(p.traffic_cross, "traffic");
  store.add("encoder.memory_proj.W", p.W_mem);
  store.add("encoder.memory_proj.b", p.b_mem);
}

std::vector<Tensor> encode_temporal(const std::vector<Tensor>& agent_tokens,
                                    const std::vector<std::vector<double>>& masks,
                                    const EncoderParams& p) {
  if (agent_tokens.size() != masks.size())
    throw DimensionError("encode_temporal: tokens and masks disagree");
  std::vector<Tensor> out;
  out.reserve(agent_tokens.size());
  for (size_t i = 0; i < agent_tokens.size(); ++i)
    out.push_back(run_stack(agent_tokens[i], p.temporal, &masks[i]));
  return out;
}

Tensor cross_weights(const Tensor& queries, const Tensor& keys,
                     const CrossAttention& c) {
  if (keys.rows() < 1)
    throw ValidationError("cross attention needs at least one key element");
  if (queries.cols() != c.Wq.dim(0) || keys.cols() != c.Wk.dim(0))
    throw DimensionError("cross attention width mismatch");
  Tensor q = matmul(queries, c.Wq);
  Tensor k = matmul(keys, c.Wk);
  return softmax(matmul_nt(q, k), -1);
}

Tensor cross_attend(const Tensor& queries, const Tensor& keys,
                    const CrossAttention& c) {
  return matmul(cross_weights(queries, keys, c), matmul(keys, c.Wv));
}

Tensor encode_scene_cross(const Tensor& agent_summary, const Tensor& scene_tokens,
                          const EncoderParams& p) {
  if (scene_tokens.rows() < 1)
    throw ValidationError("scene cross-attention needs at least one scene element");
  return cross_attend(agent_summary, scene_tokens, p.scene_cross);
}

Tensor encode_traffic_cross(const Tensor& dyn_summary, const Tensor& traffic_summary,
                            const EncoderParams& p) {
  if (!traffic_summary.defined() || traffic_summary.rows() == 0)
    return Tensor::zeros({dyn_summary.rows(), dyn_summary.cols()});
  return cross_attend(dyn_summary, traffic_summary, p.traffic_cross);
}

namespace {
uint64_t g_scene_memory_builds = 0;
}

uint64_t scene_memory_build_count() { return g_scene_memory_builds; }
void reset_scene_memory_build_count() { g_scene_memory_builds = 0; }

SceneMemory build_scene_memory(const EncodedScene& enc, const EncoderParams& p) {
  ++g_scene_memory_builds;
  if (enc.agent_tokens.empty())
    throw ValidationError("scene memory needs at least one dynamic agent");

  SceneMemory mem;
  mem.temporal_steps = encode_temporal(enc.agent_tokens, enc.agent_mask, p);

  std::vector<Tensor> summaries;
  summaries.reserve(mem.temporal_steps.size());
  for (const Tensor& z : mem.temporal_steps) summaries.push_back(last_row(z));
  mem.z_time = concat_rows(summaries);

  if (enc.scene_tokens.rows() < 1)
    throw ValidationError("scene cross-attention needs at least one scene element");
  std::vector<Tensor> scene_rows;
  for (int64_t j = 0; j < enc.scene_tokens.rows(); ++j)
    scene_rows.push_back(run_stack(slice_rows(enc.scene_tokens, j, 1), p.scene, nullptr));
  mem.z_scene = encode_scene_cross(mem.z_time, concat_rows(scene_rows), p);

  // An all-zero token sequence is a fully masked element; it must influence
  // nothing, so it is treated exactly like an absent one.
  std::vector<Tensor> tc_rows;
  for (size_t k = 0; k < enc.traffic_tokens.size(); ++k) {
    if (all_zero(enc.traffic_tokens[k])) continue;
    tc_rows.push_back(last_row(
        run_stack(enc.traffic_tokens[k], p.traffic, &enc.traffic_mask[k])));
  }
  mem.z_traffic =
      tc_rows.empty()
          ? Tensor::zeros({mem.z_time.rows(), mem.z_time.cols()})
          : encode_traffic_cross(mem.z_time, concat_rows(tc_rows), p);

  mem.memory = affine(concat_cols({mem.z_time, mem.z_scene, mem.z_traffic}),
                      p.W_mem, p.b_mem);
  return mem;
}

}  // namespace tamba
