#pragma once

#include <vector>

#include "tamba/block.hpp"
#include "tamba/embedding.hpp"

namespace tamba {

struct EncoderConfig {
  BlockConfig block;
  BlockKind kind = BlockKind::tamba;  // sequence-block kind for all three stacks
  int depth = 2;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Softmax mixture over key rows with projected dot-product logits. Used for
// the agent-to-scene and agent-to-traffic pathways; these stay explicit
// softmax attention no matter which block kind the stacks run.
struct CrossAttention {
  Tensor Wq, Wk, Wv;  // (d, d)
};

struct EncoderParams {
  EncoderConfig cfg;
  std::vector<BlockParams> temporal, scene, traffic;
  CrossAttention scene_cross, traffic_cross;
  Tensor W_mem, b_mem;  // 3d -> d fusion of the three contexts
};

EncoderParams make_encoder(const EncoderConfig& cfg, Rng& rng);
void register_encoder_params(const EncoderParams& p, ParamStore& store);

// Per-agent temporal encodings, one (L, d) tensor per agent. Masked steps are
// zeroed on the way into every block and on the way out.
std::vector<Tensor> encode_temporal(const std::vector<Tensor>& agent_tokens,
                                    const std::vector<std::vector<double>>& masks,
                                    const EncoderParams& p);

Tensor cross_weights(const Tensor& queries, const Tensor& keys,
                     const CrossAttention& c);  // (n_q, n_k), rows sum to 1
Tensor cross_attend(const Tensor& queries, const Tensor& keys,
                    const CrossAttention& c);

Tensor encode_scene_cross(const Tensor& agent_summary, const Tensor& scene_tokens,
                          const EncoderParams& p);
Tensor encode_traffic_cross(const Tensor& dyn_summary, const Tensor& traffic_summary,
                            const EncoderParams& p);

struct SceneMemory {
  Tensor z_time;     // (n_agents, d) temporal summary at the final step
  Tensor z_scene;    // (n_agents, d)
  Tensor z_traffic;  // (n_agents, d)
  Tensor memory;     // (n_agents, d) projected [z_time | z_scene | z_traffic]
  std::vector<Tensor> temporal_steps;  // per agent (L, d), decoder keys/values
};

SceneMemory build_scene_memory(const EncodedScene& enc, const EncoderParams& p);

// Times build_scene_memory ran since the last reset; lets callers assert the
// encoder executes once per target no matter how many modes are decoded.
uint64_t scene_memory_build_count();
void reset_scene_memory_build_count();

}  // namespace tamba
