#pragma once

#include <string>
#include <vector>

#include "tamba/encoder.hpp"

namespace tamba {

struct DecoderConfig {
  BlockConfig block;       // decoder block always runs the selective kind
  int K = 6;               // number of modes / learned queries
  int scorer_hidden = 32;  // GRU width
  double b_min = 1e-3;     // floor on Laplace scales, meters

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

struct DecoderParams {
  DecoderConfig cfg;

  Tensor queries;        // (K, d) learned initial query set
  CrossAttention cross;  // queries over [memory | temporal steps | prev queries]
  BlockParams block;     // streamed across recursive steps
  Tensor W_head, b_head;  // d -> 2 waypoint delta

  Tensor W_rembed, b_rembed;  // 2 -> d waypoint embedding for refinement
  CrossAttention rcross;
  BlockParams rblock;
  Tensor W_rhead, b_rhead;  // d -> 4: location delta then raw scales

  Tensor W_sembed, b_sembed;  // 2 -> d waypoint embedding for scoring
  CrossAttention scross;
  Tensor Wz, Uz, bz;  // GRU gates, d -> h and h -> h
  Tensor Wr, Ur, br;
  Tensor Wh, Uh, bh;
  Tensor W_sout, b_sout;  // h -> 1
};

DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng);
void register_decoder_params(const DecoderParams& p, ParamStore& store);

// Rows every decoding stage attends to: fused per-agent memory followed by
// the retained per-step temporal encodings.
Tensor decoder_context(const SceneMemory& mem);

// State threaded across recursive decode steps; reset per target.
struct RecursiveState {
  Tensor q;         // (K, d) previous-step query features
  Tensor waypoint;  // (K, 2) accumulated position, target frame
  StreamState stream;
};

RecursiveState init_recursive_state(const SceneMemory& mem, int64_t target_row,
                                    const DecoderParams& p);
// One recursive step; returns the updated (K, 2) waypoints.
Tensor decode_step(const Tensor& context, RecursiveState& st, const DecoderParams& p);

// K proposal trajectories, each (T_prime, 2), accumulated from the target
// frame origin.
std::vector<Tensor> decode_proposals(const SceneMemory& mem, int64_t target_row,
                                     int t_prime, const DecoderParams& p);

Tensor score_proposals(const SceneMemory& mem, const std::vector<Tensor>& proposals,
                       const DecoderParams& p);  // (K)

struct Refinement {
  std::vector<Tensor> mu;  // K x (T', 2)
  std::vector<Tensor> b;   // K x (T', 2), strictly positive
  Tensor pi;               // (K) simplex
  Tensor scores;           // (K) raw
};

// Consumes stopped proposals plus the scene context; pi reuses the scorer on
// the live proposals, so confidence gradients can reach the proposal path.
Refinement refine(const SceneMemory& mem, const std::vector<Tensor>& proposals,
                  const DecoderParams& p);

struct PredictionSet {
  std::string target_id;
  std::vector<Tensor> proposals;  // K x (T', 2)
  std::vector<Tensor> mu;         // K x (T', 2)
  std::vector<Tensor> b;          // K x (T', 2)
  Tensor pi;                      // (K)
  Tensor scores;                  // (K)
};

void validate_prediction_set(const PredictionSet& ps);

void export_prediction_csv(const PredictionSet& ps, const std::string& path);
std::string prediction_summary_json(const PredictionSet& ps);

}  // namespace tamba
