#pragma once

#include <string>

#include "tamba/decoder.hpp"
#include "tamba/generator.hpp"

namespace tamba {

struct ModelConfig {
  int d = 32;
  int n_state = 8;
  int d_ff = 64;
  int conv_width = 4;
  BlockKind kind = BlockKind::tamba;  // encoder stack kind (ablation switch)
  int depth = 2;
  bool joint = true;  // shared pedestrian / traffic-light embedding
  int K = 6;
  int scorer_hidden = 32;
  double b_min = 1e-3;
  int max_len = 512;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

BlockConfig model_block_config(const ModelConfig& cfg);
EncoderConfig model_encoder_config(const ModelConfig& cfg);
DecoderConfig model_decoder_config(const ModelConfig& cfg);

struct TambaModel {
  ModelConfig cfg;
  EmbedderBank bank;
  EncoderParams encoder;
  DecoderParams decoder;
  ParamStore params;  // every trainable tensor, by checkpoint name
};

TambaModel make_model(const ModelConfig& cfg, uint64_t seed);

struct LocalPrediction {
  PredictionSet pred;  // target frame
  FrameTransform tf;   // world pose of the target frame
  Scenario local;      // frame-transformed scenario, holds local ground truth
  int64_t target_row;  // agent row inside the scene memory
};

LocalPrediction predict_local(const TambaModel& m, const Scenario& s,
                              const std::string& target_id);
// Full pipeline with outputs mapped back to the source frame.
PredictionSet predict(const TambaModel& m, const Scenario& s,
                      const std::string& target_id);

// (future, 2) ground-truth waypoints of a target, from the given scenario.
Tensor ground_truth_tensor(const Scenario& s, const std::string& target_id);

}  // namespace tamba
