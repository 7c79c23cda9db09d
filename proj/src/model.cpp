#include "tamba/model.hpp"

namespace tamba {

BlockConfig model_block_config(const ModelConfig& cfg) {
  BlockConfig b;
  b.d = cfg.d;
  b.n_state = cfg.n_state;
  b.m = cfg.d;
  b.d_ff = cfg.d_ff;
  b.conv_width = cfg.conv_width;
  return b;
}

EncoderConfig model_encoder_config(const ModelConfig& cfg) {
  EncoderConfig e;
  e.block = model_block_config(cfg);
  e.kind = cfg.kind;
  e.depth = cfg.depth;
  return e;
}

DecoderConfig model_decoder_config(const ModelConfig& cfg) {
  DecoderConfig d;
  d.block = model_block_config(cfg);
  d.K = cfg.K;
  d.scorer_hidden = cfg.scorer_hidden;
  d.b_min = cfg.b_min;
  return d;
}

TambaModel make_model(const ModelConfig& cfg, uint64_t seed) {
  TambaModel m;
  m.cfg = cfg;
  Rng rng(seed);
  EmbedderConfig ec;
  ec.d = cfg.d;
  ec.joint = cfg.joint;
  ec.max_len = cfg.max_len;
  m.bank = make_embedder_bank(ec, rng);
  m.encoder = make_encoder(model_encoder_config(cfg), rng);
  m.decoder = make_decoder(model_decoder_config(cfg), rng);
  register_embedder_params(m.bank, m.params);
  register_encoder_params(m.encoder, m.params);
  register_decoder_params(m.decoder, m.params);
  return m;
}

LocalPrediction predict_local(const TambaModel& m, const Scenario& s,
                              const std::string& target_id) {
  validate_scenario(s);
  const Agent* target = s.find_agent(target_id);
  if (!target) throw ValidationError("unknown target '" + target_id + "'");
  if (target->category != Category::vehicle &&
      target->category != Category::motorcycle)
    throw ValidationError("target '" + target_id +
                          "' is not in the dynamic agent stream; only vehicle "
                          "and motorcycle targets are decoded");

  LocalPrediction lp;
  auto [local, tf] = to_agent_frame(s, target_id);
  lp.local = std::move(local);
  lp.tf = tf;

  EncodedScene enc = encode_inputs(lp.local, m.bank);
  lp.target_row = -1;
  for (size_t i = 0; i < enc.agent_index.size(); ++i)
    if (lp.local.agents[enc.agent_index[i]].id == target_id)
      lp.target_row = static_cast<int64_t>(i);
  if (lp.target_row < 0)
    throw ValidationError("target '" + target_id + "' missing from agent stream");

  SceneMemory mem = build_scene_memory(enc, m.encoder);
  const int t_prime = s.horizon.future;
  lp.pred.target_id = target_id;
  lp.pred.proposals = decode_proposals(mem, lp.target_row, t_prime, m.decoder);
  Refinement rf = refine(mem, lp.pred.proposals, m.decoder);
  lp.pred.mu = std::move(rf.mu);
  lp.pred.b = std::move(rf.b);
  lp.pred.pi = rf.pi;
  lp.pred.scores = rf.scores;
  validate_prediction_set(lp.pred);
  return lp;
}

namespace {

Tensor rows_to_world(const Tensor& xy, const FrameTransform& tf) {
  std::vector<double> out(xy.size());
  for (int64_t t = 0; t < xy.rows(); ++t) {
    auto w = tf.invert(xy.at({t, 0}), xy.at({t, 1}));
    out[2 * t] = w[0];
    out[2 * t + 1] = w[1];
  }
  return Tensor::from_vec(xy.shape(), std::move(out));
}

}  // namespace

PredictionSet predict(const TambaModel& m, const Scenario& s,
                      const std::string& target_id) {
  LocalPrediction lp = predict_local(m, s, target_id);
  PredictionSet world;
  world.target_id = target_id;
  for (size_t k = 0; k < lp.pred.proposals.size(); ++k) {
    world.proposals.push_back(rows_to_world(lp.pred.proposals[k], lp.tf));
    world.mu.push_back(rows_to_world(lp.pred.mu[k], lp.tf));
    world.b.push_back(lp.pred.b[k].detach());  // per-axis scales, target frame
  }
  world.pi = lp.pred.pi.detach();
  world.scores = lp.pred.scores.detach();
  validate_prediction_set(world);
  return world;
}

Tensor ground_truth_tensor(const Scenario& s, const std::string& target_id) {
  auto it = s.ground_truth.find(target_id);
  if (it == s.ground_truth.end())
    throw ValidationError("scenario has no ground truth for target '" +
                          target_id + "'");
  std::vector<double> flat;
  flat.reserve(it->second.size() * 2);
  for (const auto& pt : it->second) {
    flat.push_back(pt[0]);
    flat.push_back(pt[1]);
  }
  return Tensor::from_vec({static_cast<int64_t>(it->second.size()), 2},
                          std::move(flat));
}

}  // namespace tamba
