#include "tamba/decoder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace tamba {

namespace {

Tensor init_w(int64_t in, int64_t out, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(in));
  return rand_uniform({in, out}, rng, -s, s, true);
}

CrossAttention make_cross(int64_t d, Rng& rng) {
  return {init_w(d, d, rng), init_w(d, d, rng), init_w(d, d, rng)};
}

void register_cross(const CrossAttention& c, ParamStore& store,
                    const std::string& prefix) {
  store.add(prefix + ".Wq", c.Wq);
  store.add(prefix + ".Wk", c.Wk);
  store.add(prefix + ".Wv", c.Wv);
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DecoderParams make_decoder(const DecoderConfig& cfg, Rng& rng) {
  if (cfg.K < 1) throw ConfigError("decoder needs K >= 1 query vectors");
  if (cfg.scorer_hidden < 1) throw ConfigError("scorer hidden width must be positive");
  if (cfg.b_min <= 0.0) throw ConfigError("scale floor must be positive");
  const int64_t d = cfg.block.d, h = cfg.scorer_hidden;

  DecoderParams p;
  p.cfg = cfg;
  p.queries = rand_uniform({cfg.K, d}, rng, -1.0, 1.0, true);
  p.cross = make_cross(d, rng);
  p.block = make_block(BlockKind::tamba, cfg.block, rng);
  p.W_head = init_w(d, 2, rng);
  p.b_head = Tensor::zeros({2}, true);

  p.W_rembed = init_w(2, d, rng);
  p.b_rembed = Tensor::zeros({d}, true);
  p.rcross = make_cross(d, rng);
  p.rblock = make_block(BlockKind::tamba, cfg.block, rng);
  p.W_rhead = init_w(d, 4, rng);
  p.b_rhead = Tensor::zeros({4}, true);

  p.W_sembed = init_w(2, d, rng);
  p.b_sembed = Tensor::zeros({d}, true);
  p.scross = make_cross(d, rng);
  p.Wz = init_w(d, h, rng);
  p.Uz = init_w(h, h, rng);
  p.bz = Tensor::zeros({h}, true);
  p.Wr = init_w(d, h, rng);
  p.Ur = init_w(h, h, rng);
  p.br = Tensor::zeros({h}, true);
  p.Wh = init_w(d, h, rng);
  p.Uh = init_w(h, h, rng);
  p.bh = Tensor::zeros({h}, true);
  p.W_sout = init_w(h, 1, rng);
  p.b_sout = Tensor::zeros({1}, true);
  return p;
}

void register_decoder_params(const DecoderParams& p, ParamStore& store) {
  store.add("decoder.queries", p.queries);
  register_cross(p.cross, store, "decoder.cross");
  register_block_params(p.block, store, "decoder.block");
  store.add("decoder.head.W", p.W_head);
  store.add("decoder.head.b", p.b_head);

  store.add("refine.embed.W", p.W_rembed);
  store.add("refine.embed.b", p.b_rembed);
  register_cross(p.rcross, store, "refine.cross");
  register_block_params(p.rblock, store, "refine.block");
  store.add("refine.head.W", p.W_rhead);
  store.add("refine.head.b", p.b_rhead);

  store.add("scorer.embed.W", p.W_sembed);
  store.add("scorer.embed.b", p.b_sembed);
  register_cross(p.scross, store, "scorer.cross");
  store.add("scorer.rnn.Wz", p.Wz);
  store.add("scorer.rnn.Uz", p.Uz);
  store.add("scorer.rnn.bz", p.bz);
  store.add("scorer.rnn.Wr", p.Wr);
  store.add("scorer.rnn.Ur", p.Ur);
  store.add("scorer.rnn.br", p.br);
  store.add("scorer.rnn.Wh", p.Wh);
  store.add("scorer.rnn.Uh", p.Uh);
  store.add("scorer.rnn.bh", p.bh);
  store.add("scorer.out.W", p.W_sout);
  store.add("scorer.out.b", p.b_sout);
}

Tensor decoder_context(const SceneMemory& mem) {
  std::vector<Tensor> rows = {mem.memory};
  for (const Tensor& t : mem.temporal_steps) rows.push_back(t);
  return concat_rows(rows);
}

RecursiveState init_recursive_state(const SceneMemory& mem, int64_t target_row,
                                    const DecoderParams& p) {
  if (target_row < 0 || target_row >= mem.memory.rows())
    throw ValidationError("decode target row " + std::to_string(target_row) +
                          " outside memory with " + std::to_string(mem.memory.rows()) +
                          " agents");
  const int64_t d = p.cfg.block.d, K = p.cfg.K;
  RecursiveState st;
  Tensor target = reshape(slice_rows(mem.memory, target_row, 1), {d});
  st.q = add(p.queries, tile_rows(target, K));
  st.waypoint = Tensor::zeros({K, 2});
  st.stream = make_stream_state(p.block, K);
  return st;
}

Tensor decode_step(const Tensor& context, RecursiveState& st, const DecoderParams& p) {
  Tensor ctx = concat_rows({context, st.q});
  Tensor attended = cross_attend(st.q, ctx, p.cross);
  Tensor y = block_step(attended, p.block, st.stream);
  Tensor delta = affine(y, p.W_head, p.b_head);
  st.waypoint = add(st.waypoint, delta);
  st.q = y;
  return st.waypoint;
}

std::vector<Tensor> decode_proposals(const SceneMemory& mem, int64_t target_row,
                                     int t_prime, const DecoderParams& p) {
  if (t_prime < 1) throw ConfigError("decode horizon must be at least one step");
  Tensor ctx = decoder_context(mem);
  RecursiveState st = init_recursive_state(mem, target_row, p);
  std::vector<Tensor> steps;  // T' entries, each (K, 2)
  steps.reserve(t_prime);
  for (int r = 0; r < t_prime; ++r) steps.push_back(decode_step(ctx, st, p));

  std::vector<Tensor> modes;
  modes.reserve(p.cfg.K);
  for (int k = 0; k < p.cfg.K; ++k) {
    std::vector<Tensor> rows;
    rows.reserve(t_prime);
    for (int r = 0; r < t_prime; ++r) rows.push_back(slice_rows(steps[r], k, 1));
    modes.push_back(concat_rows(rows));
  }
  return modes;
}

namespace {

// Cross-fused waypoint features for one trajectory, (T', d).
Tensor fuse_trajectory(const Tensor& traj, const Tensor& ctx, const Tensor& W_embed,
                       const Tensor& b_embed, const CrossAttention& cross) {
  return cross_attend(affine(traj, W_embed, b_embed), ctx, cross);
}

}  // namespace

Tensor score_proposals(const SceneMemory& mem, const std::vector<Tensor>& proposals,
                       const DecoderParams& p) {
  if (proposals.empty()) throw DimensionError("no proposals to score");
  const int64_t K = static_cast<int64_t>(proposals.size());
  const int64_t Tp = proposals[0].rows(), h = p.cfg.scorer_hidden;
  Tensor ctx = decoder_context(mem);

  std::vector<Tensor> fused;
  fused.reserve(K);
  for (const Tensor& traj : proposals)
    fused.push_back(fuse_trajectory(traj, ctx, p.W_sembed, p.b_sembed, p.scross));

  // gated recurrence over waypoints, all modes as parallel rows
  Tensor hid = Tensor::zeros({K, h});
  Tensor ones = Tensor::full({K, h}, 1.0);
  for (int64_t t = 0; t < Tp; ++t) {
    std::vector<Tensor> rows;
    rows.reserve(K);
    for (int64_t k = 0; k < K; ++k) rows.push_back(slice_rows(fused[k], t, 1));
    Tensor x = concat_rows(rows);
    Tensor z = sigmoid(add(affine(x, p.Wz, p.bz), matmul(hid, p.Uz)));
    Tensor r = sigmoid(add(affine(x, p.Wr, p.br), matmul(hid, p.Ur)));
    Tensor cand = tanh(add(affine(x, p.Wh, p.bh), matmul(mul(r, hid), p.Uh)));
    hid = add(mul(sub(ones, z), hid), mul(z, cand));
  }
  return reshape(tanh(affine(hid, p.W_sout, p.b_sout)), {K});
}

Refinement refine(const SceneMemory& mem, const std::vector<Tensor>& proposals,
                  const DecoderParams& p) {
  Refinement out;
  out.scores = score_proposals(mem, proposals, p);
  out.pi = softmax(out.scores, -1);

  Tensor ctx = decoder_context(mem);
  for (const Tensor& traj : proposals) {
    Tensor stopped = stop_gradient(traj);
    Tensor feat = fuse_trajectory(stopped, ctx, p.W_rembed, p.b_rembed, p.rcross);
    Tensor enc = block_forward(feat, p.rblock);
    Tensor head = affine(enc, p.W_rhead, p.b_rhead);
    out.mu.push_back(add(stopped, slice_cols(head, 0, 2)));
    out.b.push_back(add_const(softplus(slice_cols(head, 2, 2)), p.cfg.b_min));
  }
  return out;
}

void validate_prediction_set(const PredictionSet& ps) {
  const size_t K = ps.proposals.size();
  if (K == 0 || ps.mu.size() != K || ps.b.size() != K)
    throw DimensionError("prediction set with inconsistent mode count");
  if (ps.pi.size() != static_cast<int64_t>(K) ||
      ps.scores.size() != static_cast<int64_t>(K))
    throw DimensionError("prediction set score width mismatch");
  double total = 0.0;
  for (double v : ps.pi.data()) {
    if (!std::isfinite(v) || v < 0.0)
      throw NumericError("mixing coefficients must be finite and nonnegative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw NumericError("mixing coefficients sum to " + std::to_string(total));
  for (size_t k = 0; k < K; ++k) {
    for (double v : ps.mu[k].data())
      if (!std::isfinite(v)) throw NumericError("non-finite refined location");
    for (double v : ps.b[k].data())
      if (!(v > 0.0)) throw NumericError("Laplace scale must be strictly positive");
    for (double v : ps.proposals[k].data())
      if (!std::isfinite(v)) throw NumericError("non-finite proposal waypoint");
  }
}

void export_prediction_csv(const PredictionSet& ps, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << "mode,step,x,y,scale_x,scale_y,pi\n";
  for (size_t k = 0; k < ps.mu.size(); ++k) {
    const Tensor& mu = ps.mu[k];
    const Tensor& b = ps.b[k];
    for (int64_t t = 0; t < mu.rows(); ++t) {
      out << k << ',' << t << ',' << fmt_g17(mu.at({t, 0})) << ','
          << fmt_g17(mu.at({t, 1})) << ',' << fmt_g17(b.at({t, 0})) << ','
          << fmt_g17(b.at({t, 1})) << ',' << fmt_g17(ps.pi.data()[k]) << '\n';
    }
  }
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

std::string prediction_summary_json(const PredictionSet& ps) {
  nlohmann::ordered_json j;
  j["target"] = ps.target_id;
  j["modes"] = ps.mu.size();
  j["steps"] = ps.mu.empty() ? 0 : ps.mu[0].rows();
  j["scores"] = std::vector<double>(ps.scores.data().begin(), ps.scores.data().end());
  j["pi"] = std::vector<double>(ps.pi.data().begin(), ps.pi.data().end());
  return j.dump(1);
}

}  // namespace tamba
