#include "tamba/block.hpp"

#include <cmath>
#include <utility>

namespace tamba {

const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::tamba: return "tamba";
    case BlockKind::mamba: return "mamba";
    case BlockKind::attention: return "attention";
  }
  throw ConfigError("unknown block kind");
}

BlockKind block_kind_from_string(const std::string& name) {
  if (name == "tamba") return BlockKind::tamba;
  if (name == "mamba") return BlockKind::mamba;
  if (name == "attention") return BlockKind::attention;
  throw ConfigError("unknown block kind '" + name +
                    "' (expected tamba, mamba, or attention)");
}

namespace {

void check_config(const BlockConfig& c) {
  if (c.d < 1 || c.n_state < 1 || c.m < 1 || c.d_ff < 1 || c.conv_width < 1)
    throw ConfigError("block dimensions must be positive");
}

Tensor init_weight(int64_t fan_in, int64_t fan_out, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rand_uniform({fan_in, fan_out}, rng, -s, s, true);
}

Tensor init_bias(int64_t n) { return Tensor::zeros({n}, true); }

}  // namespace

BlockParams make_block(BlockKind kind, const BlockConfig& cfg, Rng& rng) {
  check_config(cfg);
  const int64_t d = cfg.d, n = cfg.n_state, m = cfg.m, w = cfg.conv_width;

  BlockParams p;
  p.kind = kind;
  p.cfg = cfg;

  p.W_in = init_weight(d, m, rng);
  p.b_in = init_bias(m);

  if (kind != BlockKind::attention) {
    double ks = 1.0 / std::sqrt(static_cast<double>(w));
    p.conv_k = rand_uniform({w, m}, rng, -ks, ks, true);
    p.conv_b = init_bias(m);
  }

  switch (kind) {
    case BlockKind::tamba:
      p.W_A = init_weight(m, n, rng);
      // start near sigmoid(1) so state carries across steps from the outset
      p.b_A = Tensor::full({n}, 1.0, true);
      p.W_B = init_weight(m, n * m, rng);
      p.b_B = init_bias(n * m);
      p.W_C = init_weight(m, m * n, rng);
      p.b_C = init_bias(m * n);
      p.W_D = init_weight(m, m * m, rng);
      p.b_D = init_bias(m * m);
      break;
    case BlockKind::mamba: {
      double s = 1.0 / std::sqrt(static_cast<double>(m));
      p.a_const = rand_uniform({n}, rng, 0.5, 1.5, true);
      p.B_const = rand_uniform({n * m}, rng, -s, s, true);
      p.C_const = rand_uniform({m * n}, rng, -s, s, true);
      p.D_const = rand_uniform({m * m}, rng, -s, s, true);
      break;
    }
    case BlockKind::attention:
      p.Wq = init_weight(m, m, rng);
      p.Wk = init_weight(m, m, rng);
      p.Wv = init_weight(m, m, rng);
      break;
  }

  p.W_out = init_weight(m, d, rng);
  p.b_out = init_bias(d);
  p.g1 = Tensor::full({d}, 1.0, true);
  p.n1 = init_bias(d);
  p.g2 = Tensor::full({d}, 1.0, true);
  p.n2 = init_bias(d);
  p.ffn_W1 = init_weight(d, cfg.d_ff, rng);
  p.ffn_b1 = init_bias(cfg.d_ff);
  p.ffn_W2 = init_weight(cfg.d_ff, d, rng);
  p.ffn_b2 = init_bias(d);
  return p;
}

void register_block_params(const BlockParams& p, ParamStore& store,
                           const std::string& prefix) {
  auto put = [&](const char* name, const Tensor& t) {
    if (t.defined()) store.add(prefix + "." + name, t);
  };
  put("in_proj.W", p.W_in);
  put("in_proj.b", p.b_in);
  put("conv.k", p.conv_k);
  put("conv.b", p.conv_b);
  put("ssm.W_A", p.W_A);
  put("ssm.b_A", p.b_A);
  put("ssm.W_B", p.W_B);
  put("ssm.b_B", p.b_B);
  put("ssm.W_C", p.W_C);
  put("ssm.b_C", p.b_C);
  put("ssm.W_D", p.W_D);
  put("ssm.b_D", p.b_D);
  put("ssm.A", p.a_const);
  put("ssm.B", p.B_const);
  put("ssm.C", p.C_const);
  put("ssm.D", p.D_const);
  put("attn.Wq", p.Wq);
  put("attn.Wk", p.Wk);
  put("attn.Wv", p.Wv);
  put("out_proj.W", p.W_out);
  put("out_proj.b", p.b_out);
  put("norm1.gain", p.g1);
  put("norm1.bias", p.n1);
  put("norm2.gain", p.g2);
  put("norm2.bias", p.n2);
  put("ffn.W1", p.ffn_W1);
  put("ffn.b1", p.ffn_b1);
  put("ffn.W2", p.ffn_W2);
  put("ffn.b2", p.ffn_b2);
}

namespace {

struct Emissions {
  Tensor a, B, C, D;  // each (L, ...) row-major per-step matrices
};

Emissions emit(const Tensor& u, const BlockParams& p) {
  Emissions e;
  const int64_t L = u.rows();
  if (p.kind == BlockKind::tamba) {
    e.a = sigmoid(affine(u, p.W_A, p.b_A));
    e.B = affine(u, p.W_B, p.b_B);
    e.C = affine(u, p.W_C, p.b_C);
    e.D = affine(u, p.W_D, p.b_D);
  } else {
    e.a = tile_rows(sigmoid(p.a_const), L);
    e.B = tile_rows(p.B_const, L);
    e.C = tile_rows(p.C_const, L);
    e.D = tile_rows(p.D_const, L);
  }
  return e;
}

Tensor ffn(const Tensor& y, const BlockParams& p) {
  return affine(gelu(affine(y, p.ffn_W1, p.ffn_b1)), p.ffn_W2, p.ffn_b2);
}

Tensor skeleton(const Tensor& x, const Tensor& inner_out, const BlockParams& p) {
  Tensor y = layer_norm(add(x, affine(inner_out, p.W_out, p.b_out)), p.g1, p.n1);
  return layer_norm(add(y, ffn(y, p)), p.g2, p.n2);
}

}  // namespace

Tensor ssm_apply(const Tensor& u, const BlockParams& p, const Tensor& h0) {
  if (p.kind == BlockKind::attention)
    throw ConfigError("ssm_apply: attention blocks have no recurrence");
  Emissions e = emit(u, p);
  return selective_scan(e.a, e.B, e.C, e.D, u, h0);
}

Tensor attention_weights(const Tensor& u, const BlockParams& p) {
  if (p.kind != BlockKind::attention)
    throw ConfigError("attention_weights: not an attention block");
  Tensor q = matmul(u, p.Wq);
  Tensor k = matmul(u, p.Wk);
  double inv = 1.0 / std::sqrt(static_cast<double>(p.cfg.m));
  return softmax(scale(matmul_nt(q, k), inv), -1);
}

Tensor attention_inner(const Tensor& u, const BlockParams& p) {
  return matmul(attention_weights(u, p), matmul(u, p.Wv));
}

Tensor block_forward(const Tensor& x, const BlockParams& p) {
  if (x.ndim() != 2 || x.dim(1) != p.cfg.d)
    throw DimensionError("block_forward: expected (L, " +
                         std::to_string(p.cfg.d) + "), got " + shape_str(x.shape()));
  Tensor u = affine(x, p.W_in, p.b_in);
  Tensor inner;
  if (p.kind == BlockKind::attention) {
    inner = attention_inner(u, p);
  } else {
    u = conv1d_depthwise_causal(u, p.conv_k, p.conv_b);
    inner = ssm_apply(u, p, Tensor::zeros({p.cfg.n_state}));
  }
  return skeleton(x, inner, p);
}

StreamState make_stream_state(const BlockParams& p, int64_t R) {
  if (p.kind == BlockKind::attention)
    throw ConfigError("streaming needs a recurrent block kind");
  StreamState st;
  st.h = Tensor::zeros({R, p.cfg.n_state});
  for (int j = 0; j + 1 < p.cfg.conv_width; ++j)
    st.conv_tail.push_back(Tensor::zeros({R, p.cfg.m}));
  return st;
}

Tensor block_step(const Tensor& x, const BlockParams& p, StreamState& st) {
  if (p.kind == BlockKind::attention)
    throw ConfigError("block_step: attention blocks cannot stream");
  const int64_t R = x.rows();
  const int w = p.cfg.conv_width;
  if (st.h.rows() != R)
    throw DimensionError("block_step: state holds " + std::to_string(st.h.rows()) +
                         " streams, input has " + std::to_string(R));

  Tensor u_pre = affine(x, p.W_in, p.b_in);

  // causal conv over the retained window; kernel row w-1 hits the newest token
  Tensor u = tile_rows(p.conv_b, R);
  for (int j = 0; j < w; ++j) {
    const Tensor& tok = j + 1 < w ? st.conv_tail[j] : u_pre;
    Tensor kj = reshape(slice_rows(p.conv_k, j, 1), {p.cfg.m});
    u = add(u, mul(tok, tile_rows(kj, R)));
  }
  if (w > 1) {
    st.conv_tail.erase(st.conv_tail.begin());
    st.conv_tail.push_back(u_pre);
  }

  Emissions e = emit(u, p);
  Tensor y = ssm_step_output(e.C, e.D, st.h, u);
  st.h = ssm_step_update(e.a, e.B, u, st.h);
  return skeleton(x, y, p);
}

FlopCount block_flops(const BlockParams& p, int64_t L) {
  return block_flops(p.kind, p.cfg, L);
}

FlopCount block_flops(BlockKind kind, const BlockConfig& cfg, int64_t L) {
  const int64_t d = cfg.d, n = cfg.n_state, m = cfg.m;
  const int64_t w = cfg.conv_width, dff = cfg.d_ff;
  FlopCount f;
  f.linear += flopmeter::affine(L, d, m);  // in_proj
  switch (kind) {
    case BlockKind::tamba:
      f.linear += flopmeter::conv_depthwise(L, m, w);
      f.linear += flopmeter::affine(L, m, n);
      f.linear += flopmeter::affine(L, m, n * m);
      f.linear += flopmeter::affine(L, m, m * n);
      f.linear += flopmeter::affine(L, m, m * m);
      f.linear += flopmeter::scan(L, n, m, m);
      break;
    case BlockKind::mamba:
      f.linear += flopmeter::conv_depthwise(L, m, w);
      f.linear += flopmeter::scan(L, n, m, m);
      break;
    case BlockKind::attention:
      f.linear += 3 * flopmeter::matmul(L, m, m);  // Q, K, V
      f.quadratic += flopmeter::matmul(L, m, L);   // scores
      f.quadratic += flopmeter::matmul(L, L, m);   // weighted sum
      break;
  }
  f.linear += flopmeter::affine(L, m, d);  // out_proj
  f.linear += flopmeter::affine(L, d, dff) + flopmeter::affine(L, dff, d);
  return f;
}

FlopCount block_step_flops(BlockKind kind, const BlockConfig& cfg, int64_t rows) {
  if (kind == BlockKind::attention)
    throw ConfigError("block_step_flops: attention blocks cannot stream");
  const int64_t d = cfg.d, n = cfg.n_state, m = cfg.m, dff = cfg.d_ff;
  const uint64_t R = static_cast<uint64_t>(rows);
  FlopCount f;
  f.linear += flopmeter::affine(R, d, m);  // in_proj; conv window is free
  if (kind == BlockKind::tamba) {
    f.linear += flopmeter::affine(R, m, n);
    f.linear += flopmeter::affine(R, m, n * m);
    f.linear += flopmeter::affine(R, m, m * n);
    f.linear += flopmeter::affine(R, m, m * m);
  }
  f.linear += flopmeter::scan_output(R, n, m, m);
  f.linear += flopmeter::scan_update(R, n, m);
  f.linear += flopmeter::affine(R, m, d);  // out_proj
  f.linear += flopmeter::affine(R, d, dff) + flopmeter::affine(R, dff, d);
  return f;
}

}  // namespace tamba
