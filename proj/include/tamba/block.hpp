#pragma once

#include <string>
#include <vector>

#include "tamba/checkpoint.hpp"
#include "tamba/tensor.hpp"

namespace tamba {

enum class BlockKind { tamba, mamba, attention };

const char* to_string(BlockKind k);
BlockKind block_kind_from_string(const std::string& name);

struct BlockConfig {
  int d = 32;        // external width
  int n_state = 8;   // SSM state size
  int m = 32;        // internal width (control input and scan output)
  int d_ff = 64;     // feedforward hidden width
  int conv_width = 4;

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

// One sequence block: input projection, an inner sequence operator chosen by
// kind, output projection, residual + norm, feedforward + norm.
//
//   tamba:     conv -> scan with per-step A,B,C,D projected from the token
//   mamba:     conv -> scan with learned constant A,B,C,D
//   attention: single-head softmax(Q K^T / sqrt(m)) V
//
// The state transition diagonal passes through a sigmoid, so the recurrence
// is a contraction for any input.
struct BlockParams {
  BlockKind kind = BlockKind::tamba;
  BlockConfig cfg;

  Tensor W_in, b_in;      // d -> m
  Tensor conv_k, conv_b;  // (w, m), (m); recurrent kinds only

  Tensor W_A, b_A;  // m -> n          (tamba)
  Tensor W_B, b_B;  // m -> n*m
  Tensor W_C, b_C;  // m -> m*n
  Tensor W_D, b_D;  // m -> m*m

  Tensor a_const, B_const, C_const, D_const;  // (mamba)

  Tensor Wq, Wk, Wv;  // (m, m)        (attention)

  Tensor W_out, b_out;  // m -> d
  Tensor g1, n1, g2, n2;
  Tensor ffn_W1, ffn_b1, ffn_W2, ffn_b2;
};

BlockParams make_block(BlockKind kind, const BlockConfig& cfg, Rng& rng);
void register_block_params(const BlockParams& p, ParamStore& store,
                           const std::string& prefix);

// Full-sequence forward, x (L, d) -> (L, d). h0 = 0 at sequence start.
Tensor block_forward(const Tensor& x, const BlockParams& p);

// Inner operators, exposed for direct contract checks.
Tensor ssm_apply(const Tensor& u, const BlockParams& p, const Tensor& h0);
Tensor attention_weights(const Tensor& u, const BlockParams& p);  // (L, L)
Tensor attention_inner(const Tensor& u, const BlockParams& p);    // (L, m)

// Streaming interface: R parallel streams advance one step at a time with
// hidden state and the causal conv window threaded between calls. Matches
// block_forward exactly when driven row by row.
struct StreamState {
  Tensor h;                     // (R, n)
  std::vector<Tensor> conv_tail;  // w-1 previous pre-conv tokens, each (R, m)
};

StreamState make_stream_state(const BlockParams& p, int64_t R);
Tensor block_step(const Tensor& x, const BlockParams& p, StreamState& st);

// Analytic forward cost at the shared conventions (2 FLOPs per MAC,
// elementwise and normalization free). Attention's score and mixing terms are
// the quadratic part; everything else is linear in L.
struct FlopCount {
  uint64_t linear = 0;
  uint64_t quadratic = 0;
  uint64_t total() const { return linear + quadratic; }

  FlopCount& operator+=(const FlopCount& o) {
    linear += o.linear;
    quadratic += o.quadratic;
    return *this;
  }
  friend FlopCount operator+(FlopCount a, const FlopCount& b) { return a += b; }
  friend FlopCount operator*(uint64_t n, FlopCount f) {
    f.linear *= n;
    f.quadratic *= n;
    return f;
  }
};

FlopCount block_flops(BlockKind kind, const BlockConfig& cfg, int64_t L);
FlopCount block_flops(const BlockParams& p, int64_t L);
// Cost of one block_step over `rows` parallel streams. The retained-window
// conv is composed from elementwise ops, which the conventions price at zero.
FlopCount block_step_flops(BlockKind kind, const BlockConfig& cfg, int64_t rows);

}  // namespace tamba
