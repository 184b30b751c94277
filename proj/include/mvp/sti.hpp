#pragma once

// Semantic-tailored interaction stages and the progressive pyramid built
// from them.
//
// One stage takes visual tokens X (T_n x C) and a text token q (1 x C):
//
//   temporal relation   X^ = [q; X]
//                       X. = X^ + MSA(LN(X^))
//                       X- = X. + FFN(LN(X.))          FFN = W2 gelu(W1 .)
//                       returns X- rows 1.., q- = row 0
//   channel correction  p  = MLP([mean_rows(X-), q-])  MLP = FC relu FC
//                       X_out[t] = X-[t] + p
//
// Between stages the progressive connection halves the token count:
//
//   X_in' = Linear(PairMean(X_out) + PairPool_w(X_in))
//
// where PairPool_w is a softmax-normalized learned 2-tap combination of
// adjacent token pairs. Stage n+1 reads the text token q- of stage n.

#include <cstdint>
#include <string>
#include <vector>

#include "mvp/autodiff.hpp"

namespace mvp {

struct ModelConfig {
  std::size_t frames = 8;       // T, tokens entering stage 1
  std::size_t channels = 32;    // C
  std::size_t heads = 2;        // H
  std::size_t levels = 3;       // N, velocity scales
  std::size_t ffn_dim = 0;      // 0 selects 4 * C
  std::size_t mlp_dim = 0;      // 0 selects C / 2

  /// Copy with the 0 placeholders replaced by their defaults.
  ModelConfig resolved() const;
  /// Throws ConfigError when H does not divide C or when T is not divisible
  /// by 2^(N-1).
  void validate() const;
  std::size_t head_dim() const { return channels / heads; }
  /// Token count at velocity scale n (1-based).
  std::size_t tokens_at(std::size_t n) const { return frames >> (n - 1); }
};

/// Weights of one interaction stage.
struct StiParams {
  std::vector<Param> query_proj;  // per head, C x d
  std::vector<Param> key_proj;
  std::vector<Param> value_proj;
  Param attn_out;                 // (H d) x C
  Param ln_attn_gain, ln_attn_bias;
  Param ln_ffn_gain, ln_ffn_bias;
  Param ffn_in, ffn_in_bias;      // C x C_ff
  Param ffn_out, ffn_out_bias;    // C_ff x C
  Param mlp_in, mlp_in_bias;      // 2C x C_mlp
  Param mlp_out, mlp_out_bias;    // C_mlp x C

  void collect(std::vector<Param*>& out);
  void collect(std::vector<const Param*>& out) const;
};

/// Weights of the connection from stage n to stage n+1.
struct ConnectParams {
  Param pool_logits;   // 1 x 2, softmax-normalized pair weights
  Param merge;         // C x C
  Param merge_bias;    // 1 x C

  void collect(std::vector<Param*>& out);
  void collect(std::vector<const Param*>& out) const;
};

struct ModelParams {
  ModelConfig config;
  std::vector<StiParams> stages;       // N entries
  std::vector<ConnectParams> connects; // N - 1 entries
  Param query_token;                   // 1 x C, stands in for class text
  Param alpha_logits;                  // 1 x N, used when fusion is learned

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  void zero_grads();
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases, unit
/// layer-norm gains, zero pool and fusion logits.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Every trainable weight zero, layer norms at (gain 1, bias 0).
ModelParams zero_model(const ModelConfig& config);

struct StageTokens {
  Var tokens;  // T_n x C
  Var text;    // 1 x C
};

StageTokens temporal_relation(Var x_in, Var q_in, const StiParams& p);
Var channel_correction(Var x_bar, Var q_bar, const StiParams& p);
/// Requires an even, nonzero token count.
Var progressive_connect(Var x_out, Var x_in, const ConnectParams& p);

/// Pyramid levels recorded on a tape; level n-1 holds scale n.
struct PyramidVars {
  std::vector<StageTokens> levels;
};

struct PyramidLevel {
  Tensor tokens;
  Tensor text;
};

struct VelocityPyramid {
  std::vector<PyramidLevel> levels;

  std::size_t scales() const { return levels.size(); }
};

PyramidVars run_psti(Var frames, Var text, const ModelParams& model);

/// Text input of the query branch, bound as a leaf on the frames' tape.
Var query_text(Tape& tape, const ModelParams& model);

VelocityPyramid to_pyramid(const PyramidVars& vars);

/// Convenience forward pass on plain tensors.
VelocityPyramid run_psti(const Tensor& frames, const Tensor& text,
                         const ModelParams& model);
VelocityPyramid run_psti_query(const Tensor& frames, const ModelParams& model);

}  // namespace mvp
