#include "mvp/sti.hpp"

#include <cmath>

#include "mvp/error.hpp"
#include "mvp/rng.hpp"

namespace mvp {

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.ffn_dim == 0) c.ffn_dim = 4 * c.channels;
  if (c.mlp_dim == 0) c.mlp_dim = std::max<std::size_t>(1, c.channels / 2);
  return c;
}

void ModelConfig::validate() const {
  if (channels == 0 || heads == 0 || levels == 0 || frames == 0) {
    throw ConfigError("model dimensions must be positive (T=" +
                      std::to_string(frames) + ", C=" +
                      std::to_string(channels) + ", H=" +
                      std::to_string(heads) + ", N=" + std::to_string(levels) +
                      ")");
  }
  if (channels % heads != 0) {
    throw ConfigError(std::to_string(heads) + " heads do not evenly split C=" +
                      std::to_string(channels));
  }
  if (levels > 31 || frames % (std::size_t{1} << (levels - 1)) != 0) {
    throw ConfigError("T=" + std::to_string(frames) +
                      " frames is not divisible by 2^(N-1) for N=" +
                      std::to_string(levels) + " velocity scales");
  }
}

void StiParams::collect(std::vector<Param*>& out) {
  for (auto& p : query_proj) out.push_back(&p);
  for (auto& p : key_proj) out.push_back(&p);
  for (auto& p : value_proj) out.push_back(&p);
  for (Param* p : {&attn_out, &ln_attn_gain, &ln_attn_bias, &ln_ffn_gain,
                   &ln_ffn_bias, &ffn_in, &ffn_in_bias, &ffn_out,
                   &ffn_out_bias, &mlp_in, &mlp_in_bias, &mlp_out,
                   &mlp_out_bias}) {
    out.push_back(p);
  }
}

void StiParams::collect(std::vector<const Param*>& out) const {
  std::vector<Param*> tmp;
  const_cast<StiParams*>(this)->collect(tmp);
  out.insert(out.end(), tmp.begin(), tmp.end());
}

void ConnectParams::collect(std::vector<Param*>& out) {
  out.push_back(&pool_logits);
  out.push_back(&merge);
  out.push_back(&merge_bias);
}

void ConnectParams::collect(std::vector<const Param*>& out) const {
  out.push_back(&pool_logits);
  out.push_back(&merge);
  out.push_back(&merge_bias);
}

std::vector<Param*> ModelParams::params() {
  std::vector<Param*> out;
  for (auto& s : stages) s.collect(out);
  for (auto& c : connects) c.collect(out);
  out.push_back(&query_token);
  out.push_back(&alpha_logits);
  return out;
}

std::vector<const Param*> ModelParams::params() const {
  std::vector<const Param*> out;
  for (const auto& s : stages) s.collect(out);
  for (const auto& c : connects) c.collect(out);
  out.push_back(&query_token);
  out.push_back(&alpha_logits);
  return out;
}

void ModelParams::zero_grads() {
  for (Param* p : params()) p->zero_grad();
}

namespace {

// Fills every tensor through `weight(rows, cols)` for matrices; biases are
// zero and layer-norm gains one regardless of the filler.
template <class WeightFn>
ModelParams build_model(const ModelConfig& raw, WeightFn&& weight) {
  const ModelConfig cfg = raw.resolved();
  cfg.validate();
  const std::size_t c = cfg.channels, d = cfg.head_dim();
  auto zeros = [](std::size_t n) { return Tensor::zeros({1, n}); };
  auto ones = [](std::size_t n) { return Tensor::filled({1, n}, 1); };

  ModelParams m;
  m.config = cfg;
  for (std::size_t n = 1; n <= cfg.levels; ++n) {
    const std::string pre = "stage" + std::to_string(n) + ".";
    StiParams s;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::string hs = std::to_string(h);
      s.query_proj.emplace_back(pre + "attn.query" + hs, weight(c, d));
      s.key_proj.emplace_back(pre + "attn.key" + hs, weight(c, d));
      s.value_proj.emplace_back(pre + "attn.value" + hs, weight(c, d));
    }
    s.attn_out = Param(pre + "attn.out", weight(cfg.heads * d, c));
    s.ln_attn_gain = Param(pre + "ln_attn.gain", ones(c));
    s.ln_attn_bias = Param(pre + "ln_attn.bias", zeros(c));
    s.ln_ffn_gain = Param(pre + "ln_ffn.gain", ones(c));
    s.ln_ffn_bias = Param(pre + "ln_ffn.bias", zeros(c));
    s.ffn_in = Param(pre + "ffn.in", weight(c, cfg.ffn_dim));
    s.ffn_in_bias = Param(pre + "ffn.in_bias", zeros(cfg.ffn_dim));
    s.ffn_out = Param(pre + "ffn.out", weight(cfg.ffn_dim, c));
    s.ffn_out_bias = Param(pre + "ffn.out_bias", zeros(c));
    s.mlp_in = Param(pre + "mlp.in", weight(2 * c, cfg.mlp_dim));
    s.mlp_in_bias = Param(pre + "mlp.in_bias", zeros(cfg.mlp_dim));
    s.mlp_out = Param(pre + "mlp.out", weight(cfg.mlp_dim, c));
    s.mlp_out_bias = Param(pre + "mlp.out_bias", zeros(c));
    m.stages.push_back(std::move(s));
  }
  for (std::size_t n = 1; n < cfg.levels; ++n) {
    const std::string pre = "connect" + std::to_string(n) + ".";
    ConnectParams cp;
    cp.pool_logits = Param(pre + "pool_logits", zeros(2));
    cp.merge = Param(pre + "merge", weight(c, c));
    cp.merge_bias = Param(pre + "merge_bias", zeros(c));
    m.connects.push_back(std::move(cp));
  }
  m.query_token = Param("query_token", weight(1, c));
  m.alpha_logits = Param("alpha_logits", zeros(cfg.levels));
  return m;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return build_model(config, [&rng, &config](std::size_t rows, std::size_t cols) {
    // The query token has no fan-in; it is scaled like a C-input row.
    const std::size_t fan_in = rows == 1 ? config.channels : rows;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<Real> data(rows * cols);
    for (Real& v : data) v = static_cast<Real>(rng.uniform(-bound, bound));
    return Tensor({rows, cols}, std::move(data));
  });
}

ModelParams zero_model(const ModelConfig& config) {
  return build_model(config, [](std::size_t rows, std::size_t cols) {
    return Tensor::zeros({rows, cols});
  });
}

StageTokens temporal_relation(Var x_in, Var q_in, const StiParams& p) {
  Tape& tape = x_in.tape();
  const std::size_t c = p.attn_out.value.cols();
  if (x_in.cols() != c || q_in.cols() != c || q_in.rows() != 1) {
    throw DimensionError("temporal_relation: tokens " +
                         std::to_string(x_in.rows()) + "x" +
                         std::to_string(x_in.cols()) + " and text " +
                         std::to_string(q_in.rows()) + "x" +
                         std::to_string(q_in.cols()) + " for C=" +
                         std::to_string(c));
  }
  const std::size_t heads = p.query_proj.size();
  const Real inv_sqrt_d = 1 / std::sqrt(static_cast<Real>(
                                  p.query_proj.front().value.cols()));

  Var extended = concat_rows(q_in, x_in);
  Var normed = layer_norm(extended, tape.param(p.ln_attn_gain),
                          tape.param(p.ln_attn_bias));
  std::vector<Var> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    Var fq = matmul(normed, tape.param(p.query_proj[h]));
    Var fk = matmul(normed, tape.param(p.key_proj[h]));
    Var fv = matmul(normed, tape.param(p.value_proj[h]));
    Var attn = softmax_rows(scale(matmul(fq, transpose(fk)), inv_sqrt_d));
    head_out.push_back(matmul(attn, fv));
  }
  Var msa = matmul(concat_cols(head_out), tape.param(p.attn_out));
  Var interim = add(extended, msa);

  Var hidden = gelu(add_row(
      matmul(layer_norm(interim, tape.param(p.ln_ffn_gain),
                        tape.param(p.ln_ffn_bias)),
             tape.param(p.ffn_in)),
      tape.param(p.ffn_in_bias)));
  Var ffn = add_row(matmul(hidden, tape.param(p.ffn_out)),
                    tape.param(p.ffn_out_bias));
  Var enhanced = add(interim, ffn);

  const std::size_t rows = enhanced.rows();
  return {slice_rows(enhanced, 1, rows), slice_rows(enhanced, 0, 1)};
}

Var channel_correction(Var x_bar, Var q_bar, const StiParams& p) {
  Tape& tape = x_bar.tape();
  Var context = concat_cols(mean_rows(x_bar), q_bar);
  Var hidden = relu(add_row(matmul(context, tape.param(p.mlp_in)),
                            tape.param(p.mlp_in_bias)));
  Var modulation = add_row(matmul(hidden, tape.param(p.mlp_out)),
                           tape.param(p.mlp_out_bias));
  return add_row(x_bar, modulation);
}

Var progressive_connect(Var x_out, Var x_in, const ConnectParams& p) {
  Tape& tape = x_out.tape();
  if (x_out.rows() != x_in.rows() || x_out.cols() != x_in.cols()) {
    throw DimensionError("progressive_connect: stage output and input shapes "
                         "differ");
  }
  if (x_in.rows() < 2 || x_in.rows() % 2 != 0) {
    throw ContractError("progressive_connect: token count " +
                        std::to_string(x_in.rows()) +
                        " must be even and at least 2");
  }
  Var pool_weights = softmax_rows(tape.param(p.pool_logits));
  Var downsampled = pair_pool(x_in, pool_weights);
  Var merged = pair_pool(x_out, tape.constant(Tensor::from_rows({{0.5, 0.5}})));
  return add_row(matmul(add(merged, downsampled), tape.param(p.merge)),
                 tape.param(p.merge_bias));
}

PyramidVars run_psti(Var frames, Var text, const ModelParams& model) {
  const ModelConfig& cfg = model.config;
  if (frames.rows() != cfg.frames || frames.cols() != cfg.channels) {
    throw DimensionError("run_psti: frames are " +
                         std::to_string(frames.rows()) + "x" +
                         std::to_string(frames.cols()) + ", model expects " +
                         std::to_string(cfg.frames) + "x" +
                         std::to_string(cfg.channels));
  }
  PyramidVars out;
  Var x_in = frames;
  Var q_in = text;
  for (std::size_t n = 0; n < cfg.levels; ++n) {
    const StiParams& stage = model.stages[n];
    StageTokens rel = temporal_relation(x_in, q_in, stage);
    Var x_out = channel_correction(rel.tokens, rel.text, stage);
    out.levels.push_back({x_out, rel.text});
    if (n + 1 < cfg.levels) {
      x_in = progressive_connect(x_out, x_in, model.connects[n]);
      q_in = rel.text;
    }
  }
  return out;
}

Var query_text(Tape& tape, const ModelParams& model) {
  return tape.param(model.query_token);
}

VelocityPyramid to_pyramid(const PyramidVars& vars) {
  VelocityPyramid p;
  for (const auto& level : vars.levels) {
    p.levels.push_back({level.tokens.value(), level.text.value()});
  }
  return p;
}

VelocityPyramid run_psti(const Tensor& frames, const Tensor& text,
                         const ModelParams& model) {
  Tape tape;
  return to_pyramid(
      run_psti(tape.constant(frames), tape.constant(text), model));
}

VelocityPyramid run_psti_query(const Tensor& frames, const ModelParams& model) {
  Tape tape;
  return to_pyramid(
      run_psti(tape.constant(frames), query_text(tape, model), model));
}

}  // namespace mvp
