#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcmr/errors.hpp"
#include "dcmr/rng.hpp"
#include "dcmr/tensor.hpp"

namespace dcmr {

// Dual cross-modal encoder: a pooled text query cross-attends over the frame
// embeddings of a video, once per text branch (English / multilingual), then
// FC + residual + layer norm. Branches never share parameters unless
// explicitly configured to.

struct FrameEmbeddings {
  std::string video_id;
  Tensor matrix;  // N_v x D_v, one row per frame

  FrameEmbeddings() = default;
  FrameEmbeddings(std::string id, Tensor m) : video_id(std::move(id)), matrix(std::move(m)) {
    if (matrix.rank() != 2)
      throw DimensionError("frame embeddings must be a rank-2 matrix, got " + shape_str(matrix.shape));
    check_finite(matrix, "frame embeddings");
  }
  int frame_count() const { return matrix.rows(); }
  int dim() const { return matrix.cols(); }
};

struct TextEmbedding {
  std::string caption_id;
  std::string language;  // ISO 639-1; "en" routes to branch E
  Tensor vector;         // rank-1, model dim

  TextEmbedding() = default;
  TextEmbedding(std::string id, std::string lang, Tensor v)
      : caption_id(std::move(id)), language(std::move(lang)), vector(std::move(v)) {
    if (vector.rank() != 1)
      throw DimensionError("text embedding must be a rank-1 vector, got " + shape_str(vector.shape));
    if (language.empty()) throw ContractError("text embedding requires a language code");
    check_finite(vector, "text embedding");
  }
  int dim() const { return vector.shape[0]; }
};

enum class Branch { English, Multilingual };

inline const char* branch_name(Branch b) { return b == Branch::English ? "e" : "m"; }

enum class Mode { Train, Eval };

struct DcmConfig {
  int model_dim = 512;
  int num_heads = 8;
  int fc_dim = 512;
  bool fc_two_layer = false;  // default: one affine model_dim -> model_dim
  int num_blocks = 1;
  double dropout_rate = 0.4;
  double ln_eps = 1e-5;

  bool use_dcm = true;          // false: mean-pooled frames + linear projection
  bool share_branches = false;  // true: branch M reuses branch E parameters
  bool route_en_to_m = false;   // true: English captions use the multilingual branch

  // Similarity options shared by training loss and retrieval scoring.
  bool sim_normalize = false;
  double sim_temperature = 1.0;
  bool sim_learnable_temp = false;

  int head_dim() const { return model_dim / num_heads; }

  void validate() const {
    if (model_dim < 1 || num_heads < 1 || fc_dim < 1 || num_blocks < 1)
      throw ConfigError("model-dim, num-heads, fc-dim and num-blocks must be positive");
    if (model_dim % num_heads != 0)
      throw ConfigError("model-dim " + std::to_string(model_dim) + " not divisible by num-heads " +
                        std::to_string(num_heads));
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout-rate must be in [0, 1)");
    if (!(ln_eps > 0.0)) throw ConfigError("ln-eps must be positive");
    if (!fc_two_layer && fc_dim != model_dim)
      throw ConfigError("single-layer FC requires fc-dim == model-dim (enable fc-two-layer otherwise)");
    if (!(sim_temperature > 0.0)) throw ConfigError("similarity temperature must be positive");
  }
};

struct BlockParams {
  Tensor w_q, w_k, w_v, w_o;   // model_dim x model_dim, applied as W * x
  Tensor fc_w, fc_b;           // single affine, or first layer when two-layer
  Tensor fc_w2, fc_b2;         // second layer (two-layer FC only)
  Tensor ln_gain, ln_bias;
};

struct BranchParams {
  std::vector<BlockParams> blocks;
};

struct DcmParams {
  BranchParams english;
  BranchParams multilingual;
  Tensor log_temp;  // used only when sim_learnable_temp is set
};

// Visits every learnable tensor in a fixed, checkpoint-stable order.
template <typename Params, typename Fn>
void for_each_param(Params& params, const DcmConfig& cfg, Fn&& fn) {
  auto visit_branch = [&](auto& branch, const std::string& prefix) {
    for (size_t b = 0; b < branch.blocks.size(); ++b) {
      auto& blk = branch.blocks[b];
      const std::string base = prefix + ".b" + std::to_string(b) + ".";
      fn(base + "w_q", blk.w_q);
      fn(base + "w_k", blk.w_k);
      fn(base + "w_v", blk.w_v);
      fn(base + "w_o", blk.w_o);
      fn(base + "fc_w", blk.fc_w);
      fn(base + "fc_b", blk.fc_b);
      if (cfg.fc_two_layer) {
        fn(base + "fc_w2", blk.fc_w2);
        fn(base + "fc_b2", blk.fc_b2);
      }
      fn(base + "ln_gain", blk.ln_gain);
      fn(base + "ln_bias", blk.ln_bias);
    }
  };
  visit_branch(params.english, "e");
  visit_branch(params.multilingual, "m");
  fn("log_temp", params.log_temp);
}

namespace detail {

inline Tensor xavier_uniform(int fan_out, int fan_in, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor w = Tensor::zeros({fan_out, fan_in});
  for (double& x : w.v) x = rng.next_uniform(-a, a);
  return w;
}

}  // namespace detail

// Glorot-uniform projection weights, zero biases, identity layer norm.
// Bit-deterministic per (config, seed); each tensor draws from its own stream.
inline DcmParams init_params(const DcmConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.model_dim;

  auto init_branch = [&](Branch which) {
    BranchParams branch;
    for (int b = 0; b < cfg.num_blocks; ++b) {
      BlockParams blk;
      auto stream = [&](const char* name) {
        return rng_stream(seed, hash_str(branch_name(which)), static_cast<std::uint64_t>(b), hash_str(name));
      };
      Rng rq = stream("w_q"), rk = stream("w_k"), rv = stream("w_v"), ro = stream("w_o");
      blk.w_q = detail::xavier_uniform(d, d, rq);
      blk.w_k = detail::xavier_uniform(d, d, rk);
      blk.w_v = detail::xavier_uniform(d, d, rv);
      blk.w_o = detail::xavier_uniform(d, d, ro);
      if (cfg.fc_two_layer) {
        Rng r1 = stream("fc_w"), r2 = stream("fc_w2");
        blk.fc_w = detail::xavier_uniform(cfg.fc_dim, d, r1);
        blk.fc_b = Tensor::zeros({cfg.fc_dim});
        blk.fc_w2 = detail::xavier_uniform(d, cfg.fc_dim, r2);
        blk.fc_b2 = Tensor::zeros({d});
      } else {
        Rng r1 = stream("fc_w");
        blk.fc_w = detail::xavier_uniform(d, d, r1);
        blk.fc_b = Tensor::zeros({d});
        blk.fc_w2 = Tensor::scalar(0.0);
        blk.fc_b2 = Tensor::scalar(0.0);
      }
      blk.ln_gain = Tensor::filled({d}, 1.0);
      blk.ln_bias = Tensor::zeros({d});
      branch.blocks.push_back(std::move(blk));
    }
    return branch;
  };

  DcmParams p;
  p.english = init_branch(Branch::English);
  p.multilingual = init_branch(Branch::Multilingual);
  p.log_temp = Tensor::scalar(std::log(1.0 / cfg.sim_temperature));
  return p;
}

// Registers every parameter tensor as a tape leaf; returns the tracked copy.
inline DcmParams track_params(GradTape& tape, const DcmParams& params, const DcmConfig& cfg) {
  DcmParams tracked = params;
  for_each_param(tracked, cfg, [&](const std::string&, Tensor& t) { t = tape.leaf(std::move(t)); });
  return tracked;
}

inline Branch branch_for(const std::string& language, const DcmConfig& cfg) {
  if (language == "en" && !cfg.route_en_to_m) return Branch::English;
  return Branch::Multilingual;
}

namespace detail {

inline const BranchParams& branch_params(const DcmParams& p, Branch which, const DcmConfig& cfg) {
  if (cfg.share_branches) return p.english;
  return which == Branch::English ? p.english : p.multilingual;
}

// y = W * x + b for a row vector x (returns a row).
inline Tensor affine_row(const Tensor& x_row, const Tensor& w, const Tensor& b, GradTape* tape) {
  Tensor y = matmul(x_row, transpose(w, tape), tape);
  return add(y, reshape(b, {1, b.shape[0]}, tape), tape);
}

// Single-query multi-head attention over the frame rows (Eq. 3 per head).
inline Tensor attend_block(const Tensor& query_row, const Tensor& frames, const BlockParams& blk,
                           const DcmConfig& cfg, GradTape* tape) {
  const int dh = cfg.head_dim();
  Tensor q = matmul(query_row, transpose(blk.w_q, tape), tape);   // 1 x D
  Tensor k = matmul(frames, transpose(blk.w_k, tape), tape);      // N x D
  Tensor v = matmul(frames, transpose(blk.w_v, tape), tape);      // N x D

  std::vector<Tensor> heads;
  for (int h = 0; h < cfg.num_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh, tape);
    Tensor kh = slice_cols(k, h * dh, dh, tape);
    Tensor vh = slice_cols(v, h * dh, dh, tape);
    Tensor logits = matmul(qh, transpose(kh, tape), tape);        // 1 x N
    Tensor weights = softmax_rows(logits, 1.0 / std::sqrt(double(dh)), tape);
    heads.push_back(matmul(weights, vh, tape));                   // 1 x dh
  }
  Tensor merged = concat_cols(heads, tape);                       // 1 x D
  return matmul(merged, transpose(blk.w_o, tape), tape);
}

inline Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t dropout_seed, int block_idx) {
  Tensor mask = Tensor::filled(shape, 1.0);
  if (rate <= 0.0) return mask;
  Rng rng = rng_stream(dropout_seed, hash_str("dropout"), static_cast<std::uint64_t>(block_idx));
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& x : mask.v) x = rng.next_double() < rate ? 0.0 : keep_scale;
  return mask;
}

inline void check_inputs(const TextEmbedding& text, const FrameEmbeddings& frames, const DcmConfig& cfg) {
  if (text.dim() != cfg.model_dim)
    throw DimensionError("text embedding dim " + std::to_string(text.dim()) + " does not match model-dim " +
                         std::to_string(cfg.model_dim));
  if (frames.dim() != cfg.model_dim)
    throw DimensionError("frame embedding dim " + std::to_string(frames.dim()) + " does not match model-dim " +
                         std::to_string(cfg.model_dim));
}

}  // namespace detail

// Attention output r_v of the first block, before FC/residual/LN.
inline Tensor cross_attend(const TextEmbedding& text, const FrameEmbeddings& frames, const DcmParams& params,
                           Branch branch, const DcmConfig& cfg, GradTape* tape = nullptr) {
  cfg.validate();
  detail::check_inputs(text, frames, cfg);
  const BranchParams& bp = detail::branch_params(params, branch, cfg);
  Tensor q = reshape(text.vector, {1, cfg.model_dim}, tape);
  Tensor r = detail::attend_block(q, frames.matrix, bp.blocks[0], cfg, tape);
  return reshape(r, {cfg.model_dim}, tape);
}

// Full block stack: R_v = LN(FC(dropout(r_v)) + r_v), chained when
// num_blocks > 1 (the block output becomes the next query).
inline Tensor dcm_forward(const TextEmbedding& text, const FrameEmbeddings& frames, const DcmParams& params,
                          Branch branch, Mode mode, std::uint64_t dropout_seed, const DcmConfig& cfg,
                          GradTape* tape = nullptr) {
  cfg.validate();
  detail::check_inputs(text, frames, cfg);
  const BranchParams& bp = detail::branch_params(params, branch, cfg);

  if (!cfg.use_dcm) {
    // Ablation path: mean-pooled frames through a single linear projection.
    Tensor pooled = reshape(mean_rows(frames.matrix, tape), {1, cfg.model_dim}, tape);
    Tensor projected = matmul(pooled, transpose(bp.blocks[0].w_o, tape), tape);
    return reshape(projected, {cfg.model_dim}, tape);
  }

  Tensor query = reshape(text.vector, {1, cfg.model_dim}, tape);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const BlockParams& blk = bp.blocks[static_cast<size_t>(b)];
    Tensor r = detail::attend_block(query, frames.matrix, blk, cfg, tape);

    Tensor fc_in = r;
    if (mode == Mode::Train && cfg.dropout_rate > 0.0) {
      Tensor mask = detail::dropout_mask(r.shape, cfg.dropout_rate, dropout_seed, b);
      fc_in = mul(fc_in, mask, tape);
    }
    Tensor fc_out = detail::affine_row(fc_in, blk.fc_w, blk.fc_b, tape);
    if (cfg.fc_two_layer) fc_out = detail::affine_row(fc_out, blk.fc_w2, blk.fc_b2, tape);

    Tensor pre_ln = reshape(add(fc_out, r, tape), {cfg.model_dim}, tape);
    Tensor normed = layer_norm(pre_ln, blk.ln_gain, blk.ln_bias, cfg.ln_eps, tape);
    query = reshape(normed, {1, cfg.model_dim}, tape);
  }
  return reshape(query, {cfg.model_dim}, tape);
}

struct DualOutput {
  Tensor english;       // R_vE
  Tensor multilingual;  // R_vM
};

// Both branches over the same frames. Dropout streams are derived per branch
// so disabling one branch never shifts the other's draws.
inline DualOutput dual_forward(const TextEmbedding& english, const TextEmbedding& multilingual,
                               const FrameEmbeddings& frames, const DcmParams& params, Mode mode,
                               std::uint64_t dropout_seed, const DcmConfig& cfg, GradTape* tape = nullptr) {
  if (english.language != "en")
    throw RoutingError("dual_forward expects an English caption on the first input, got language '" +
                       english.language + "'");
  if (multilingual.language == "en")
    throw RoutingError("dual_forward expects a non-English caption on the second input");
  DualOutput out;
  out.english = dcm_forward(english, frames, params, Branch::English, mode,
                            hash_mix(dropout_seed, hash_str("branch-e")), cfg, tape);
  out.multilingual = dcm_forward(multilingual, frames, params, Branch::Multilingual, mode,
                                 hash_mix(dropout_seed, hash_str("branch-m")), cfg, tape);
  return out;
}

}  // namespace dcmr
