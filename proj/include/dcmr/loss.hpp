#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dcmr/errors.hpp"
#include "dcmr/tensor.hpp"

namespace dcmr {

// Symmetric in-batch contrastive losses. Scores are bare dot products by
// default; optional L2 normalization and temperature live behind flags so the
// default matches the additive dual-loss formulation exactly.

struct SimilarityMatrix {
  Tensor scores;  // B x B, tape-tracked when built under a tape
  int batch = 0;
  bool normalized = false;
  double temperature = 1.0;
};

// scores[i][j] = <texts[i], videos[j]> / temperature. When learnable_log_temp
// is supplied the division is replaced by multiplication with
// exp(log_temp), which keeps the scale trainable through the tape.
inline SimilarityMatrix similarity_matrix(std::span<const Tensor> texts, std::span<const Tensor> videos,
                                          bool normalize = false, double temperature = 1.0,
                                          GradTape* tape = nullptr, const Tensor* learnable_log_temp = nullptr) {
  if (texts.empty() || texts.size() != videos.size())
    throw DimensionError("similarity_matrix requires equally many texts and videos, B >= 1");
  if (!(temperature > 0.0)) throw ContractError("similarity temperature must be positive");
  const int b = static_cast<int>(texts.size());

  Tensor t = concat_rows(texts, tape);
  Tensor v = concat_rows(videos, tape);
  if (t.cols() != v.cols()) throw DimensionError("text and video embeddings must share their dimension");
  if (normalize) {
    t = l2_normalize_rows(t, tape);
    v = l2_normalize_rows(v, tape);
  }
  Tensor scores = matmul(t, transpose(v, tape), tape);

  if (learnable_log_temp) {
    const Tensor& lt = *learnable_log_temp;
    if (lt.numel() != 1) throw ContractError("learnable log-temperature must be a scalar");
    const double factor = std::exp(lt.v[0]);
    Tensor scaled = scores;
    scaled.node = -1;
    for (double& x : scaled.v) x *= factor;
    check_finite(scaled, "similarity temperature scaling");
    if (tape && (scores.tracked() || lt.tracked())) {
      Tensor pre = scores;
      scaled.node = tape->add_node("scale_by_exp", {scores.node, lt.node}, scaled.shape,
                                   [pre, factor](const Tensor& g) {
                                     Tensor ds = g;
                                     ds.node = -1;
                                     for (double& x : ds.v) x *= factor;
                                     double dt = 0.0;
                                     for (size_t i = 0; i < g.v.size(); ++i) dt += g.v[i] * pre.v[i] * factor;
                                     return std::vector<Tensor>{std::move(ds), Tensor::scalar(dt)};
                                   });
    }
    scores = std::move(scaled);
  } else if (temperature != 1.0) {
    scores = scale(scores, 1.0 / temperature, tape);
  }

  SimilarityMatrix out;
  out.scores = std::move(scores);
  out.batch = b;
  out.normalized = normalize;
  out.temperature = temperature;
  return out;
}

enum class LossDirection { VideoToText, TextToVideo };

// InfoNCE over the matched diagonal, log-sum-exp evaluated. VideoToText
// normalizes each row (fixed text, candidate videos vary); TextToVideo
// normalizes each column.
inline Tensor info_nce(const SimilarityMatrix& s, LossDirection direction, GradTape* tape = nullptr) {
  const Tensor& m = s.scores;
  if (m.rank() != 2 || m.rows() != m.cols())
    throw DimensionError("info_nce requires a square score matrix, got " + shape_str(m.shape));
  const int b = m.rows();

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    double mx = -HUGE_VAL;
    for (int j = 0; j < b; ++j) {
      double x = direction == LossDirection::VideoToText ? m.at(i, j) : m.at(j, i);
      mx = std::max(mx, x);
    }
    double z = 0.0;
    for (int j = 0; j < b; ++j) {
      double x = direction == LossDirection::VideoToText ? m.at(i, j) : m.at(j, i);
      z += std::exp(x - mx);
    }
    loss += (mx + std::log(z)) - m.at(i, i);
  }
  loss /= b;

  Tensor out = Tensor::scalar(loss);
  check_finite(out, "info_nce");
  if (tape && m.tracked()) {
    Tensor snapshot = m;
    out.node = tape->add_node("info_nce", {m.node}, out.shape, [snapshot, direction, b](const Tensor& g) {
      // d/ds = (softmax - identity) / B along the normalized axis.
      Tensor ds = Tensor::zeros({b, b});
      for (int i = 0; i < b; ++i) {
        double mx = -HUGE_VAL;
        for (int j = 0; j < b; ++j) {
          double x = direction == LossDirection::VideoToText ? snapshot.at(i, j) : snapshot.at(j, i);
          mx = std::max(mx, x);
        }
        double z = 0.0;
        for (int j = 0; j < b; ++j) {
          double x = direction == LossDirection::VideoToText ? snapshot.at(i, j) : snapshot.at(j, i);
          z += std::exp(x - mx);
        }
        for (int j = 0; j < b; ++j) {
          double x = direction == LossDirection::VideoToText ? snapshot.at(i, j) : snapshot.at(j, i);
          double p = std::exp(x - mx) / z;
          if (direction == LossDirection::VideoToText)
            ds.at(i, j) += p;
          else
            ds.at(j, i) += p;
        }
        ds.at(i, i) -= 1.0;
      }
      const double u = g.v[0] / b;
      for (double& x : ds.v) x *= u;
      return std::vector<Tensor>{std::move(ds)};
    });
  }
  return out;
}

// Both directions for one branch.
inline Tensor branch_loss(const SimilarityMatrix& s, GradTape* tape = nullptr) {
  return add(info_nce(s, LossDirection::VideoToText, tape), info_nce(s, LossDirection::TextToVideo, tape), tape);
}

// Sum of the four contrastive terms across both branches.
inline Tensor total_loss(const SimilarityMatrix& s_english, const SimilarityMatrix& s_multilingual,
                         GradTape* tape = nullptr) {
  if (s_english.batch != s_multilingual.batch)
    throw DimensionError("total_loss requires equal batch sizes, got " + std::to_string(s_english.batch) +
                         " and " + std::to_string(s_multilingual.batch));
  return add(branch_loss(s_english, tape), branch_loss(s_multilingual, tape), tape);
}

}  // namespace dcmr
