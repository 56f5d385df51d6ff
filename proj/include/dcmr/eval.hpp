#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcmr/data.hpp"
#include "dcmr/dcm.hpp"
#include "dcmr/errors.hpp"
#include "dcmr/tensor.hpp"

namespace dcmr {

// Retrieval scoring and rank metrics. Evaluation uses full cross-conditioning:
// the video representation is recomputed for every query caption, since the
// attention query is the caption itself.

struct ScoreMatrix {
  Tensor scores;  // N_t x N_v
  std::vector<std::string> row_ids;  // caption ids (queries for t2v)
  std::vector<std::string> col_ids;  // video ids
  Branch branch = Branch::English;
};

enum class RetrievalDirection { TextToVideo, VideoToText };

inline const char* direction_name(RetrievalDirection d) {
  return d == RetrievalDirection::TextToVideo ? "t2v" : "v2t";
}

struct RetrievalReport {
  std::string direction;
  std::string branch;
  std::string language;
  double r1 = 0, r5 = 0, r10 = 0;
  double medr = 0, mnr = 0;
  int n = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline nlohmann::json report_to_json(const RetrievalReport& r) {
  return nlohmann::json{{"direction", r.direction}, {"branch", r.branch}, {"language", r.language},
                        {"r1", r.r1},               {"r5", r.r5},         {"r10", r.r10},
                        {"medr", r.medr},           {"mnr", r.mnr},       {"n", r.n},
                        {"seed", r.seed},           {"config_hash", r.config_hash}};
}

struct EvalOptions {
  bool normalize = false;
  double temperature = 1.0;
  int query_block = 64;  // queries processed per chunk
};

inline EvalOptions eval_options_from(const DcmConfig& cfg) {
  EvalOptions opt;
  opt.normalize = cfg.sim_normalize;
  opt.temperature = cfg.sim_temperature;
  return opt;
}

namespace detail {

inline double pair_score(const Tensor& caption_vec, const Tensor& video_rep, const EvalOptions& opt) {
  double num = 0.0;
  if (opt.normalize) {
    double nc = 0.0, nv = 0.0;
    for (size_t k = 0; k < caption_vec.v.size(); ++k) {
      num += caption_vec.v[k] * video_rep.v[k];
      nc += caption_vec.v[k] * caption_vec.v[k];
      nv += video_rep.v[k] * video_rep.v[k];
    }
    if (nc == 0.0 || nv == 0.0) throw NumericError("cannot normalize a zero vector while scoring");
    num /= std::sqrt(nc) * std::sqrt(nv);
  } else {
    for (size_t k = 0; k < caption_vec.v.size(); ++k) num += caption_vec.v[k] * video_rep.v[k];
  }
  return num / opt.temperature;
}

}  // namespace detail

// scores[i][j] = <caption_i, dcm_forward(caption_i, video_j)>: N_t x N_v
// eval-mode forward passes, chunked over query rows.
inline ScoreMatrix score_matrix(std::span<const TextEmbedding> captions, std::span<const FrameEmbeddings> videos,
                                const DcmParams& params, Branch branch, const DcmConfig& cfg,
                                const EvalOptions& opt = {}) {
  if (captions.empty() || videos.empty()) throw ContractError("score_matrix requires captions and videos");
  if (opt.query_block < 1) throw ContractError("query block size must be >= 1");
  for (const TextEmbedding& c : captions)
    if (branch_for(c.language, cfg) != branch)
      throw RoutingError("caption '" + c.caption_id + "' (language " + c.language +
                         ") does not route to the requested branch");

  const int n_t = static_cast<int>(captions.size());
  const int n_v = static_cast<int>(videos.size());
  ScoreMatrix out;
  out.branch = branch;
  out.scores = Tensor::zeros({n_t, n_v});
  for (const TextEmbedding& c : captions) out.row_ids.push_back(c.caption_id);
  for (const FrameEmbeddings& v : videos) out.col_ids.push_back(v.video_id);

  // When the DCM block is disabled the representation is query-independent;
  // compute each video's projection once.
  if (!cfg.use_dcm) {
    std::vector<Tensor> reps;
    reps.reserve(static_cast<size_t>(n_v));
    for (const FrameEmbeddings& v : videos)
      reps.push_back(dcm_forward(captions[0], v, params, branch, Mode::Eval, 0, cfg));
    for (int i = 0; i < n_t; ++i)
      for (int j = 0; j < n_v; ++j)
        out.scores.at(i, j) = detail::pair_score(captions[static_cast<size_t>(i)].vector,
                                                 reps[static_cast<size_t>(j)], opt);
    return out;
  }

  for (int block_start = 0; block_start < n_t; block_start += opt.query_block) {
    const int block_end = std::min(n_t, block_start + opt.query_block);
    for (int i = block_start; i < block_end; ++i) {
      const TextEmbedding& caption = captions[static_cast<size_t>(i)];
      for (int j = 0; j < n_v; ++j) {
        Tensor rep = dcm_forward(caption, videos[static_cast<size_t>(j)], params, branch, Mode::Eval, 0, cfg);
        out.scores.at(i, j) = detail::pair_score(caption.vector, rep, opt);
      }
    }
  }
  return out;
}

// Optimistic 1-based ranks: rank = 1 + |{candidates strictly better}|.
// t2v ranks one ground-truth video per caption row; v2t ranks each video
// against caption columns, taking the best caption when several match.
inline std::vector<int> ranks_of_ground_truth(const ScoreMatrix& s,
                                              const std::map<std::string, std::string>& gt,
                                              RetrievalDirection direction) {
  const int n_t = s.scores.rows();
  const int n_v = s.scores.cols();
  std::map<std::string, int> col_of;
  for (int j = 0; j < n_v; ++j) col_of[s.col_ids[static_cast<size_t>(j)]] = j;

  std::vector<int> ranks;
  if (direction == RetrievalDirection::TextToVideo) {
    for (int i = 0; i < n_t; ++i) {
      auto it = gt.find(s.row_ids[static_cast<size_t>(i)]);
      if (it == gt.end())
        throw DatasetError("caption '" + s.row_ids[static_cast<size_t>(i)] + "' has no ground-truth video");
      auto cit = col_of.find(it->second);
      if (cit == col_of.end())
        throw DatasetError("ground-truth video '" + it->second + "' missing from the score matrix");
      const double gt_score = s.scores.at(i, cit->second);
      int better = 0;
      for (int j = 0; j < n_v; ++j)
        if (s.scores.at(i, j) > gt_score) ++better;
      ranks.push_back(1 + better);
    }
  } else {
    // Captions per video, in row order.
    std::map<int, std::vector<int>> captions_of;
    for (int i = 0; i < n_t; ++i) {
      auto it = gt.find(s.row_ids[static_cast<size_t>(i)]);
      if (it == gt.end())
        throw DatasetError("caption '" + s.row_ids[static_cast<size_t>(i)] + "' has no ground-truth video");
      auto cit = col_of.find(it->second);
      if (cit != col_of.end()) captions_of[cit->second].push_back(i);
    }
    for (int j = 0; j < n_v; ++j) {
      auto it = captions_of.find(j);
      if (it == captions_of.end() || it->second.empty())
        throw DatasetError("video '" + s.col_ids[static_cast<size_t>(j)] + "' has no ground-truth caption");
      int best = n_t + 1;
      for (int ci : it->second) {
        const double gt_score = s.scores.at(ci, j);
        int better = 0;
        for (int i = 0; i < n_t; ++i)
          if (s.scores.at(i, j) > gt_score) ++better;
        best = std::min(best, 1 + better);
      }
      ranks.push_back(best);
    }
  }
  return ranks;
}

// R@K = fraction of ranks <= K; MedR averages the middle pair for even
// counts; MnR is the arithmetic mean.
inline RetrievalReport metrics_from_ranks(std::span<const int> ranks) {
  if (ranks.empty()) throw ContractError("metrics_from_ranks requires at least one rank");
  RetrievalReport r;
  r.n = static_cast<int>(ranks.size());
  std::vector<int> sorted(ranks.begin(), ranks.end());
  for (int rank : sorted) {
    if (rank < 1) throw ContractError("ranks are 1-based");
    if (rank <= 1) r.r1 += 1.0;
    if (rank <= 5) r.r5 += 1.0;
    if (rank <= 10) r.r10 += 1.0;
    r.mnr += rank;
  }
  r.r1 /= r.n;
  r.r5 /= r.n;
  r.r10 /= r.n;
  r.mnr /= r.n;
  std::sort(sorted.begin(), sorted.end());
  const size_t mid = sorted.size() / 2;
  r.medr = sorted.size() % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;
  return r;
}

// Composes score_matrix -> ranks -> metrics over one split and language. The
// branch not under test never participates.
inline RetrievalReport evaluate_split(const Dataset& ds, const std::string& split, const DcmParams& params,
                                      const DcmConfig& cfg, const std::string& language,
                                      RetrievalDirection direction, std::uint64_t seed = 0,
                                      const std::string& config_hash = "", const EvalOptions* opt_in = nullptr) {
  std::vector<int> idx = ds.split_indices(split);
  if (idx.empty()) throw DatasetError("split '" + split + "' is empty");

  std::vector<TextEmbedding> captions;
  std::vector<FrameEmbeddings> videos;
  std::map<std::string, std::string> gt;
  for (int i : idx) {
    const ManifestItem& item = ds.manifest.items[static_cast<size_t>(i)];
    auto cap_it = item.captions.find(language);
    if (cap_it == item.captions.end())
      throw DatasetError("item " + item.video_id + " has no caption in language '" + language + "'");
    captions.push_back(ds.caption(language, cap_it->second));
    videos.push_back(ds.frames(item.video_id));
    gt[cap_it->second] = item.video_id;
  }

  EvalOptions opt = opt_in ? *opt_in : eval_options_from(cfg);
  Branch branch = branch_for(language, cfg);
  ScoreMatrix s = score_matrix(captions, videos, params, branch, cfg, opt);
  std::vector<int> ranks = ranks_of_ground_truth(s, gt, direction);
  RetrievalReport report = metrics_from_ranks(ranks);
  report.direction = direction_name(direction);
  report.branch = branch_name(branch);
  report.language = language;
  report.seed = seed;
  report.config_hash = config_hash;
  return report;
}

}  // namespace dcmr
