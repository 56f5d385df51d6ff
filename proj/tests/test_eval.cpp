#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "dcmr/data.hpp"
#include "dcmr/errors.hpp"
#include "dcmr/eval.hpp"
#include "test_support.hpp"

using namespace dcmr;
using testutil::TempDir;
using testutil::gaussian_tensor;

namespace {

ScoreMatrix matrix_from(Tensor scores) {
  ScoreMatrix s;
  s.scores = std::move(scores);
  for (int i = 0; i < s.scores.rows(); ++i) s.row_ids.push_back("c" + std::to_string(i));
  for (int j = 0; j < s.scores.cols(); ++j) s.col_ids.push_back("v" + std::to_string(j));
  return s;
}

std::map<std::string, std::string> diag_gt(int n) {
  std::map<std::string, std::string> gt;
  for (int i = 0; i < n; ++i) gt["c" + std::to_string(i)] = "v" + std::to_string(i);
  return gt;
}

DcmConfig tiny_cfg() {
  DcmConfig cfg;
  cfg.model_dim = 8;
  cfg.num_heads = 2;
  cfg.fc_dim = 8;
  cfg.dropout_rate = 0.4;  // eval mode must ignore it
  return cfg;
}

}  // namespace

TEST_CASE("1x1 score matrix is the single-pair dot product") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 3);
  Rng rng(5);
  TextEmbedding cap("c0", "en", gaussian_tensor({8}, rng));
  FrameEmbeddings vid("v0", gaussian_tensor({3, 8}, rng));

  std::vector<TextEmbedding> captions{cap};
  std::vector<FrameEmbeddings> videos{vid};
  ScoreMatrix s = score_matrix(captions, videos, p, Branch::English, cfg);
  REQUIRE(s.scores.shape == Shape{1, 1});

  Tensor rep = dcm_forward(cap, vid, p, Branch::English, Mode::Eval, 0, cfg);
  CHECK(s.scores.at(0, 0) == dot(cap.vector, rep).item());
}

TEST_CASE("duplicated video column duplicates its scores bit-exactly") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 4);
  Rng rng(7);
  std::vector<TextEmbedding> captions;
  for (int i = 0; i < 3; ++i) captions.emplace_back("c" + std::to_string(i), "en", gaussian_tensor({8}, rng));
  FrameEmbeddings v0("v0", gaussian_tensor({2, 8}, rng));
  FrameEmbeddings v1("v1", gaussian_tensor({2, 8}, rng));
  FrameEmbeddings v0_dup("v0dup", v0.matrix);

  std::vector<FrameEmbeddings> videos{v0, v1, v0_dup};
  ScoreMatrix s = score_matrix(captions, videos, p, Branch::English, cfg);
  for (int i = 0; i < 3; ++i) CHECK(s.scores.at(i, 0) == s.scores.at(i, 2));
}

TEST_CASE("score_matrix matches the naive per-pair oracle") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 5);
  Rng rng(9);
  std::vector<TextEmbedding> captions;
  std::vector<FrameEmbeddings> videos;
  for (int i = 0; i < 3; ++i) {
    captions.emplace_back("c" + std::to_string(i), "en", gaussian_tensor({8}, rng));
    videos.emplace_back("v" + std::to_string(i), gaussian_tensor({4, 8}, rng));
  }
  ScoreMatrix s = score_matrix(captions, videos, p, Branch::English, cfg);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Tensor rep = dcm_forward(captions[static_cast<size_t>(i)], videos[static_cast<size_t>(j)], p,
                               Branch::English, Mode::Eval, 0, cfg);
      double expected = 0.0;
      for (int k = 0; k < 8; ++k) expected += captions[static_cast<size_t>(i)].vector.at(k) * rep.at(k);
      CHECK_THAT(s.scores.at(i, j), Catch::Matchers::WithinAbs(expected, 1e-12));
    }
}

TEST_CASE("score_matrix respects branch routing") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 6);
  Rng rng(11);
  std::vector<TextEmbedding> captions{TextEmbedding("c0", "fr", gaussian_tensor({8}, rng))};
  std::vector<FrameEmbeddings> videos{FrameEmbeddings("v0", gaussian_tensor({2, 8}, rng))};
  CHECK_THROWS_AS(score_matrix(captions, videos, p, Branch::English, cfg), RoutingError);
  CHECK_NOTHROW(score_matrix(captions, videos, p, Branch::Multilingual, cfg));
}

TEST_CASE("query block size does not change the scores") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 12);
  Rng rng(13);
  std::vector<TextEmbedding> captions;
  std::vector<FrameEmbeddings> videos;
  for (int i = 0; i < 5; ++i) {
    captions.emplace_back("c" + std::to_string(i), "en", gaussian_tensor({8}, rng));
    videos.emplace_back("v" + std::to_string(i), gaussian_tensor({2, 8}, rng));
  }
  EvalOptions block1;
  block1.query_block = 1;
  EvalOptions block64;
  ScoreMatrix a = score_matrix(captions, videos, p, Branch::English, cfg, block1);
  ScoreMatrix b = score_matrix(captions, videos, p, Branch::English, cfg, block64);
  CHECK(a.scores.v == b.scores.v);
}

TEST_CASE("ranks: identity matrix with diagonal ground truth is all ones") {
  ScoreMatrix s = matrix_from(Tensor::identity(4));
  std::vector<int> ranks = ranks_of_ground_truth(s, diag_gt(4), RetrievalDirection::TextToVideo);
  for (int r : ranks) CHECK(r == 1);
}

TEST_CASE("ranks: all-equal scores rank 1 under optimistic ties") {
  ScoreMatrix s = matrix_from(Tensor::filled({10, 10}, 0.5));
  for (RetrievalDirection d : {RetrievalDirection::TextToVideo, RetrievalDirection::VideoToText}) {
    std::vector<int> ranks = ranks_of_ground_truth(s, diag_gt(10), d);
    for (int r : ranks) CHECK(r == 1);
  }
}

TEST_CASE("ranks: strictly-greater counting on a hand-enumerated matrix") {
  ScoreMatrix s = matrix_from(Tensor::matrix(3, 3, {0.9, 0.1, 0.5, 0.2, 0.8, 0.3, 0.4, 0.6, 0.7}));

  std::vector<int> diag = ranks_of_ground_truth(s, diag_gt(3), RetrievalDirection::TextToVideo);
  CHECK(diag == std::vector<int>{1, 1, 1});

  // Exhaustive count for gt = {c0->v1, c1->v0, c2->v0}:
  //   c0: 0.1 in row [0.9, 0.1, 0.5] -> two strictly greater -> rank 3
  //   c1: 0.2 in row [0.2, 0.8, 0.3] -> two strictly greater -> rank 3
  //   c2: 0.4 in row [0.4, 0.6, 0.7] -> two strictly greater -> rank 3
  std::map<std::string, std::string> gt{{"c0", "v1"}, {"c1", "v0"}, {"c2", "v0"}};
  std::vector<int> off = ranks_of_ground_truth(s, gt, RetrievalDirection::TextToVideo);
  CHECK(off == std::vector<int>{3, 3, 3});
}

TEST_CASE("ranks agree with the sort-based oracle, ties included") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 2 + static_cast<int>(rng.next_below(12));
    Tensor m = Tensor::zeros({n, n});
    // Coarse quantization forces frequent ties.
    for (double& x : m.v) x = std::floor(rng.next_double() * 5.0);
    ScoreMatrix s = matrix_from(m);
    std::vector<int> got = ranks_of_ground_truth(s, diag_gt(n), RetrievalDirection::TextToVideo);

    std::vector<std::vector<double>> rows(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n)));
    std::vector<int> gt_col(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      gt_col[static_cast<size_t>(i)] = i;
      for (int j = 0; j < n; ++j) rows[static_cast<size_t>(i)][static_cast<size_t>(j)] = m.at(i, j);
    }
    CHECK(got == testutil::sorted_rank_oracle(rows, gt_col));
  }
}

TEST_CASE("v2t uses the best caption when a video has several") {
  // Rows c0, c1, c2; c0 and c2 both describe v0, c1 describes v1.
  ScoreMatrix s = matrix_from(Tensor::matrix(3, 2, {0.1, 0.9, 0.8, 0.2, 0.5, 0.4}));
  std::map<std::string, std::string> gt{{"c0", "v0"}, {"c1", "v1"}, {"c2", "v0"}};
  std::vector<int> ranks = ranks_of_ground_truth(s, gt, RetrievalDirection::VideoToText);
  // Column v0 = [0.1, 0.8, 0.5]: c0 ranks 3, c2 ranks 2 -> min 2.
  // Column v1 = [0.9, 0.2, 0.4]: c1 ranks 3.
  CHECK(ranks == std::vector<int>{2, 3});
}

TEST_CASE("missing ground truth is a dataset error") {
  ScoreMatrix s = matrix_from(Tensor::identity(3));
  std::map<std::string, std::string> gt{{"c0", "v0"}, {"c1", "v1"}};  // c2 missing
  CHECK_THROWS_AS(ranks_of_ground_truth(s, gt, RetrievalDirection::TextToVideo), DatasetError);

  std::map<std::string, std::string> no_caption{{"c0", "v0"}, {"c1", "v0"}, {"c2", "v0"}};
  CHECK_THROWS_AS(ranks_of_ground_truth(s, no_caption, RetrievalDirection::VideoToText), DatasetError);
}

TEST_CASE("metrics_from_ranks closed forms") {
  SECTION("all ones") {
    std::vector<int> ranks{1, 1, 1, 1};
    RetrievalReport r = metrics_from_ranks(ranks);
    CHECK(r.r1 == 1.0);
    CHECK(r.medr == 1.0);
    CHECK(r.mnr == 1.0);
  }
  SECTION("1..10") {
    std::vector<int> ranks{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    RetrievalReport r = metrics_from_ranks(ranks);
    CHECK(r.r1 == 0.1);
    CHECK(r.r5 == 0.5);
    CHECK(r.medr == 5.5);
    CHECK(r.mnr == 5.5);
  }
  SECTION("single worst case") {
    std::vector<int> ranks{100};
    RetrievalReport r = metrics_from_ranks(ranks);
    CHECK(r.r10 == 0.0);
    CHECK(r.medr == 100.0);
    CHECK(r.mnr == 100.0);
  }
  SECTION("empty input rejected") {
    std::vector<int> ranks;
    CHECK_THROWS_AS(metrics_from_ranks(ranks), ContractError);
  }
}

TEST_CASE("metric ordering invariants hold on random rank lists") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> ranks;
    int n = 1 + static_cast<int>(rng.next_below(40));
    for (int i = 0; i < n; ++i) ranks.push_back(1 + static_cast<int>(rng.next_below(50)));
    RetrievalReport r = metrics_from_ranks(ranks);
    CHECK(r.r1 <= r.r5);
    CHECK(r.r5 <= r.r10);
    CHECK(r.r10 <= 1.0);
    CHECK(r.medr >= 1.0);
    CHECK(r.mnr >= 1.0);
  }
}

TEST_CASE("monotone score transforms leave ranks unchanged") {
  Rng rng(29);
  Tensor m = gaussian_tensor({6, 6}, rng);
  ScoreMatrix a = matrix_from(m);
  Tensor warped = m;
  for (double& x : warped.v) x = std::exp(0.5 * x) + 2.0;
  ScoreMatrix b = matrix_from(warped);
  for (RetrievalDirection d : {RetrievalDirection::TextToVideo, RetrievalDirection::VideoToText}) {
    CHECK(ranks_of_ground_truth(a, diag_gt(6), d) == ranks_of_ground_truth(b, diag_gt(6), d));
  }
}

TEST_CASE("score_matrix ordering equivariance") {
  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 31);
  Rng rng(31);
  std::vector<TextEmbedding> captions;
  std::vector<FrameEmbeddings> videos;
  for (int i = 0; i < 4; ++i) {
    captions.emplace_back("c" + std::to_string(i), "en", gaussian_tensor({8}, rng));
    videos.emplace_back("v" + std::to_string(i), gaussian_tensor({2, 8}, rng));
  }
  ScoreMatrix base = score_matrix(captions, videos, p, Branch::English, cfg);

  std::vector<TextEmbedding> rev_caps(captions.rbegin(), captions.rend());
  std::vector<FrameEmbeddings> rev_vids(videos.rbegin(), videos.rend());
  ScoreMatrix flipped = score_matrix(rev_caps, rev_vids, p, Branch::English, cfg);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(base.scores.at(i, j) == flipped.scores.at(3 - i, 3 - j));
}

TEST_CASE("evaluate_split composes and freezes the untested branch") {
  TempDir dir;
  SynthConfig scfg;
  scfg.train_items = 2;
  scfg.val_items = 0;
  scfg.test_items = 10;
  scfg.model_dim = 8;
  scfg.latent_dim = 4;
  scfg.frames_per_video = 2;
  scfg.languages = {"fr"};
  SynthOutput out = synth_generate(scfg);
  Dataset ds = load_manifest(write_synth_dataset(out, dir.file("ds")));

  DcmConfig cfg = tiny_cfg();
  DcmParams p = init_params(cfg, 77);

  RetrievalReport base = evaluate_split(ds, "test", p, cfg, "en", RetrievalDirection::TextToVideo, 7, "hash");
  CHECK(base.n == 10);
  CHECK(base.branch == "e");
  CHECK(base.language == "en");
  CHECK(base.seed == 7);

  DcmParams perturbed = p;
  for (double& x : perturbed.multilingual.blocks[0].w_v.v) x += 1.0;
  RetrievalReport frozen = evaluate_split(ds, "test", perturbed, cfg, "en", RetrievalDirection::TextToVideo, 7, "hash");
  CHECK(report_to_json(base) == report_to_json(frozen));

  RetrievalReport fr_report = evaluate_split(ds, "test", p, cfg, "fr", RetrievalDirection::TextToVideo, 7, "hash");
  CHECK(fr_report.branch == "m");

  CHECK_THROWS_AS(evaluate_split(ds, "test", p, cfg, "de", RetrievalDirection::TextToVideo, 7, "hash"),
                  DatasetError);
  CHECK_THROWS_AS(evaluate_split(ds, "val", p, cfg, "en", RetrievalDirection::TextToVideo, 7, "hash"),
                  DatasetError);
}

TEST_CASE("untrained model scores at chance level on a signal-free split") {
  // The null dataset needs noise >> latent signal: with strong correlation
  // even an untrained random readout deviates from uniform ranks, because
  // matched pairs share their latent factor.
  TempDir dir;
  SynthConfig scfg;
  scfg.train_items = 2;
  scfg.val_items = 0;
  scfg.test_items = 200;
  scfg.model_dim = 32;
  scfg.latent_dim = 16;
  scfg.frames_per_video = 8;
  scfg.noise_scale = 8.0;
  scfg.languages = {};
  SynthOutput out = synth_generate(scfg);
  Dataset ds = load_manifest(write_synth_dataset(out, dir.file("ds")));

  DcmConfig cfg;
  cfg.model_dim = 32;
  cfg.num_heads = 8;
  cfg.fc_dim = 32;
  DcmParams p = init_params(cfg, 123);

  RetrievalReport r = evaluate_split(ds, "test", p, cfg, "en", RetrievalDirection::TextToVideo, 1, "");
  // Uniform ranks over N=200: MnR concentrates at 100.5 with sigma ~ 4.1.
  const double sigma = std::sqrt((200.0 * 200.0 - 1.0) / 12.0 / 200.0);
  CHECK(std::abs(r.mnr - 100.5) <= 3.0 * sigma);
}
