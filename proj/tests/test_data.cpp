#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "dcmr/data.hpp"
#include "dcmr/errors.hpp"
#include "test_support.hpp"

using namespace dcmr;
using testutil::TempDir;

namespace {

EmbeddingArchive tiny_archive() {
  EmbeddingArchive a;
  a.dim = 3;
  ArchiveRecord r1;
  r1.id = "vid-a";
  r1.vector_count = 2;
  r1.values = {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f};
  a.add(std::move(r1));
  ArchiveRecord r2;
  r2.id = "vid-b";
  r2.vector_count = 1;
  r2.values = {-1.5f, 0.25f, 7.0f};
  a.add(std::move(r2));
  return a;
}

double cosine(const Tensor& a, const Tensor& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    num += a.v[i] * b.v[i];
    na += a.v[i] * a.v[i];
    nb += b.v[i] * b.v[i];
  }
  return num / std::sqrt(na * nb);
}

// Pseudo-inverse application: pinv(A) x = (A^T A)^{-1} A^T x for tall A.
Tensor pinv_apply(const Tensor& a, const Tensor& x) {
  const int rows = a.rows(), cols = a.cols();
  std::vector<std::vector<double>> ata(static_cast<size_t>(cols), std::vector<double>(static_cast<size_t>(cols)));
  for (int i = 0; i < cols; ++i)
    for (int j = 0; j < cols; ++j) {
      double s = 0.0;
      for (int k = 0; k < rows; ++k) s += a.at(k, i) * a.at(k, j);
      ata[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
    }
  std::vector<double> atx(static_cast<size_t>(cols));
  for (int i = 0; i < cols; ++i) {
    double s = 0.0;
    for (int k = 0; k < rows; ++k) s += a.at(k, i) * x.at(k);
    atx[static_cast<size_t>(i)] = s;
  }
  return Tensor::vec(testutil::solve_linear(ata, atx));
}

}  // namespace

TEST_CASE("archive round-trips losslessly at 32-bit precision") {
  TempDir dir;
  EmbeddingArchive a = tiny_archive();
  write_archive(a, dir.file("t.emb"));
  EmbeddingArchive b = read_archive(dir.file("t.emb"));
  REQUIRE(b.dim == a.dim);
  REQUIRE(b.records.size() == a.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(b.records[i].id == a.records[i].id);
    CHECK(b.records[i].vector_count == a.records[i].vector_count);
    CHECK(b.records[i].values == a.records[i].values);
  }
}

TEST_CASE("empty archive is a valid file with count zero") {
  TempDir dir;
  EmbeddingArchive a;
  a.dim = 4;
  write_archive(a, dir.file("empty.emb"));
  EmbeddingArchive b = read_archive(dir.file("empty.emb"));
  CHECK(b.dim == 4);
  CHECK(b.records.empty());
  CHECK(std::filesystem::file_size(dir.file("empty.emb")) == 16);  // magic + version + dim + count
}

TEST_CASE("archive file size is exactly header plus record bytes") {
  TempDir dir;
  EmbeddingArchive a;
  a.dim = 5;
  ArchiveRecord rec;
  rec.id = "clip-000";
  rec.vector_count = 3;
  rec.values.assign(15, 0.5f);
  a.add(std::move(rec));
  write_archive(a, dir.file("one.emb"));
  // 16 header + (2 + 8 id + 2 + 15*4 payload).
  CHECK(std::filesystem::file_size(dir.file("one.emb")) == 16 + 2 + 8 + 2 + 60);
}

TEST_CASE("bad magic is a format error at offset zero") {
  TempDir dir;
  write_file_bytes(dir.file("bad.emb"), "NOPE....");
  try {
    read_archive(dir.file("bad.emb"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("truncated payload is a format error naming the offset") {
  TempDir dir;
  EmbeddingArchive a = tiny_archive();
  std::string bytes = serialize_archive(a);
  bytes.resize(bytes.size() - 5);  // cut into the last record's floats
  write_file_bytes(dir.file("cut.emb"), bytes);
  CHECK_THROWS_AS(read_archive(dir.file("cut.emb")), FormatError);
}

TEST_CASE("trailing bytes are rejected") {
  TempDir dir;
  std::string bytes = serialize_archive(tiny_archive()) + "xx";
  write_file_bytes(dir.file("trail.emb"), bytes);
  CHECK_THROWS_AS(read_archive(dir.file("trail.emb")), FormatError);
}

TEST_CASE("duplicate ids in an archive are rejected") {
  EmbeddingArchive a;
  a.dim = 2;
  ArchiveRecord r;
  r.id = "dup";
  r.vector_count = 1;
  r.values = {1.0f, 2.0f};
  a.add(ArchiveRecord(r));
  CHECK_THROWS_AS(a.add(ArchiveRecord(r)), DatasetError);
}

TEST_CASE("synthetic dataset writes a loadable manifest") {
  TempDir dir;
  SynthConfig cfg;
  cfg.train_items = 6;
  cfg.val_items = 2;
  cfg.test_items = 4;
  cfg.model_dim = 8;
  cfg.latent_dim = 4;
  cfg.frames_per_video = 3;
  cfg.languages = {"fr", "de"};
  SynthOutput out = synth_generate(cfg);
  std::string manifest_path = write_synth_dataset(out, dir.file("ds"));

  Dataset ds = load_manifest(manifest_path);
  CHECK(ds.manifest.items.size() == 12);
  CHECK(ds.split_indices("train").size() == 6);
  CHECK(ds.split_indices("val").size() == 2);
  CHECK(ds.split_indices("test").size() == 4);
  CHECK(ds.texts.size() == 3);  // en, fr, de

  FrameEmbeddings f = ds.frames("vid-00000");
  CHECK(f.frame_count() == 3);
  CHECK(f.dim() == 8);
  TextEmbedding t = ds.caption("fr", "cap-00003-fr");
  CHECK(t.language == "fr");
  CHECK(t.dim() == 8);
}

TEST_CASE("manifest validation lists offenders") {
  TempDir dir;
  SynthConfig cfg;
  cfg.train_items = 3;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 4;
  cfg.latent_dim = 2;
  cfg.frames_per_video = 2;
  cfg.languages = {};
  SynthOutput out = synth_generate(cfg);
  std::string manifest_path = write_synth_dataset(out, dir.file("ds"));

  SECTION("dangling caption id") {
    nlohmann::json j = manifest_to_json(out.manifest);
    j["items"][1]["captions"]["en"] = "cap-missing";
    write_file_bytes(manifest_path, j.dump());
    try {
      load_manifest(manifest_path);
      FAIL("expected DatasetError");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("cap-missing") != std::string::npos);
    }
  }
  SECTION("missing en caption") {
    nlohmann::json j = manifest_to_json(out.manifest);
    j["items"][0]["captions"].erase("en");
    write_file_bytes(manifest_path, j.dump());
    CHECK_THROWS_AS(load_manifest(manifest_path), DatasetError);
  }
  SECTION("duplicate video id") {
    nlohmann::json j = manifest_to_json(out.manifest);
    j["items"][1]["video_id"] = j["items"][0]["video_id"];
    write_file_bytes(manifest_path, j.dump());
    CHECK_THROWS_AS(load_manifest(manifest_path), DatasetError);
  }
  SECTION("unknown split name") {
    nlohmann::json j = manifest_to_json(out.manifest);
    j["items"][2]["split"] = "holdout";
    write_file_bytes(manifest_path, j.dump());
    CHECK_THROWS_AS(load_manifest(manifest_path), DatasetError);
  }
  SECTION("non-JSON manifest is a format error") {
    write_file_bytes(manifest_path, "not json {");
    CHECK_THROWS_AS(load_manifest(manifest_path), FormatError);
  }
}

TEST_CASE("synth_generate is deterministic per seed") {
  SynthConfig cfg;
  cfg.train_items = 4;
  cfg.val_items = 0;
  cfg.test_items = 2;
  cfg.model_dim = 8;
  cfg.latent_dim = 4;
  cfg.frames_per_video = 2;
  SynthOutput a = synth_generate(cfg);
  SynthOutput b = synth_generate(cfg);
  CHECK(serialize_archive(a.videos) == serialize_archive(b.videos));
  CHECK(serialize_archive(a.texts.at("en")) == serialize_archive(b.texts.at("en")));

  cfg.seed = 2;
  SynthOutput c = synth_generate(cfg);
  CHECK(serialize_archive(a.videos) != serialize_archive(c.videos));
}

TEST_CASE("zero spread and zero noise make captions identical across languages") {
  SynthConfig cfg;
  cfg.train_items = 3;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 6;
  cfg.latent_dim = 3;
  cfg.frames_per_video = 2;
  cfg.noise_scale = 0.0;
  cfg.language_spread = 0.0;
  cfg.languages = {"fr", "de"};
  SynthOutput out = synth_generate(cfg);
  for (int i = 0; i < 3; ++i) {
    const ArchiveRecord* en = out.texts.at("en").find("cap-0000" + std::to_string(i) + "-en");
    const ArchiveRecord* fr = out.texts.at("fr").find("cap-0000" + std::to_string(i) + "-fr");
    const ArchiveRecord* de = out.texts.at("de").find("cap-0000" + std::to_string(i) + "-de");
    REQUIRE(en);
    REQUIRE(fr);
    REQUIRE(de);
    CHECK(en->values == fr->values);
    CHECK(en->values == de->values);
  }
}

TEST_CASE("noise-free captions are exact linear images of the recovered latent") {
  SynthConfig cfg;
  cfg.train_items = 8;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 12;
  cfg.latent_dim = 5;
  cfg.frames_per_video = 3;
  cfg.noise_scale = 0.0;
  cfg.languages = {"fr"};
  SynthOutput out = synth_generate(cfg);

  for (int i = 0; i < 8; ++i) {
    const std::string tag = "0000" + std::to_string(i);
    Tensor frames = out.videos.record_matrix(*out.videos.find("vid-" + tag));
    Tensor mean_frame = mean_rows(frames);
    Tensor z = pinv_apply(out.video_map, mean_frame);
    Tensor predicted = reshape(matmul(out.text_maps.at("fr"), reshape(z, {cfg.latent_dim, 1})), {cfg.model_dim});
    Tensor caption = reshape(out.texts.at("fr").record_matrix(*out.texts.at("fr").find("cap-" + tag + "-fr")),
                             {cfg.model_dim});
    CHECK(cosine(predicted, caption) >= 1.0 - 1e-9);
  }
}

TEST_CASE("noise-free latent-space retrieval is exact for 64 items") {
  SynthConfig cfg;
  cfg.train_items = 64;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 32;
  cfg.latent_dim = 16;
  cfg.frames_per_video = 4;
  cfg.noise_scale = 0.0;
  cfg.languages = {};
  SynthOutput out = synth_generate(cfg);

  // Recover latents from both modalities, score by cosine: the matched pair
  // must win every row.
  std::vector<Tensor> caption_z, video_z;
  for (int i = 0; i < 64; ++i) {
    const std::string tag = detail::item_tag(i);
    Tensor cap = reshape(out.texts.at("en").record_matrix(*out.texts.at("en").find("cap-" + tag + "-en")),
                         {cfg.model_dim});
    caption_z.push_back(pinv_apply(out.text_maps.at("en"), cap));
    Tensor frames = out.videos.record_matrix(*out.videos.find("vid-" + tag));
    video_z.push_back(pinv_apply(out.video_map, mean_rows(frames)));
  }
  int correct = 0;
  for (int i = 0; i < 64; ++i) {
    int best = -1;
    double best_score = -2.0;
    for (int j = 0; j < 64; ++j) {
      double s = cosine(caption_z[static_cast<size_t>(i)], video_z[static_cast<size_t>(j)]);
      if (s > best_score) {
        best_score = s;
        best = j;
      }
    }
    if (best == i) ++correct;
  }
  CHECK(correct == 64);
}

TEST_CASE("batch_iter drops singleton tails and keeps small final batches") {
  TempDir dir;
  SynthConfig cfg;
  cfg.train_items = 65;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 4;
  cfg.latent_dim = 2;
  cfg.frames_per_video = 1;
  cfg.languages = {"fr"};
  SynthOutput out = synth_generate(cfg);
  std::string path = write_synth_dataset(out, dir.file("ds65"));
  Dataset ds = load_manifest(path);

  std::vector<std::string> langs = {"fr"};
  auto batches = batch_iter(ds, "train", 32, langs, 7, 0);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 32);
  CHECK(batches[1].size() == 32);

  // Union of yielded ids is the split minus exactly the dropped singleton.
  std::set<std::string> seen;
  for (const auto& b : batches)
    for (const TrainTriplet& t : b) seen.insert(t.video_id);
  CHECK(seen.size() == 64);

  SECTION("a final batch of two survives") {
    SynthConfig cfg66 = cfg;
    cfg66.train_items = 66;
    SynthOutput out66 = synth_generate(cfg66);
    std::string path66 = write_synth_dataset(out66, dir.file("ds66"));
    Dataset ds66 = load_manifest(path66);
    auto batches66 = batch_iter(ds66, "train", 32, langs, 7, 0);
    REQUIRE(batches66.size() == 3);
    CHECK(batches66[2].size() == 2);
  }
}

TEST_CASE("batch_iter permutations are epoch-keyed and reproducible") {
  TempDir dir;
  SynthConfig cfg;
  cfg.train_items = 16;
  cfg.val_items = 0;
  cfg.test_items = 0;
  cfg.model_dim = 4;
  cfg.latent_dim = 2;
  cfg.frames_per_video = 1;
  cfg.languages = {"fr", "de"};
  SynthOutput out = synth_generate(cfg);
  Dataset ds = load_manifest(write_synth_dataset(out, dir.file("ds")));

  std::vector<std::string> langs = {"fr", "de"};
  auto order_of = [](const std::vector<std::vector<TrainTriplet>>& batches) {
    std::vector<int> order;
    for (const auto& b : batches)
      for (const TrainTriplet& t : b) order.push_back(t.item_index);
    return order;
  };

  auto e0a = batch_iter(ds, "train", 8, langs, 5, 0);
  auto e0b = batch_iter(ds, "train", 8, langs, 5, 0);
  auto e1 = batch_iter(ds, "train", 8, langs, 5, 1);
  CHECK(order_of(e0a) == order_of(e0b));
  CHECK(order_of(e0a) != order_of(e1));

  // Language choices are deterministic too, and both languages occur.
  std::set<std::string> langs_seen;
  for (const auto& b : e0a)
    for (const TrainTriplet& t : b) langs_seen.insert(t.language);
  CHECK(langs_seen.size() == 2);
  for (size_t bi = 0; bi < e0a.size(); ++bi)
    for (size_t k = 0; k < e0a[bi].size(); ++k) CHECK(e0a[bi][k].language == e0b[bi][k].language);
}

TEST_CASE("batch_iter rejects splits smaller than two") {
  TempDir dir;
  SynthConfig cfg;
  cfg.train_items = 2;
  cfg.val_items = 1;
  cfg.test_items = 0;
  cfg.model_dim = 4;
  cfg.latent_dim = 2;
  cfg.frames_per_video = 1;
  cfg.languages = {};
  SynthOutput out = synth_generate(cfg);
  Dataset ds = load_manifest(write_synth_dataset(out, dir.file("ds")));
  std::vector<std::string> langs;
  CHECK_THROWS_AS(batch_iter(ds, "val", 8, langs, 1, 0), DatasetError);
}
