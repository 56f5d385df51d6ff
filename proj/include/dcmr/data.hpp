#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcmr/dcm.hpp"
#include "dcmr/errors.hpp"
#include "dcmr/io.hpp"
#include "dcmr/rng.hpp"
#include "dcmr/tensor.hpp"

namespace dcmr {

// Embedding archives, dataset manifests, batch iteration and the synthetic
// correlated-triplet generator that stands in for the upstream encoders.
//
// Archive layout ("EMB1"):
//   magic[4] | u32 version=1 | u32 dim | u32 record_count
//   per record: u16 id_len | id utf-8 | u16 vector_count | count*dim f32

struct ArchiveRecord {
  std::string id;
  int vector_count = 0;
  std::vector<float> values;  // vector_count x dim, row-major
};

struct EmbeddingArchive {
  int dim = 0;
  std::vector<ArchiveRecord> records;

  const ArchiveRecord* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &records[it->second];
  }

  void add(ArchiveRecord rec) {
    if (rec.vector_count < 1) throw DatasetError("archive record '" + rec.id + "' must hold at least one vector");
    if (rec.values.size() != static_cast<size_t>(rec.vector_count) * static_cast<size_t>(dim))
      throw DatasetError("archive record '" + rec.id + "' payload does not match vector_count x dim");
    if (index_.count(rec.id)) throw DatasetError("duplicate archive id '" + rec.id + "'");
    index_[rec.id] = records.size();
    records.push_back(std::move(rec));
  }

  void reindex() {
    index_.clear();
    for (size_t i = 0; i < records.size(); ++i) {
      if (index_.count(records[i].id)) throw DatasetError("duplicate archive id '" + records[i].id + "'");
      index_[records[i].id] = i;
    }
  }

  // Promotes the stored 32-bit floats to doubles.
  Tensor record_matrix(const ArchiveRecord& rec) const {
    Tensor t = Tensor::zeros({rec.vector_count, dim});
    for (size_t i = 0; i < rec.values.size(); ++i) t.v[i] = static_cast<double>(rec.values[i]);
    return t;
  }

private:
  std::unordered_map<std::string, size_t> index_;
};

inline constexpr std::uint32_t kArchiveVersion = 1;

inline std::string serialize_archive(const EmbeddingArchive& archive) {
  ByteWriter w;
  w.str("EMB1");
  w.u32(kArchiveVersion);
  w.u32(static_cast<std::uint32_t>(archive.dim));
  w.u32(static_cast<std::uint32_t>(archive.records.size()));
  for (const ArchiveRecord& rec : archive.records) {
    if (rec.id.size() > 0xffff) throw DatasetError("archive id too long: '" + rec.id + "'");
    if (rec.vector_count > 0xffff) throw DatasetError("archive record '" + rec.id + "' has too many vectors");
    w.u16(static_cast<std::uint16_t>(rec.id.size()));
    w.str(rec.id);
    w.u16(static_cast<std::uint16_t>(rec.vector_count));
    for (float x : rec.values) w.f32(x);
  }
  return w.data();
}

inline void write_archive(const EmbeddingArchive& archive, const std::string& path) {
  if (archive.dim < 1) throw DatasetError("archive dim must be positive");
  write_file_bytes(path, serialize_archive(archive));
}

inline EmbeddingArchive parse_archive(const std::string& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.remaining() < 4 || r.str(4) != "EMB1") {
    ByteReader at0(bytes, what);
    at0.fail("bad magic, expected 'EMB1'");
  }
  std::uint32_t version = r.u32();
  if (version != kArchiveVersion) r.fail("unsupported archive version " + std::to_string(version));
  EmbeddingArchive archive;
  archive.dim = static_cast<int>(r.u32());
  if (archive.dim < 1) r.fail("archive dim must be positive");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    ArchiveRecord rec;
    std::uint16_t id_len = r.u16();
    rec.id = r.str(id_len);
    rec.vector_count = static_cast<int>(r.u16());
    if (rec.vector_count < 1) r.fail("record '" + rec.id + "' has zero vectors");
    const size_t n = static_cast<size_t>(rec.vector_count) * static_cast<size_t>(archive.dim);
    if (r.remaining() < n * 4)
      r.fail("record '" + rec.id + "' payload truncated: need " + std::to_string(n * 4) + " bytes, have " +
             std::to_string(r.remaining()));
    rec.values.resize(n);
    for (size_t k = 0; k < n; ++k) {
      float x = r.f32();
      if (!std::isfinite(x)) r.fail("record '" + rec.id + "' contains a non-finite value");
      rec.values[k] = x;
    }
    archive.records.push_back(std::move(rec));
  }
  if (!r.at_end()) r.fail("trailing bytes after last record");
  archive.reindex();
  return archive;
}

inline EmbeddingArchive read_archive(const std::string& path) {
  return parse_archive(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestItem {
  std::string video_id;
  std::string split;                            // train | val | test
  std::map<std::string, std::string> captions;  // language -> caption id
};

struct DatasetManifest {
  int dim = 0;
  std::string video_archive;                       // path, relative to the manifest
  std::map<std::string, std::string> text_archives;  // language -> path
  std::vector<ManifestItem> items;
  std::map<std::string, std::string> caption_texts;  // optional: caption id -> source text
};

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["dim"] = m.dim;
  j["video_archive"] = m.video_archive;
  j["text_archives"] = m.text_archives;
  j["items"] = nlohmann::json::array();
  for (const ManifestItem& item : m.items) {
    j["items"].push_back({{"video_id", item.video_id}, {"split", item.split}, {"captions", item.captions}});
  }
  if (!m.caption_texts.empty()) j["caption_texts"] = m.caption_texts;
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    m.dim = j.at("dim").get<int>();
    m.video_archive = j.at("video_archive").get<std::string>();
    m.text_archives = j.at("text_archives").get<std::map<std::string, std::string>>();
    for (const nlohmann::json& ij : j.at("items")) {
      ManifestItem item;
      item.video_id = ij.at("video_id").get<std::string>();
      item.split = ij.at("split").get<std::string>();
      item.captions = ij.at("captions").get<std::map<std::string, std::string>>();
      m.items.push_back(std::move(item));
    }
    if (j.contains("caption_texts")) m.caption_texts = j.at("caption_texts").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// Loaded manifest plus its archives, cross-validated.
struct Dataset {
  DatasetManifest manifest;
  EmbeddingArchive videos;
  std::map<std::string, EmbeddingArchive> texts;

  FrameEmbeddings frames(const std::string& video_id) const {
    const ArchiveRecord* rec = videos.find(video_id);
    if (!rec) throw DatasetError("video id '" + video_id + "' not in archive");
    return FrameEmbeddings(video_id, videos.record_matrix(*rec));
  }

  TextEmbedding caption(const std::string& language, const std::string& caption_id) const {
    auto it = texts.find(language);
    if (it == texts.end()) throw DatasetError("no text archive for language '" + language + "'");
    const ArchiveRecord* rec = it->second.find(caption_id);
    if (!rec) throw DatasetError("caption id '" + caption_id + "' not in '" + language + "' archive");
    Tensor m = it->second.record_matrix(*rec);
    return TextEmbedding(caption_id, language, reshape(m, {m.cols()}));
  }

  std::vector<int> split_indices(const std::string& split) const {
    std::vector<int> out;
    for (size_t i = 0; i < manifest.items.size(); ++i)
      if (manifest.items[i].split == split) out.push_back(static_cast<int>(i));
    return out;
  }

  void validate() const {
    std::set<std::string> seen_videos;
    std::vector<std::string> offenders;
    for (const ManifestItem& item : manifest.items) {
      if (!seen_videos.insert(item.video_id).second) offenders.push_back("duplicate video id " + item.video_id);
      if (item.split != "train" && item.split != "val" && item.split != "test")
        offenders.push_back("unknown split '" + item.split + "' for " + item.video_id);
      if (!videos.find(item.video_id)) offenders.push_back("missing video record " + item.video_id);
      if (!item.captions.count("en")) offenders.push_back("item " + item.video_id + " lacks an 'en' caption");
      for (const auto& [lang, cap_id] : item.captions) {
        auto it = texts.find(lang);
        if (it == texts.end()) {
          offenders.push_back("no text archive for language '" + lang + "' (caption " + cap_id + ")");
          continue;
        }
        const ArchiveRecord* rec = it->second.find(cap_id);
        if (!rec)
          offenders.push_back("dangling caption id " + cap_id + " (language " + lang + ")");
        else if (rec->vector_count != 1)
          offenders.push_back("caption " + cap_id + " must hold exactly one vector");
      }
    }
    if (videos.dim != manifest.dim) offenders.push_back("video archive dim does not match manifest dim");
    for (const auto& [lang, archive] : texts)
      if (archive.dim != manifest.dim) offenders.push_back("text archive '" + lang + "' dim mismatch");
    if (!offenders.empty()) {
      std::string msg = "manifest validation failed:";
      for (const std::string& o : offenders) msg += "\n  - " + o;
      throw DatasetError(msg);
    }
  }
};

inline Dataset load_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest " + path + " is not valid JSON: " + e.what(), e.byte);
  }
  Dataset ds;
  ds.manifest = manifest_from_json(j);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  ds.videos = read_archive(resolve(ds.manifest.video_archive));
  for (const auto& [lang, archive_path] : ds.manifest.text_archives)
    ds.texts[lang] = read_archive(resolve(archive_path));
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  int train_items = 512;
  int val_items = 0;
  int test_items = 128;
  int latent_dim = 16;
  int model_dim = 32;
  int frames_per_video = 8;
  double noise_scale = 0.1;
  // Per-language text maps share a common core; this is the relative weight
  // of the language-specific component (0 makes all caption maps identical).
  double language_spread = 0.5;
  std::vector<std::string> languages = {"fr"};  // non-English, "en" always present
  std::uint64_t seed = 1;

  int n_items() const { return train_items + val_items + test_items; }

  void validate() const {
    if (n_items() < 1) throw ConfigError("synthetic dataset needs at least one item");
    if (train_items < 0 || val_items < 0 || test_items < 0) throw ConfigError("split sizes must be non-negative");
    if (latent_dim < 1 || model_dim < 1 || frames_per_video < 1)
      throw ConfigError("latent-dim, model-dim and frames-per-video must be positive");
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw ConfigError("noise-scale must be finite and >= 0");
    if (!(language_spread >= 0.0)) throw ConfigError("language-spread must be >= 0");
    for (const std::string& lang : languages)
      if (lang == "en") throw ConfigError("languages list holds non-English codes; 'en' is implicit");
  }
};

struct SynthOutput {
  EmbeddingArchive videos;
  std::map<std::string, EmbeddingArchive> texts;  // "en" plus configured languages
  DatasetManifest manifest;                       // archive paths filled by write_synth_dataset
  Tensor video_map;                               // model_dim x latent_dim
  std::map<std::string, Tensor> text_maps;        // per language
};

namespace detail {

inline Tensor random_map(int rows, int cols, Rng& rng) {
  Tensor m = Tensor::zeros({rows, cols});
  const double sd = 1.0 / std::sqrt(double(cols));
  for (double& x : m.v) x = sd * rng.next_gaussian();
  return m;
}

inline std::vector<float> quantized(const Tensor& t) {
  std::vector<float> out(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i) out[i] = static_cast<float>(t.v[i]);
  return out;
}

inline std::string item_tag(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05d", i);
  return buf;
}

// Small fixed vocabulary for the English pseudo-captions fed to the
// translation pipeline. Content is irrelevant; determinism is not.
inline std::string pseudo_caption(std::uint64_t seed, int item) {
  static const char* kWords[] = {"river",  "lantern", "orbit",  "meadow", "cobalt", "harbor", "ember",  "signal",
                                 "willow", "canyon",  "mosaic", "vector", "saffron", "timber", "geyser", "prism"};
  Rng rng = rng_stream(seed, hash_str("caption-text"), static_cast<std::uint64_t>(item));
  std::string text;
  for (int w = 0; w < 5; ++w) {
    if (w) text += ' ';
    text += kWords[rng.next_below(16)];
  }
  text += " clip " + std::to_string(item);
  return text;
}

}  // namespace detail

// Latent-factor generator: item latent z ~ N(0, I); frames = A_v z + noise;
// caption in language l = A_l z + noise. Same item, same latent, every
// modality and language.
inline SynthOutput synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  out.videos.dim = cfg.model_dim;

  std::vector<std::string> all_langs = {"en"};
  for (const std::string& l : cfg.languages)
    if (std::find(all_langs.begin(), all_langs.end(), l) == all_langs.end()) all_langs.push_back(l);

  Rng shared_rng = rng_stream(cfg.seed, hash_str("map-shared"));
  Tensor shared_map = detail::random_map(cfg.model_dim, cfg.latent_dim, shared_rng);
  Rng video_rng = rng_stream(cfg.seed, hash_str("map-video"));
  out.video_map = detail::random_map(cfg.model_dim, cfg.latent_dim, video_rng);

  const double norm = std::sqrt(1.0 + cfg.language_spread * cfg.language_spread);
  for (const std::string& lang : all_langs) {
    Rng lang_rng = rng_stream(cfg.seed, hash_str("map-lang"), hash_str(lang));
    Tensor own = detail::random_map(cfg.model_dim, cfg.latent_dim, lang_rng);
    Tensor map = Tensor::zeros({cfg.model_dim, cfg.latent_dim});
    for (size_t i = 0; i < map.v.size(); ++i)
      map.v[i] = (shared_map.v[i] + cfg.language_spread * own.v[i]) / norm;
    out.text_maps[lang] = std::move(map);
    out.texts[lang].dim = cfg.model_dim;
  }

  out.manifest.dim = cfg.model_dim;
  for (int i = 0; i < cfg.n_items(); ++i) {
    Rng zr = rng_stream(cfg.seed, hash_str("latent"), static_cast<std::uint64_t>(i));
    Tensor z = Tensor::zeros({cfg.latent_dim, 1});
    for (double& x : z.v) x = zr.next_gaussian();

    const std::string tag = detail::item_tag(i);
    ArchiveRecord vrec;
    vrec.id = "vid-" + tag;
    vrec.vector_count = cfg.frames_per_video;
    Tensor base_frame = matmul(out.video_map, z);  // model_dim x 1
    Tensor frames = Tensor::zeros({cfg.frames_per_video, cfg.model_dim});
    for (int k = 0; k < cfg.frames_per_video; ++k) {
      Rng nr = rng_stream(cfg.seed, hash_str("frame-noise"), static_cast<std::uint64_t>(i),
                          static_cast<std::uint64_t>(k));
      for (int d = 0; d < cfg.model_dim; ++d)
        frames.at(k, d) = base_frame.at(d, 0) + cfg.noise_scale * nr.next_gaussian();
    }
    vrec.values = detail::quantized(frames);
    out.videos.add(std::move(vrec));

    ManifestItem item;
    item.video_id = "vid-" + tag;
    item.split = i < cfg.train_items ? "train" : (i < cfg.train_items + cfg.val_items ? "val" : "test");
    for (const std::string& lang : all_langs) {
      Rng nr = rng_stream(cfg.seed, hash_str("caption-noise"), static_cast<std::uint64_t>(i), hash_str(lang));
      Tensor cap = matmul(out.text_maps[lang], z);
      for (int d = 0; d < cfg.model_dim; ++d) cap.at(d, 0) += cfg.noise_scale * nr.next_gaussian();
      const std::string cap_id = "cap-" + tag + "-" + lang;
      ArchiveRecord crec;
      crec.id = cap_id;
      crec.vector_count = 1;
      crec.values = detail::quantized(reshape(cap, {cfg.model_dim}));
      out.texts[lang].add(std::move(crec));
      item.captions[lang] = cap_id;
    }
    out.manifest.caption_texts["cap-" + tag + "-en"] = detail::pseudo_caption(cfg.seed, i);
    out.manifest.items.push_back(std::move(item));
  }
  return out;
}

// Writes archives plus manifest.json under dir; returns the manifest path.
inline std::string write_synth_dataset(SynthOutput& out, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  out.manifest.video_archive = "videos.emb";
  write_archive(out.videos, (base / "videos.emb").string());
  out.manifest.text_archives.clear();
  for (const auto& [lang, archive] : out.texts) {
    std::string name = "text-" + lang + ".emb";
    out.manifest.text_archives[lang] = name;
    write_archive(archive, (base / name).string());
  }
  const std::string manifest_path = (base / "manifest.json").string();
  write_file_bytes(manifest_path, manifest_to_json(out.manifest).dump(2) + "\n");
  return manifest_path;
}

// ---------------------------------------------------------------------------
// Batch iteration

struct TrainTriplet {
  int item_index;
  std::string video_id;
  std::string en_caption_id;
  std::string language;         // sampled non-English language
  std::string lang_caption_id;  // caption id in that language
};

// Seeded per-(seed, epoch) permutation, fixed-size batches, final partial
// batch dropped when it cannot supply in-batch negatives (size < 2).
inline std::vector<std::vector<TrainTriplet>> batch_iter(const Dataset& ds, const std::string& split,
                                                         int batch_size, std::span<const std::string> languages,
                                                         std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
  std::vector<int> idx = ds.split_indices(split);
  if (idx.size() < 2) throw DatasetError("split '" + split + "' has fewer than 2 items");

  Rng shuffle_rng = rng_stream(seed, hash_str("shuffle"), epoch);
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(shuffle_rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }

  std::vector<std::vector<TrainTriplet>> batches;
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
    if (end - start < 2) break;  // a single item has no in-batch negatives
    std::vector<TrainTriplet> batch;
    for (size_t k = start; k < end; ++k) {
      const ManifestItem& item = ds.manifest.items[static_cast<size_t>(idx[k])];
      TrainTriplet t;
      t.item_index = idx[k];
      t.video_id = item.video_id;
      auto en_it = item.captions.find("en");
      if (en_it == item.captions.end()) throw DatasetError("item " + item.video_id + " lacks an 'en' caption");
      t.en_caption_id = en_it->second;
      if (!languages.empty()) {
        Rng pick = rng_stream(seed, hash_str("langpick"), epoch, static_cast<std::uint64_t>(idx[k]));
        t.language = languages[pick.next_below(languages.size())];
        auto cap_it = item.captions.find(t.language);
        if (cap_it == item.captions.end())
          throw DatasetError("item " + item.video_id + " has no caption for language '" + t.language + "'");
        t.lang_caption_id = cap_it->second;
      }
      batch.push_back(std::move(t));
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace dcmr
