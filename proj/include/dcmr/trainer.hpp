#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcmr/config.hpp"
#include "dcmr/data.hpp"
#include "dcmr/dcm.hpp"
#include "dcmr/errors.hpp"
#include "dcmr/io.hpp"
#include "dcmr/loss.hpp"
#include "dcmr/tensor.hpp"

namespace dcmr {

// Mini-batch trainer: AdamW with decoupled weight decay, cosine learning-rate
// decay to a floor, counter-keyed shuffling and dropout so a run is a pure
// function of (dataset bytes, configs, seed).

inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
  if (total_steps < 1) throw ContractError("total steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ContractError("step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(3.141592653589793 * double(step) / double(total_steps)));
}

struct OptimizerState {
  std::map<std::string, Tensor> m;  // first moments, keyed like the params
  std::map<std::string, Tensor> v;  // second moments
  std::int64_t step = 0;
};

inline OptimizerState init_optimizer(const DcmParams& params, const DcmConfig& cfg) {
  OptimizerState state;
  for_each_param(const_cast<DcmParams&>(params), cfg, [&](const std::string& name, Tensor& t) {
    state.m[name] = Tensor::zeros(t.shape);
    state.v[name] = Tensor::zeros(t.shape);
  });
  return state;
}

// One AdamW update: bias-corrected moments, decay applied directly to the
// weights (never through the gradient term). Pure: inputs stay untouched.
inline std::pair<DcmParams, OptimizerState> adamw_step(const DcmParams& params,
                                                       const std::map<std::string, Tensor>& grads,
                                                       const OptimizerState& state, double lr,
                                                       const TrainConfig& cfg, const DcmConfig& dcm_cfg) {
  DcmParams out = params;
  OptimizerState next = state;
  next.step = state.step + 1;
  const double t = static_cast<double>(next.step);
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);

  for_each_param(out, dcm_cfg, [&](const std::string& name, Tensor& theta) {
    auto git = grads.find(name);
    const Tensor* g = git == grads.end() ? nullptr : &git->second;
    if (g) {
      if (!same_shape(*g, theta))
        throw DimensionError("gradient shape mismatch for '" + name + "'");
      for (double x : g->v)
        if (!std::isfinite(x)) throw NumericError("non-finite gradient for '" + name + "', step aborted");
    }
    Tensor& m = next.m.at(name);
    Tensor& v = next.v.at(name);
    for (size_t i = 0; i < theta.v.size(); ++i) {
      const double gi = g ? g->v[i] : 0.0;
      m.v[i] = cfg.adam_beta1 * m.v[i] + (1.0 - cfg.adam_beta1) * gi;
      v.v[i] = cfg.adam_beta2 * v.v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      theta.v[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps)) + lr * cfg.weight_decay * theta.v[i];
    }
    check_finite(theta, "adamw_step");
  });
  return {std::move(out), std::move(next)};
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout ("DCMC"):
//   magic[4] | u32 version | u32 json_len | json (config echo, step, seed)
//   then named tensors until EOF:
//   u16 name_len | name | u8 rank | rank * u32 dims | numel * f64

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DcmConfig dcm;
  TrainConfig train;
  DcmParams params;
  OptimizerState opt;
  std::int64_t step = 0;

  nlohmann::json config_echo() const {
    return nlohmann::json{{"dcm", dcm_config_to_json(dcm)}, {"train", train_config_to_json(train)}, {"step", step}};
  }
};

namespace detail {

inline void write_named_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) throw ContractError("tensor name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.str(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  for (double x : t.v) w.f64(x);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.str("DCMC");
  w.u32(kCheckpointVersion);
  const std::string json = c.config_echo().dump();
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.str(json);
  for_each_param(const_cast<DcmParams&>(c.params), c.dcm,
                 [&](const std::string& name, Tensor& t) { detail::write_named_tensor(w, name, t); });
  for (const auto& [name, t] : c.opt.m) detail::write_named_tensor(w, "opt.m." + name, t);
  for (const auto& [name, t] : c.opt.v) detail::write_named_tensor(w, "opt.v." + name, t);
  return w.data();
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(c));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.remaining() < 4 || r.str(4) != "DCMC") {
    ByteReader at0(bytes, what);
    at0.fail("bad magic, expected 'DCMC'");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t json_len = r.u32();
  nlohmann::json echo;
  try {
    echo = nlohmann::json::parse(r.str(json_len));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("config block is not valid JSON: ") + e.what());
  }

  Checkpoint c;
  try {
    apply_dcm_config_json(c.dcm, echo.at("dcm"));
    apply_train_config_json(c.train, echo.at("train"));
    c.step = echo.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("config block incomplete: ") + e.what());
  }
  c.dcm.validate();

  std::map<std::string, Tensor> tensors;
  while (!r.at_end()) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const int rank = static_cast<int>(r.u8());
    Shape shape;
    std::int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      int d = static_cast<int>(r.u32());
      if (d < 1) r.fail("tensor '" + name + "' has a non-positive dimension");
      shape.push_back(d);
      numel *= d;
    }
    if (r.remaining() < static_cast<size_t>(numel) * 8)
      r.fail("tensor '" + name + "' payload truncated");
    std::vector<double> values(static_cast<size_t>(numel));
    for (auto& x : values) {
      x = r.f64();
      if (!std::isfinite(x)) r.fail("tensor '" + name + "' contains a non-finite value");
    }
    if (tensors.count(name)) r.fail("duplicate tensor '" + name + "'");
    tensors[name] = Tensor(std::move(shape), std::move(values));
  }

  c.params = init_params(c.dcm, 0);  // shapes only; every tensor is replaced below
  for_each_param(c.params, c.dcm, [&](const std::string& name, Tensor& t) {
    auto it = tensors.find(name);
    if (it == tensors.end()) r.fail("checkpoint lacks tensor '" + name + "'");
    if (it->second.shape != t.shape) r.fail("tensor '" + name + "' has the wrong shape for the config echo");
    t = it->second;
    tensors.erase(it);
  });
  c.opt.step = c.step;
  for_each_param(c.params, c.dcm, [&](const std::string& name, Tensor& t) {
    auto mit = tensors.find("opt.m." + name);
    auto vit = tensors.find("opt.v." + name);
    if (mit == tensors.end() || vit == tensors.end()) r.fail("checkpoint lacks optimizer state for '" + name + "'");
    if (mit->second.shape != t.shape || vit->second.shape != t.shape)
      r.fail("optimizer state shape mismatch for '" + name + "'");
    c.opt.m[name] = mit->second;
    c.opt.v[name] = vit->second;
    tensors.erase(mit);
    tensors.erase("opt.v." + name);
  });
  if (!tensors.empty()) r.fail("checkpoint holds unexpected tensor '" + tensors.begin()->first + "'");
  return c;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
  std::int64_t wall_ms = 0;
};

inline std::string train_log_lines(const std::vector<EpochLog>& logs) {
  std::string out;
  for (const EpochLog& l : logs) {
    nlohmann::json j{{"epoch", l.epoch}, {"mean_loss", l.mean_loss}, {"lr", l.lr}, {"wall_ms", l.wall_ms}};
    out += j.dump() + "\n";
  }
  return out;
}

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> logs;
};

namespace detail {

inline std::int64_t steps_per_epoch(std::int64_t split_size, int batch_size) {
  std::int64_t full = batch_size >= 2 ? split_size / batch_size : 0;
  std::int64_t rem = batch_size >= 2 ? split_size % batch_size : 0;
  return full + (rem >= 2 ? 1 : 0);
}

}  // namespace detail

// Deterministic end-to-end training. Every stochastic choice (shuffle,
// language pick, dropout mask) is keyed by (seed, epoch/step, item), never by
// a shared stream, so disabling one branch cannot shift another's draws.
inline TrainResult train_run(const Dataset& ds, const DcmConfig& dcm_cfg, const TrainConfig& train_cfg,
                             const std::optional<Checkpoint>& resume = std::nullopt) {
  dcm_cfg.validate();
  train_cfg.validate();
  const bool train_multi = train_cfg.loss_weight_multi > 0.0;
  if (train_multi)
    for (const std::string& lang : train_cfg.languages)
      if (!ds.manifest.text_archives.count(lang))
        throw DatasetError("training language '" + lang + "' has no text archive");

  const std::vector<int> train_idx = ds.split_indices("train");
  if (train_idx.size() < 2) throw DatasetError("train split has fewer than 2 items");
  const std::int64_t per_epoch = detail::steps_per_epoch(static_cast<std::int64_t>(train_idx.size()),
                                                         train_cfg.batch_size);
  if (per_epoch == 0 && train_cfg.epochs > 0)
    throw ConfigError("batch-size " + std::to_string(train_cfg.batch_size) +
                      " cannot form a contrastive batch (needs >= 2 items)");
  const std::int64_t total_steps = per_epoch * train_cfg.epochs;

  Checkpoint state;
  state.dcm = dcm_cfg;
  state.train = train_cfg;
  if (resume) {
    if (dcm_config_to_json(resume->dcm) != dcm_config_to_json(dcm_cfg) ||
        train_config_to_json(resume->train) != train_config_to_json(train_cfg))
      throw ConfigError("resume checkpoint was produced under a different configuration");
    if (resume->step % per_epoch != 0)
      throw ConfigError("resume checkpoint does not sit on an epoch boundary");
    state.params = resume->params;
    state.opt = resume->opt;
    state.step = resume->step;
  } else {
    state.params = init_params(dcm_cfg, train_cfg.seed);
    state.opt = init_optimizer(state.params, dcm_cfg);
    state.step = 0;
  }

  const std::vector<std::string> sample_langs = train_multi ? train_cfg.languages : std::vector<std::string>{};
  std::vector<EpochLog> logs;
  std::int64_t step = state.step;

  for (int epoch = static_cast<int>(step / std::max<std::int64_t>(per_epoch, 1)); epoch < train_cfg.epochs;
       ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    auto batches = batch_iter(ds, "train", train_cfg.batch_size,
                              train_cfg.multi_loss_sum_all ? std::vector<std::string>{} : sample_langs,
                              train_cfg.seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    double last_lr = 0.0;

    for (const auto& batch : batches) {
      last_lr = cosine_lr(step, std::max<std::int64_t>(total_steps, 1), train_cfg.lr_max, train_cfg.lr_min);

      GradTape tape;
      DcmParams tracked = track_params(tape, state.params, dcm_cfg);

      std::vector<Tensor> en_texts, en_reps;
      for (const TrainTriplet& item : batch) {
        FrameEmbeddings frames = ds.frames(item.video_id);
        TextEmbedding en_cap = ds.caption("en", item.en_caption_id);
        const std::uint64_t item_seed =
            rng_stream(train_cfg.seed, hash_str("dropout-step"), static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(item.item_index))
                .next_u64();
        en_texts.push_back(en_cap.vector);
        en_reps.push_back(dcm_forward(en_cap, frames, tracked, branch_for("en", dcm_cfg), Mode::Train,
                                      hash_mix(item_seed, hash_str("branch-e")), dcm_cfg, &tape));
      }

      const Tensor* log_temp = dcm_cfg.sim_learnable_temp ? &tracked.log_temp : nullptr;
      SimilarityMatrix s_en = similarity_matrix(en_texts, en_reps, dcm_cfg.sim_normalize, dcm_cfg.sim_temperature,
                                                &tape, log_temp);
      Tensor loss = scale(branch_loss(s_en, &tape), train_cfg.loss_weight_en, &tape);

      if (train_multi) {
        auto multi_term = [&](const std::string& fixed_lang) {
          std::vector<Tensor> texts, reps;
          for (const TrainTriplet& item : batch) {
            const std::string lang = fixed_lang.empty() ? item.language : fixed_lang;
            const ManifestItem& mi = ds.manifest.items[static_cast<size_t>(item.item_index)];
            auto cap_it = mi.captions.find(lang);
            if (cap_it == mi.captions.end())
              throw DatasetError("item " + mi.video_id + " has no caption for language '" + lang + "'");
            TextEmbedding cap = ds.caption(lang, cap_it->second);
            FrameEmbeddings frames = ds.frames(item.video_id);
            const std::uint64_t item_seed =
                rng_stream(train_cfg.seed, hash_str("dropout-step"), static_cast<std::uint64_t>(step),
                           static_cast<std::uint64_t>(item.item_index))
                    .next_u64();
            texts.push_back(cap.vector);
            reps.push_back(dcm_forward(cap, frames, tracked, Branch::Multilingual, Mode::Train,
                                       hash_mix(item_seed, hash_str("branch-m")), dcm_cfg, &tape));
          }
          SimilarityMatrix s = similarity_matrix(texts, reps, dcm_cfg.sim_normalize, dcm_cfg.sim_temperature,
                                                 &tape, log_temp);
          return branch_loss(s, &tape);
        };

        Tensor multi;
        if (train_cfg.multi_loss_sum_all) {
          bool first = true;
          for (const std::string& lang : train_cfg.languages) {
            Tensor term = multi_term(lang);
            multi = first ? term : add(multi, term, &tape);
            first = false;
          }
        } else {
          multi = multi_term("");
        }
        loss = add(loss, scale(multi, train_cfg.loss_weight_multi, &tape), &tape);
      }

      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("loss diverged (epoch " + std::to_string(epoch) + ", step " + std::to_string(step) + ")");
      loss_sum += loss_value;

      Gradients grads = reverse_gradients(tape, loss);
      std::map<std::string, Tensor> grad_map;
      for_each_param(tracked, dcm_cfg,
                     [&](const std::string& name, Tensor& t) { grad_map[name] = grads.of(t); });
      auto [next_params, next_opt] = adamw_step(state.params, grad_map, state.opt, last_lr, train_cfg, dcm_cfg);
      state.params = std::move(next_params);
      state.opt = std::move(next_opt);
      ++step;
    }

    const auto epoch_end = std::chrono::steady_clock::now();
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = batches.empty() ? 0.0 : loss_sum / double(batches.size());
    log.lr = last_lr;
    log.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(epoch_end - epoch_start).count();
    logs.push_back(log);
  }

  state.step = step;
  TrainResult result;
  result.checkpoint = std::move(state);
  result.logs = std::move(logs);
  return result;
}

}  // namespace dcmr
