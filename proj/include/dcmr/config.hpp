#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dcmr/data.hpp"
#include "dcmr/dcm.hpp"
#include "dcmr/errors.hpp"

namespace dcmr {

// JSON configuration blocks. Keys are kebab-case and mirror the CLI flags;
// partial objects overlay defaults, unknown keys are rejected outright.

struct TrainConfig {
  int batch_size = 32;
  int epochs = 15;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  double loss_weight_en = 1.0;
  double loss_weight_multi = 1.0;
  std::vector<std::string> languages = {"fr"};  // multilingual branch training languages
  bool multi_loss_sum_all = false;              // false: sample one language per item per step

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch-size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(lr_max >= 0.0) || !(lr_min >= 0.0)) throw ConfigError("learning rates must be >= 0");
    if (lr_min > lr_max) throw ConfigError("lr-min must not exceed lr-max");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight-decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("adam betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam-eps must be positive");
    if (loss_weight_en < 0.0 || loss_weight_multi < 0.0) throw ConfigError("loss weights must be >= 0");
    for (const std::string& l : languages)
      if (l == "en") throw ConfigError("training languages are the multilingual ones; 'en' is implicit");
    if (loss_weight_multi > 0.0 && languages.empty())
      throw ConfigError("multilingual loss enabled but no training languages given");
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                                const char* what) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("bad value for '") + key + "'");
    }
  }
}

}  // namespace detail

inline nlohmann::json dcm_config_to_json(const DcmConfig& c) {
  return nlohmann::json{{"model-dim", c.model_dim},
                        {"num-heads", c.num_heads},
                        {"fc-dim", c.fc_dim},
                        {"fc-two-layer", c.fc_two_layer},
                        {"num-blocks", c.num_blocks},
                        {"dropout-rate", c.dropout_rate},
                        {"ln-eps", c.ln_eps},
                        {"use-dcm", c.use_dcm},
                        {"share-branches", c.share_branches},
                        {"route-en-to-m", c.route_en_to_m},
                        {"sim-normalize", c.sim_normalize},
                        {"sim-temperature", c.sim_temperature},
                        {"sim-learnable-temp", c.sim_learnable_temp}};
}

inline void apply_dcm_config_json(DcmConfig& c, const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"model-dim", "num-heads", "fc-dim", "fc-two-layer", "num-blocks", "dropout-rate",
                               "ln-eps", "use-dcm", "share-branches", "route-en-to-m", "sim-normalize",
                               "sim-temperature", "sim-learnable-temp"},
                              "model config");
  detail::maybe(j, "model-dim", c.model_dim);
  detail::maybe(j, "num-heads", c.num_heads);
  detail::maybe(j, "fc-dim", c.fc_dim);
  detail::maybe(j, "fc-two-layer", c.fc_two_layer);
  detail::maybe(j, "num-blocks", c.num_blocks);
  detail::maybe(j, "dropout-rate", c.dropout_rate);
  detail::maybe(j, "ln-eps", c.ln_eps);
  detail::maybe(j, "use-dcm", c.use_dcm);
  detail::maybe(j, "share-branches", c.share_branches);
  detail::maybe(j, "route-en-to-m", c.route_en_to_m);
  detail::maybe(j, "sim-normalize", c.sim_normalize);
  detail::maybe(j, "sim-temperature", c.sim_temperature);
  detail::maybe(j, "sim-learnable-temp", c.sim_learnable_temp);
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"batch-size", c.batch_size},
                        {"epochs", c.epochs},
                        {"lr-max", c.lr_max},
                        {"lr-min", c.lr_min},
                        {"weight-decay", c.weight_decay},
                        {"adam-beta1", c.adam_beta1},
                        {"adam-beta2", c.adam_beta2},
                        {"adam-eps", c.adam_eps},
                        {"seed", c.seed},
                        {"loss-weight-en", c.loss_weight_en},
                        {"loss-weight-multi", c.loss_weight_multi},
                        {"languages", c.languages},
                        {"multi-loss-sum-all", c.multi_loss_sum_all}};
}

inline void apply_train_config_json(TrainConfig& c, const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"batch-size", "epochs", "lr-max", "lr-min", "weight-decay", "adam-beta1",
                               "adam-beta2", "adam-eps", "seed", "loss-weight-en", "loss-weight-multi",
                               "languages", "multi-loss-sum-all"},
                              "train config");
  detail::maybe(j, "batch-size", c.batch_size);
  detail::maybe(j, "epochs", c.epochs);
  detail::maybe(j, "lr-max", c.lr_max);
  detail::maybe(j, "lr-min", c.lr_min);
  detail::maybe(j, "weight-decay", c.weight_decay);
  detail::maybe(j, "adam-beta1", c.adam_beta1);
  detail::maybe(j, "adam-beta2", c.adam_beta2);
  detail::maybe(j, "adam-eps", c.adam_eps);
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "loss-weight-en", c.loss_weight_en);
  detail::maybe(j, "loss-weight-multi", c.loss_weight_multi);
  detail::maybe(j, "languages", c.languages);
  detail::maybe(j, "multi-loss-sum-all", c.multi_loss_sum_all);
}

inline nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return nlohmann::json{{"train-items", c.train_items},
                        {"val-items", c.val_items},
                        {"test-items", c.test_items},
                        {"latent-dim", c.latent_dim},
                        {"model-dim", c.model_dim},
                        {"frames-per-video", c.frames_per_video},
                        {"noise-scale", c.noise_scale},
                        {"language-spread", c.language_spread},
                        {"languages", c.languages},
                        {"seed", c.seed}};
}

inline void apply_synth_config_json(SynthConfig& c, const nlohmann::json& j) {
  detail::reject_unknown_keys(j,
                              {"train-items", "val-items", "test-items", "latent-dim", "model-dim",
                               "frames-per-video", "noise-scale", "language-spread", "languages", "seed"},
                              "synth config");
  detail::maybe(j, "train-items", c.train_items);
  detail::maybe(j, "val-items", c.val_items);
  detail::maybe(j, "test-items", c.test_items);
  detail::maybe(j, "latent-dim", c.latent_dim);
  detail::maybe(j, "model-dim", c.model_dim);
  detail::maybe(j, "frames-per-video", c.frames_per_video);
  detail::maybe(j, "noise-scale", c.noise_scale);
  detail::maybe(j, "language-spread", c.language_spread);
  detail::maybe(j, "languages", c.languages);
  detail::maybe(j, "seed", c.seed);
}

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// Hex digest of the canonicalized config: nlohmann objects iterate sorted by
// key, so the dump is stable under key reordering in the sources.
inline std::string config_hash(const nlohmann::json& merged) { return sha256_hex(merged.dump()); }

}  // namespace dcmr
