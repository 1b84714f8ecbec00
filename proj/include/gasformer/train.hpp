/*
 * Copyright (c) 2026, The Gasformer C++ Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gasformer/dataset.hpp"
#include "gasformer/metrics.hpp"
#include "gasformer/network.hpp"
#include "gasformer/optim.hpp"

namespace gasformer {

struct TrainConfig {
  std::size_t batch_size = 2;
  ScheduleConfig schedule;  // total_iters is the iteration count
  AdamConfig adam;
  AugmentConfig augment;
  /// Validate every this many iterations; 0 means total_iters / 10.
  std::uint64_t val_interval = 0;
  /// Learning-rate multiplier for decoder parameters.
  double head_lr_mult = 1.0;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& t) {
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (!(t.head_lr_mult > 0)) throw ConfigError("train.head_lr_mult must be positive");
  validate(t.schedule);
  validate(t.augment);
}

inline std::uint64_t effective_val_interval(const TrainConfig& t) {
  return t.val_interval ? t.val_interval : std::max<std::uint64_t>(1, t.schedule.total_iters / 10);
}

struct TrainLogLine {
  std::uint64_t iter;
  double lr, loss;
};

struct ValLogLine {
  std::uint64_t iter;
  double miou, mfscore;
};

struct TrainResult {
  OptimState<float> optim;
  std::vector<TrainLogLine> log;
  std::vector<ValLogLine> val;
};

// ------------------------------------------------------------- evaluation

using Predictor = std::function<LabelMap(const Sample&)>;

/// Confusion over every sample, whole-image prediction.
inline MetricsReport evaluate_with(const Predictor& predict, const std::vector<Sample>& samples, std::size_t num_classes,
                                   int ignore_index = 255) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  ConfusionMatrix cm(num_classes);
  for (const auto& s : samples) confusion_accumulate(cm, predict(s), s.mask, ignore_index);
  return metrics_from_confusion(cm);
}

inline Predictor model_predictor(const Model<float>& model) {
  return [&model](const Sample& s) { return infer(model, normalize_image<float>(s.image, model.config)).labels; };
}

inline MetricsReport evaluate(const Model<float>& model, const std::vector<Sample>& samples) {
  return evaluate_with(model_predictor(model), samples, model.config.num_classes, model.config.ignore_index);
}

inline std::vector<Sample> load_split(const Manifest& m, Split s, std::uint8_t ignore_index = 255) {
  std::vector<Sample> out;
  for (const ManifestEntry* e : m.split(s)) out.push_back(load_sample(m, *e, ignore_index));
  return out;
}

inline MetricsReport evaluate(const Model<float>& model, const Manifest& m, Split s) {
  if (m.classes.size() != model.config.num_classes)
    throw ConfigError("dataset has " + std::to_string(m.classes.size()) + " classes, model has " +
                      std::to_string(model.config.num_classes));
  return evaluate(model, load_split(m, s, static_cast<std::uint8_t>(model.config.ignore_index)));
}

// --------------------------------------------------------------- training

namespace train_detail {

inline double grad_norm(const std::vector<Tensor<float>>& grads) {
  double s = 0;
  for (const auto& g : grads)
    for (float v : g.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

class CsvLog {
 public:
  CsvLog(const std::optional<std::filesystem::path>& path, const char* header) {
    if (!path) return;
    f_.open(*path, std::ios::trunc);
    if (!f_) throw DataError("cannot write " + path->string());
    f_ << header << '\n';
  }
  void line(std::uint64_t it, double a, double b) {
    if (!f_.is_open()) return;
    f_ << it << ',' << fmt(a) << ',' << fmt(b) << '\n';
    f_.flush();
  }

 private:
  static std::string fmt(double v) {
    std::ostringstream s;
    s.precision(9);
    s << v;
    return s.str();
  }
  std::ofstream f_;
};

}  // namespace train_detail

/// One forward/backward over a batch; returns the batch-mean loss and fills
/// `grads` (parameter order).
inline double batch_gradients(const Model<float>& model, const std::vector<Sample>& batch,
                              const std::vector<std::uint64_t>& nmf_seeds, std::vector<Tensor<float>>& grads) {
  const ModelConfig& cfg = model.config;
  Tape<float> tape;
  BoundParams<float> p(tape, model.params, true);
  Var<float> total;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sample& s = batch[b];
    const std::size_t H = s.mask.height, W = s.mask.width;
    ForwardContext<float> ctx;
    ctx.train = true;
    ctx.nmf_seed = nmf_seeds[b];
    Var<float> x = tape.leaf(normalize_image<float>(s.image, cfg));
    Var<float> logits = ops::bilinear_resize(forward(p, cfg, x, ctx), H, W);
    Var<float> ce = ops::cross_entropy(logits, std::span<const std::uint8_t>(s.mask.data), cfg.ignore_index);
    total = total.valid() ? ops::add(total, ce) : ce;
  }
  Var<float> loss = ops::scale(total, 1.0f / static_cast<float>(batch.size()));
  tape.backward(loss);
  grads.assign(model.params.size(), Tensor<float>());
  for (std::size_t i = 0; i < model.params.size(); ++i)
    if (tape.has_grad(p.at(i))) grads[i] = tape.grad(p.at(i));
  return static_cast<double>(loss.value()[0]);
}

/// Trains in place. Batches are drawn with replacement from `train_set` and
/// augmented; validation on `val_set` runs every effective_val_interval
/// iterations. With `log_dir` set, train_log.csv and val_log.csv are written.
inline TrainResult train(Model<float>& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const TrainConfig& tc, std::uint64_t seed,
                         const std::optional<std::filesystem::path>& log_dir = std::nullopt,
                         const std::function<void(const TrainLogLine&)>& on_step = {}) {
  validate(tc);
  if (train_set.empty()) throw DataError("train: empty training set");
  const std::uint64_t total = tc.schedule.total_iters, val_every = effective_val_interval(tc);
  std::vector<double> lr_scale(model.params.size(), 1.0);
  for (std::size_t i = 0; i < model.params.size(); ++i)
    if (model.params[i].name.rfind("decoder.", 0) == 0) lr_scale[i] = tc.head_lr_mult;

  std::optional<std::filesystem::path> tpath, vpath;
  if (log_dir) {
    std::filesystem::create_directories(*log_dir);
    tpath = *log_dir / "train_log.csv";
    vpath = *log_dir / "val_log.csv";
  }
  train_detail::CsvLog tlog(tpath, "iter,lr,loss"), vlog(vpath, "iter,mIoU,mFscore");

  TrainResult res;
  res.optim = make_optim_state(model.params);
  std::mt19937_64 rng(seed);
  std::vector<Tensor<float>> grads;
  double last_norm = 0;
  for (std::uint64_t it = 0; it < total; ++it) {
    const double lr = lr_at(it, tc.schedule);
    std::vector<Sample> batch;
    std::vector<std::uint64_t> nmf_seeds;
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      const std::size_t idx = static_cast<std::size_t>(rng() % train_set.size());
      batch.push_back(augment(train_set[idx], tc.augment, rng));
      nmf_seeds.push_back(rng());
    }
    double loss = 0;
    try {
      loss = batch_gradients(model, batch, nmf_seeds, grads);
    } catch (const NumericError& e) {
      throw NumericError("training diverged at iteration " + std::to_string(it) + " (lr " + std::to_string(lr) +
                         ", previous grad norm " + std::to_string(last_norm) + "): " + e.what());
    }
    last_norm = train_detail::grad_norm(grads);
    if (!std::isfinite(loss) || !std::isfinite(last_norm))
      throw NumericError("non-finite loss or gradient at iteration " + std::to_string(it) + " (lr " +
                         std::to_string(lr) + ", loss " + std::to_string(loss) + ", grad norm " +
                         std::to_string(last_norm) + ")");
    adamw_step(model.params, grads, res.optim, lr, tc.adam, &lr_scale);
    res.log.push_back({it, lr, loss});
    tlog.line(it, lr, loss);
    if (on_step) on_step(res.log.back());
    if (!val_set.empty() && (it + 1) % val_every == 0) {
      const MetricsReport r = evaluate(model, val_set);
      res.val.push_back({it + 1, r.miou, r.mfscore});
      vlog.line(it + 1, r.miou, r.mfscore);
    }
  }
  return res;
}

inline TrainResult train(Model<float>& model, const Manifest& m, const TrainConfig& tc, std::uint64_t seed,
                         const std::optional<std::filesystem::path>& log_dir = std::nullopt,
                         const std::function<void(const TrainLogLine&)>& on_step = {}) {
  if (m.classes.size() != model.config.num_classes)
    throw ConfigError("dataset has " + std::to_string(m.classes.size()) + " classes, model has " +
                      std::to_string(model.config.num_classes));
  const auto ignore = static_cast<std::uint8_t>(model.config.ignore_index);
  return train(model, load_split(m, Split::train, ignore), load_split(m, Split::val, ignore), tc, seed, log_dir,
               on_step);
}

// ------------------------------------------------------------------- JSON

inline nlohmann::json to_json(const AugmentConfig& a) {
  return {{"base_w", a.base_w}, {"base_h", a.base_h}, {"ratio_low", a.ratio_low}, {"ratio_high", a.ratio_high},
          {"crop_w", a.crop_w}, {"crop_h", a.crop_h}, {"pad_image", a.pad_image}, {"pad_mask", a.pad_mask}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},      {"schedule", to_json(t.schedule)},
          {"adam", to_json(t.adam)},         {"augment", to_json(t.augment)},
          {"val_interval", t.val_interval}, {"head_lr_mult", t.head_lr_mult}};
}

namespace train_detail {

template <typename F>
void each_key(const nlohmann::json& j, const std::string& where, F&& f) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (!f(k, v)) throw ConfigError("unknown key '" + where + "." + k + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + where + "." + k + "' has the wrong type");
    }
  }
}

}  // namespace train_detail

inline TrainConfig train_from_json(const nlohmann::json& j, const std::string& where = "train") {
  TrainConfig t;
  using train_detail::each_key;
  each_key(j, where, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "batch_size") t.batch_size = v.get<std::size_t>();
    else if (k == "val_interval") t.val_interval = v.get<std::uint64_t>();
    else if (k == "head_lr_mult") t.head_lr_mult = v.get<double>();
    else if (k == "schedule")
      each_key(v, where + ".schedule", [&](const std::string& k2, const nlohmann::json& v2) {
        auto& s = t.schedule;
        if (k2 == "base_lr") s.base_lr = v2.get<double>();
        else if (k2 == "warmup_iters") s.warmup_iters = v2.get<std::uint64_t>();
        else if (k2 == "warmup_start_factor") s.warmup_start_factor = v2.get<double>();
        else if (k2 == "total_iters") s.total_iters = v2.get<std::uint64_t>();
        else if (k2 == "poly_power") s.poly_power = v2.get<double>();
        else if (k2 == "min_lr") s.min_lr = v2.get<double>();
        else return false;
        return true;
      });
    else if (k == "adam")
      each_key(v, where + ".adam", [&](const std::string& k2, const nlohmann::json& v2) {
        auto& a = t.adam;
        if (k2 == "beta1") a.beta1 = v2.get<double>();
        else if (k2 == "beta2") a.beta2 = v2.get<double>();
        else if (k2 == "eps") a.eps = v2.get<double>();
        else if (k2 == "weight_decay") a.weight_decay = v2.get<double>();
        else return false;
        return true;
      });
    else if (k == "augment")
      each_key(v, where + ".augment", [&](const std::string& k2, const nlohmann::json& v2) {
        auto& a = t.augment;
        if (k2 == "base_w") a.base_w = v2.get<std::size_t>();
        else if (k2 == "base_h") a.base_h = v2.get<std::size_t>();
        else if (k2 == "ratio_low") a.ratio_low = v2.get<double>();
        else if (k2 == "ratio_high") a.ratio_high = v2.get<double>();
        else if (k2 == "crop_w") a.crop_w = v2.get<std::size_t>();
        else if (k2 == "crop_h") a.crop_h = v2.get<std::size_t>();
        else if (k2 == "pad_image") a.pad_image = v2.get<float>();
        else if (k2 == "pad_mask") a.pad_mask = v2.get<std::uint8_t>();
        else return false;
        return true;
      });
    else
      return false;
    return true;
  });
  validate(t);
  return t;
}

}  // namespace gasformer
