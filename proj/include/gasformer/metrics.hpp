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

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "json.hpp"

#include "gasformer/error.hpp"
#include "gasformer/image.hpp"

namespace gasformer {

/// K x K counts, rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : classes(k), counts(k * k, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * classes + pred]; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes != classes) throw DimensionError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Adds one count per pixel whose target is not `ignore_index`.
inline void confusion_accumulate(ConfusionMatrix& cm, const LabelMap& prediction, const LabelMap& target,
                                 int ignore_index = 255) {
  if (!prediction.same_extent(target)) throw DimensionError("confusion_accumulate: prediction/target extents differ");
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int t = target.data[i], p = prediction.data[i];
    if (t == ignore_index) continue;
    if (static_cast<std::size_t>(t) >= cm.classes || static_cast<std::size_t>(p) >= cm.classes)
      throw DataError("confusion_accumulate: class index out of range (target " + std::to_string(t) + ", prediction " +
                      std::to_string(p) + ")");
    ++cm.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
}

struct MetricsReport {
  std::vector<double> iou, fscore, precision, recall;
  /// Class appears in ground truth or prediction; only these enter the means.
  std::vector<bool> present;
  double miou = 0, mfscore = 0;
  std::uint64_t scored_pixels = 0;
};

inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t K = cm.classes;
  MetricsReport r;
  r.iou.assign(K, 0);
  r.fscore.assign(K, 0);
  r.precision.assign(K, 0);
  r.recall.assign(K, 0);
  r.present.assign(K, false);
  r.scored_pixels = cm.total();
  auto ratio = [](std::uint64_t a, std::uint64_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
  std::size_t n = 0;
  for (std::size_t c = 0; c < K; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < K; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c), fn = row - tp, fp = col - tp;
    r.present[c] = row + col > 0;
    r.iou[c] = ratio(tp, tp + fp + fn);
    r.precision[c] = ratio(tp, tp + fp);
    r.recall[c] = ratio(tp, tp + fn);
    // 2PR/(P+R) written in counts so the Dice-Jaccard identity is exact.
    r.fscore[c] = ratio(2 * tp, 2 * tp + fp + fn);
    if (r.present[c]) {
      r.miou += r.iou[c];
      r.mfscore += r.fscore[c];
      ++n;
    }
  }
  if (n) {
    r.miou /= static_cast<double>(n);
    r.mfscore /= static_cast<double>(n);
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r, const std::vector<std::string>& names = {}) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < r.iou.size(); ++c)
    per.push_back({{"class", c < names.size() ? names[c] : std::to_string(c)},
                   {"present", static_cast<bool>(r.present[c])},
                   {"IoU", r.iou[c]},
                   {"Fscore", r.fscore[c]},
                   {"precision", r.precision[c]},
                   {"recall", r.recall[c]}});
  return {{"mIoU", r.miou}, {"mFscore", r.mfscore}, {"scored_pixels", r.scored_pixels}, {"per_class", per}};
}

/// Per-class table in percent, one row per class, means last.
inline std::string metrics_table(const MetricsReport& r, const std::vector<std::string>& names = {}) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %10s %8s\n", "Class", "IoU", "Fscore", "Precision", "Recall");
  out += line;
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    const std::string name = c < names.size() ? names[c] : std::to_string(c);
    if (r.present[c])
      std::snprintf(line, sizeof line, "%-12s %8.2f %8.2f %10.2f %8.2f\n", name.c_str(), 100 * r.iou[c],
                    100 * r.fscore[c], 100 * r.precision[c], 100 * r.recall[c]);
    else
      std::snprintf(line, sizeof line, "%-12s %8s %8s %10s %8s\n", name.c_str(), "-", "-", "-", "-");
    out += line;
  }
  std::snprintf(line, sizeof line, "%-12s %8.2f %8.2f\n", "mean", 100 * r.miou, 100 * r.mfscore);
  out += line;
  return out;
}

}  // namespace gasformer
