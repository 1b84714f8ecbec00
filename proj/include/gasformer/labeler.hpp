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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <queue>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "gasformer/error.hpp"
#include "gasformer/image.hpp"

namespace gasformer {

struct LabelerConfig {
  double contrast_low_pct = 2.0;
  double contrast_high_pct = 98.0;
  int thresh_block = 255;
  double thresh_offset = 20.0;
  std::size_t min_region_size = 20;
  std::vector<int> separation_y;  // rows at or below the smallest are cleared
  std::uint8_t class_id = 1;
  friend bool operator==(const LabelerConfig&, const LabelerConfig&) = default;
};

inline void validate(const LabelerConfig& c) {
  if (!(c.contrast_low_pct >= 0 && c.contrast_low_pct < c.contrast_high_pct && c.contrast_high_pct <= 100))
    throw ConfigError("labeler: need 0 <= contrast_low_pct < contrast_high_pct <= 100");
  if (c.thresh_block < 3 || c.thresh_block % 2 == 0)
    throw ConfigError("labeler.thresh_block must be odd and >= 3, got " + std::to_string(c.thresh_block));
  if (!std::isfinite(c.thresh_offset)) throw ConfigError("labeler.thresh_offset must be finite");
  if (c.class_id == 0) throw ConfigError("labeler.class_id must be non-zero");
}

inline nlohmann::json to_json(const LabelerConfig& c) {
  return {{"contrast_low_pct", c.contrast_low_pct}, {"contrast_high_pct", c.contrast_high_pct},
          {"thresh_block", c.thresh_block},         {"thresh_offset", c.thresh_offset},
          {"min_region_size", c.min_region_size},   {"separation_y", c.separation_y},
          {"class_id", c.class_id}};
}

inline LabelerConfig labeler_from_json(const nlohmann::json& j, const std::string& where = "labeler") {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  LabelerConfig c;
  for (const auto& [k, v] : j.items()) {
    try {
      if (k == "contrast_low_pct") c.contrast_low_pct = v.get<double>();
      else if (k == "contrast_high_pct") c.contrast_high_pct = v.get<double>();
      else if (k == "thresh_block") c.thresh_block = v.get<int>();
      else if (k == "thresh_offset") c.thresh_offset = v.get<double>();
      else if (k == "min_region_size") c.min_region_size = v.get<std::size_t>();
      else if (k == "separation_y") c.separation_y = v.get<std::vector<int>>();
      else if (k == "class_id") {
        const int id = v.get<int>();
        if (id < 1 || id > 255) throw ConfigError("'" + where + ".class_id' must be in 1..255");
        c.class_id = static_cast<std::uint8_t>(id);
      } else
        throw ConfigError("unknown key '" + where + "." + k + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("'" + where + "." + k + "' has the wrong type");
    }
  }
  validate(c);
  return c;
}

/// Per-pixel mean of equally sized frames.
inline GrayImage average_background(const std::vector<GrayImage>& frames) {
  if (frames.empty()) throw InputError("average_background: no frames");
  const std::size_t W = frames[0].width, H = frames[0].height;
  std::vector<double> acc(W * H, 0.0);
  for (const auto& f : frames) {
    if (!f.same_extent(W, H)) throw InputError("average_background: frames differ in size");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.data[i];
  }
  GrayImage out(W, H);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / static_cast<double>(frames.size()));
  return out;
}

/// Linear-interpolated percentile of `v` (p in [0, 100]).
inline double percentile(std::vector<float> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const std::size_t j = std::min(i + 1, v.size() - 1);
  return v[i] + (pos - static_cast<double>(i)) * (static_cast<double>(v[j]) - v[i]);
}

/// |frame - background| stretched so the low/high percentiles map to 0/255.
/// A zero-range difference maps to all zeros.
inline GrayImage subtract_enhance(const GrayImage& frame, const GrayImage& background, const LabelerConfig& cfg) {
  if (!frame.same_extent(background)) throw InputError("subtract_enhance: frame and background differ in size");
  GrayImage d(frame.width, frame.height);
  for (std::size_t i = 0; i < d.size(); ++i) d.data[i] = std::abs(frame.data[i] - background.data[i]);
  const double lo = percentile(d.data, cfg.contrast_low_pct), hi = percentile(d.data, cfg.contrast_high_pct);
  if (!(hi > lo)) {
    std::fill(d.data.begin(), d.data.end(), 0.f);
    return d;
  }
  for (auto& v : d.data) v = static_cast<float>(std::clamp((v - lo) / (hi - lo) * 255.0, 0.0, 255.0));
  return d;
}

/// Half-sample symmetric reflection of an index into [0, n).
inline std::size_t reflect_index(long i, std::size_t n) {
  const long N = static_cast<long>(n), period = 2 * N;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < N ? m : period - 1 - m);
}

/// Foreground iff intensity > local block mean + offset. The block is
/// centred on the pixel; out-of-range samples are mirrored.
inline BinaryImage adaptive_threshold(const GrayImage& img, int block, double offset) {
  if (block < 3 || block % 2 == 0) throw ConfigError("adaptive_threshold: block must be odd and >= 3");
  const std::size_t W = img.width, H = img.height, r = static_cast<std::size_t>(block / 2);
  const std::size_t PW = W + 2 * r, PH = H + 2 * r;
  // Integral image of the mirrored, padded frame.
  std::vector<double> S((PW + 1) * (PH + 1), 0.0);
  for (std::size_t y = 0; y < PH; ++y) {
    const std::size_t sy = reflect_index(static_cast<long>(y) - static_cast<long>(r), H);
    double row = 0;
    for (std::size_t x = 0; x < PW; ++x) {
      row += img.at(reflect_index(static_cast<long>(x) - static_cast<long>(r), W), sy);
      S[(y + 1) * (PW + 1) + x + 1] = S[y * (PW + 1) + x + 1] + row;
    }
  }
  const double area = static_cast<double>(block) * block;
  BinaryImage out(W, H);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t x1 = x + 2 * r + 1, y1 = y + 2 * r + 1;
      const double sum = S[y1 * (PW + 1) + x1] - S[y * (PW + 1) + x1] - S[y1 * (PW + 1) + x] + S[y * (PW + 1) + x];
      out.at(x, y) = img.at(x, y) > sum / area + offset ? 1 : 0;
    }
  return out;
}

/// Sobel gradient magnitude with mirrored borders.
inline GrayImage sobel_magnitude(const GrayImage& img) {
  const std::size_t W = img.width, H = img.height;
  GrayImage out(W, H);
  auto px = [&](long x, long y) -> double { return img.at(reflect_index(x, W), reflect_index(y, H)); };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const long X = static_cast<long>(x), Y = static_cast<long>(y);
      const double gx = px(X + 1, Y - 1) + 2 * px(X + 1, Y) + px(X + 1, Y + 1) - px(X - 1, Y - 1) - 2 * px(X - 1, Y) -
                        px(X - 1, Y + 1);
      const double gy = px(X - 1, Y + 1) + 2 * px(X, Y + 1) + px(X + 1, Y + 1) - px(X - 1, Y - 1) - 2 * px(X, Y - 1) -
                        px(X + 1, Y - 1);
      out.at(x, y) = static_cast<float>(std::hypot(gx, gy));
    }
  return out;
}

namespace labeler_detail {

constexpr std::array<std::pair<int, int>, 8> kNeighbours8{
    {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1}}};

/// 3x3 erosion (dilate = false) or dilation; outside the image counts as
/// the nearest edge pixel.
inline BinaryImage morph3(const BinaryImage& b, bool dilate) {
  BinaryImage out(b.width, b.height);
  const long W = static_cast<long>(b.width), H = static_cast<long>(b.height);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      bool acc = !dilate;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const bool v = b.at(static_cast<std::size_t>(std::clamp(x + dx, 0L, W - 1)),
                              static_cast<std::size_t>(std::clamp(y + dy, 0L, H - 1))) != 0;
          acc = dilate ? (acc || v) : (acc && v);
        }
      out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc ? 1 : 0;
    }
  return out;
}

}  // namespace labeler_detail

/// 8-connected components of non-zero pixels, labelled 1..n in raster order.
inline RegionLabels connected_components(const BinaryImage& b, std::size_t* count = nullptr) {
  RegionLabels lab(b.width, b.height, 0);
  std::int32_t next = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  for (std::size_t y = 0; y < b.height; ++y)
    for (std::size_t x = 0; x < b.width; ++x) {
      if (!b.at(x, y) || lab.at(x, y)) continue;
      ++next;
      lab.at(x, y) = next;
      stack.push_back({x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        for (auto [dx, dy] : labeler_detail::kNeighbours8) {
          const long nx = static_cast<long>(cx) + dx, ny = static_cast<long>(cy) + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<long>(b.width) || ny >= static_cast<long>(b.height)) continue;
          const auto ux = static_cast<std::size_t>(nx), uy = static_cast<std::size_t>(ny);
          if (b.at(ux, uy) && !lab.at(ux, uy)) {
            lab.at(ux, uy) = next;
            stack.push_back({ux, uy});
          }
        }
      }
    }
  if (count) *count = static_cast<std::size_t>(next);
  return lab;
}

/// Marker-based watershed on the Sobel elevation of `enhanced`. Markers are
/// the components of the 3x3-eroded foreground (a component that erodes
/// away entirely seeds itself) plus the complement of the 3x3-dilated
/// foreground as background. Returns region labels (0 = background).
inline RegionLabels watershed_refine(const GrayImage& enhanced, const BinaryImage& binary) {
  if (!enhanced.same_extent(binary)) throw InputError("watershed_refine: image and mask differ in size");
  const std::size_t W = binary.width, H = binary.height;
  const GrayImage elev = sobel_magnitude(enhanced);
  const BinaryImage eroded = labeler_detail::morph3(binary, false);
  const BinaryImage dilated = labeler_detail::morph3(binary, true);

  std::size_t n_comp = 0;
  const RegionLabels comps = connected_components(binary, &n_comp);
  std::vector<bool> has_interior(n_comp + 1, false);
  for (std::size_t i = 0; i < W * H; ++i)
    if (eroded.data[i]) has_interior[static_cast<std::size_t>(comps.data[i])] = true;
  BinaryImage seeds(W, H);
  for (std::size_t i = 0; i < W * H; ++i)
    if (eroded.data[i] || (binary.data[i] && !has_interior[static_cast<std::size_t>(comps.data[i])])) seeds.data[i] = 1;
  std::size_t n_seeds = 0;
  RegionLabels lab = connected_components(seeds, &n_seeds);
  if (n_seeds == 0) return RegionLabels(W, H, 0);

  constexpr std::int32_t kBackground = -1;
  for (std::size_t i = 0; i < W * H; ++i)
    if (!dilated.data[i]) lab.data[i] = kBackground;

  // (elevation, insertion order, pixel, label); FIFO among equal heights.
  using Item = std::tuple<float, std::uint64_t, std::size_t, std::int32_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  std::uint64_t order = 0;
  auto push_neighbours = [&](std::size_t i) {
    const long x = static_cast<long>(i % W), y = static_cast<long>(i / W);
    for (auto [dx, dy] : labeler_detail::kNeighbours8) {
      const long nx = x + dx, ny = y + dy;
      if (nx < 0 || ny < 0 || nx >= static_cast<long>(W) || ny >= static_cast<long>(H)) continue;
      const std::size_t j = static_cast<std::size_t>(ny) * W + static_cast<std::size_t>(nx);
      if (lab.data[j] == 0) pq.emplace(elev.data[j], order++, j, lab.data[i]);
    }
  };
  for (std::size_t i = 0; i < W * H; ++i)
    if (lab.data[i] != 0) push_neighbours(i);
  while (!pq.empty()) {
    const auto [e, o, i, l] = pq.top();
    pq.pop();
    if (lab.data[i] != 0) continue;
    lab.data[i] = l;
    push_neighbours(i);
  }
  for (auto& v : lab.data)
    if (v == kBackground) v = 0;
  return lab;
}

/// Clears rows at or below the separation lines, then keeps regions whose
/// remaining area is at least min_region_size. Output is {0, class_id}.
inline LabelMap region_filter(const RegionLabels& labels, const LabelerConfig& cfg) {
  const std::size_t W = labels.width, H = labels.height;
  std::size_t cut = H;
  for (int y : cfg.separation_y) cut = std::min(cut, static_cast<std::size_t>(std::max(0, y)));
  std::int32_t max_label = 0;
  for (auto v : labels.data) max_label = std::max(max_label, v);
  std::vector<std::size_t> area(static_cast<std::size_t>(max_label) + 1, 0);
  for (std::size_t y = 0; y < cut; ++y)
    for (std::size_t x = 0; x < W; ++x)
      if (labels.at(x, y) > 0) ++area[static_cast<std::size_t>(labels.at(x, y))];
  LabelMap out(W, H, 0);
  for (std::size_t y = 0; y < cut; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const std::int32_t l = labels.at(x, y);
      if (l > 0 && area[static_cast<std::size_t>(l)] >= cfg.min_region_size) out.at(x, y) = cfg.class_id;
    }
  return out;
}

inline LabelMap label_frame(const GrayImage& frame, const GrayImage& background, const LabelerConfig& cfg) {
  const GrayImage enhanced = subtract_enhance(frame, background, cfg);
  const BinaryImage binary = adaptive_threshold(enhanced, cfg.thresh_block, cfg.thresh_offset);
  return region_filter(watershed_refine(enhanced, binary), cfg);
}

/// Background averaging, subtraction + stretch, adaptive threshold,
/// watershed and region filtering for every frame.
inline std::vector<LabelMap> run_pipeline(const std::vector<GrayImage>& background_frames,
                                          const std::vector<GrayImage>& frames, const LabelerConfig& cfg) {
  validate(cfg);
  const GrayImage bg = average_background(background_frames);
  std::vector<LabelMap> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    if (!f.same_extent(bg)) throw InputError("run_pipeline: frame size differs from background");
    out.push_back(label_frame(f, bg, cfg));
  }
  return out;
}

// ------------------------------------------------------------ directory IO

/// PNG files in `dir`, ordered by the number in their name (then by name).
inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& de : std::filesystem::directory_iterator(dir))
    if (de.is_regular_file() && de.path().extension() == ".png") files.push_back(de.path());
  auto key = [](const std::filesystem::path& p) {
    const std::string s = p.stem().string();
    std::string digits;
    for (char ch : s)
      if (ch >= '0' && ch <= '9') digits += ch;
    digits.erase(0, std::min(digits.find_first_not_of('0'), digits.size()));
    return std::make_tuple(digits.size(), digits, s);
  };
  std::sort(files.begin(), files.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
  if (files.empty()) throw InputError("no PNG frames in " + dir.string());
  return files;
}

inline std::vector<GrayImage> read_frames(const std::filesystem::path& dir) {
  std::vector<GrayImage> out;
  for (const auto& p : list_frames(dir)) out.push_back(read_gray(p));
  return out;
}

/// Labels every frame in `frames_dir`; masks are written under `out_dir`
/// with the frame's file name. Returns the written paths.
inline std::vector<std::filesystem::path> label_directory(const std::filesystem::path& frames_dir,
                                                          const std::filesystem::path& background_dir,
                                                          const std::filesystem::path& out_dir,
                                                          const LabelerConfig& cfg) {
  const auto frame_files = list_frames(frames_dir);
  std::vector<GrayImage> frames;
  for (const auto& p : frame_files) frames.push_back(read_gray(p));
  const auto masks = run_pipeline(read_frames(background_dir), frames, cfg);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    written.push_back(out_dir / frame_files[i].filename());
    write_label_png(written.back(), masks[i]);
  }
  return written;
}

}  // namespace gasformer
