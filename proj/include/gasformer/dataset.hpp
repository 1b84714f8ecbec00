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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "gasformer/error.hpp"
#include "gasformer/image.hpp"
#include "gasformer/kernels.hpp"
#include "gasformer/tensor.hpp"

namespace gasformer {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- classes

/// Ordered class names; index 0 is background.
struct ClassMap {
  std::vector<std::string> names;
  std::size_t size() const { return names.size(); }
  friend bool operator==(const ClassMap&, const ClassMap&) = default;
};

/// Flow-rate classes: background, then 10..100 SCCM.
inline ClassMap mr_class_map() {
  ClassMap m{{"background"}};
  for (int s = 10; s <= 100; s += 10) m.names.push_back(std::to_string(s));
  return m;
}

inline ClassMap cr_class_map() { return ClassMap{{"background", "gas"}}; }

inline ClassMap class_map_for(std::size_t n) {
  if (n == 11) return mr_class_map();
  if (n == 2) return cr_class_map();
  if (n < 2) throw ConfigError("a class map needs background plus at least one class");
  ClassMap m{{"background"}};
  for (std::size_t i = 1; i < n; ++i) m.names.push_back("level" + std::to_string(i));
  return m;
}

inline ClassMap read_class_map(const fs::path& file) {
  std::ifstream f(file);
  if (!f) throw ManifestError("missing class list " + file.string());
  ClassMap m;
  for (std::string line; std::getline(f, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) m.names.push_back(line);
  }
  if (m.names.size() < 2) throw ManifestError(file.string() + " must list background plus at least one class");
  return m;
}

inline void write_class_map(const fs::path& file, const ClassMap& m) {
  std::ofstream f(file);
  if (!f) throw DataError("cannot write " + file.string());
  for (const auto& n : m.names) f << n << '\n';
}

// --------------------------------------------------------------- manifest

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ManifestError("unknown split '" + s + "'");
}

struct ManifestEntry {
  std::string stem;
  fs::path image;  // relative to root
  fs::path mask;
  Split split = Split::train;
  std::optional<int> sample_class;  // per-sequence class metadata, when known
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  fs::path root;
  std::uint64_t seed = 0;
  ClassMap classes;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
      if (e.split == s) out.push_back(&e);
    return out;
  }
  std::size_t count(Split s) const { return split(s).size(); }
};

/// Portable Fisher-Yates (std::shuffle's sequence is library-specific).
template <typename V>
void seeded_shuffle(std::vector<V>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

/// Split assignment for n stems sorted lexicographically: index -> split.
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  seeded_shuffle(order, seed);
  const auto n_hold = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  std::vector<Split> out(n, Split::train);
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_hold) out[order[i]] = Split::val;
    else if (i < 2 * n_hold) out[order[i]] = Split::test;
  }
  return out;
}

/// Enumerates root/{train,val,test,.}/images/*.png, pairs each with the
/// sibling masks/ file of the same name and re-splits deterministically.
inline Manifest scan_and_split(const fs::path& root, std::uint64_t seed) {
  if (!fs::is_directory(root)) throw ManifestError("dataset root " + root.string() + " is not a directory");
  Manifest m;
  m.root = root;
  m.seed = seed;
  m.classes = read_class_map(root / "classes.txt");
  std::map<std::string, ManifestEntry> by_stem;
  std::vector<std::string> missing;
  for (const char* sub : {"train", "val", "test", "."}) {
    const fs::path dir = root / sub / "images";
    if (!fs::is_directory(dir)) continue;
    for (const auto& de : fs::directory_iterator(dir)) {
      if (!de.is_regular_file() || de.path().extension() != ".png") continue;
      const std::string stem = de.path().stem().string();
      const fs::path img = fs::relative(de.path(), root).lexically_normal();
      const fs::path mask = (fs::path(sub) / "masks" / de.path().filename()).lexically_normal();
      if (!fs::is_regular_file(root / mask)) {
        missing.push_back((root / mask).string());
        continue;
      }
      if (by_stem.count(stem)) throw ManifestError("duplicate sample name " + stem);
      by_stem[stem] = ManifestEntry{stem, img, mask, Split::train, std::nullopt};
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    std::string msg = "missing mask for " + std::to_string(missing.size()) + " image(s):";
    for (const auto& p : missing) msg += "\n  " + p;
    throw ManifestError(msg);
  }
  if (by_stem.empty()) throw ManifestError("no images found under " + root.string());
  for (auto& [stem, e] : by_stem) m.entries.push_back(std::move(e));
  const auto splits = assign_splits(m.entries.size(), seed);
  for (std::size_t i = 0; i < m.entries.size(); ++i) m.entries[i].split = splits[i];
  return m;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json s{{"name", e.stem}, {"image", e.image.generic_string()}, {"mask", e.mask.generic_string()},
                     {"split", split_name(e.split)}};
    if (e.sample_class) s["class"] = *e.sample_class;
    samples.push_back(std::move(s));
  }
  return {{"seed", m.seed}, {"classes", m.classes.names}, {"samples", samples}};
}

inline void write_manifest(const Manifest& m, const fs::path& file) {
  std::ofstream f(file);
  if (!f) throw DataError("cannot write " + file.string());
  f << to_json(m).dump(2) << '\n';
}

/// Reads root/manifest.json.
inline Manifest read_manifest(const fs::path& root) {
  const fs::path file = root / "manifest.json";
  std::ifstream f(file);
  if (!f) throw ManifestError("missing " + file.string());
  Manifest m;
  m.root = root;
  try {
    const auto j = nlohmann::json::parse(f);
    m.seed = j.at("seed").get<std::uint64_t>();
    m.classes.names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& s : j.at("samples")) {
      ManifestEntry e{s.at("name").get<std::string>(), s.at("image").get<std::string>(),
                      s.at("mask").get<std::string>(), split_from_name(s.at("split").get<std::string>()),
                      std::nullopt};
      if (s.contains("class")) e.sample_class = s.at("class").get<int>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(file.string() + ": " + e.what());
  }
  return m;
}

/// manifest.json when present, otherwise a fresh scan.
inline Manifest open_dataset(const fs::path& root, std::uint64_t seed) {
  return fs::exists(root / "manifest.json") ? read_manifest(root) : scan_and_split(root, seed);
}

// ----------------------------------------------------------------- sample

struct Sample {
  Tensor<float> image;  // 3 x H x W, 0-255
  LabelMap mask;
};

inline Tensor<float> image_tensor(const PngImage& p) {
  Tensor<float> t(Shape{3, p.height, p.width});
  const std::size_t hw = p.width * p.height;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) t[c * hw + i] = p.pixels[i * p.channels + (p.channels == 3 ? c : 0)];
  return t;
}

/// Rejects mask values outside [0, num_classes) other than `ignore_index`.
inline void check_mask(const LabelMap& m, std::size_t num_classes, std::uint8_t ignore_index, const std::string& what) {
  for (std::uint8_t v : m.data)
    if (v >= num_classes && v != ignore_index)
      throw DataError(what + ": mask value " + std::to_string(v) + " is not a class index (" +
                      std::to_string(num_classes) + " classes)");
}

inline LabelMap load_mask(const fs::path& path, std::size_t num_classes, std::uint8_t ignore_index = 255) {
  const PngImage p = read_png(path);
  if (p.channels != 1) throw DataError(path.string() + ": masks must be single-channel");
  LabelMap m(p.width, p.height);
  m.data = p.pixels;
  check_mask(m, num_classes, ignore_index, path.string());
  return m;
}

inline void save_mask(const LabelMap& mask, const fs::path& path) { write_label_png(path, mask); }

inline Sample load_sample(const Manifest& m, const ManifestEntry& e, std::uint8_t ignore_index = 255) {
  Sample s{image_tensor(read_png(m.root / e.image)), load_mask(m.root / e.mask, m.classes.size(), ignore_index)};
  if (s.mask.width != s.image.dim(2) || s.mask.height != s.image.dim(1))
    throw DataError("image and mask extents differ for " + e.stem);
  return s;
}

inline PngImage to_png(const Tensor<float>& image) {
  const std::size_t H = image.dim(1), W = image.dim(2), hw = H * W;
  PngImage p{W, H, 3, std::vector<std::uint8_t>(hw * 3)};
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      p.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(image[c * hw + i]), 0L, 255L));
  return p;
}

// ----------------------------------------------------------- augmentation

struct AugmentConfig {
  std::size_t base_w = 640, base_h = 480;
  double ratio_low = 0.5, ratio_high = 2.0;
  std::size_t crop_w = 512, crop_h = 512;
  float pad_image = 0.f;
  std::uint8_t pad_mask = 255;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

inline void validate(const AugmentConfig& c) {
  if (!(c.ratio_low > 0 && c.ratio_low < c.ratio_high)) throw ConfigError("augment: need 0 < ratio_low < ratio_high");
  if (!c.base_w || !c.base_h || !c.crop_w || !c.crop_h) throw ConfigError("augment: extents must be positive");
}

/// Target size when fitting (w, h) into the base scale times `ratio`,
/// keeping aspect ratio.
inline std::pair<std::size_t, std::size_t> rescale_size(std::size_t w, std::size_t h, const AugmentConfig& c,
                                                        double ratio) {
  const double long_t = ratio * static_cast<double>(std::max(c.base_w, c.base_h));
  const double short_t = ratio * static_cast<double>(std::min(c.base_w, c.base_h));
  const double f = std::min(long_t / static_cast<double>(std::max(w, h)), short_t / static_cast<double>(std::min(w, h)));
  return {std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(w) * f + 0.5)),
          std::max<std::size_t>(1, static_cast<std::size_t>(static_cast<double>(h) * f + 0.5))};
}

inline Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t w, std::size_t h) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const auto ty = kernels::bilinear_taps(H, h), tx = kernels::bilinear_taps(W, w);
  Tensor<float> out(Shape{C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const double top = img.at(c, a.i0, b.i0) * (1 - b.frac) + img.at(c, a.i0, b.i1) * b.frac;
        const double bot = img.at(c, a.i1, b.i0) * (1 - b.frac) + img.at(c, a.i1, b.i1) * b.frac;
        out.at(c, y, x) = static_cast<float>(top * (1 - a.frac) + bot * a.frac);
      }
  return out;
}

inline LabelMap resize_nearest(const LabelMap& m, std::size_t w, std::size_t h) {
  LabelMap out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(m.height - 1, y * m.height / h);
    for (std::size_t x = 0; x < w; ++x) out.at(x, y) = m.at(std::min(m.width - 1, x * m.width / w), sy);
  }
  return out;
}

/// Applies a fixed ratio, pads to the crop size and crops at (x0, y0).
inline Sample augment_with(const Sample& s, const AugmentConfig& c, double ratio, double crop_u, double crop_v) {
  const auto [w, h] = rescale_size(s.mask.width, s.mask.height, c, ratio);
  Tensor<float> img = resize_bilinear(s.image, w, h);
  LabelMap mask = resize_nearest(s.mask, w, h);
  const std::size_t pw = std::max(w, c.crop_w), ph = std::max(h, c.crop_h);
  const auto x0 = static_cast<std::size_t>(crop_u * static_cast<double>(pw - c.crop_w + 1));
  const auto y0 = static_cast<std::size_t>(crop_v * static_cast<double>(ph - c.crop_h + 1));
  Sample out{Tensor<float>(Shape{img.dim(0), c.crop_h, c.crop_w}, c.pad_image), LabelMap(c.crop_w, c.crop_h, c.pad_mask)};
  for (std::size_t y = 0; y < c.crop_h; ++y)
    for (std::size_t x = 0; x < c.crop_w; ++x) {
      const std::size_t sx = x + x0, sy = y + y0;
      if (sx >= w || sy >= h) continue;
      out.mask.at(x, y) = mask.at(sx, sy);
      for (std::size_t ch = 0; ch < img.dim(0); ++ch) out.image.at(ch, y, x) = img.at(ch, sy, sx);
    }
  return out;
}

/// Random rescale (ratio ~ U[low, high]), pad, random crop.
inline Sample augment(const Sample& s, const AugmentConfig& c, std::mt19937_64& rng) {
  validate(c);
  std::uniform_real_distribution<double> ratio(c.ratio_low, c.ratio_high), u(0.0, 1.0);
  const double r = ratio(rng);
  const double cu = std::min(u(rng), std::nextafter(1.0, 0.0));
  const double cv = std::min(u(rng), std::nextafter(1.0, 0.0));
  return augment_with(s, c, r, cu, cv);
}

// --------------------------------------------------------------- synthesis

struct SynthConfig {
  double bg_low = 60, bg_high = 150;  // range of the vertical gradient end points
  double noise_sigma = 3;
  double alpha_per_class = 0.08;     // blend weight towards white per class step
  double mask_fraction = 0.2;        // of the plume peak
  double sigma_min = 0.06, sigma_max = 0.16;  // blob std, fraction of min(H, W)
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"bg_low", c.bg_low},
          {"bg_high", c.bg_high},
          {"noise_sigma", c.noise_sigma},
          {"alpha_per_class", c.alpha_per_class},
          {"mask_fraction", c.mask_fraction},
          {"sigma_min", c.sigma_min},
          {"sigma_max", c.sigma_max}};
}

inline SynthConfig synth_from_json(const nlohmann::json& j, const std::string& where = "synth") {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be an object");
  SynthConfig c;
  for (const auto& [k, v] : j.items()) {
    double* field = k == "bg_low"            ? &c.bg_low
                    : k == "bg_high"         ? &c.bg_high
                    : k == "noise_sigma"     ? &c.noise_sigma
                    : k == "alpha_per_class" ? &c.alpha_per_class
                    : k == "mask_fraction"   ? &c.mask_fraction
                    : k == "sigma_min"       ? &c.sigma_min
                    : k == "sigma_max"       ? &c.sigma_max
                                             : nullptr;
    if (!field) throw ConfigError("unknown key '" + where + "." + k + "'");
    if (!v.is_number()) throw ConfigError("'" + where + "." + k + "' must be a number");
    *field = v.get<double>();
  }
  if (!(c.sigma_min > 0 && c.sigma_min <= c.sigma_max)) throw ConfigError(where + ": need 0 < sigma_min <= sigma_max");
  if (!(c.mask_fraction > 0 && c.mask_fraction < 1)) throw ConfigError(where + ".mask_fraction must be in (0, 1)");
  if (!(c.noise_sigma >= 0)) throw ConfigError(where + ".noise_sigma must be non-negative");
  return c;
}

struct PlumeField {
  std::vector<double> p;  // normalized plume contribution, peak 1
  std::size_t width = 0, height = 0;
};

namespace synth_detail {

struct Blob {
  double cx, cy, sx, sy, theta, amp;
};

/// 1-4 rotated anisotropic Gaussians drifting upward from a source point.
inline std::vector<Blob> draw_blobs(std::mt19937_64& rng, std::size_t H, std::size_t W, const SynthConfig& c) {
  std::uniform_int_distribution<int> nblobs(1, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double ext = static_cast<double>(std::min(H, W));
  const int n = nblobs(rng);
  double cx = (0.3 + 0.4 * u(rng)) * W, cy = (0.35 + 0.4 * u(rng)) * H;
  std::vector<Blob> blobs;
  for (int b = 0; b < n; ++b) {
    Blob bl{cx, cy, 0, 0, 0, 0};
    bl.sx = (c.sigma_min + (c.sigma_max - c.sigma_min) * u(rng)) * ext;
    bl.sy = (c.sigma_min + (c.sigma_max - c.sigma_min) * u(rng)) * ext;
    bl.theta = std::numbers::pi * u(rng);
    bl.amp = 0.5 + 0.5 * u(rng);
    blobs.push_back(bl);
    cx = std::clamp(cx + (u(rng) - 0.5) * 0.3 * W, 0.15 * W, 0.85 * W);
    cy = std::clamp(cy - (0.05 + 0.15 * u(rng)) * H, 0.15 * H, 0.85 * H);
  }
  return blobs;
}

/// Small frame-to-frame change of a plume: centres wander, widths and
/// strengths fluctuate by up to 10%.
inline std::vector<Blob> jitter_blobs(std::vector<Blob> blobs, std::mt19937_64& rng, std::size_t H, std::size_t W) {
  std::normal_distribution<double> step(0.0, 0.015);
  std::uniform_real_distribution<double> scale(0.9, 1.1);
  for (auto& b : blobs) {
    b.cx += step(rng) * W;
    b.cy += step(rng) * H;
    b.sx *= scale(rng);
    b.sy *= scale(rng);
    b.amp *= scale(rng);
  }
  return blobs;
}

inline PlumeField render(const std::vector<Blob>& blobs, std::size_t H, std::size_t W) {
  PlumeField f{std::vector<double>(H * W, 0.0), W, H};
  for (const Blob& b : blobs) {
    const double ct = std::cos(b.theta), st = std::sin(b.theta);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = x + 0.5 - b.cx, dy = y + 0.5 - b.cy;
        const double a = (ct * dx + st * dy) / b.sx, q = (-st * dx + ct * dy) / b.sy;
        f.p[y * W + x] += b.amp * std::exp(-0.5 * (a * a + q * q));
      }
  }
  const double peak = *std::max_element(f.p.begin(), f.p.end());
  for (auto& v : f.p) v /= peak;
  return f;
}

inline PlumeField plume_field(std::mt19937_64& rng, std::size_t H, std::size_t W, const SynthConfig& c) {
  return render(draw_blobs(rng, H, W, c), H, W);
}

inline std::vector<double> gradient_background(double top, double bottom, std::size_t H, std::size_t W) {
  std::vector<double> bg(H * W);
  for (std::size_t y = 0; y < H; ++y) {
    const double t = H > 1 ? static_cast<double>(y) / static_cast<double>(H - 1) : 0.0;
    for (std::size_t x = 0; x < W; ++x) bg[y * W + x] = top + (bottom - top) * t;
  }
  return bg;
}

inline double blend(double bg, double noise, double alpha, double p) {
  const double a = std::min(1.0, alpha * p);
  return std::clamp((1 - a) * (bg + noise) + a * 255.0, 0.0, 255.0);
}

}  // namespace synth_detail

/// Synthetic low-contrast plume over a noisy vertical gradient. The mask
/// marks plume pixels above `mask_fraction` of the peak with class `k`;
/// k = 0 draws the same random stream but blends nothing.
inline Sample synth_plume(std::mt19937_64& rng, std::size_t k, std::size_t H, std::size_t W,
                          const SynthConfig& c = {}) {
  if (k > 255) throw ConfigError("synth_plume: class index must fit in 8 bits");
  std::uniform_real_distribution<double> lvl(c.bg_low, c.bg_high);
  const double top = lvl(rng), bottom = lvl(rng);
  const auto bg = synth_detail::gradient_background(top, bottom, H, W);
  const PlumeField f = synth_detail::plume_field(rng, H, W, c);
  std::normal_distribution<double> noise(0.0, c.noise_sigma);
  Sample s{Tensor<float>(Shape{3, H, W}), LabelMap(W, H)};
  const double alpha = c.alpha_per_class * static_cast<double>(k);
  for (std::size_t i = 0; i < H * W; ++i) {
    const auto v = static_cast<float>(synth_detail::blend(bg[i], noise(rng), alpha, f.p[i]));
    for (std::size_t ch = 0; ch < 3; ++ch) s.image[ch * H * W + i] = v;
    if (k > 0 && f.p[i] > c.mask_fraction) s.mask.data[i] = static_cast<std::uint8_t>(k);
  }
  return s;
}

/// A fixed scene filmed before and during one release: background-only
/// frames, plume frames (one plume, jittered per frame) and ground-truth
/// masks (values 0 / class_id).
struct PlumeSequence {
  std::vector<GrayImage> background;
  std::vector<GrayImage> frames;
  std::vector<LabelMap> masks;
};

inline PlumeSequence synth_plume_sequence(std::mt19937_64& rng, std::size_t n_background, std::size_t n_frames,
                                          std::size_t H, std::size_t W, std::size_t k, std::uint8_t class_id,
                                          const SynthConfig& c = {}) {
  std::uniform_real_distribution<double> lvl(c.bg_low, c.bg_high);
  const double top = lvl(rng), bottom = lvl(rng);
  const auto bg = synth_detail::gradient_background(top, bottom, H, W);
  std::normal_distribution<double> noise(0.0, c.noise_sigma);
  const double alpha = c.alpha_per_class * static_cast<double>(k);
  const auto blobs = synth_detail::draw_blobs(rng, H, W, c);
  PlumeSequence seq;
  auto frame = [&](const std::vector<double>* p) {
    GrayImage g(W, H);
    for (std::size_t i = 0; i < H * W; ++i)
      g.data[i] = static_cast<float>(synth_detail::blend(bg[i], noise(rng), p ? alpha : 0.0, p ? (*p)[i] : 0.0));
    return g;
  };
  for (std::size_t i = 0; i < n_background; ++i) seq.background.push_back(frame(nullptr));
  for (std::size_t i = 0; i < n_frames; ++i) {
    const PlumeField f = synth_detail::render(synth_detail::jitter_blobs(blobs, rng, H, W), H, W);
    seq.frames.push_back(frame(&f.p));
    LabelMap m(W, H);
    for (std::size_t j = 0; j < H * W; ++j)
      if (f.p[j] > c.mask_fraction) m.data[j] = class_id;
    seq.masks.push_back(std::move(m));
  }
  return seq;
}

/// Writes `count` synthetic samples in the dataset layout, classes cycling
/// through 0..num_classes-1, plus classes.txt and manifest.json.
inline Manifest write_synthetic_dataset(const fs::path& root, std::size_t num_classes, std::size_t count,
                                        std::size_t size, std::uint64_t seed, const SynthConfig& c = {}) {
  if (count == 0) throw ConfigError("synth: count must be positive");
  if (size == 0) throw ConfigError("synth: size must be positive");
  Manifest m;
  m.root = root;
  m.seed = seed;
  m.classes = class_map_for(num_classes);
  const auto splits = assign_splits(count, seed);
  const int digits = std::max<int>(4, static_cast<int>(std::to_string(count - 1).size()));
  for (const char* s : {"train", "val", "test"}) {
    fs::create_directories(root / s / "images");
    fs::create_directories(root / s / "masks");
  }
  write_class_map(root / "classes.txt", m.classes);
  for (std::size_t i = 0; i < count; ++i) {
    std::string stem = std::to_string(i);
    stem.insert(0, static_cast<std::size_t>(digits) - stem.size(), '0');
    stem = "synth_" + stem;
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (i + 1)));
    const std::size_t k = i % num_classes;
    const Sample s = synth_plume(rng, k, size, size, c);
    const fs::path sub = split_name(splits[i]);
    ManifestEntry e{stem, sub / "images" / (stem + ".png"), sub / "masks" / (stem + ".png"), splits[i],
                    static_cast<int>(k)};
    write_png(root / e.image, to_png(s.image));
    save_mask(s.mask, root / e.mask);
    m.entries.push_back(std::move(e));
  }
  write_manifest(m, root / "manifest.json");
  return m;
}

}  // namespace gasformer
