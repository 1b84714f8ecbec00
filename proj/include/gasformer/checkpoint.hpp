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

// Binary checkpoint:
//   "GASF" | u32 version (=1) | u32 n | n bytes canonical JSON
//   then records until EOF:
//   u32 name_len | name | u8 dtype (0 = f32) | u8 rank | rank x u32 dims | f32 payload
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "gasformer/config.hpp"
#include "gasformer/network.hpp"

namespace gasformer {

inline constexpr char kCheckpointMagic[4] = {'G', 'A', 'S', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  ModelConfig config;
  std::uint64_t iteration = 0;
  /// Model parameters first (registration order), then any extra records.
  std::vector<NamedTensor> tensors;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  bool done() const { return pos_ == buf_.size(); }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 4);
  ckpt_detail::put_u32(out, kCheckpointVersion);
  const std::string header = canonical_json(Json{{"config", to_json(ck.config)}, {"iteration", ck.iteration}});
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& t : ck.tensors) {
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(0);
    out.push_back(static_cast<char>(t.value.rank()));
    for (std::size_t d : t.value.shape()) ckpt_detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.value.data()) ckpt_detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& buf) {
  ckpt_detail::Reader r(buf);
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic");
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const std::string header = r.bytes(r.u32());
  try {
    const Json j = Json::parse(header);
    ck.config = model_from_json(j.at("config"));
    ck.iteration = j.at("iteration").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what());
  }
  while (!r.done()) {
    NamedTensor t;
    t.name = r.bytes(r.u32());
    if (r.u8() != 0) throw FormatError("unsupported dtype tag in record " + t.name);
    const std::uint8_t rank = r.u8();
    Shape s(rank);
    for (auto& d : s) {
      d = r.u32();
      if (d == 0) throw FormatError("zero extent in record " + t.name);
    }
    std::vector<float> data(shape_numel(s));
    for (auto& v : data) v = std::bit_cast<float>(r.u32());
    t.value = Tensor<float>(std::move(s), std::move(data));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& path, std::uint64_t iteration = 0,
                            const std::vector<NamedTensor>& extra = {}) {
  Checkpoint ck;
  ck.config = model.config;
  ck.iteration = iteration;
  for (const auto& e : model.params) ck.tensors.push_back({e.name, e.value});
  ck.tensors.insert(ck.tensors.end(), extra.begin(), extra.end());
  write_checkpoint(path, ck);
}

inline constexpr const char* kClassifierPrefix = "decoder.classifier.";

/// Builds a model from checkpoint tensors. With `target` set, the stored
/// config must equal it except for num_classes; a class-count mismatch
/// re-initializes the classifier from `seed` when `reinit_head` is true and
/// raises ConfigError otherwise.
inline Model<float> model_from_checkpoint(const Checkpoint& ck, const std::optional<ModelConfig>& target = std::nullopt,
                                          bool reinit_head = false, std::uint64_t seed = 0) {
  ModelConfig cfg = target.value_or(ck.config);
  ModelConfig stored_same_head = ck.config;
  stored_same_head.num_classes = cfg.num_classes;
  if (!(stored_same_head == cfg)) throw ConfigError("checkpoint architecture differs from the requested config");
  const bool class_mismatch = cfg.num_classes != ck.config.num_classes;
  if (class_mismatch && !reinit_head)
    throw ConfigError("checkpoint has " + std::to_string(ck.config.num_classes) + " classes, config wants " +
                      std::to_string(cfg.num_classes) + " (enable head re-initialization to transfer)");
  Model<float> m = build<float>(cfg, seed);
  std::size_t matched = 0;
  for (const auto& t : ck.tensors) {
    if (!m.params.contains(t.name)) continue;
    if (class_mismatch && t.name.rfind(kClassifierPrefix, 0) == 0) continue;
    Tensor<float>& dst = m.params.at(t.name);
    if (dst.shape() != t.value.shape())
      throw FormatError("record " + t.name + " has shape " + shape_str(t.value.shape()) + ", expected " +
                        shape_str(dst.shape()));
    dst = t.value;
    ++matched;
  }
  const std::size_t expected = class_mismatch ? m.params.size() - 2 : m.params.size();
  if (matched != expected) throw FormatError("checkpoint is missing model parameters");
  return m;
}

inline Model<float> load_checkpoint(const std::filesystem::path& path,
                                    const std::optional<ModelConfig>& target = std::nullopt,
                                    bool reinit_head_if_class_mismatch = false, std::uint64_t seed = 0) {
  return model_from_checkpoint(read_checkpoint(path), target, reinit_head_if_class_mismatch, seed);
}

}  // namespace gasformer
