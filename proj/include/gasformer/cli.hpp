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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gasformer/checkpoint.hpp"
#include "gasformer/dataset.hpp"
#include "gasformer/labeler.hpp"
#include "gasformer/network.hpp"
#include "gasformer/train.hpp"

namespace gasformer {

/// Everything one config file can hold.
struct RunConfig {
  ModelConfig model = default_model_config();
  TrainConfig train;
  LabelerConfig labeler;
  SynthConfig synth;
};

inline Json to_json(const RunConfig& r) {
  return {{"model", to_json(r.model)}, {"train", to_json(r.train)}, {"labeler", to_json(r.labeler)},
          {"synth", to_json(r.synth)}};
}

inline RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig r;
  for (const auto& [k, v] : j.items()) {
    if (k == "model") r.model = model_from_json(v);
    else if (k == "train") r.train = train_from_json(v);
    else if (k == "labeler") r.labeler = labeler_from_json(v);
    else if (k == "synth") r.synth = synth_from_json(v);
    else throw ConfigError("unknown key '" + k + "'");
  }
  return r;
}

namespace cli_detail {

/// Overlays `src` onto `dst`; every key must already exist in `dst`.
/// Arrays and scalars are replaced wholesale.
inline void merge_into(Json& dst, const Json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("'" + (path.empty() ? std::string("config") : path) + "' must be an object");
  for (const auto& [k, v] : src.items()) {
    const std::string key = path.empty() ? k : path + "." + k;
    if (!dst.contains(k)) throw ConfigError("unknown key '" + key + "'");
    if (dst[k].is_object() && v.is_object()) merge_into(dst[k], v, key);
    else dst[k] = v;
  }
}

inline void apply_override(Json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  Json* node = &root;
  std::stringstream ss(key);
  for (std::string seg; std::getline(ss, seg, '.');) {
    if (node->is_object() && node->contains(seg)) {
      node = &(*node)[seg];
    } else if (node->is_array() && !seg.empty() && seg.find_first_not_of("0123456789") == std::string::npos &&
               std::stoul(seg) < node->size()) {
      node = &(*node)[std::stoul(seg)];
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  *node = value;
}

inline bool looks_like_run_config(const Json& j) {
  for (const char* k : {"model", "train", "labeler", "synth"})
    if (j.contains(k)) return true;
  return false;
}

inline Json read_json_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError("cannot read config " + p.string());
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

}  // namespace cli_detail

/// Defaults, then the config file, then dotted-path overrides. A file that
/// is a bare labeler section is accepted when `bare_labeler` is set.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& sets,
                                bool bare_labeler = false) {
  Json root = to_json(RunConfig{});
  if (file) {
    Json j = cli_detail::read_json_file(*file);
    if (bare_labeler && j.is_object() && !cli_detail::looks_like_run_config(j)) j = Json{{"labeler", j}};
    cli_detail::merge_into(root, j, "");
  }
  for (const auto& s : sets) cli_detail::apply_override(root, s);
  return run_config_from_json(root);
}

/// The lines shared by `inspect` and `bench`.
inline std::string accounting_lines(const ModelConfig& cfg, std::size_t H, std::size_t W) {
  const FlopReport rep = count_flops(cfg, H, W);
  const std::size_t params = count_params_analytic(cfg);
  char buf[512];
  std::string out;
  std::snprintf(buf, sizeof buf, "params: %zu (%.3f M)\n", params, static_cast<double>(params) / 1e6);
  out += buf;
  std::snprintf(buf, sizeof buf, "GFLOPs: %.3f @ %zux%zu\n", rep.gflops(), H, W);
  out += buf;
  out += std::string("convention: ") + FlopReport::convention + "\n";
  std::snprintf(buf, sizeof buf, "NMF GMACs (not in total): %.3f\n", static_cast<double>(rep.nmf_macs) / 1e9);
  out += buf;
  return out;
}

struct BenchReport {
  std::vector<double> latencies_ms;
  double mean_ms = 0, min_ms = 0, max_ms = 0, fps = 0, total_s = 0;
};

/// Warmup passes, then `reps` timed end-to-end inferences.
inline BenchReport bench(const Model<float>& model, std::size_t H, std::size_t W, std::size_t reps, std::size_t warmup,
                         std::uint64_t seed) {
  if (reps == 0) throw ConfigError("bench: repetitions must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 255.f);
  Tensor<float> raw(Shape{model.config.in_channels, H, W});
  for (auto& v : raw.data()) v = u(rng);
  const Tensor<float> x = normalize_image<float>(raw, model.config);
  for (std::size_t i = 0; i < warmup; ++i) infer(model, x);
  BenchReport r;
  for (std::size_t i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    infer(model, x);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.latencies_ms.push_back(1e3 * s);
    r.total_s += s;
  }
  r.min_ms = *std::min_element(r.latencies_ms.begin(), r.latencies_ms.end());
  r.max_ms = *std::max_element(r.latencies_ms.begin(), r.latencies_ms.end());
  r.mean_ms = 1e3 * r.total_s / static_cast<double>(reps);
  r.fps = static_cast<double>(reps) / r.total_s;
  return r;
}

namespace cli_detail {

inline std::string hardware_fallback() {
  std::ifstream f("/proc/cpuinfo");
  for (std::string line; std::getline(f, line);)
    if (line.rfind("model name", 0) == 0) {
      const auto c = line.find(':');
      if (c != std::string::npos) return line.substr(c + 2) + " x" + std::to_string(std::thread::hardware_concurrency());
    }
  return "unknown CPU";
}

inline std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) {
      const std::size_t v = std::stoul(s);
      return {v, v};
    }
    return {std::stoul(s.substr(0, x)), std::stoul(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad size '" + s + "', expected N or HxW");
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
}

}  // namespace cli_detail

/// Command-line entry point. Exit codes: 0 success, 1 usage error,
/// 2 data or configuration error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"GasFormer: methane plume segmentation", "gasformer"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "seed for every random choice");
    sub->add_option("--set", sets, "dotted-path override key=value (repeatable)");
  };

  std::string data_dir, out_dir, ckpt, init_ckpt, split = "test", input, frames_dir, bg_dir, size = "512", hardware;
  std::size_t classes = 11, count = 0, synth_size = 64, reps = 10, warmup = 2;
  bool verbose = false;

  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  common(train_cmd);
  train_cmd->add_option("--data", data_dir, "dataset root")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--init", init_ckpt, "initial checkpoint (head re-initialized if classes differ)");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", data_dir, "dataset root")->required();
  eval_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", out_dir, "directory for metrics.json");

  auto* infer_cmd = app.add_subcommand("infer", "predict masks for images");
  common(infer_cmd);
  infer_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  infer_cmd->add_option("--input", input, "PNG file or directory of PNGs")->required();
  infer_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* label_cmd = app.add_subcommand("label", "generate masks from a frame sequence");
  common(label_cmd);
  label_cmd->add_option("--frames", frames_dir, "directory of numbered frames")->required();
  label_cmd->add_option("--background", bg_dir, "directory of pre-release frames")->required();
  label_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic plume dataset");
  common(synth_cmd);
  synth_cmd->add_option("--classes", classes, "number of classes including background");
  synth_cmd->add_option("--count", count, "number of samples")->required();
  synth_cmd->add_option("--size", synth_size, "image side in pixels");
  synth_cmd->add_option("--out", out_dir, "dataset root")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "print parameter and FLOP accounting");
  common(inspect_cmd);
  inspect_cmd->add_option("--size", size, "input size N or HxW");
  inspect_cmd->add_flag("--verbose", verbose, "per-layer breakdown");

  auto* bench_cmd = app.add_subcommand("bench", "time inference");
  common(bench_cmd);
  bench_cmd->add_option("--checkpoint", ckpt, "checkpoint file (random weights otherwise)");
  bench_cmd->add_option("--size", size, "input size N or HxW");
  bench_cmd->add_option("--reps", reps, "timed repetitions");
  bench_cmd->add_option("--warmup", warmup, "untimed warmup passes");
  bench_cmd->add_option("--hardware", hardware, "hardware description to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::optional<fs::path> cfg_file = config_path ? std::optional<fs::path>(*config_path) : std::nullopt;
  try {
    if (train_cmd->parsed()) {
      RunConfig rc = resolve_config(cfg_file, sets);
      const Manifest m = open_dataset(data_dir, seed);
      Model<float> model = init_ckpt.empty() ? build<float>(rc.model, seed)
                                             : load_checkpoint(init_ckpt, rc.model, true, seed);
      fs::create_directories(out_dir);
      cli_detail::write_text(fs::path(out_dir) / "config.json", canonical_json(to_json(rc)) + "\n");
      const std::uint64_t total = rc.train.schedule.total_iters;
      const std::uint64_t every = std::max<std::uint64_t>(1, total / 20);
      auto res = train(model, m, rc.train, seed, fs::path(out_dir), [&](const TrainLogLine& l) {
        if ((l.iter + 1) % every == 0 || l.iter + 1 == total)
          out << "iter " << l.iter + 1 << "/" << total << " lr " << l.lr << " loss " << l.loss << "\n";
      });
      save_checkpoint(model, fs::path(out_dir) / "final.gasf", total, optim_records(model.params, res.optim));
      if (!res.val.empty())
        out << "final val mIoU " << res.val.back().miou << " mFscore " << res.val.back().mfscore << "\n";
      out << "checkpoint: " << (fs::path(out_dir) / "final.gasf").string() << "\n";
    } else if (eval_cmd->parsed()) {
      const Model<float> model = load_checkpoint(ckpt);
      const Manifest m = open_dataset(data_dir, seed);
      const MetricsReport r = evaluate(model, m, split_from_name(split));
      out << metrics_table(r, m.classes.names);
      const std::string js = to_json(r, m.classes.names).dump(2) + "\n";
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        cli_detail::write_text(fs::path(out_dir) / "metrics.json", js);
      } else {
        out << js;
      }
    } else if (infer_cmd->parsed()) {
      const Model<float> model = load_checkpoint(ckpt);
      std::vector<fs::path> files;
      if (fs::is_directory(input)) {
        for (const auto& de : fs::directory_iterator(input))
          if (de.is_regular_file() && de.path().extension() == ".png") files.push_back(de.path());
        std::sort(files.begin(), files.end());
      } else {
        files.push_back(input);
      }
      if (files.empty()) throw InputError("no PNG images in " + input);
      fs::create_directories(out_dir);
      for (const auto& f : files) {
        const auto r = infer(model, normalize_image<float>(image_tensor(read_png(f)), model.config));
        write_label_png(fs::path(out_dir) / (f.stem().string() + ".png"), r.labels);
      }
      out << "wrote " << files.size() << " mask(s) to " << out_dir << "\n";
    } else if (label_cmd->parsed()) {
      const RunConfig rc = resolve_config(cfg_file, sets, true);
      const auto written = label_directory(frames_dir, bg_dir, out_dir, rc.labeler);
      out << "wrote " << written.size() << " mask(s) to " << out_dir << "\n";
    } else if (synth_cmd->parsed()) {
      const RunConfig rc = resolve_config(cfg_file, sets);
      const Manifest m = write_synthetic_dataset(out_dir, classes, count, synth_size, seed, rc.synth);
      out << "wrote " << m.entries.size() << " samples (" << m.count(Split::train) << "/" << m.count(Split::val) << "/"
          << m.count(Split::test) << ") to " << out_dir << "\n";
    } else if (inspect_cmd->parsed()) {
      const RunConfig rc = resolve_config(cfg_file, sets);
      const auto [H, W] = cli_detail::parse_size(size);
      out << accounting_lines(rc.model, H, W);
      if (verbose) {
        for (const auto& e : count_flops(rc.model, H, W).entries) out << "  " << e.name << " " << e.macs << "\n";
      }
    } else if (bench_cmd->parsed()) {
      const auto [H, W] = cli_detail::parse_size(size);
      const Model<float> model = ckpt.empty() ? build<float>(resolve_config(cfg_file, sets).model, seed)
                                              : load_checkpoint(ckpt);
      const BenchReport r = bench(model, H, W, reps, warmup, seed);
      out << "hardware: " << (hardware.empty() ? cli_detail::hardware_fallback() : hardware) << "\n";
      out << accounting_lines(model.config, round_up32(H), round_up32(W));
      char buf[256];
      std::snprintf(buf, sizeof buf, "samples: %zu\nlatency ms: mean %.3f min %.3f max %.3f\nFPS: %.3f\n",
                    r.latencies_ms.size(), r.mean_ms, r.min_ms, r.max_ms, r.fps);
      out << buf;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace gasformer
