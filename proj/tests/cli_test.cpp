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


#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gasformer/cli.hpp"
#include "gasformer/dataset.hpp"
#include "gasformer/image.hpp"

namespace fs = std::filesystem;

namespace gasformer {
namespace {

const fs::path kConfigs = GASFORMER_CONFIG_DIR;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "gasformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gasformer_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Every regular file under `root`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& de : fs::recursive_directory_iterator(root))
    if (de.is_regular_file()) files[fs::relative(de.path(), root).string()] = slurp(de.path());
  return files;
}

std::string line_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);)
    if (l.rfind(prefix, 0) == 0) return l;
  return {};
}

std::string tiny() { return (kConfigs / "tiny.json").string(); }

TEST(Inspect, DefaultModelAccounting) {
  const auto r = call({"inspect", "--config", (kConfigs / "mr.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_starting(r.out, "params:"), "params: 3651691 (3.652 M)");
  EXPECT_EQ(line_starting(r.out, "GFLOPs:"), "GFLOPs: 8.619 @ 512x512");
  EXPECT_FALSE(line_starting(r.out, "convention:").empty());
}

TEST(Inspect, OverrideChangesArchitecture) {
  const auto r = call({"inspect", "--config", (kConfigs / "mr.json").string(), "--set", "model.decoder.input_stages=[2,3,4]"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_starting(r.out, "params:"), "params: 3643499 (3.643 M)");
}

TEST(ExitCodes, UsageErrorsReturnOne) {
  EXPECT_EQ(call({}).code, 1);
  EXPECT_EQ(call({"bogus"}).code, 1);
  const auto r = call({"inspect", "--no-such-flag"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("inspect"), std::string::npos);
  EXPECT_EQ(call({"synth", "--out", "x"}).code, 1);  // --count missing
  EXPECT_EQ(call({"inspect", "--set", "no_equals_sign"}).code, 1);
}

TEST(ExitCodes, ConfigAndDataErrorsReturnTwo) {
  const auto r = call({"inspect", "--set", "model.decoder.ham_chanels=64"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ham_chanels"), std::string::npos);
  EXPECT_EQ(call({"inspect", "--config", "/nonexistent/config.json"}).code, 2);
  EXPECT_EQ(call({"eval", "--checkpoint", "/nonexistent.gasf", "--data", "/nonexistent"}).code, 2);
  const fs::path d = scratch("empty");
  EXPECT_EQ(call({"label", "--frames", d.string(), "--background", d.string(), "--out", (d / "m").string()}).code, 2);
}

TEST(Synth, WritesDatasetLayout) {
  const fs::path d = scratch("synth");
  const auto r = call({"synth", "--classes", "11", "--count", "30", "--size", "64", "--seed", "7", "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Manifest m = read_manifest(d);
  ASSERT_EQ(m.entries.size(), 30u);
  EXPECT_EQ(m.classes.names.size(), 11u);
  for (const auto& e : m.entries) {
    const PngImage img = read_png(d / e.image);
    EXPECT_EQ(img.width, 64u);
    EXPECT_EQ(img.height, 64u);
    const LabelMap mask = load_mask(d / e.mask, 11);
    EXPECT_EQ(mask.width, 64u);
  }
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  EXPECT_TRUE(fs::exists(d / "classes.txt"));
}

TEST(Synth, SameSeedIsByteIdentical) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b"), c = scratch("synth_c");
  ASSERT_EQ(call({"synth", "--count", "12", "--size", "32", "--seed", "3", "--out", a.string()}).code, 0);
  ASSERT_EQ(call({"synth", "--count", "12", "--size", "32", "--seed", "3", "--out", b.string()}).code, 0);
  ASSERT_EQ(call({"synth", "--count", "12", "--size", "32", "--seed", "4", "--out", c.string()}).code, 0);
  EXPECT_EQ(tree(a), tree(b));
  EXPECT_NE(tree(a), tree(c));
}

TEST(Label, OneMaskPerFrame) {
  const fs::path d = scratch("label");
  std::mt19937_64 rng(11);
  const auto seq = synth_plume_sequence(rng, 4, 6, 64, 64, 8, 1);
  auto dump = [](const fs::path& dir, const std::vector<GrayImage>& imgs) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      PngImage p{imgs[i].width, imgs[i].height, 1, {}};
      for (float v : imgs[i].data) p.pixels.push_back(static_cast<std::uint8_t>(std::clamp(v + 0.5f, 0.f, 255.f)));
      write_png(dir / ("frame" + std::to_string(i + 1) + ".png"), p);
    }
  };
  dump(d / "bg", seq.background);
  dump(d / "frames", seq.frames);
  const auto r = call({"label", "--frames", (d / "frames").string(), "--background", (d / "bg").string(), "--config",
                       (kConfigs / "labeler_example.json").string(), "--out", (d / "masks").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t n = 0;
  for (const auto& de : fs::directory_iterator(d / "masks")) {
    ++n;
    const PngImage m = read_png(de.path());
    EXPECT_EQ(m.channels, 1u);
    for (auto v : m.pixels) EXPECT_TRUE(v == 0 || v == 1);
  }
  EXPECT_EQ(n, seq.frames.size());
  const auto first = tree(d / "masks");
  ASSERT_EQ(call({"label", "--frames", (d / "frames").string(), "--background", (d / "bg").string(), "--out",
                  (d / "masks").string()})
                .code,
            0);
  EXPECT_EQ(tree(d / "masks"), first);
}

TEST(Bench, SingleRepetitionReport) {
  const auto r = call({"bench", "--config", tiny(), "--size", "64", "--reps", "1", "--warmup", "0", "--hardware", "unit"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_starting(r.out, "samples:"), "samples: 1");
  EXPECT_EQ(line_starting(r.out, "hardware:"), "hardware: unit");
  const auto i = call({"inspect", "--config", tiny(), "--size", "64"});
  ASSERT_EQ(i.code, 0);
  for (const char* key : {"params:", "GFLOPs:", "convention:"}) EXPECT_EQ(line_starting(r.out, key), line_starting(i.out, key));
}

TEST(Bench, FpsIsRepetitionsOverTotal) {
  const Model<float> model = build<float>(run_config_from_json(cli_detail::read_json_file(kConfigs / "tiny.json")).model, 1);
  const BenchReport rep = bench(model, 32, 32, 4, 1, 0);
  ASSERT_EQ(rep.latencies_ms.size(), 4u);
  double sum = 0;
  for (double l : rep.latencies_ms) sum += l;
  EXPECT_NEAR(rep.total_s, sum / 1000.0, 1e-12 * sum);
  EXPECT_NEAR(rep.fps, 4.0 / rep.total_s, 1e-9 * rep.fps);
  EXPECT_NEAR(rep.mean_ms, sum / 4, 1e-9 * sum);
  EXPECT_LE(rep.min_ms, rep.mean_ms);
  EXPECT_GE(rep.max_ms, rep.mean_ms);
}

TEST(Pipeline, TrainEvalInferAreDeterministic) {
  const fs::path d = scratch("pipeline");
  ASSERT_EQ(call({"synth", "--classes", "3", "--count", "20", "--size", "32", "--seed", "5", "--out", (d / "data").string()}).code, 0);
  const std::vector<std::string> common = {"--config", tiny(), "--seed", "9", "--set", "train.schedule.warmup_iters=2",
                                           "--set", "train.schedule.total_iters=6", "--set", "train.augment.crop_w=32",
                                           "--set", "train.augment.crop_h=32"};
  auto train_to = [&](const fs::path& out) {
    std::vector<std::string> a = {"train", "--data", (d / "data").string(), "--out", out.string()};
    a.insert(a.end(), common.begin(), common.end());
    return call(a);
  };
  const auto t1 = train_to(d / "run1");
  ASSERT_EQ(t1.code, 0) << t1.err;
  ASSERT_EQ(train_to(d / "run2").code, 0);
  for (const char* f : {"final.gasf", "config.json", "train_log.csv", "val_log.csv"}) {
    ASSERT_TRUE(fs::exists(d / "run1" / f)) << f;
    EXPECT_EQ(slurp(d / "run1" / f), slurp(d / "run2" / f)) << f;
  }

  const std::string ck = (d / "run1" / "final.gasf").string();
  const auto e = call({"eval", "--checkpoint", ck, "--data", (d / "data").string(), "--split", "val", "--out", (d / "ev").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto metrics = nlohmann::json::parse(slurp(d / "ev" / "metrics.json"));
  EXPECT_EQ(metrics["per_class"].size(), 3u);
  EXPECT_GE(metrics["mIoU"].get<double>(), 0.0);
  EXPECT_LE(metrics["mIoU"].get<double>(), 1.0);

  const Manifest m = read_manifest(d / "data");
  const fs::path img = d / "data" / m.split(Split::test).front()->image;
  ASSERT_EQ(call({"infer", "--checkpoint", ck, "--input", img.string(), "--out", (d / "p1").string()}).code, 0);
  ASSERT_EQ(call({"infer", "--checkpoint", ck, "--input", img.string(), "--out", (d / "p2").string()}).code, 0);
  const auto p1 = tree(d / "p1");
  ASSERT_EQ(p1.size(), 1u);
  EXPECT_EQ(p1, tree(d / "p2"));
  const LabelMap pred = load_mask(d / "p1" / p1.begin()->first, 3);
  EXPECT_EQ(pred.width, 32u);

  // Mismatched class count on eval is a config error.
  ASSERT_EQ(call({"synth", "--classes", "2", "--count", "10", "--size", "32", "--out", (d / "cr").string()}).code, 0);
  EXPECT_EQ(call({"eval", "--checkpoint", ck, "--data", (d / "cr").string()}).code, 2);
}

}  // namespace
}  // namespace gasformer
