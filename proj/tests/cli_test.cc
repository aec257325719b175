/* Copyright (c) 2026 The mitodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "gtest/gtest.h"
#include "json.hpp"
#include "mitodet/checkpoint.h"
#include "mitodet/data.h"
#include "test_util.h"

namespace mitodet {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun run(const std::string& args, const fs::path& dir) {
  const fs::path err_file = dir / "stderr.txt";
  const std::string cmd =
      std::string(MITODET_CLI) + " " + args + " 2>" + err_file.string();
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string synth_args(const fs::path& out, int seed) {
  return "synth -n 12 --size 64 --seed " + std::to_string(seed) + " -o " + out.string();
}

std::string small_sets(const fs::path& manifest, const fs::path& out) {
  return " --set data.manifest=" + manifest.string() + " --set output.dir=" + out.string() +
         " --set model.channels=8 --set model.aux_hidden=8 --set data.patch_size=48"
         " --set augment.crop_size=40 --set train.batch_size=4 --set train.learning_rate=1e-3";
}

TEST(CliTest, SynthIsLoadableAndDeterministic) {
  testing::TempDir dir;
  const CliRun a = run(synth_args(dir.path() / "a", 4), dir.path());
  const CliRun b = run(synth_args(dir.path() / "b", 4), dir.path());
  const CliRun c = run(synth_args(dir.path() / "c", 5), dir.path());
  ASSERT_EQ(a.code, 0) << a.err;
  const json ja = json::parse(a.out);
  const json jb = json::parse(b.out);
  EXPECT_EQ(ja["hash"], jb["hash"]);
  EXPECT_NE(ja["hash"], json::parse(c.out)["hash"]);
  const Dataset ds = load_dataset_with_images(ja["manifest"].get<std::string>());
  EXPECT_EQ(ds.records.size(), 12u);
  EXPECT_EQ(dataset_hash(ds.records, ds.images), ja["hash"]);
}

TEST(CliTest, ErrorsAreOneLineWithReasonCode) {
  testing::TempDir dir;
  CliRun r = run("train --set train.epoch=3", dir.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(r.err.rfind("error: config: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  r = run("train", dir.path());
  EXPECT_EQ(r.code, 3) << r.err;

  r = run("bogus", dir.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;

  r = run("train --set data.manifest=" + (dir.path() / "none.json").string(), dir.path());
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(r.err.rfind("error: dataset: ", 0), 0u) << r.err;

  r = run("evaluate " + (dir.path() / "none").string(), dir.path());
  EXPECT_EQ(r.code, 5);
  EXPECT_EQ(r.err.rfind("error: checkpoint: ", 0), 0u) << r.err;
}

TEST(CliTest, TrainEvaluateAndMismatch) {
  testing::TempDir dir;
  ASSERT_EQ(run(synth_args(dir.path() / "data", 2), dir.path()).code, 0);
  const fs::path manifest = dir.path() / "data" / "manifest.json";
  const fs::path out = dir.path() / "run";
  CliRun r = run("-q train --set train.epochs=1" + small_sets(manifest, out), dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "best.bin"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "last.json"));
  EXPECT_TRUE(fs::exists(out / "config.txt"));

  std::ifstream log(out / "train_log.jsonl");
  std::string line;
  int rows = 0;
  while (std::getline(log, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("event"));
    ++rows;
  }
  EXPECT_EQ(rows, 3);

  const std::string ck = (out / "checkpoints" / "best").string();
  r = run("-q evaluate " + ck, dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "report_test.json"));
  EXPECT_TRUE(fs::exists(out / "report_test.csv"));
  EXPECT_TRUE(fs::exists(out / "pr_curve_test.png"));

  r = run("-q evaluate " + ck + small_sets(manifest, out) + " --set model.channels=16",
          dir.path());
  EXPECT_EQ(r.code, 6);
  EXPECT_NE(r.err.find("model.channels"), std::string::npos) << r.err;
}

TEST(CliTest, OutputRootPrefixesRelativeDirs) {
  testing::TempDir dir;
  ASSERT_EQ(run(synth_args(dir.path() / "data", 2), dir.path()).code, 0);
  const fs::path manifest = dir.path() / "data" / "manifest.json";
  const std::string env = "MITODET_OUTPUT_ROOT=" + (dir.path() / "root").string() + " ";
  const std::string cmd = env + MITODET_CLI + " -q train --set train.epochs=0" +
                          small_sets(manifest, "rel") + " 2>/dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "root" / "rel" / "checkpoints" / "best.bin"));
}

TEST(CliTest, AblateWritesEightRows) {
  testing::TempDir dir;
  ASSERT_EQ(run(synth_args(dir.path() / "data", 2), dir.path()).code, 0);
  const fs::path manifest = dir.path() / "data" / "manifest.json";
  const fs::path out = dir.path() / "ablate";
  const CliRun r = run("-q ablate --set train.epochs=1 --set ablation.seeds=0" +
                        small_sets(manifest, out),
                    dir.path());
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(out / "ablation.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 9);
  EXPECT_EQ(json::parse(std::ifstream(out / "ablation.json"))["reports"].size(), 8u);
  EXPECT_TRUE(fs::exists(out / "ablation.png"));
}

}  // namespace
}  // namespace mitodet
