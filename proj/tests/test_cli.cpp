#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>

#include "avsbg/datamodel.hpp"

using namespace avsbg;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" AVSBG_CLI_PATH "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("avsbg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const std::string kTiny = " --height 32 --width 32 --visual-channels 4,4,8,8 --audio-channels 4,4,8 --decoder-channels 4";

}  // namespace

TEST_F(Cli, SynthIsByteReproducible) {
  ASSERT_EQ(run("synth --setting ms3 --clips 2 --height 32 --width 32 --seed 4 --out " + path("a")), 0);
  ASSERT_EQ(run("synth --setting ms3 --clips 2 --height 32 --width 32 --seed 4 --out " + path("b")), 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    const fs::path twin = path("b") / fs::relative(e.path(), path("a"));
    ASSERT_TRUE(fs::exists(twin)) << twin;
    EXPECT_EQ(slurp(e.path()), slurp(twin)) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 2 * (5 + 5 + 1) + 2);  // frames, masks, audio per clip plus two manifests
}

TEST_F(Cli, RefusesBadInputsWithExitTwo) {
  ASSERT_EQ(run("synth --clips 1 --height 32 --width 32 --out " + path("c")), 0);
  EXPECT_EQ(run("synth --clips 1 --out " + path("c")), 2);  // split not empty
  EXPECT_EQ(run("synth --clips 1 --height 32 --width 32 --split val --out " + path("c")), 0);
  EXPECT_EQ(run("synth --clips 0 --out " + path("d")), 2);
  EXPECT_EQ(run("synth --setting s4 --shapes 2 --out " + path("e")), 2);
  EXPECT_EQ(run("train --data " + path("c") + " --out " + path("r") + kTiny, "AVSBG_LR=abc"), 2);
  EXPECT_EQ(run("train --data " + path("missing") + " --out " + path("r2") + kTiny), 2);
  EXPECT_NE(run("frobnicate"), 0);
}

TEST_F(Cli, TrainEvalInferPipeline) {
  ASSERT_EQ(run("synth --setting ms3 --clips 2 --height 32 --width 32 --out " + path("data")), 0);
  ASSERT_EQ(run("synth --setting ms3 --clips 2 --height 32 --width 32 --seed 9 --split test --out " + path("data")), 0);
  ASSERT_EQ(run("train --setting ms3 --data " + path("data") + " --out " + path("run") + " --max-steps 2 --batch-size 1" + kTiny), 0);
  for (const char* f : {"checkpoint.ckpt", "train_log.jsonl", "run_manifest.json", "metrics.json", "step0_metrics.json"})
    EXPECT_TRUE(fs::exists(path("run") + "/" + f)) << f;

  ASSERT_EQ(run("eval --ckpt " + path("run/checkpoint.ckpt") + " --data " + path("data") + " --split test --out " + path("ev")), 0);
  const auto metrics = nlohmann::json::parse(slurp(path("ev/metrics.json")));
  EXPECT_GE(metrics.at("miou").get<double>(), 0.0);
  EXPECT_EQ(metrics.at("frames").get<int>(), 10);

  ASSERT_EQ(run("infer --overlay --ckpt " + path("run/checkpoint.ckpt") + " --data " + path("data") + " --split test --out " +
                path("inf")),
            0);
  int masks = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("inf")))
    masks += e.path().filename().string().starts_with("mask_");
  EXPECT_EQ(masks, 10);
  EXPECT_TRUE(fs::exists(path("inf/synth_0000/overlay_4.png")));

  // a checkpoint from a different architecture is refused
  EXPECT_EQ(run("train --setting ms3 --data " + path("data") + " --out " + path("run2") + " --max-steps 1 --init " +
                path("run/checkpoint.ckpt") + " --height 32 --width 32 --visual-channels 4,4,8,8 --audio-channels 4,4,8 --decoder-channels 8"),
            2);
}

TEST_F(Cli, GradcheckExitCodes) {
  EXPECT_EQ(run("gradcheck --out " + path("gc")), 0);
  EXPECT_TRUE(fs::exists(path("gc/gradcheck.json")));
  EXPECT_EQ(run("gradcheck --inject-fault kl"), 3);
  EXPECT_EQ(run("gradcheck --inject-fault nonsense"), 2);
}
