// SPDX-License-Identifier: Apache-2.0
// Runs the forge binary end to end and checks exit codes and reports.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string out;
  nlohmann::json report() const { return nlohmann::json::parse(out); }
};

Outcome forge(const std::string& args) {
  const std::string cmd = std::string(FORGE_CLI_PATH) + " " + args + " 2>/dev/null";
  Outcome r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("forge_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
  const fs::path samples_ = FORGE_SAMPLES_DIR;
  const fs::path toy_ = FORGE_TOY_CORPUS_DIR;
};

TEST_F(Cli, PlanReportsOk) {
  const Outcome r = forge("plan --width 1000 --height 600");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = r.report();
  EXPECT_EQ(rep.at("status"), "ok");
  EXPECT_EQ(rep.at("command"), "plan");
  EXPECT_EQ(rep.at("plan").at("grid").at("cols"), 3);
  EXPECT_EQ(rep.at("plan").at("grid").at("rows"), 2);
  EXPECT_TRUE(rep.contains("config_hash"));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(forge("plan --no-such-flag 1").code, 2);
  EXPECT_EQ(forge("no-such-command").code, 2);
  EXPECT_EQ(forge("plan --width notanumber").code, 2);
  std::ofstream(dir_ / "bad.toml") << "[plan\nwidth = ";
  EXPECT_EQ(forge("plan --config " + q(dir_ / "bad.toml")).code, 2);
  std::ofstream(dir_ / "unknown.toml") << "[plan]\nwidht = 10\n";
  EXPECT_EQ(forge("plan --config " + q(dir_ / "unknown.toml")).code, 2);
}

TEST_F(Cli, ConfigLayersUnderFlags) {
  std::ofstream(dir_ / "c.toml") << "[plan]\nwidth = 768\nheight = 384\n";
  auto rep = forge("plan --config " + q(dir_ / "c.toml")).report();
  EXPECT_EQ(rep.at("config").at("width"), 768);
  EXPECT_EQ(rep.at("plan").at("grid").at("cols"), 2);
  rep = forge("plan --config " + q(dir_ / "c.toml") + " --width 384").report();
  EXPECT_EQ(rep.at("config").at("width"), 384);
}

TEST_F(Cli, OcrOnEmptyInput) {
  std::ofstream(dir_ / "empty.jsonl").close();
  const Outcome r = forge("ocr --level 1 --in " + q(dir_ / "empty.jsonl") + " --out " + q(dir_ / "caps.jsonl"));
  EXPECT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(dir_ / "caps.jsonl"));
  EXPECT_EQ(fs::file_size(dir_ / "caps.jsonl"), 0u);
}

TEST_F(Cli, MissingInputIsUsageError) { EXPECT_EQ(forge("ocr --in " + q(dir_ / "absent.jsonl")).code, 2); }

TEST_F(Cli, MalformedRecordIsRuntimeError) {
  std::ofstream(dir_ / "bad.jsonl") << "{\"image_id\": \"a\", \"width\": 4}\n";
  const Outcome r = forge("ocr --in " + q(dir_ / "bad.jsonl"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.report().at("status"), "error");
  EXPECT_TRUE(r.report().contains("error"));
}

TEST_F(Cli, MixSevenFiveOne) {
  const Outcome r = forge("mix --spec " + q(samples_ / "mixture.toml") + " -n 13000");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto counts = r.report().at("counts");
  EXPECT_EQ(counts.at("html"), 7000);
  EXPECT_EQ(counts.at("pdf"), 5000);
  EXPECT_EQ(counts.at("arxiv"), 1000);
}

TEST_F(Cli, PackThenReportAndCorruption) {
  const fs::path shards = dir_ / "shards";
  Outcome r = forge("pack --corpus " + q(toy_) + " --base 28 --m 4 --context 96 --out " + q(shards));
  ASSERT_EQ(r.code, 0) << r.out;
  r = forge("report --shards " + q(shards));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.report().at("status"), "ok");
  const fs::path shard = shards / "shard-00000.bin";
  ASSERT_TRUE(fs::exists(shard));
  fs::resize_file(shard, fs::file_size(shard) / 2);
  r = forge("report --shards " + q(shards));
  EXPECT_EQ(r.code, 1);
}

TEST_F(Cli, TrainLowersLoss) {
  const Outcome r = forge("train --steps 50 --corpus " + q(toy_) + " --out " + q(dir_ / "model"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = r.report();
  EXPECT_LT(rep.at("final_loss").get<double>(), rep.at("initial_loss").get<double>());
  EXPECT_EQ(rep.at("checks").at("vision_stub_frozen"), true);
  EXPECT_TRUE(fs::exists(dir_ / "model" / "decoder.bin"));
}

TEST_F(Cli, ReportFileMatchesStdout) {
  const Outcome r = forge("lora --report " + q(dir_ / "r.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(dir_ / "r.json");
  EXPECT_EQ(nlohmann::json::parse(in), r.report());
}

}  // namespace
