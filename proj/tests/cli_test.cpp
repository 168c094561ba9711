#include <unistd.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include <json.hpp>

// Drives the installed binary end to end through a shell, the way a user
// would. VGPEFT_BIN_PATH is injected by the build.

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("vgpeft-cli-") + std::to_string(::getpid()) + "-" +
            info->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }

  // Runs the binary with `args`, capturing stdout/stderr under the test dir.
  int run(const std::string& args, const std::string& tag = "cmd") {
    const std::string cmd = std::string(VGPEFT_BIN_PATH) + " " + args + " > " +
                            path(tag + ".out") + " 2> " + path(tag + ".err");
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  }

  std::string slurp(const std::string& name) const {
    std::ifstream in(path(name), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  // A tiny but complete train run; flags appended after the common set.
  int tiny_train(const std::string& out_dir, const std::string& extra,
                 const std::string& tag) {
    return run("train --data " + path("tr.jsonl") + " --eval-data " +
                   path("te.jsonl") + " --out-dir " + path(out_dir) +
                   " --steps 6 --batch-size 2 --lr 1e-3 --log-every 2 " +
                   extra,
               tag);
  }

  void make_data() {
    ASSERT_EQ(run("synth --out " + path("tr.jsonl") + " --count 12 --seed 3",
                  "synth-tr"),
              0);
    ASSERT_EQ(run("synth --out " + path("te.jsonl") + " --count 6 --seed 4",
                  "synth-te"),
              0);
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpAndUsageExitCodes) {
  EXPECT_EQ(run("--help", "help"), 0);
  EXPECT_EQ(run("train --help", "thelp"), 0);
  EXPECT_EQ(run("", "bare"), 2);            // a subcommand is required
  EXPECT_EQ(run("synth --bogus", "bogus"), 2);
  EXPECT_EQ(run("synth", "noargs"), 2);     // --out and --count are required
}

TEST_F(CliTest, SynthIsDeterministicJsonl) {
  ASSERT_EQ(run("synth --out " + path("a.jsonl") + " --count 8 --seed 3",
                "synth-a"),
            0);
  ASSERT_EQ(run("synth --out " + path("b.jsonl") + " --count 8 --seed 3",
                "synth-b"),
            0);
  const std::string a = slurp("a.jsonl");
  EXPECT_EQ(a, slurp("b.jsonl"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 8);
  EXPECT_NE(slurp("synth-a.out").find("wrote 8 records"), std::string::npos);

  ASSERT_EQ(run("synth --out " + path("c.jsonl") + " --count 8 --seed 9",
                "synth-c"),
            0);
  EXPECT_NE(a, slurp("c.jsonl"));
}

TEST_F(CliTest, TrainEmitsTheFullRunDirectory) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method lora --rank 2 --place decoder", "tr"),
            0);
  for (const char* name :
       {"base_checkpoint.pvgc", "config.json", "param_report.json",
        "param_report.txt", "trainlog.json", "checkpoint.pvgc", "delta.pvgd",
        "train_summary.txt", "report.json"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / name)) << name;

  const json cfg = json::parse(slurp("run/config.json"));
  EXPECT_TRUE(cfg.contains("model"));
  EXPECT_TRUE(cfg.contains("peft"));
  EXPECT_TRUE(cfg.contains("train"));
  EXPECT_EQ(cfg["train"]["steps"], 6);
  EXPECT_EQ(cfg["peft"]["method"], "lora");

  const json log = json::parse(slurp("run/trainlog.json"));
  EXPECT_EQ(log["steps_run"], 6);
  EXPECT_EQ(log["frozen_hash_before"], log["frozen_hash_after"]);

  const std::string summary = slurp("run/train_summary.txt");
  EXPECT_NE(summary.find("efficiency"), std::string::npos);
}

TEST_F(CliTest, FullFineTuneSkipsTheDelta) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method none", "tr"), 0);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "checkpoint.pvgc"));
  EXPECT_FALSE(fs::exists(dir_ / "run" / "delta.pvgd"));
}

TEST_F(CliTest, PeftFlagsWithoutAMethodAreRejected) {
  make_data();
  EXPECT_EQ(tiny_train("run", "--method none --rank 4", "tr"), 2);
}

TEST_F(CliTest, EvalAgreesBetweenCheckpointDeltaAndPredictions) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method lora --rank 2 --place decoder", "tr"),
            0);

  ASSERT_EQ(run("eval --data " + path("te.jsonl") + " --checkpoint " +
                    path("run/checkpoint.pvgc") + " --out " + path("r1.json") +
                    " --save-predictions " + path("preds.jsonl"),
                "ev1"),
            0);
  ASSERT_EQ(run("eval --data " + path("te.jsonl") + " --delta " +
                    path("run/delta.pvgd") + " --base " +
                    path("run/base_checkpoint.pvgc") + " --out " +
                    path("r2.json"),
                "ev2"),
            0);
  ASSERT_EQ(run("eval --data " + path("te.jsonl") + " --predictions " +
                    path("preds.jsonl") + " --out " + path("r3.json"),
                "ev3"),
            0);

  const std::string r1 = slurp("r1.json");
  EXPECT_EQ(r1, slurp("r2.json"));
  EXPECT_EQ(r1, slurp("r3.json"));
  EXPECT_EQ(slurp("ev1.out"), slurp("ev3.out"));  // printed table too
  EXPECT_NE(slurp("ev1.out").find("Pr@0.5"), std::string::npos);

  // The run's own report (written against --eval-data) matches as well.
  EXPECT_EQ(r1, slurp("run/report.json"));
}

TEST_F(CliTest, EvalRejectsConflictingSources) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method lora --rank 2 --place decoder", "tr"),
            0);
  EXPECT_EQ(run("eval --data " + path("te.jsonl"), "ev-none"), 2);
  EXPECT_EQ(run("eval --data " + path("te.jsonl") + " --checkpoint " +
                    path("run/checkpoint.pvgc") + " --predictions " +
                    path("preds.jsonl"),
                "ev-two"),
            2);
  EXPECT_EQ(run("eval --data " + path("te.jsonl") + " --delta " +
                    path("run/delta.pvgd"),
                "ev-nobase"),
            2);
}

TEST_F(CliTest, MergeMatchesTheAdaptedModel) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method lora --rank 2 --place image,decoder",
                       "tr"),
            0);
  ASSERT_EQ(run("merge --checkpoint " + path("run/checkpoint.pvgc") +
                    " --out " + path("merged.pvgc"),
                "mg"),
            0);
  ASSERT_EQ(run("eval --data " + path("te.jsonl") + " --checkpoint " +
                    path("run/checkpoint.pvgc") + " --out " + path("ra.json"),
                "eva"),
            0);
  ASSERT_EQ(run("eval --data " + path("te.jsonl") + " --checkpoint " +
                    path("merged.pvgc") + " --out " + path("rm.json"),
                "evm"),
            0);
  EXPECT_EQ(slurp("ra.json"), slurp("rm.json"));

  // Merging from delta + base lands on the same bytes.
  ASSERT_EQ(run("merge --delta " + path("run/delta.pvgd") + " --base " +
                    path("run/base_checkpoint.pvgc") + " --out " +
                    path("merged2.pvgc"),
                "mg2"),
            0);
  EXPECT_EQ(slurp("merged.pvgc"), slurp("merged2.pvgc"));
}

TEST_F(CliTest, MergeRejectsNonLoraCheckpoints) {
  make_data();
  ASSERT_EQ(tiny_train("run", "--method bitfit --place decoder", "tr"), 0);
  EXPECT_EQ(run("merge --checkpoint " + path("run/checkpoint.pvgc") +
                    " --out " + path("m.pvgc"),
                "mg"),
            2);
  EXPECT_NE(slurp("mg.err").find("error:"), std::string::npos);
}

TEST_F(CliTest, SweepPrintsTheInclusionChain) {
  ASSERT_EQ(run("sweep --method lora --rank 4 --out " + path("sweep.json"),
                "sw"),
            0);
  const json arr = json::parse(slurp("sweep.json"));
  ASSERT_EQ(arr.size(), 4u);
  for (const auto& row : arr) {
    EXPECT_TRUE(row.contains("placement"));
    EXPECT_TRUE(row.contains("trainable"));
    EXPECT_TRUE(row.contains("efficiency"));
  }
  // The final three placements form an inclusion chain.
  EXPECT_LE(std::stod(arr[2]["efficiency"].get<std::string>()),
            std::stod(arr[1]["efficiency"].get<std::string>()));
  EXPECT_LE(std::stod(arr[3]["efficiency"].get<std::string>()),
            std::stod(arr[2]["efficiency"].get<std::string>()));
  EXPECT_NE(slurp("sw.out").find("efficiency"), std::string::npos);
}

TEST_F(CliTest, ConfigFileDrivesTrainingAndFlagsWin) {
  make_data();
  {
    std::ofstream cfg(path("cfg.json"));
    cfg << R"({"train": {"steps": 3, "batch_size": 2, "lr": 1e-3},
               "peft": {"method": "lora", "rank": 2,
                        "placement": ["decoder"]}})";
  }
  ASSERT_EQ(run("train --data " + path("tr.jsonl") + " --out-dir " +
                    path("runA") + " --config " + path("cfg.json"),
                "trA"),
            0);
  EXPECT_EQ(json::parse(slurp("runA/trainlog.json"))["steps_run"], 3);
  EXPECT_EQ(json::parse(slurp("runA/config.json"))["peft"]["rank"], 2);

  ASSERT_EQ(run("train --data " + path("tr.jsonl") + " --out-dir " +
                    path("runB") + " --config " + path("cfg.json") +
                    " --steps 5 --rank 4",
                "trB"),
            0);
  EXPECT_EQ(json::parse(slurp("runB/trainlog.json"))["steps_run"], 5);
  EXPECT_EQ(json::parse(slurp("runB/config.json"))["peft"]["rank"], 4);

  {
    std::ofstream cfg(path("bad.json"));
    cfg << R"({"train": {"step": 3}})";  // misspelled key
  }
  EXPECT_EQ(run("train --data " + path("tr.jsonl") + " --out-dir " +
                    path("runC") + " --config " + path("bad.json"),
                "trC"),
            2);
  EXPECT_NE(slurp("trC.err").find("step"), std::string::npos);
}

TEST_F(CliTest, DivergenceExitsOne) {
  make_data();
  const int rc = tiny_train(
      "run", "--method lora --rank 2 --place decoder --optimizer sgd --lr inf",
      "tr");
  EXPECT_EQ(rc, 1);
  EXPECT_NE(slurp("tr.err").find("diverged at step"), std::string::npos);
}

TEST_F(CliTest, IdenticalPipelinesProduceIdenticalReports) {
  for (const char* side : {"x", "y"}) {
    const std::string s(side);
    ASSERT_EQ(run("synth --out " + path(s + "-tr.jsonl") +
                      " --count 16 --seed 21",
                  s + "-synth1"),
              0);
    ASSERT_EQ(run("synth --out " + path(s + "-te.jsonl") +
                      " --count 8 --seed 22",
                  s + "-synth2"),
              0);
    ASSERT_EQ(run("train --data " + path(s + "-tr.jsonl") + " --eval-data " +
                      path(s + "-te.jsonl") + " --out-dir " + path(s + "-run") +
                      " --steps 8 --batch-size 4 --lr 1e-3 --log-every 2 "
                      "--method adapter --place text,decoder --eval-every 4",
                  s + "-train"),
              0);
  }
  for (const char* name :
       {"report.json", "trainlog.json", "checkpoint.pvgc", "delta.pvgd",
        "param_report.json", "train_summary.txt"})
    EXPECT_EQ(slurp(std::string("x-run/") + name),
              slurp(std::string("y-run/") + name))
        << name;
}

}  // namespace
