// Runs the lsdan executable end to end on small synthetic datasets.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "support/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(LSDAN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::size_t n = fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lsdan_cli_tests";
    fs::remove_all(root_);
    lsdan::testing::CommunitySpec spec;
    spec.per_community = 40;
    spec.features = 6;
    lsdan::testing::write_dataset(lsdan::testing::make_communities(spec), root_ / "data", "toy");
  }

  // Common flags: tiny network and short training so each command runs quickly.
  static std::string base(const std::string& out) {
    return "--dataset toy --data-dir " + (root_ / "data").string() + " --positive-class pos --out " +
           (root_ / out).string() + " --dim 4 --kappa 2 --steps 15 --lr 0.01 --trials 2";
  }

  static inline fs::path root_;
};

}  // namespace

TEST_F(Cli, HelpListsCommands) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* c : {"prepare", "train", "sweep", "ablate", "attention", "split"})
    EXPECT_NE(r.output.find(c), std::string::npos) << c;
}

TEST_F(Cli, PrepareReportsStatsAndHitsCacheOnRerun) {
  const auto first = run("prepare " + base("prep"));
  ASSERT_EQ(first.code, 0) << first.output;
  EXPECT_NE(first.output.find("80 nodes, "), std::string::npos) << first.output;
  EXPECT_NE(first.output.find(" 2 classes, 6 features"), std::string::npos);
  EXPECT_NE(first.output.find("mask cache written"), std::string::npos);
  const auto second = run("prepare " + base("prep"));
  EXPECT_NE(second.output.find("mask cache hit"), std::string::npos) << second.output;
}

TEST_F(Cli, MissingFilesGiveActionableError) {
  const auto r = run("prepare --dataset nothere --data-dir " + (root_ / "empty").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("content file not found"), std::string::npos) << r.output;
}

TEST_F(Cli, InvalidConfigIsRejectedBeforeLoading) {
  const auto r = run("train --dataset nothere --objective hinge");
  EXPECT_EQ(r.code, 64);
  EXPECT_NE(r.output.find("unknown objective"), std::string::npos) << r.output;
  EXPECT_EQ(run("train " + base("bad") + " --p 1.5").code, 64);
  EXPECT_EQ(run("train " + base("bad") + " --kappa 0").code, 64);
}

TEST_F(Cli, TrainWritesReportsAndIsReproducible) {
  const auto a = run("train " + base("train_a") + " --p 0.1,0.2");
  ASSERT_EQ(a.code, 0) << a.output;
  const auto b = run("train " + base("train_a") + " --p 0.1,0.2");
  ASSERT_EQ(b.code, 0) << b.output;
  const auto csv = slurp(root_ / "train_a" / "results.csv");
  EXPECT_EQ(csv.rfind("# lsdan ", 0), 0u);
  EXPECT_NE(csv.find("variant,dataset,objective,p,kappa,layers,dim,mean_f1,std_f1,n_trials\n"), std::string::npos);
  EXPECT_NE(csv.find("nnpu,toy,nnpu,0.1,2,2,4,"), std::string::npos);
  EXPECT_NE(csv.find("nnpu,toy,nnpu,0.2,2,2,4,"), std::string::npos);
  std::size_t trials = 0;
  for (const auto& e : fs::directory_iterator(root_ / "train_a" / "trials")) {
    const auto j = nlohmann::json::parse(slurp(e.path()));
    EXPECT_EQ(j["evaluation_set"], "U");
    EXPECT_TRUE(j.contains("config"));
    EXPECT_EQ(j["loss_curve"].size(), 15u);
    ++trials;
  }
  EXPECT_EQ(trials, 4u);
  EXPECT_NE(slurp(root_ / "train_a" / "summary.txt").find("# lsdan "), std::string::npos);

  const auto c = run("train " + base("train_b") + " --p 0.1,0.2");
  ASSERT_EQ(c.code, 0);
  // Output paths appear in the embedded config, so compare everything after it.
  auto body = [](const std::string& s) { return s.substr(s.find('\n')); };
  EXPECT_EQ(body(slurp(root_ / "train_b" / "results.csv")), body(csv));
}

TEST_F(Cli, ConfigFileIsOverriddenByFlags) {
  const auto cfg = root_ / "run.toml";
  std::ofstream(cfg) << "objective = \"upu\"\ntrials = 1\nsteps = 5\n";
  const auto r = run("train " + base("cfg") + " --config " + cfg.string() + " --p 0.1 --trials 1 --objective pn");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(root_ / "cfg" / "results.csv");
  EXPECT_NE(csv.find("pn,toy,pn,0.1"), std::string::npos) << csv;

  const auto only_file = run("train --config " + cfg.string() + " " + base("cfg2") + " --p 0.1 --trials 1");
  ASSERT_EQ(only_file.code, 0) << only_file.output;
  EXPECT_NE(slurp(root_ / "cfg2" / "results.csv").find("upu,toy,upu,0.1"), std::string::npos);
}

TEST_F(Cli, SweepEmitsOneRowPerValue) {
  const auto r = run("sweep " + base("sweep") + " --param dim --values 2,4,8 --trials 1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(root_ / "sweep" / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("dim=8,toy,nnpu,0.02,2,2,8,"), std::string::npos) << csv;
}

TEST_F(Cli, AblateProducesTheFullGrid) {
  const auto r = run("ablate " + base("ablate") + " --p 0.1 --trials 1 --steps 3");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto csv = slurp(root_ / "ablate" / "ablation.csv");
  for (const char* v : {"naive_ce,", "upu_k1,", "upu,", "nnpu_k1,", "nnpu,"})
    EXPECT_NE(csv.find(std::string("\n") + v), std::string::npos) << v;
}

TEST_F(Cli, AttentionReportHasOneRowPerHop) {
  const auto r = run("attention " + base("attn") + " --hops 1,2,3 --trials 1 --steps 3");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(root_ / "attn" / "attention.json"));
  ASSERT_EQ(j["rows"].size(), 3u);
  double total = 0.0;
  for (const auto& row : j["rows"]) total += row["mean_attention"].get<double>();
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST_F(Cli, SplitEmitLoadAndTrainOnIt) {
  const auto file = (root_ / "split.json").string();
  const auto e = run("split " + base("split") + " --p 0.1 --seed 5 --emit " + file);
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_NE(e.output.find("|P|=4 |U|=76"), std::string::npos) << e.output;
  const auto l = run("split --load " + file);
  EXPECT_EQ(l.code, 0);
  EXPECT_NE(l.output.find("seed 5"), std::string::npos) << l.output;
  const auto t = run("train " + base("on_split") + " --split " + file);
  ASSERT_EQ(t.code, 0) << t.output;
  EXPECT_TRUE(fs::exists(root_ / "on_split" / "trials" / "nnpu_p0_1_k2_L2_d4_seed5.json"));
  EXPECT_NE(run("split --emit a --load b").code, 0);
}

TEST_F(Cli, FailedTrialsGiveNonzeroExit) {
  const auto r = run("train " + base("fail") + " --p 0.999 --trials 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("trial failed"), std::string::npos) << r.output;
}
