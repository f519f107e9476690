#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

#include <json.hpp>

#include "atzsl/errors.hpp"
#include "atzsl/experiment.hpp"
#include "atzsl/io.hpp"

namespace atzsl {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  int code = -1;
  std::string output;  // stdout and stderr
};

Invocation run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + ATZSL_BIN + " " + args + " 2>&1";
  Invocation r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const char* kConfig = R"(# tiny experiment
[experiment]
seed = 5
output_dir = OUT

[dataset]
num_seen = 5
num_unseen = 3
attr_dim = 4
feature_dim = 6
seen_samples = 20
unseen_samples = 8
noise = 0.5
map_scale = 0.3
normalize_prototypes = true

[net]
feature_hidden = 10
attr_hidden = 6
embed_dim = 6
relation_hidden = 6

[train]
epochs = 2
batch_size = 16
lr = 0.001

[eval]
scenarios = standard/clean, generalized/clean, standard/visual/IFGSM/rho=0.5/N=3
)";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("atzsl_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_config(kConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write_config(std::string text, const std::string& name = "exp.ini") {
    const auto at = text.find("OUT");
    if (at != std::string::npos) text.replace(at, 3, out().string());
    io::write_file_atomic((dir_ / name).string(), text);
  }
  fs::path out() const { return dir_ / "run"; }
  std::string cfg(const std::string& name = "exp.ini") const { return "-c " + (dir_ / name).string(); }
  std::string bytes(const fs::path& p) const { return io::read_file(p.string()); }

  fs::path dir_;
};

TEST_F(Cli, GenerateWritesThreeFiles) {
  const Invocation r = run("generate " + cfg());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("N_s=5 N_u=3 N_tr=80"), std::string::npos) << r.output;
  for (const char* f : {"features.bin", "prototypes.csv", "splits.csv"}) EXPECT_TRUE(fs::exists(out() / "dataset" / f));
}

TEST_F(Cli, GenerateIsDeterministic) {
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  const std::string first = bytes(out() / "dataset" / "features.bin");
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  EXPECT_EQ(bytes(out() / "dataset" / "features.bin"), first);
  ASSERT_EQ(run("generate " + cfg() + " --seed 6").code, 0);
  EXPECT_NE(bytes(out() / "dataset" / "features.bin"), first);
}

TEST_F(Cli, MalformedConfigExitsTwoWithKey) {
  Invocation r = run("generate " + cfg() + " --set train.alpha=1.5");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.alpha"), std::string::npos) << r.output;

  r = run("generate " + cfg() + " --set dataset.noise=abc");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("dataset.noise"), std::string::npos) << r.output;

  r = run("generate " + cfg() + " --set net.widths=3");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("net.widths"), std::string::npos) << r.output;

  r = run("generate " + cfg() + " --set eval.scenarios=standard/visual/PGD/rho=1");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("eval.scenarios"), std::string::npos) << r.output;

  EXPECT_EQ(run("generate -c " + (dir_ / "missing.ini").string()).code, 2);
  EXPECT_EQ(run("train " + cfg() + " --mode sideways").code, 2);
}

TEST_F(Cli, UnwritableOutputFails) {
  io::write_file_atomic((dir_ / "blocker").string(), "x");
  const Invocation r = run("generate " + cfg() + " --output-dir " + (dir_ / "blocker" / "sub").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("blocker"), std::string::npos) << r.output;
}

TEST_F(Cli, OutputDirEnvironmentAndFlag) {
  const fs::path env_dir = dir_ / "from_env";
  ASSERT_EQ(run("generate " + cfg(), "ATZSL_OUTPUT_DIR=" + env_dir.string()).code, 0);
  EXPECT_TRUE(fs::exists(env_dir / "dataset" / "splits.csv"));
  const fs::path flag_dir = dir_ / "from_flag";
  ASSERT_EQ(run("generate " + cfg() + " --output-dir " + flag_dir.string(), "ATZSL_OUTPUT_DIR=" + env_dir.string()).code,
            0);
  EXPECT_TRUE(fs::exists(flag_dir / "dataset" / "splits.csv"));
}

TEST_F(Cli, TrainModes) {
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  Invocation r = run("train " + cfg() + " --mode baseline");
  ASSERT_EQ(r.code, 0) << r.output;
  const ExperimentConfig base = parse_experiment(bytes(out() / "baseline" / "config.ini"));
  EXPECT_EQ(base.train.alpha, 1.0);
  std::istringstream log(bytes(out() / "baseline" / "train_log.jsonl"));
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_TRUE(nlohmann::json::parse(line).at("adv_loss").is_null());

  r = run("train " + cfg() + " --mode images");
  ASSERT_EQ(r.code, 0) << r.output;
  const ExperimentConfig images = parse_experiment(bytes(out() / "images" / "config.ini"));
  EXPECT_EQ(images.train.alpha, 0.5);
  EXPECT_EQ(images.train.rho_dist.lo, 0.0);
  EXPECT_EQ(images.train.rho_dist.hi, 4.0);
  EXPECT_EQ(images.train.rho_dist.stddev, 2.0);
  EXPECT_EQ(images.train.attack.steps, 3u);

  ASSERT_EQ(run("train " + cfg() + " --mode baseline2").code, 0);
  EXPECT_EQ(parse_experiment(bytes(out() / "baseline2" / "config.ini")).train.alpha, 0.0);
  ASSERT_EQ(run("train " + cfg() + " --mode baseline3").code, 0);
  const ExperimentConfig b3 = parse_experiment(bytes(out() / "baseline3" / "config.ini"));
  EXPECT_EQ(b3.net.combine, Combine::kProduct);
  EXPECT_EQ(b3.train.alpha, 1.0);
  EXPECT_EQ(load_checkpoint((out() / "baseline3" / "checkpoint.atzsl").string()).config.combine, Combine::kProduct);

  ASSERT_EQ(run("train " + cfg() + " --mode attributes --set train.rho_hi=0.5 --set train.rho_stddev=0.2").code, 0);
  const ExperimentConfig attr = parse_experiment(bytes(out() / "attributes" / "config.ini"));
  EXPECT_EQ(attr.train.mode, TrainMode::kAttributes);
  EXPECT_EQ(attr.train.attack.norm, Norm::kL2);

  for (const auto& entry : fs::recursive_directory_iterator(out())) {
    EXPECT_NE(entry.path().extension(), ".tmp") << entry.path();
  }
}

TEST_F(Cli, TrainRejectsBrokenDataset) {
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  const fs::path splits = out() / "dataset" / "splits.csv";
  std::string text = bytes(splits);
  const auto at = text.rfind(",test,");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 6, ",train,");
  io::write_file_atomic(splits.string(), text);
  const Invocation r = run("train " + cfg() + " --mode baseline");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("row"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(out() / "baseline" / "checkpoint.atzsl"));
}

TEST_F(Cli, EvalOutputs) {
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  ASSERT_EQ(run("train " + cfg() + " --mode baseline").code, 0);
  const fs::path ckpt = out() / "baseline" / "checkpoint.atzsl";
  Invocation r = run("eval " + cfg() + " --checkpoint " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path eval = out() / "baseline" / "eval";
  for (const char* f : {"metrics.csv", "trade_off.csv", "report.txt", "standard_visual.svg"}) {
    EXPECT_TRUE(fs::exists(eval / f)) << f;
  }
  const std::string metrics = bytes(eval / "metrics.csv");
  const std::string trade = bytes(eval / "trade_off.csv");
  EXPECT_EQ(trade.substr(0, trade.find('\n')), "attack,magnitude,H_T1");
  EXPECT_NE(trade.find("\nIFGSM,rho=0.5,"), std::string::npos);

  ASSERT_EQ(run("eval " + cfg() + " --checkpoint " + ckpt.string()).code, 0);
  EXPECT_EQ(bytes(eval / "metrics.csv"), metrics);
  EXPECT_EQ(bytes(eval / "trade_off.csv"), trade);

  const fs::path clean_dir = dir_ / "clean_only";
  r = run("eval " + cfg() + " --checkpoint " + ckpt.string() + " --set eval.scenarios=standard/clean --out " +
          clean_dir.string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(read_metrics_dir(clean_dir.string()).rows.size(), 1u);
}

TEST_F(Cli, EvalErrors) {
  ASSERT_EQ(run("generate " + cfg()).code, 0);
  const fs::path missing = dir_ / "nope.atzsl";
  Invocation r = run("eval " + cfg() + " --checkpoint " + missing.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find(missing.string()), std::string::npos) << r.output;

  ASSERT_EQ(run("train " + cfg() + " --mode baseline").code, 0);
  r = run("eval " + cfg() + " --set dataset.feature_dim=7 --checkpoint " +
          (out() / "baseline" / "checkpoint.atzsl").string() + " --output-dir " + (dir_ / "other").string());
  EXPECT_EQ(r.code, 1) << r.output;  // no dataset generated under the other output dir
  ASSERT_EQ(run("generate " + cfg() + " --set dataset.feature_dim=7 --output-dir " + (dir_ / "other").string()).code,
            0);
  r = run("eval " + cfg() + " --set dataset.feature_dim=7 --checkpoint " +
          (out() / "baseline" / "checkpoint.atzsl").string() + " --output-dir " + (dir_ / "other").string());
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("d_x=6"), std::string::npos) << r.output;
}

class Report : public Cli {
 protected:
  void write_metrics(const std::string& name, const std::string& rows) {
    fs::create_directories(dir_ / name);
    io::write_file_atomic((dir_ / name / "metrics.csv").string(),
                          "# atzsl-metrics v1\n"
                          "scenario,setting,space,attack,rho,steps,acc_u,acc_s,h,t1,clean_loss,attacked_loss\n" +
                              rows);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
};

const char* kRunA =
    "standard/clean,standard,,none,0,0,0.600000,,,0.600000,1.0,1.0\n"
    "standard/visual/FGSM/rho=1,standard,visual,FGSM,1,1,0.300000,,,0.300000,1.0,2.0\n";
const char* kRunB =
    "standard/clean,standard,,none,0,0,0.500000,,,0.500000,1.0,1.0\n"
    "standard/visual/FGSM/rho=1,standard,visual,FGSM,1,1,0.500000,,,0.500000,1.0,2.0\n";

TEST_F(Report, SingleDirectoryReformatsItsMetrics) {
  write_metrics("a", kRunA);
  const ReportOutput r = cmd_report({path("a")});
  EXPECT_EQ(r.csv,
            "scenario,metric,a\n"
            "standard/clean,acc_u,0.600000\n"
            "standard/clean,t1,0.600000\n"
            "standard/visual/FGSM/rho=1,acc_u,0.300000\n"
            "standard/visual/FGSM/rho=1,t1,0.300000\n"
            "standard/visual/FGSM/rho=1,H_T1,0.400000\n");
  EXPECT_NE(r.text.find("* standard/visual/FGSM/rho=1"), std::string::npos);
}

TEST_F(Report, ColumnsFollowArgumentOrder) {
  write_metrics("a", kRunA);
  write_metrics("b", kRunB);
  const Invocation ab = run("report " + path("a") + " " + path("b"));
  const Invocation ba = run("report " + path("b") + " " + path("a"));
  ASSERT_EQ(ab.code, 0) << ab.output;
  EXPECT_EQ(ab.output.substr(0, ab.output.find('\n')).find(" a "), ab.output.find(" a "));
  EXPECT_LT(ab.output.find(" a "), ab.output.find(" b"));
  EXPECT_LT(ba.output.find(" b "), ba.output.find(" a"));
  const ReportOutput labelled = cmd_report({path("b"), path("a")}, {"second", "first"}, path("merged"));
  EXPECT_EQ(labelled.csv.substr(0, labelled.csv.find('\n')), "scenario,metric,second,first");
  EXPECT_EQ(bytes(dir_ / "merged" / "report.csv"), labelled.csv);
}

TEST_F(Report, DisjointScenariosAreAnError) {
  write_metrics("a", kRunA);
  write_metrics("c", "generalized/clean,generalized,,none,0,0,0.5,0.5,0.5,,1.0,1.0\n");
  const Invocation r = run("report " + path("a") + " " + path("c"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("standard/clean missing from c"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("generalized/clean missing from a"), std::string::npos) << r.output;
}

TEST_F(Report, RejectsForeignCsv) {
  fs::create_directories(dir_ / "x");
  io::write_file_atomic((dir_ / "x" / "metrics.csv").string(), "a,b\n1,2\n");
  EXPECT_THROW(cmd_report({path("x")}), DataError);
}

TEST(ExperimentConfig, IniRoundTrip) {
  ExperimentConfig c = parse_experiment(kConfig);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.dataset.synth.num_seen, 5u);
  EXPECT_TRUE(c.dataset.normalize_prototypes);
  EXPECT_EQ(c.net.feature_hidden, std::vector<std::size_t>{10});
  EXPECT_EQ(c.eval.scenarios.size(), 3u);
  const std::string ini = to_ini(c);
  EXPECT_EQ(to_ini(parse_experiment(ini)), ini);
}

TEST(ExperimentConfig, OverridesWin) {
  const ExperimentConfig c = parse_experiment(kConfig, {{"train.epochs", "7"}, {"net.combine", "product"}});
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.net.combine, Combine::kProduct);
}

TEST(ExperimentConfig, NestedSpecErrorsUseTrainKeys) {
  try {
    parse_experiment(kConfig, {{"train.rho_stddev", "-1"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.rho_stddev");
  }
  try {
    parse_experiment(kConfig, {{"train.attack_steps", "0"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.attack_steps");
  }
}

TEST(ExperimentConfig, ScenarioLabelsRoundTrip) {
  for (const char* label : {"standard/clean", "generalized/visual/IFGSM/rho=2/N=9", "standard/visual/FGSM/rho=0.5",
                            "standard/semantic/IFGSM/rho=13.5/N=9", "generalized/visual/ZOO/rho=1/N=4"}) {
    EXPECT_EQ(parse_scenario(label).label(), label);
  }
  EXPECT_EQ(parse_scenario("standard/visual/ifgsm/rho=2").label(), "standard/visual/IFGSM/rho=2/N=9");
  EXPECT_EQ(parse_scenario("standard/semantic/IFGSM/rho=1/N=2").attack->target, AttackTarget::kPrototype);
  EXPECT_THROW(parse_scenario("standard/visual/FGSM/rho=1/N=3"), ConfigError);
  EXPECT_THROW(parse_scenario("sideways/clean"), ConfigError);
}

TEST(MedianSeparation, Example) {
  PrototypeSet p;
  p.matrix = Tensor::matrix({{0, 0}, {3, 4}, {6, 8}});
  p.class_ids = {0, 1, 2};
  EXPECT_DOUBLE_EQ(median_prototype_separation(p), 5.0);  // nearest distances 5, 5, 5

  p.matrix = Tensor::matrix({{0, 0}, {1, 0}, {10, 0}, {30, 0}});
  p.class_ids = {0, 1, 2, 3};
  EXPECT_DOUBLE_EQ(median_prototype_separation(p), 5.0);  // nearest 1, 1, 9, 20; pairwise median would be 15
}

}  // namespace
}  // namespace atzsl
