#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cola/cli/config.hpp"
#include "support.hpp"

using namespace cola;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("cola_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Result run_cli(const std::string& args, const fs::path& work) {
  const char* bin = std::getenv("COLA_CLI");
  Result r;
  if (!bin) return r;
  const std::string cmd = std::string(bin) + " " + args + " > " + (work / "stdout.txt").string() + " 2> " +
                          (work / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(work / "stdout.txt");
  r.err = slurp(work / "stderr.txt");
  return r;
}

json tiny_run_config() {
  const auto corpus = test::tiny_corpus_config();
  const auto m = test::tiny_corpus_model();
  json j = {{"preset", "desk"}, {"seed", 5}};
  j["corpus"] = glyph::to_json(corpus);
  j["corpus"].erase("seed");
  j["model"] = model::to_json(m);
  j["model"].erase("init_seed");
  j["teacher"] = {{"steps", 5}, {"batch_size", 8}};
  j["train"] = {{"total_steps", 4}, {"batch_size", 8}, {"warmup_steps", 1}, {"halve_every_steps", 2}, {"log_every", 1}};
  j["eval"] = {{"trials", 1}, {"templates_per_class", 2}, {"timing_batches", 2}, {"batch_size", 4}, {"k", 3}};
  return j;
}

}  // namespace

TEST(Config, PresetsResolveWithSeeds) {
  const auto rc = cli::resolve_config("desk", "", {"seed=42"});
  EXPECT_EQ(rc.resolved_seed, 42u);
  EXPECT_EQ(rc.corpus().seed, 42u);
  EXPECT_EQ(rc.model().init_seed, 42u);
  EXPECT_EQ(rc.train().seed, 42u);
  EXPECT_EQ(rc.train().total_steps, cli::desk_train_config().total_steps);
  EXPECT_EQ(rc.tree.at("origin"), "preset:desk seed=42");
  const auto paper = cli::resolve_config("paper-scale", "", {});
  EXPECT_EQ(paper.train().total_steps, 30000);
  EXPECT_EQ(paper.model().D_slot, 128);
  EXPECT_THROW(cli::resolve_config("huge", "", {}), InvalidArgument);
}

TEST(Config, OverridesAndFileLayering) {
  const auto dir = scratch_dir("layers");
  cli::write_json_file(dir / "c.json", {{"train", {{"lambda", 0.5}, {"seed", 9}}}});
  const auto rc = cli::resolve_config("", (dir / "c.json").string(), {"train.lambda=0.02", "model.K=4"});
  EXPECT_DOUBLE_EQ(rc.train().lambda, 0.02);
  EXPECT_EQ(rc.train().seed, 9u);
  EXPECT_EQ(rc.model().K, 4);
  json j;
  cli::apply_override(j, "a.b.c=hello");
  cli::apply_override(j, "a.n=[1,2]");
  EXPECT_EQ(j["a"]["b"]["c"], "hello");
  EXPECT_EQ(j["a"]["n"], json({1, 2}));
  EXPECT_THROW(cli::apply_override(j, "novalue"), InvalidArgument);
  EXPECT_THROW(cli::apply_override(j, "a..b=1"), InvalidArgument);
  EXPECT_THROW(cli::resolve_config("desk", "", {"train.lambda=-1"}), InvalidArgument);
  EXPECT_THROW(cli::resolve_config("desk", (dir / "missing.json").string(), {}), IoError);
  fs::remove_all(dir);
}

TEST(Config, OutputRootPrecedence) {
  ::setenv(cli::kOutputRootEnv, "/tmp/from_env", 1);
  EXPECT_EQ(cli::output_root("flag"), fs::path("flag"));
  EXPECT_EQ(cli::output_root(""), fs::path("/tmp/from_env"));
  ::unsetenv(cli::kOutputRootEnv);
  EXPECT_EQ(cli::output_root(""), fs::path("runs"));
}

TEST(Config, LockIsExclusive) {
  const auto dir = scratch_dir("lock");
  {
    cli::DirLock a(dir);
    EXPECT_THROW(cli::DirLock b(dir), StateError);
  }
  EXPECT_NO_THROW(cli::DirLock c(dir));
  const auto r1 = cli::make_run_dir(dir, "eval"), r2 = cli::make_run_dir(dir, "eval");
  EXPECT_NE(r1, r2);
  fs::remove_all(dir);
}

TEST(Config, FindSplitStoredOrBuilt) {
  const auto corpus = glyph::generate_corpus(test::tiny_corpus_config());
  EXPECT_EQ(cli::find_split(corpus, "char:16:8").name(), "char_16_8");
  EXPECT_EQ(cli::find_split(corpus, "char_16_8").test_classes, corpus.split("char_16_8").test_classes);
  const auto built = cli::find_split(corpus, "char:10:6");
  EXPECT_EQ(built.train_classes.size(), 10u);
  EXPECT_THROW(cli::find_split(corpus, "char:20:8"), InvalidArgument);
}

TEST(Cli, EndToEndOnTinyCorpus) {
  if (!std::getenv("COLA_CLI")) GTEST_SKIP() << "COLA_CLI not set";
  const auto work = scratch_dir("e2e");
  cli::write_json_file(work / "tiny.json", tiny_run_config());
  const std::string common = " --config " + (work / "tiny.json").string() + " --out-root " + (work / "runs").string();
  const std::string corpus = (work / "corpus").string();

  auto r = run_cli("synth" + common + " --out " + corpus, work);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out).at("classes"), 24);
  EXPECT_TRUE(fs::exists(work / "corpus" / "config.json"));

  r = run_cli("synth" + common + " --out " + corpus, work);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err).at("error").at("kind"), "state-error");

  // Evaluating before training is a state error with a JSON record.
  r = run_cli("eval" + common + " --corpus " + corpus + " --split char:16:8 --checkpoint " +
                  (work / "nope.cola").string(),
              work);
  EXPECT_NE(r.code, 0);
  auto err = json::parse(r.err).at("error");
  EXPECT_EQ(err.at("kind"), "state-error");
  EXPECT_EQ(err.at("command"), "eval");

  r = run_cli("train" + common + " --corpus " + corpus + " --split char:16:8", work);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(json::parse(r.err).at("error").at("message").get<std::string>().find("teacher"), std::string::npos);

  r = run_cli("train-teacher" + common + " --corpus " + corpus + " --split char:16:8 --out " +
                  (work / "teacher").string(),
              work);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string teacher = (work / "teacher" / "teacher.cola").string();
  ASSERT_TRUE(fs::exists(teacher));

  r = run_cli("train" + common + " --corpus " + corpus + " --split char:16:8 --teacher " + teacher + " --out " +
                  (work / "train").string(),
              work);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string ckpt = (work / "train" / "checkpoint.cola").string();
  ASSERT_TRUE(fs::exists(ckpt));
  std::ifstream metrics(work / "train" / "metrics.ndjson");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    const auto rec = json::parse(line);
    for (const char* key : {"step", "total", "recon", "pred", "lr_backbone", "lr_decoder", "wallclock"})
      EXPECT_TRUE(rec.contains(key)) << key;
    ++lines;
  }
  EXPECT_EQ(lines, 4);
  EXPECT_FALSE(fs::exists(work / "train" / ".lock"));

  r = run_cli("train" + common + " --corpus " + corpus + " --split char:16:8 --resume " + ckpt + " --steps 6 --out " +
                  (work / "train2").string(),
              work);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out).at("step"), 6);

  r = run_cli("eval" + common + " --corpus " + corpus + " --split char:16:8 --checkpoint " + ckpt + " --out " +
                  (work / "eval").string(),
              work);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = json::parse(slurp(work / "eval" / "eval_report.json"));
  EXPECT_DOUBLE_EQ(report.at("chance_level").get<double>(), 1.0 / 8);
  const auto cfg = json::parse(slurp(work / "eval" / "config.json"));
  EXPECT_EQ(cfg.at("command"), "eval");
  EXPECT_EQ(cfg.at("resolved_seed"), 5);

  r = run_cli("viz" + common + " --checkpoint " + ckpt + " --corpus " + corpus + " --class 20 --sample 0 --out " +
                  (work / "viz").string(),
              work);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(work / "viz" / "panel.png"));

  r = run_cli("retrieve" + common + " --checkpoint " + ckpt + " --corpus " + corpus + " --class 20 --sample 0", work);
  ASSERT_EQ(r.code, 0) << r.err;

  r = run_cli("time" + common + " --checkpoint " + ckpt + " --corpus " + corpus + " --split char:16:8", work);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out).at("batch_ms").size(), 2u);
  fs::remove_all(work);
}

TEST(Cli, ImpossibleSplitIsInvalidArgument) {
  if (!std::getenv("COLA_CLI")) GTEST_SKIP() << "COLA_CLI not set";
  const auto work = scratch_dir("badsplit");
  auto r = run_cli("synth --out " + (work / "c").string() + " --split char:150:80", work);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err).at("error").at("kind"), "invalid-argument");
  r = run_cli("frobnicate", work);
  EXPECT_NE(r.code, 0);
  fs::remove_all(work);
}
