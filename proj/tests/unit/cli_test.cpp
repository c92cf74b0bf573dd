#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "run_config.hpp"

namespace cgdp::cli {
namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cgdp-cli-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A run small enough for a unit test.
const char* kTinyConfig = R"(# tiny run
env.state_dim = 3
env.action_dim = 2
env.causal_actions = 1
env.horizon = 8
data.episodes = 20
train.episodes = 2
train.hidden = 8
train.hidden_layers = 1
train.offline_steps = 20
train.batch = 8
train.act_steps = 4
train.actor_steps = 2
train.mask_refresh = 0
diffusion.steps = 10
guidance.lambda = 0.005
eval.episodes = 2
ablate.seeds = 2
ablate.final_window = 2
)";

RunConfig tiny(const fs::path& out, std::uint64_t seed = 3) {
  RunConfig cfg = parse_config(kTinyConfig);
  cfg.out = out.string();
  cfg.seed = seed;
  return cfg;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "cgdp");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::vector<std::string> column(const std::string& tsv, const std::string& name) {
  std::istringstream in(tsv);
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  std::istringstream hs(line);
  for (std::string h; std::getline(hs, h, '\t');) header.push_back(h);
  const auto idx = std::find(header.begin(), header.end(), name) - header.begin();
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string cell;
    for (long i = 0; i <= idx; ++i) std::getline(ls, cell, '\t');
    out.push_back(cell);
  }
  return out;
}

TEST(Config, DumpParseRoundTripIncludesDefaults) {
  const RunConfig defaults;
  const std::string text = dump_config(defaults);
  EXPECT_EQ(dump_config(parse_config(text)), text);
  for (const std::string& key : config_keys()) {
    EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
  }
  RunConfig odd = parse_config(kTinyConfig);
  odd.train.lr = 0.1 + 0.2;
  odd.out = "dir with # hash";
  odd.train.guidance.lambda_schedule = {0.0, 1e-300, 0.5};
  const std::string odd_text = dump_config(odd);
  const RunConfig back = parse_config(odd_text);
  EXPECT_EQ(back.train.lr, odd.train.lr);
  EXPECT_EQ(back.out, odd.out);
  EXPECT_EQ(back.train.guidance.lambda_schedule, odd.train.guidance.lambda_schedule);
  EXPECT_EQ(dump_config(back), odd_text);
}

TEST(Config, ParsesCommentsAndQuotes) {
  const RunConfig cfg = parse_config("seed = 7  # trailing\nout = \"a # b\"\n\n# whole line\nguidance.lambda=0.25\n");
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.out, "a # b");
  EXPECT_EQ(cfg.train.guidance.lambda, 0.25);
}

TEST(Config, RejectsUnknownKeysWithLocation) {
  try {
    parse_config("seed = 1\nguidance.lamda = 2\n", "run.cfg");
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("train.batch = many\n"), ConfigError);
  EXPECT_THROW(parse_config("train.batch = 0\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("no equals sign\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cgdp.cfg"), ConfigError);
}

TEST(Config, FlagsOverrideFile) {
  const fs::path dir = scratch_dir("overrides");
  std::ofstream(dir / "run.cfg") << "seed = 5\nout = from-file\nguidance.lambda = 0.3\n";
  Overrides flags;
  flags.config = (dir / "run.cfg").string();
  RunConfig cfg = resolve_config(flags);
  EXPECT_EQ(cfg.seed, 5u);
  EXPECT_EQ(cfg.out, "from-file");
  flags.seed = 9;
  flags.out = "from-flag";
  flags.guidance = false;
  cfg = resolve_config(flags);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.out, "from-flag");
  EXPECT_EQ(cfg.train.guidance.lambda, 0.0);
  EXPECT_FALSE(cfg.train.guidance.active());
  EXPECT_EQ(cfg.trainer().seed, 9u);
}

TEST(ThreadCount, ReadsEnvironment) {
  unsetenv("CGDP_THREADS");
  EXPECT_EQ(thread_count(), 1);
  setenv("CGDP_THREADS", "3", 1);
  EXPECT_EQ(thread_count(), 3);
  setenv("CGDP_THREADS", "zero", 1);
  EXPECT_THROW(thread_count(), UsageError);
  setenv("CGDP_THREADS", "0", 1);
  EXPECT_THROW(thread_count(), UsageError);
  unsetenv("CGDP_THREADS");
}

TEST(Metrics, NineSignificantDigits) {
  EpisodeMetrics m;
  m.episode = 4;
  m.ret = 1.0 / 3.0;
  m.denoise_loss = 2.0;
  m.q_loss = 123456789.123;
  m.kl_integral = 0.0;
  m.mask_refresh = true;
  EXPECT_EQ(metrics_header(), "episode\treturn\tdenoise_loss\tq_loss\tkl_integral\tmask_refresh");
  EXPECT_EQ(metrics_line(m), "4\t0.333333333\t2\t123456789\t0\t1");
}

TEST(GenData, EmptyAndReproducible) {
  const fs::path dir = scratch_dir("gen-data");
  std::ostringstream log;
  RunConfig cfg = tiny(dir / "a");
  cfg.data.episodes = 0;
  cmd_gen_data(cfg, log);
  const DatasetFile empty = load_dataset((dir / "a" / "dataset.txt").string());
  EXPECT_EQ(empty.n, 3);
  EXPECT_EQ(empty.d, 2);
  EXPECT_TRUE(empty.data.empty());

  cfg = tiny(dir / "b");
  cmd_gen_data(cfg, log);
  cfg.out = (dir / "c").string();
  cmd_gen_data(cfg, log);
  const std::string b = read_file(dir / "b" / "dataset.txt");
  EXPECT_EQ(b, read_file(dir / "c" / "dataset.txt"));
  const DatasetFile parsed = load_dataset((dir / "b" / "dataset.txt").string());
  EXPECT_EQ(parsed.data.size(), 20u * 8u);
  std::ostringstream again;
  write_dataset(again, parsed.n, parsed.d, parsed.data);
  EXPECT_EQ(again.str(), b);
}

TEST(Train, GuidanceOffAndRerunsAreByteIdentical) {
  const fs::path dir = scratch_dir("train");
  std::ostringstream log;
  RunConfig cfg = tiny(dir / "on");
  cmd_gen_data(cfg, log);
  cmd_train(cfg, log);
  const std::string first = read_file(dir / "on" / "metrics.tsv");
  cmd_train(cfg, log);
  EXPECT_EQ(read_file(dir / "on" / "metrics.tsv"), first);
  const std::vector<std::string> kl_on = column(first, "kl_integral");
  ASSERT_EQ(kl_on.size(), 2u);
  EXPECT_NE(kl_on[0], "0");

  RunConfig off = cfg;
  off.out = (dir / "off").string();
  off.data.path = cfg.dataset_path();
  off.train.guidance.lambda = 0.0;
  cmd_train(off, log);
  for (const std::string& v : column(read_file(dir / "off" / "metrics.tsv"), "kl_integral")) EXPECT_EQ(v, "0");

  for (const char* f : {"config.txt", "noise_net.ckpt", "dynamics.ckpt", "run.ckpt", "critics.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / "on" / f)) << f;
  }
  EXPECT_EQ(dump_config(load_config((dir / "on" / "config.txt").string())), read_file(dir / "on" / "config.txt"));

  const Artifacts art = load_artifacts((dir / "on").string());
  save_artifacts((dir / "copy").string(), art, nullptr);
  for (const char* f : {"noise_net.ckpt", "dynamics.ckpt", "run.ckpt"}) {
    EXPECT_EQ(read_file(dir / "copy" / f), read_file(dir / "on" / f)) << f;
  }

  cmd_eval(cfg, log);
  EXPECT_TRUE(fs::exists(dir / "on" / "eval.tsv"));
}

TEST(Train, MissingDatasetIsRuntimeFailure) {
  const fs::path dir = scratch_dir("missing");
  EXPECT_EQ(run({"train", "--config", "/dev/null", "--out", (dir / "nothing").string()}), 1);
}

TEST(Ablate, ZeroFlipMatchesNotearsArm) {
  const fs::path dir = scratch_dir("ablate");
  std::ostringstream log;
  RunConfig cfg = tiny(dir);
  cfg.ablate.flip_prob = 0.0;
  cmd_gen_data(cfg, log);
  cmd_ablate(cfg, log);
  const std::string table = read_file(dir / "ablate.csv");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
  EXPECT_EQ(table.rfind("arm,mean,std\n", 0), 0u);
  for (int k = 0; k < 2; ++k) {
    const std::string tag = "-" + std::to_string(k) + ".tsv";
    EXPECT_EQ(read_file(dir / "ablate" / ("notears" + tag)), read_file(dir / "ablate" / ("corrupted" + tag)));
  }
  std::istringstream rows(table);
  std::string header, notears, corrupted;
  std::getline(rows, header);
  std::getline(rows, notears);
  std::getline(rows, corrupted);
  EXPECT_EQ(notears.substr(notears.find(',')), corrupted.substr(corrupted.find(',')));
}

TEST(Verify, AllWritesEveryReport) {
  const fs::path dir = scratch_dir("verify");
  std::ostringstream log;
  RunConfig cfg = tiny(dir);
  cfg.verify.lemma1_steps = 500;
  cfg.verify.lemma1_samples = 10000;
  cfg.verify.prop1_seeds = 2;
  cfg.verify.prop1_steps = 500;
  cfg.verify.prop2_runs = 2;
  cfg.verify.prop2_samples = 2000;
  cfg.verify.theorem1_seeds = 2;
  cfg.verify.theorem1_rollouts = 10;
  cmd_gen_data(cfg, log);
  cmd_train(cfg, log);
  cmd_verify(cfg, "all", log);
  for (const char* f : {"lemma1.csv", "prop1.csv", "prop2.csv", "theorem1.csv", "verify_summary.txt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const std::string summary = read_file(dir / "verify_summary.txt");
  EXPECT_EQ(summary.rfind("lemma1 ", 0), 0u) << summary;
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
}

TEST(ExitCodes, UsageErrorsReturnTwo) {
  EXPECT_EQ(run({"verify", "lemma9"}), 2);
  EXPECT_EQ(run({"train", "--bogus"}), 2);
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"train", "--guidance", "maybe"}), 2);
  EXPECT_EQ(run({"train", "--config", "/nonexistent/cgdp.cfg"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
  const fs::path bad = scratch_dir("bad-value") / "run.cfg";
  std::ofstream(bad) << "train.batch = 0\n";
  EXPECT_EQ(run({"train", "--config", bad.string()}), 2);
  setenv("CGDP_THREADS", "-1", 1);
  EXPECT_EQ(run({"ablate", "--out", scratch_dir("threads").string()}), 2);
  unsetenv("CGDP_THREADS");
}

}  // namespace
}  // namespace cgdp::cli
