#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cgdp/verify.hpp"

namespace cgdp::cli {

namespace fs = std::filesystem;

RunConfig resolve_config(const Overrides& flags) {
  RunConfig cfg = flags.config ? load_config(*flags.config) : RunConfig{};
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.out) cfg.out = *flags.out;
  if (flags.guidance && !*flags.guidance) {
    cfg.train.guidance.lambda = 0.0;
    cfg.train.guidance.lambda_schedule.clear();
  }
  cfg.validate();
  return cfg;
}

int thread_count() {
  const char* raw = std::getenv("CGDP_THREADS");
  if (!raw || !*raw) return 1;
  char* end = nullptr;
  const long value = std::strtol(raw, &end, 10);
  if (*end != '\0' || value < 1 || value > 1024) {
    throw UsageError(std::string("CGDP_THREADS must be a positive integer, got '") + raw + "'");
  }
  return static_cast<int>(value);
}

std::string metrics_header() { return "episode\treturn\tdenoise_loss\tq_loss\tkl_integral\tmask_refresh"; }

std::string metrics_line(const EpisodeMetrics& m) {
  return std::to_string(m.episode) + '\t' + format_metric(m.ret) + '\t' + format_metric(m.denoise_loss) + '\t' +
         format_metric(m.q_loss) + '\t' + format_metric(m.kl_integral) + '\t' + (m.mask_refresh ? "1" : "0");
}

Environment make_environment(const RunConfig& cfg) { return Environment(cfg.env); }

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset load_training_data(const RunConfig& cfg) {
  const std::string path = cfg.dataset_path();
  if (!fs::exists(path)) throw std::runtime_error("dataset not found: " + path + " (run gen-data first)");
  DatasetFile file = load_dataset(path);
  if (file.n != cfg.env.state_dim || file.d != cfg.env.action_dim) {
    throw std::runtime_error("dataset " + path + " has dimensions (" + std::to_string(file.n) + ", " +
                             std::to_string(file.d) + "), config expects (" + std::to_string(cfg.env.state_dim) +
                             ", " + std::to_string(cfg.env.action_dim) + ")");
  }
  return std::move(file.data);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

}  // namespace

TrainOutcome train_run(const Environment& env, const Dataset& data, const TrainerConfig& t, std::ostream& metrics) {
  Rng rng = Rng::derive(t.seed, "train");
  TrainOutcome out;
  try {
    out.artifacts = offline_stage(data, t, rng);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("offline stage failed: ") + e.what());
  }
  metrics << metrics_header() << '\n' << std::flush;
  out.online = online_stage(env, out.artifacts, data, t, rng,
                            [&](const EpisodeMetrics& m) { metrics << metrics_line(m) << '\n' << std::flush; });
  return out;
}

void save_artifacts(const std::string& dir, const Artifacts& art, const CriticPair* critics) {
  ensure_dir(dir);
  const fs::path base(dir);
  art.net.to_checkpoint().save((base / "noise_net.ckpt").string());
  art.dyn.to_checkpoint().save((base / "dynamics.ckpt").string());
  Checkpoint run("run");
  run.put_meta("r_star", format_exact(art.r_star));
  run.put("discovered_w", art.discovered_w);
  save_masks(run, "mask", art.masks);
  run.save((base / "run.ckpt").string());
  if (critics) critics->to_checkpoint().save((base / "critics.ckpt").string());
}

Artifacts load_artifacts(const std::string& dir) {
  const fs::path base(dir);
  for (const char* name : {"noise_net.ckpt", "dynamics.ckpt", "run.ckpt"}) {
    if (!fs::exists(base / name)) {
      throw std::runtime_error("missing checkpoint " + (base / name).string() + " (run train first)");
    }
  }
  Artifacts art;
  art.net = NoiseNet::from_checkpoint(Checkpoint::load((base / "noise_net.ckpt").string()));
  art.dyn = CausalDynamics::from_checkpoint(Checkpoint::load((base / "dynamics.ckpt").string()));
  const Checkpoint run = Checkpoint::load((base / "run.ckpt").string());
  if (run.kind() != "run") throw std::runtime_error("run.ckpt has the wrong kind");
  art.r_star = parse_real(run.meta("r_star"));
  art.discovered_w = run.get("discovered_w");
  art.masks = load_masks(run, "mask");
  return art;
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const Environment env = make_environment(cfg);
  Rng rng = Rng::derive(cfg.seed, "data");
  Dataset data;
  if (env.kind() == EnvKind::lin_scm) {
    data = generate_dataset(env.scm(), cfg.data.episodes, env.horizon(), cfg.data.behavior_noise, rng);
  } else {
    // Uniform exploration over the action box.
    for (int e = 0; e < cfg.data.episodes; ++e) {
      EnvState st = env.reset(rng);
      while (!st.done) {
        Vector a(env.action_dim());
        for (int j = 0; j < env.action_dim(); ++j) a(j) = 2.0 * rng.uniform() - 1.0;
        StepOutcome o = env.step(st, a, rng);
        data.push_back({st.obs, a, o.reward, o.state.obs, o.done});
        st = std::move(o.state);
      }
    }
  }
  ensure_dir(cfg.out);
  const std::string path = (fs::path(cfg.out) / "dataset.txt").string();
  save_dataset(path, env.state_dim(), env.action_dim(), data);
  log << "wrote " << data.size() << " transitions to " << path << '\n';
}

void cmd_discover(const RunConfig& cfg, std::ostream& log) {
  const Dataset data = load_training_data(cfg);
  const TrainerConfig t = cfg.trainer();
  DiscoveryResult result;
  try {
    result = discover(data, t.notears);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("discovery failed: ") + e.what());
  }
  ensure_dir(cfg.out);
  const std::string path = (fs::path(cfg.out) / "discovery.txt").string();
  save_discovery(path, result, cfg.env.state_dim, cfg.env.action_dim);
  log << "discovered " << result.masks.entry_count() << " mask entries (h = " << format_metric(result.h) << ")";
  if (cfg.env.kind == EnvKind::lin_scm) {
    const CausalMasks truth = exact_masks(make_environment(cfg).scm());
    const int errors = mask_difference(result.masks.c_ss, truth.c_ss) + mask_difference(result.masks.c_as, truth.c_as) +
                       mask_difference(result.masks.u_sr, truth.u_sr) + mask_difference(result.masks.u_ar, truth.u_ar);
    log << ", " << errors << " differ from the environment's true masks";
  }
  log << "; wrote " << path << '\n';
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Dataset data = load_training_data(cfg);
  const Environment env = make_environment(cfg);
  ensure_dir(cfg.out);
  const fs::path base(cfg.out);
  write_text(base / "config.txt", dump_config(cfg));
  std::ofstream metrics(base / "metrics.tsv", std::ios::binary | std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (base / "metrics.tsv").string());
  const TrainOutcome run = train_run(env, data, cfg.trainer(), metrics);
  save_artifacts(cfg.out, run.artifacts, &run.online.critics);
  std::vector<double> returns;
  for (const EpisodeMetrics& m : run.online.episodes) returns.push_back(m.ret);
  log << "trained " << returns.size() << " episodes";
  if (!returns.empty()) log << ", last return " << format_metric(returns.back());
  log << "; wrote " << cfg.out << '\n';
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const Artifacts art = load_artifacts(cfg.out);
  const Environment env = make_environment(cfg);
  const TrainerConfig t = cfg.trainer();
  Rng rng = Rng::derive(cfg.seed, "eval");
  const std::vector<double> returns = evaluate_policy(env, art, t, cfg.eval.episodes, rng, t.guidance.active());
  std::ostringstream text;
  text << "episode\treturn\n";
  for (std::size_t i = 0; i < returns.size(); ++i) text << i + 1 << '\t' << format_metric(returns[i]) << '\n';
  write_text(fs::path(cfg.out) / "eval.tsv", text.str());
  log << "eval over " << returns.size() << " episodes: mean " << format_metric(mean_of(returns)) << " std "
      << format_metric(std_of(returns)) << '\n';
}

void cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const Dataset data = load_training_data(cfg);
  const Environment env = make_environment(cfg);
  const fs::path dir = fs::path(cfg.out) / "ablate";
  ensure_dir(dir.string());
  struct Arm {
    std::string name;
    double flip_prob;
    bool guided;
  };
  const std::vector<Arm> arms{{"notears", 0.0, true}, {"corrupted", cfg.ablate.flip_prob, true}, {"unguided", 0.0, false}};
  const int seeds = cfg.ablate.seeds;
  const int jobs = static_cast<int>(arms.size()) * seeds;
  std::vector<double> finals(jobs, 0.0);
  std::vector<std::string> errors(jobs);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int job = next++; job < jobs; job = next++) {
      const Arm& arm = arms[job / seeds];
      const int k = job % seeds;
      TrainerConfig t = cfg.trainer();
      t.seed = cfg.seed + static_cast<std::uint64_t>(k);
      t.flip_prob = arm.flip_prob;
      if (!arm.guided) {
        t.guidance.lambda = 0.0;
        t.guidance.lambda_schedule.clear();
      }
      try {
        std::ofstream metrics(dir / (arm.name + "-" + std::to_string(k) + ".tsv"), std::ios::binary | std::ios::trunc);
        const TrainOutcome run = train_run(env, data, t, metrics);
        std::vector<double> returns;
        for (const EpisodeMetrics& m : run.online.episodes) returns.push_back(m.ret);
        const std::size_t window = std::min<std::size_t>(returns.size(), static_cast<std::size_t>(cfg.ablate.final_window));
        finals[job] = mean_of(std::vector<double>(returns.end() - static_cast<std::ptrdiff_t>(window), returns.end()));
      } catch (const std::exception& e) {
        errors[job] = arm.name + " seed " + std::to_string(k) + ": " + e.what();
      }
    }
  };
  const int threads = std::min(thread_count(), jobs);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  for (const std::string& e : errors) {
    if (!e.empty()) throw std::runtime_error("ablation run failed: " + e);
  }
  std::ostringstream table;
  std::ostringstream runs;
  table << "arm,mean,std\n";
  runs << "arm,seed,final_return\n";
  for (std::size_t a = 0; a < arms.size(); ++a) {
    const std::vector<double> arm_finals(finals.begin() + static_cast<std::ptrdiff_t>(a * seeds),
                                         finals.begin() + static_cast<std::ptrdiff_t>((a + 1) * seeds));
    table << arms[a].name << ',' << format_metric(mean_of(arm_finals)) << ',' << format_metric(std_of(arm_finals)) << '\n';
    for (int k = 0; k < seeds; ++k) runs << arms[a].name << ',' << k << ',' << format_metric(arm_finals[k]) << '\n';
    log << arms[a].name << ": mean final return " << format_metric(mean_of(arm_finals)) << " std "
        << format_metric(std_of(arm_finals)) << '\n';
  }
  write_text(fs::path(cfg.out) / "ablate.csv", table.str());
  write_text(dir / "runs.csv", runs.str());
}

bool cmd_verify(const RunConfig& cfg, const std::string& which, std::ostream& log) {
  static const std::vector<std::string> checks{"lemma1", "prop1", "prop2", "theorem1"};
  if (which != "all" && std::find(checks.begin(), checks.end(), which) == checks.end()) {
    throw UsageError("unknown check '" + which + "' (expected lemma1, prop1, prop2, theorem1 or all)");
  }
  auto selected = [&](const std::string& name) { return which == "all" || which == name; };
  const fs::path base(cfg.out);
  ensure_dir(cfg.out);
  EnvSpec lin_spec = cfg.env.kind == EnvKind::lin_scm ? cfg.env : EnvSpec{};
  std::vector<std::string> summary;
  bool all_pass = true;

  if (selected("lemma1")) {
    Rng spec_rng = Rng::derive(cfg.seed, "lemma1/spec");
    const PosteriorSpec spec = random_posterior_spec(3, 2, spec_rng);
    const DiffusionSchedule schedule = make_schedule(cfg.verify.lemma1_steps, 1e-4, 0.02);
    Rng rng = Rng::derive(cfg.seed, "lemma1/sampler");
    const Lemma1Report r = check_lemma1(spec, schedule, cfg.verify.lemma1_samples, rng);
    write_text(base / "lemma1.csv", lemma1_csv({r}));
    summary.push_back(std::string("lemma1 ") + (r.pass ? "PASS" : "FAIL") + " max_mean_z=" +
                      format_metric(r.max_mean_z) + " cov_rel_error=" + format_metric(r.cov_rel_error));
    all_pass = all_pass && r.pass;
  }
  if (selected("prop1")) {
    Prop1Config pc;
    pc.delta = cfg.verify.prop1_delta;
    pc.seeds = cfg.verify.prop1_seeds;
    pc.steps = cfg.verify.prop1_steps;
    pc.seed = cfg.seed;
    const DiffusionSchedule schedule = cfg.trainer().schedule();
    Rng rng = Rng::derive(cfg.seed, "prop1/instance");
    const std::vector<Prop1Report> reports{check_prop1(lin_scm_instance(lin_spec, rng), schedule, pc),
                                           check_prop1(stiff_instance(), schedule, pc)};
    write_text(base / "prop1.csv", prop1_csv(reports));
    bool pass = true;
    std::string detail;
    for (const Prop1Report& r : reports) {
      pass = pass && r.pass;
      detail += " " + r.instance + ":dt_max=" + format_metric(r.dt_max) + ",within=" +
                std::to_string(r.divergences_within_bound) + ",above=" + std::to_string(r.divergences_above_bound);
      if (r.skipped) detail += ",skipped(" + r.note + ")";
    }
    summary.push_back(std::string("prop1 ") + (pass ? "PASS" : "FAIL") + detail);
    all_pass = all_pass && pass;
  }
  if (selected("prop2")) {
    std::vector<Prop2Report> reports;
    double min_cos = 1.0;
    bool pass = true;
    for (int i = 0; i < cfg.verify.prop2_runs; ++i) {
      EnvSpec spec = lin_spec;
      spec.seed = lin_spec.seed + static_cast<std::uint64_t>(i);
      const GroundTruthScm scm = make_lin_scm(spec);
      const CausalDynamics dyn = CausalDynamics::from_scm(scm, exact_masks(scm));
      Rng rng = Rng::derive(cfg.seed, "prop2/" + std::to_string(i));
      const Vector s = rng.normal_vector(scm.n);
      Vector a(scm.d);
      for (int j = 0; j < scm.d; ++j) a(j) = 2.0 * rng.uniform() - 1.0;
      reports.push_back(check_prop2(dyn, s, a, cfg.verify.prop2_samples, rng));
      min_cos = std::min(min_cos, reports.back().cosine);
      pass = pass && reports.back().pass;
    }
    write_text(base / "prop2.csv", prop2_csv(reports));
    summary.push_back(std::string("prop2 ") + (pass ? "PASS" : "FAIL") + " min_cosine=" + format_metric(min_cos));
    all_pass = all_pass && pass;
  }
  if (selected("theorem1")) {
    const Artifacts art = load_artifacts(cfg.out);
    const Environment env = make_environment(cfg);
    Theorem1Config tc;
    tc.lambdas = cfg.verify.theorem1_lambdas;
    tc.rollouts = cfg.verify.theorem1_rollouts;
    tc.grid = cfg.verify.theorem1_grid;
    tc.discount = cfg.train.discount;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.verify.theorem1_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
    const Theorem1Report r = check_theorem1(env, art, cfg.trainer().schedule(), cfg.train.guidance, seeds, tc);
    write_text(base / "theorem1.csv", theorem1_csv(r));
    const bool pass = r.held >= static_cast<int>(std::ceil(0.95 * static_cast<double>(r.rows.size())));
    summary.push_back(std::string("theorem1 ") + (pass ? "PASS" : "FAIL") + " held=" + std::to_string(r.held) + "/" +
                      std::to_string(r.rows.size()));
    all_pass = all_pass && pass;
  }
  std::string text;
  for (const std::string& line : summary) text += line + '\n';
  write_text(base / "verify_summary.txt", text);
  log << text;
  return all_pass;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Causality-guided diffusion policy toolkit"};
  app.require_subcommand(1);
  Overrides flags;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string guidance;
  std::string check;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Root random seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--guidance", guidance, "Causal guidance on|off")->check(CLI::IsMember({"on", "off"}));
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Generate an offline dataset from the environment");
  CLI::App* disc = app.add_subcommand("discover", "Run causal discovery on the dataset");
  CLI::App* train = app.add_subcommand("train", "Offline pretraining then online training");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a trained policy");
  CLI::App* ablate = app.add_subcommand("ablate", "Compare discovered, corrupted and no guidance");
  CLI::App* verify = app.add_subcommand("verify", "Run the theory checks");
  for (CLI::App* sub : {gen, disc, train, eval, ablate, verify}) add_common(sub);
  verify->add_option("check", check, "lemma1 | prop1 | prop2 | theorem1 | all")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--config")) flags.config = config_path;
  if (sub->count("--seed")) flags.seed = seed;
  if (sub->count("--out")) flags.out = out;
  if (sub->count("--guidance")) flags.guidance = guidance == "on";

  try {
    thread_count();
    const RunConfig cfg = resolve_config(flags);
    if (sub == gen) cmd_gen_data(cfg, std::cout);
    if (sub == disc) cmd_discover(cfg, std::cout);
    if (sub == train) cmd_train(cfg, std::cout);
    if (sub == eval) cmd_eval(cfg, std::cout);
    if (sub == ablate) cmd_ablate(cfg, std::cout);
    if (sub == verify) return cmd_verify(cfg, check, std::cout) ? 0 : 1;
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cgdp::cli
