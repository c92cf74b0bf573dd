#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cgdp/rl.hpp"
#include "run_config.hpp"

namespace cgdp::cli {

/// Bad invocation (flags, check names, environment variables): exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<bool> guidance;
};

/// Defaults, then the config file, then command-line flags.
RunConfig resolve_config(const Overrides& flags);

/// CGDP_THREADS, default 1.
int thread_count();

std::string metrics_header();
std::string metrics_line(const EpisodeMetrics& m);

Environment make_environment(const RunConfig& cfg);

struct TrainOutcome {
  Artifacts artifacts;
  OnlineResult online;
};

/// Offline then online training; metrics lines go to `metrics` as they arrive.
TrainOutcome train_run(const Environment& env, const Dataset& data, const TrainerConfig& t, std::ostream& metrics);

void save_artifacts(const std::string& dir, const Artifacts& art, const CriticPair* critics);
Artifacts load_artifacts(const std::string& dir);

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
void cmd_discover(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);
/// Returns true iff every selected check passed.
bool cmd_verify(const RunConfig& cfg, const std::string& which, std::ostream& log);

/// Full command line handling; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace cgdp::cli
