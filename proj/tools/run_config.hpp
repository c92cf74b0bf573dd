#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cgdp/envs.hpp"
#include "cgdp/rl.hpp"

namespace cgdp::cli {

/// Bad configuration text or values; the tool reports it as a usage error.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  int episodes = 40;
  double behavior_noise = 0.5;
  std::string path;  // empty: <out>/dataset.txt
};

struct EvalConfig {
  int episodes = 10;
};

struct AblateConfig {
  int seeds = 5;
  double flip_prob = 0.25;
  int final_window = 10;  // trailing episodes averaged into a run's final return
};

struct VerifyConfig {
  int lemma1_steps = 1000;
  int lemma1_samples = 20000;
  double prop1_delta = 0.5;
  int prop1_seeds = 20;
  int prop1_steps = 10000;
  int prop2_runs = 10;
  int prop2_samples = 10000;
  int theorem1_seeds = 20;
  int theorem1_rollouts = 1000;
  double theorem1_grid = 0.05;
  std::vector<double> theorem1_lambdas{0.1, 1.0};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  EnvSpec env;
  DataConfig data;
  TrainerConfig train;
  EvalConfig eval;
  AblateConfig ablate;
  VerifyConfig verify;

  void validate() const;
  std::string dataset_path() const;
  /// Trainer settings with the run seed applied.
  TrainerConfig trainer() const;
};

/// Flat `key = value` lines; `#` starts a comment; values may be quoted.
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);
/// Every key with its effective value, in a form parse_config reads back exactly.
std::string dump_config(const RunConfig& cfg);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace cgdp::cli
