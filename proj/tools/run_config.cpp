#include "run_config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "cgdp/checkpoint.hpp"

namespace cgdp::cli {

namespace {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    return parse_real(text);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw ConfigError("config key '" + key + "': empty list entry");
    out.push_back(parse_double(key, item.substr(first, last - first + 1)));
  }
  return out;
}

std::string format_list(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_exact(values[i]);
  return out;
}

using IntRef = std::function<int&(RunConfig&)>;
using RealRef = std::function<double&(RunConfig&)>;
using BoolRef = std::function<bool&(RunConfig&)>;

Field int_field(std::string key, IntRef ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_integer<int>(key, v); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }};
}

Field real_field(std::string key, RealRef ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_double(key, v); },
          [ref](const RunConfig& c) { return format_exact(ref(const_cast<RunConfig&>(c))); }};
}

Field bool_field(std::string key, BoolRef ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); },
          [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_integer<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});
    f.push_back({"out", [](RunConfig& c, const std::string& v) { c.out = v; },
                 [](const RunConfig& c) { return c.out; }});

    f.push_back({"env.kind",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     const EnvKind kind = parse_env_kind(v);
                     if (kind != c.env.kind) {
                       const std::uint64_t seed = c.env.seed;
                       c.env = kind == EnvKind::point_maze ? point_maze_spec() : EnvSpec{};
                       c.env.seed = seed;
                     }
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config key 'env.kind': ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.env.kind); }});
    f.push_back(int_field("env.state_dim", [](RunConfig& c) -> int& { return c.env.state_dim; }));
    f.push_back(int_field("env.action_dim", [](RunConfig& c) -> int& { return c.env.action_dim; }));
    f.push_back(int_field("env.horizon", [](RunConfig& c) -> int& { return c.env.horizon; }));
    f.push_back({"env.seed",
                 [](RunConfig& c, const std::string& v) { c.env.seed = parse_integer<std::uint64_t>("env.seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.env.seed); }});
    f.push_back(int_field("env.causal_actions", [](RunConfig& c) -> int& { return c.env.causal_actions; }));
    f.push_back(real_field("env.noise", [](RunConfig& c) -> double& { return c.env.noise; }));
    f.push_back(real_field("env.dt", [](RunConfig& c) -> double& { return c.env.dt; }));
    f.push_back(real_field("env.goal_radius", [](RunConfig& c) -> double& { return c.env.goal_radius; }));
    f.push_back(real_field("env.goal_x", [](RunConfig& c) -> double& { return c.env.goal_x; }));
    f.push_back(real_field("env.goal_y", [](RunConfig& c) -> double& { return c.env.goal_y; }));

    f.push_back(int_field("data.episodes", [](RunConfig& c) -> int& { return c.data.episodes; }));
    f.push_back(real_field("data.behavior_noise", [](RunConfig& c) -> double& { return c.data.behavior_noise; }));
    f.push_back({"data.path", [](RunConfig& c, const std::string& v) { c.data.path = v; },
                 [](const RunConfig& c) { return c.data.path; }});

    f.push_back(real_field("train.lr", [](RunConfig& c) -> double& { return c.train.lr; }));
    f.push_back(real_field("train.critic_lr", [](RunConfig& c) -> double& { return c.train.critic_lr; }));
    f.push_back(real_field("train.eta", [](RunConfig& c) -> double& { return c.train.eta; }));
    f.push_back(bool_field("train.q_normalize", [](RunConfig& c) -> bool& { return c.train.q_normalize; }));
    f.push_back(int_field("train.batch", [](RunConfig& c) -> int& { return c.train.batch; }));
    f.push_back(int_field("train.hidden", [](RunConfig& c) -> int& { return c.train.hidden; }));
    f.push_back(int_field("train.hidden_layers", [](RunConfig& c) -> int& { return c.train.hidden_layers; }));
    f.push_back(int_field("train.act_steps", [](RunConfig& c) -> int& { return c.train.act_steps; }));
    f.push_back(int_field("train.actor_steps", [](RunConfig& c) -> int& { return c.train.actor_steps; }));
    f.push_back(int_field("train.offline_steps", [](RunConfig& c) -> int& { return c.train.offline_steps; }));
    f.push_back(int_field("train.episodes", [](RunConfig& c) -> int& { return c.train.episodes; }));
    f.push_back(int_field("train.mask_refresh", [](RunConfig& c) -> int& { return c.train.mask_refresh; }));
    f.push_back(int_field("train.refresh_window", [](RunConfig& c) -> int& { return c.train.refresh_window; }));
    f.push_back({"train.replay_capacity",
                 [](RunConfig& c, const std::string& v) {
                   c.train.replay_capacity = parse_integer<std::size_t>("train.replay_capacity", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.train.replay_capacity); }});
    f.push_back(real_field("train.discount", [](RunConfig& c) -> double& { return c.train.discount; }));
    f.push_back(real_field("train.tau", [](RunConfig& c) -> double& { return c.train.tau; }));
    f.push_back(real_field("train.flip_prob", [](RunConfig& c) -> double& { return c.train.flip_prob; }));
    f.push_back(bool_field("train.r_star_from_data", [](RunConfig& c) -> bool& { return c.train.r_star_from_data; }));

    f.push_back(int_field("diffusion.steps", [](RunConfig& c) -> int& { return c.train.diffusion_steps; }));
    f.push_back(real_field("diffusion.beta_start", [](RunConfig& c) -> double& { return c.train.beta_start; }));
    f.push_back(real_field("diffusion.beta_end", [](RunConfig& c) -> double& { return c.train.beta_end; }));

    f.push_back(real_field("guidance.lambda", [](RunConfig& c) -> double& { return c.train.guidance.lambda; }));
    f.push_back({"guidance.lambda_schedule",
                 [](RunConfig& c, const std::string& v) {
                   c.train.guidance.lambda_schedule = v.empty() ? std::vector<double>{} : parse_list("guidance.lambda_schedule", v);
                 },
                 [](const RunConfig& c) { return format_list(c.train.guidance.lambda_schedule); }});
    f.push_back(real_field("guidance.gamma", [](RunConfig& c) -> double& { return c.train.guidance.gamma; }));
    f.push_back(real_field("guidance.beta_guid", [](RunConfig& c) -> double& { return c.train.guidance.beta_guid; }));
    f.push_back(real_field("guidance.r_star", [](RunConfig& c) -> double& { return c.train.guidance.r_star; }));

    f.push_back(real_field("notears.lambda1", [](RunConfig& c) -> double& { return c.train.notears.lambda1; }));
    f.push_back(real_field("notears.rho_init", [](RunConfig& c) -> double& { return c.train.notears.rho_init; }));
    f.push_back(real_field("notears.rho_growth", [](RunConfig& c) -> double& { return c.train.notears.rho_growth; }));
    f.push_back(real_field("notears.rho_max", [](RunConfig& c) -> double& { return c.train.notears.rho_max; }));
    f.push_back(real_field("notears.alpha_init", [](RunConfig& c) -> double& { return c.train.notears.alpha_init; }));
    f.push_back(real_field("notears.tolerance", [](RunConfig& c) -> double& { return c.train.notears.tolerance; }));
    f.push_back(int_field("notears.max_outer", [](RunConfig& c) -> int& { return c.train.notears.max_outer; }));
    f.push_back(int_field("notears.max_inner", [](RunConfig& c) -> int& { return c.train.notears.max_inner; }));
    f.push_back(real_field("notears.threshold", [](RunConfig& c) -> double& { return c.train.notears.threshold; }));

    f.push_back({"dynamics.kind",
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.train.dynamics.kind = parse_model_kind(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("config key 'dynamics.kind': ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.train.dynamics.kind); }});
    f.push_back(int_field("dynamics.full_covariance_max_dim",
                          [](RunConfig& c) -> int& { return c.train.dynamics.full_covariance_max_dim; }));
    f.push_back(real_field("dynamics.variance_floor", [](RunConfig& c) -> double& { return c.train.dynamics.variance_floor; }));
    f.push_back(real_field("dynamics.ridge", [](RunConfig& c) -> double& { return c.train.dynamics.ridge; }));
    f.push_back(int_field("dynamics.hidden", [](RunConfig& c) -> int& { return c.train.dynamics.hidden; }));
    f.push_back(int_field("dynamics.hidden_layers", [](RunConfig& c) -> int& { return c.train.dynamics.hidden_layers; }));
    f.push_back(int_field("dynamics.steps", [](RunConfig& c) -> int& { return c.train.dynamics.steps; }));
    f.push_back(int_field("dynamics.batch", [](RunConfig& c) -> int& { return c.train.dynamics.batch; }));
    f.push_back(real_field("dynamics.lr", [](RunConfig& c) -> double& { return c.train.dynamics.lr; }));

    f.push_back(int_field("eval.episodes", [](RunConfig& c) -> int& { return c.eval.episodes; }));

    f.push_back(int_field("ablate.seeds", [](RunConfig& c) -> int& { return c.ablate.seeds; }));
    f.push_back(real_field("ablate.flip_prob", [](RunConfig& c) -> double& { return c.ablate.flip_prob; }));
    f.push_back(int_field("ablate.final_window", [](RunConfig& c) -> int& { return c.ablate.final_window; }));

    f.push_back(int_field("verify.lemma1_steps", [](RunConfig& c) -> int& { return c.verify.lemma1_steps; }));
    f.push_back(int_field("verify.lemma1_samples", [](RunConfig& c) -> int& { return c.verify.lemma1_samples; }));
    f.push_back(real_field("verify.prop1_delta", [](RunConfig& c) -> double& { return c.verify.prop1_delta; }));
    f.push_back(int_field("verify.prop1_seeds", [](RunConfig& c) -> int& { return c.verify.prop1_seeds; }));
    f.push_back(int_field("verify.prop1_steps", [](RunConfig& c) -> int& { return c.verify.prop1_steps; }));
    f.push_back(int_field("verify.prop2_runs", [](RunConfig& c) -> int& { return c.verify.prop2_runs; }));
    f.push_back(int_field("verify.prop2_samples", [](RunConfig& c) -> int& { return c.verify.prop2_samples; }));
    f.push_back(int_field("verify.theorem1_seeds", [](RunConfig& c) -> int& { return c.verify.theorem1_seeds; }));
    f.push_back(int_field("verify.theorem1_rollouts", [](RunConfig& c) -> int& { return c.verify.theorem1_rollouts; }));
    f.push_back(real_field("verify.theorem1_grid", [](RunConfig& c) -> double& { return c.verify.theorem1_grid; }));
    f.push_back({"verify.theorem1_lambdas",
                 [](RunConfig& c, const std::string& v) { c.verify.theorem1_lambdas = parse_list("verify.theorem1_lambdas", v); },
                 [](const RunConfig& c) { return format_list(c.verify.theorem1_lambdas); }});
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

void RunConfig::validate() const {
  try {
    env.validate();
    trainer().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (data.episodes < 0 || !(data.behavior_noise >= 0.0)) throw ConfigError("data: episodes and behavior_noise must be >= 0");
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (ablate.seeds < 1 || ablate.final_window < 1) throw ConfigError("ablate: seeds and final_window must be >= 1");
  if (!(ablate.flip_prob >= 0.0 && ablate.flip_prob <= 1.0)) throw ConfigError("ablate.flip_prob must lie in [0, 1]");
  if (verify.lemma1_steps < 500 || verify.lemma1_samples < 10000 || verify.prop1_seeds < 1 || verify.prop1_steps < 1 ||
      verify.prop2_runs < 1 || verify.prop2_samples < 1 || verify.theorem1_seeds < 1 || verify.theorem1_rollouts < 2 ||
      !(verify.theorem1_grid > 0.0) || !(verify.prop1_delta >= 0.0 && verify.prop1_delta < 1.0)) {
    throw ConfigError("verify: invalid check sizes");
  }
  if (!data.path.empty() && !std::filesystem::exists(data.path)) {
    throw ConfigError("data.path does not exist: " + data.path);
  }
}

std::string RunConfig::dataset_path() const {
  return data.path.empty() ? (std::filesystem::path(out) / "dataset.txt").string() : data.path;
}

TrainerConfig RunConfig::trainer() const {
  TrainerConfig t = train;
  t.seed = seed;
  return t;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = key == "env" ? "env.kind" : key;
  const Field* f = find_field(k);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(cfg, value);
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    // A '#' inside a quoted value is data, not a comment.
    bool quoted = false;
    std::size_t cut = line.size();
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        cut = i;
        break;
      }
    }
    const std::string body = trim(std::string_view(line).substr(0, cut));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path);
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) {
    const std::string value = f.get(cfg);
    const bool needs_quotes = value.empty() || value.find_first_of("#= \t\"") != std::string::npos;
    out += f.key + " = " + (needs_quotes ? "\"" + value + "\"" : value) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace cgdp::cli
