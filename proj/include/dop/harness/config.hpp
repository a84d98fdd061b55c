#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dop/algo/deterministic.hpp"
#include "dop/algo/stochastic.hpp"
#include "dop/baselines/coma.hpp"
#include "dop/baselines/common_tree_backup.hpp"
#include "dop/baselines/maddpg.hpp"
#include "dop/envs/aggregation.hpp"
#include "dop/envs/matrix_game.hpp"
#include "dop/envs/mill.hpp"
#include "dop/envs/tabular.hpp"

namespace dop::harness {

using json = nlohmann::json;

struct SourcePos {
  int line = 1;
  int column = 1;
};

// Invalid configuration with the position it was detected at.
class ConfigParseError : public ConfigError {
 public:
  ConfigParseError(const std::string& source, SourcePos pos, const std::string& msg)
      : ConfigError(source + ":" + std::to_string(pos.line) + ":" + std::to_string(pos.column) + ": " + msg),
        pos_(pos),
        detail_(msg) {}
  SourcePos pos() const { return pos_; }
  const std::string& detail() const { return detail_; }

 private:
  SourcePos pos_;
  std::string detail_;
};

inline std::string pointer_escape(std::string_view key) {
  std::string out;
  for (char c : key) {
    if (c == '~')
      out += "~0";
    else if (c == '/')
      out += "~1";
    else
      out += c;
  }
  return out;
}

// Source positions of every key and array element of a syntactically valid
// JSON text, addressed by JSON pointer. The json library does not keep
// positions, so semantic errors look them up here. Also rejects duplicate
// keys, which the library would silently collapse.
class LocationIndex {
 public:
  LocationIndex() = default;
  LocationIndex(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {
    value("");
  }

  // Position of `pointer`, or of its closest recorded ancestor.
  SourcePos at(std::string pointer) const {
    while (true) {
      if (auto it = pos_.find(pointer); it != pos_.end()) return it->second;
      if (pointer.empty()) return {};
      pointer.erase(pointer.rfind('/'));
    }
  }

 private:
  SourcePos here() const { return {line_, col_}; }
  char peek() const { return i_ < text_.size() ? text_[i_] : '\0'; }
  void advance() {
    if (text_[i_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++i_;
  }
  void skip_ws() {
    while (i_ < text_.size() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r')) advance();
  }
  std::string string_lit() {
    std::string s;
    advance();  // opening quote
    while (i_ < text_.size() && peek() != '"') {
      if (peek() == '\\') {
        advance();
        switch (peek()) {
          case 'n': s += '\n'; break;
          case 't': s += '\t'; break;
          case 'r': s += '\r'; break;
          case 'b': s += '\b'; break;
          case 'f': s += '\f'; break;
          case 'u': s += "\\u"; break;  // kept verbatim; only used for lookups
          default: s += peek();
        }
        advance();
      } else {
        s += peek();
        advance();
      }
    }
    if (i_ < text_.size()) advance();
    return s;
  }
  void value(const std::string& path) {
    skip_ws();
    pos_.emplace(path, here());
    const char c = peek();
    if (c == '{') {
      advance();
      std::set<std::string> seen;
      skip_ws();
      if (peek() == '}') return advance();
      while (i_ < text_.size()) {
        skip_ws();
        const SourcePos kp = here();
        const std::string key = string_lit();
        if (!seen.insert(key).second) throw ConfigParseError(source_, kp, "duplicate key '" + key + "'");
        const std::string child = path + "/" + pointer_escape(key);
        pos_.emplace(child, kp);
        skip_ws();
        advance();  // ':'
        value(child);
        skip_ws();
        if (peek() == ',') {
          advance();
          continue;
        }
        advance();  // '}'
        return;
      }
    } else if (c == '[') {
      advance();
      skip_ws();
      if (peek() == ']') return advance();
      for (int k = 0; i_ < text_.size(); ++k) {
        value(path + "/" + std::to_string(k));
        skip_ws();
        if (peek() == ',') {
          advance();
          continue;
        }
        advance();  // ']'
        return;
      }
    } else if (c == '"') {
      string_lit();
    } else {
      while (i_ < text_.size() && std::string_view(",]} \t\r\n").find(peek()) == std::string_view::npos) advance();
    }
  }

  std::string_view text_;
  std::string source_;
  std::size_t i_ = 0;
  int line_ = 1, col_ = 1;
  std::map<std::string, SourcePos> pos_;
};

// ---- field binding --------------------------------------------------------
//
// Each configurable struct lists its keys once through a visitor; the same
// list drives strict parsing, defaults dumps and key validation.

inline const char* to_string(algo::ExpectationMode m) {
  switch (m) {
    case algo::ExpectationMode::Decomposed: return "decomposed";
    case algo::ExpectationMode::Sampled: return "sampled";
    case algo::ExpectationMode::Exhaustive: return "exhaustive";
  }
  return "decomposed";
}

template <typename V>
void visit_epsilon(algo::EpsilonSchedule& e, V&& v) {
  v("epsilon_start", e.start);
  v("epsilon_end", e.end);
  v("epsilon_anneal_steps", e.anneal_steps);
}

template <typename V>
void visit_fields(algo::StochasticConfig& c, V&& v) {
  v("kappa", c.tb.kappa);
  v("tb_steps", c.tb.tb_steps);
  v("lambda_tb", c.tb.lambda_tb);
  v("lambda_on", c.tb.lambda_on);
  v("target_update_period", c.tb.target_update_period);
  v("off_batch", c.tb.off_batch);
  v("on_batch", c.tb.on_batch);
  v("expectation", c.expectation.mode);
  v("expectation_samples", c.expectation.samples);
  v("critic_lr", c.critic_lr);
  v("actor_lr", c.actor_lr);
  v("rms_alpha", c.rms_alpha);
  v("rms_eps", c.rms_eps);
  v("off_capacity", c.off_capacity);
  v("on_capacity", c.on_capacity);
  visit_epsilon(c.epsilon, v);
  v("critic_hidden", c.critic_hidden);
  v("actor_hidden", c.actor_hidden);
  v("window", c.window);
  v("advantage", c.advantage);
  v("offpolicy_actor", c.offpolicy_actor);
  v("ratio_clip", c.ratio_clip);
  v("collectors", c.collectors);
  v("actor_warmup_steps", c.actor_warmup_steps);
  v("bootstrap_on_truncation", c.bootstrap_on_truncation);
  v("per_agent_networks", c.per_agent_networks);
  v("normalize_mixing", c.normalize_mixing);
}

template <typename V>
void visit_fields(algo::DeterministicConfig& c, V&& v) {
  v("critic_lr", c.critic_lr);
  v("actor_lr", c.actor_lr);
  v("rms_alpha", c.rms_alpha);
  v("rms_eps", c.rms_eps);
  v("capacity", c.capacity);
  v("batch", c.batch);
  v("warmup_steps", c.warmup_steps);
  v("noise_sigma", c.noise_sigma);
  v("policy_delay", c.policy_delay);
  v("tau", c.tau);
  v("train_every", c.train_every);
  v("critic_hidden", c.critic_hidden);
  v("actor_hidden", c.actor_hidden);
  v("window", c.window);
  v("per_agent_networks", c.per_agent_networks);
  v("normalize_mixing", c.normalize_mixing);
}

template <typename V>
void visit_fields(baselines::ComaConfig& c, V&& v) {
  v("lambda", c.lambda);
  v("target_update_period", c.target_update_period);
  v("on_batch", c.on_batch);
  v("critic_lr", c.critic_lr);
  v("actor_lr", c.actor_lr);
  v("rms_alpha", c.rms_alpha);
  v("rms_eps", c.rms_eps);
  visit_epsilon(c.epsilon, v);
  v("critic_hidden", c.critic_hidden);
  v("actor_hidden", c.actor_hidden);
  v("window", c.window);
  v("collectors", c.collectors);
  v("actor_warmup_steps", c.actor_warmup_steps);
  v("bootstrap_on_truncation", c.bootstrap_on_truncation);
}

template <typename V>
void visit_fields(baselines::MaddpgConfig& c, V&& v) {
  v("critic_lr", c.critic_lr);
  v("actor_lr", c.actor_lr);
  v("rms_alpha", c.rms_alpha);
  v("rms_eps", c.rms_eps);
  v("capacity", c.capacity);
  v("batch", c.batch);
  v("tau", c.tau);
  v("policy_delay", c.policy_delay);
  v("temperature", c.temperature);
  v("straight_through", c.straight_through);
  visit_epsilon(c.epsilon, v);
  v("critic_hidden", c.critic_hidden);
  v("actor_hidden", c.actor_hidden);
  v("window", c.window);
  v("collectors", c.collectors);
  v("actor_warmup_steps", c.actor_warmup_steps);
}

template <typename V>
void visit_fields(envs::Aggregation::Params& p, V&& v) {
  v("n_agents", p.n_agents);
  v("episode_limit", p.episode_limit);
  v("speed", p.speed);
  v("radius", p.radius);
  v("gamma", p.gamma);
}

template <typename V>
void visit_fields(envs::Mill::Params& p, V&& v) {
  v("n_agents", p.n_agents);
  v("episode_limit", p.episode_limit);
  v("force_coef", p.force_coef);
  v("gamma", p.gamma);
}

// Random tabular Dec-MDP drawn from `instance_seed`.
struct TabularParams {
  int n_states = 3;
  int n_agents = 2;
  int n_actions = 3;
  double gamma = 0.9;
  int episode_limit = 20;
  long instance_seed = 0;
};

template <typename V>
void visit_fields(TabularParams& p, V&& v) {
  v("n_states", p.n_states);
  v("n_agents", p.n_agents);
  v("n_actions", p.n_actions);
  v("gamma", p.gamma);
  v("episode_limit", p.episode_limit);
  v("instance_seed", p.instance_seed);
}

struct MatrixGameParams {};
template <typename V>
void visit_fields(MatrixGameParams&, V&&) {}

// Copies the keys present in `obj` into the visited fields; every key must
// be consumed by some visitor (tracked in `used`).
class Binder {
 public:
  Binder(const json& obj, const LocationIndex& loc, std::string source, std::string base, std::set<std::string>* used)
      : obj_(obj), loc_(loc), source_(std::move(source)), base_(std::move(base)), used_(used) {}

  template <typename T>
  void operator()(const char* name, T& field) {
    auto it = obj_.find(name);
    if (it == obj_.end()) return;
    if (used_) used_->insert(name);
    assign(*it, field, name);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigParseError(source_, loc_.at(base_ + "/" + pointer_escape(key)), msg);
  }

 private:
  void assign(const json& j, double& f, const std::string& k) {
    if (!j.is_number()) fail(k, "'" + k + "' must be a number");
    f = j.get<double>();
  }
  void assign(const json& j, bool& f, const std::string& k) {
    if (!j.is_boolean()) fail(k, "'" + k + "' must be true or false");
    f = j.get<bool>();
  }
  template <typename I>
    requires std::is_integral_v<I>
  void assign(const json& j, I& f, const std::string& k) {
    if (!j.is_number_integer()) fail(k, "'" + k + "' must be an integer");
    if constexpr (std::is_unsigned_v<I>) {
      if (j.get<long long>() < 0) fail(k, "'" + k + "' must be non-negative");
    }
    f = j.get<I>();
  }
  void assign(const json& j, std::vector<int>& f, const std::string& k) {
    if (!j.is_array()) fail(k, "'" + k + "' must be an array of positive integers");
    std::vector<int> out;
    for (const auto& e : j) {
      if (!e.is_number_integer() || e.get<long long>() < 1) fail(k, "'" + k + "' must be an array of positive integers");
      out.push_back(e.get<int>());
    }
    f = out;
  }
  void assign(const json& j, algo::ExpectationMode& f, const std::string& k) {
    for (auto m : {algo::ExpectationMode::Decomposed, algo::ExpectationMode::Sampled, algo::ExpectationMode::Exhaustive}) {
      if (j.is_string() && j.get<std::string>() == to_string(m)) {
        f = m;
        return;
      }
    }
    fail(k, "'" + k + "' must be one of \"decomposed\", \"sampled\", \"exhaustive\"");
  }

  const json& obj_;
  const LocationIndex& loc_;
  std::string source_, base_;
  std::set<std::string>* used_;
};

// Serialises the visited fields.
struct Dumper {
  json out = json::object();
  template <typename T>
  void operator()(const char* name, const T& field) {
    if constexpr (std::is_same_v<T, algo::ExpectationMode>)
      out[name] = to_string(field);
    else
      out[name] = field;
  }
};

template <typename S>
json defaults_of() {
  S s{};
  Dumper d;
  visit_fields(s, d);
  return d.out;
}

template <typename S>
std::set<std::string> keys_of() {
  std::set<std::string> k;
  const json d = defaults_of<S>();
  for (const auto& [name, v] : d.items()) k.insert(name);
  return k;
}

// ---- run configuration ----------------------------------------------------

inline const std::vector<std::string>& algorithm_tags() {
  static const std::vector<std::string> tags{"stochastic_dop", "deterministic_dop", "coma",         "maddpg",
                                             "onpolicy_dop",   "offpolicy_dop",     "common_tb_dop"};
  return tags;
}

inline const std::vector<std::string>& environment_tags() {
  static const std::vector<std::string> tags{"matrix_game", "aggregation", "mill", "tabular"};
  return tags;
}

inline bool continuous_environment(const std::string& env) { return env == "aggregation" || env == "mill"; }

// Which hyperparameter struct an algorithm reads on a given environment.
enum class Family { Stochastic, Deterministic, Coma, MaddpgDiscrete };

inline Family family_of(const std::string& algorithm, const std::string& env) {
  if (algorithm == "deterministic_dop") return Family::Deterministic;
  if (algorithm == "coma") return Family::Coma;
  if (algorithm == "maddpg") return continuous_environment(env) ? Family::Deterministic : Family::MaddpgDiscrete;
  return Family::Stochastic;
}

inline std::set<std::string> family_keys(Family f) {
  switch (f) {
    case Family::Stochastic: return keys_of<algo::StochasticConfig>();
    case Family::Deterministic: return keys_of<algo::DeterministicConfig>();
    case Family::Coma: return keys_of<baselines::ComaConfig>();
    case Family::MaddpgDiscrete: return keys_of<baselines::MaddpgConfig>();
  }
  return {};
}

// Unspecified hyperparameters take the defaults of the algorithm's config
// struct; `hyperparameters` and `env_params` keep only what the file set,
// so one file can drive several algorithms with different defaults.
struct RunConfig {
  std::vector<std::string> algorithms{"stochastic_dop"};
  std::string environment = "matrix_game";
  json env_params = json::object();
  json hyperparameters = json::object();
  std::vector<std::uint64_t> seeds{0};
  long total_steps = 10000;
  long metric_period = 500;
  int eval_episodes = 1;
  int variance_samples = 0;
  bool record_wall_clock = false;
  std::string output_dir = "runs";

  bool operator==(const RunConfig&) const = default;
};

inline json to_json(const RunConfig& c) {
  json j = json::object();
  if (c.algorithms.size() == 1)
    j["algorithm"] = c.algorithms.front();
  else
    j["algorithm"] = c.algorithms;
  j["environment"] = {{"name", c.environment}, {"params", c.env_params}};
  j["hyperparameters"] = c.hyperparameters;
  j["seeds"] = c.seeds;
  j["total_steps"] = c.total_steps;
  j["metric_period"] = c.metric_period;
  j["eval_episodes"] = c.eval_episodes;
  j["variance_samples"] = c.variance_samples;
  j["record_wall_clock"] = c.record_wall_clock;
  j["output_dir"] = c.output_dir;
  return j;
}

inline std::string serialize(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

// Typed views of a validated config.
template <typename S>
S bind(const json& obj) {
  S s{};
  LocationIndex none;
  Binder b(obj, none, "<config>", "", nullptr);
  visit_fields(s, b);
  return s;
}

inline algo::StochasticConfig stochastic_config(const RunConfig& c, const std::string& algorithm) {
  auto s = bind<algo::StochasticConfig>(c.hyperparameters);
  if (algorithm == "onpolicy_dop") s.tb.kappa = 0.0;
  if (algorithm == "offpolicy_dop") s.tb.kappa = 1.0;
  if (algorithm == "common_tb_dop") s = baselines::ablation_common_tree_backup(s, s.expectation.samples);
  return s;
}

inline algo::RunSettings run_settings(const RunConfig& c, const std::string& algorithm, std::uint64_t seed) {
  algo::RunSettings r;
  r.run_id = algorithm + "_seed" + std::to_string(seed);
  r.seed = seed;
  r.total_steps = c.total_steps;
  r.metric_period = c.metric_period;
  r.eval_episodes = c.eval_episodes;
  r.variance_samples = c.variance_samples;
  r.record_wall_clock = c.record_wall_clock;
  return r;
}

inline std::unique_ptr<envs::Environment> make_environment(const std::string& name, const json& params) {
  if (name == "matrix_game") return std::make_unique<envs::MatrixGame>();
  if (name == "aggregation") return std::make_unique<envs::Aggregation>(bind<envs::Aggregation::Params>(params));
  if (name == "mill") return std::make_unique<envs::Mill>(bind<envs::Mill::Params>(params));
  if (name == "tabular") {
    const auto p = bind<TabularParams>(params);
    if (p.episode_limit < 1) throw ConfigError("tabular: episode_limit must be >= 1");
    return std::make_unique<envs::TabularEnv>(
        envs::random_tabular(static_cast<std::uint64_t>(p.instance_seed), p.n_states, p.n_agents, p.n_actions, p.gamma),
        p.episode_limit);
  }
  throw ConfigError("unknown environment '" + name + "'");
}

inline std::unique_ptr<envs::Environment> make_environment(const RunConfig& c) {
  return make_environment(c.environment, c.env_params);
}

inline std::unique_ptr<algo::Trainer> make_trainer(const RunConfig& c, const std::string& algorithm,
                                                   const envs::Environment& env, const algo::RunSettings& run) {
  switch (family_of(algorithm, c.environment)) {
    case Family::Stochastic: return std::make_unique<algo::StochasticDop>(env, stochastic_config(c, algorithm), run);
    case Family::Coma:
      return std::make_unique<baselines::Coma>(env, bind<baselines::ComaConfig>(c.hyperparameters), run);
    case Family::MaddpgDiscrete:
      return std::make_unique<baselines::MaddpgDiscrete>(env, bind<baselines::MaddpgConfig>(c.hyperparameters), run);
    case Family::Deterministic: {
      auto d = bind<algo::DeterministicConfig>(c.hyperparameters);
      d.joint_critic = (algorithm == "maddpg");
      return std::make_unique<algo::DeterministicDop>(env, d, run);
    }
  }
  throw ConfigError("unknown algorithm '" + algorithm + "'");
}

namespace detail {

inline void check_keys(const json& obj, const std::set<std::string>& allowed, const LocationIndex& loc,
                       const std::string& source, const std::string& base, const std::string& what) {
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigParseError(source, loc.at(base + "/" + pointer_escape(k)), "unknown " + what + " '" + k + "'");
  }
}

template <typename S>
void bind_checked(const json& obj, const LocationIndex& loc, const std::string& source, const std::string& base) {
  S s{};
  Binder b(obj, loc, source, base, nullptr);
  visit_fields(s, b);
}

}  // namespace detail

// Strict parse: unknown keys, wrong types, duplicate keys and values the
// algorithm or environment constructors reject all raise ConfigParseError.
inline RunConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    SourcePos p;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++p.line;
        p.column = 1;
      } else {
        ++p.column;
      }
    }
    std::string msg = e.what();
    if (auto k = msg.find("syntax error"); k != std::string::npos) msg = msg.substr(k);
    throw ConfigParseError(source, p, msg);
  }
  const LocationIndex loc(text, source);
  auto fail = [&](const std::string& ptr, const std::string& msg) { throw ConfigParseError(source, loc.at(ptr), msg); };
  if (!j.is_object()) fail("", "config must be a JSON object");

  static const std::set<std::string> top{"algorithm",        "environment", "hyperparameters",   "seeds",
                                         "total_steps",      "metric_period", "eval_episodes",   "variance_samples",
                                         "record_wall_clock", "output_dir"};
  detail::check_keys(j, top, loc, source, "", "key");

  RunConfig c;
  if (!j.contains("algorithm")) fail("", "missing required key 'algorithm'");
  {
    const json& a = j["algorithm"];
    std::vector<std::string> tags;
    if (a.is_string()) {
      tags.push_back(a.get<std::string>());
    } else if (a.is_array() && !a.empty()) {
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (!a[k].is_string()) fail("/algorithm/" + std::to_string(k), "algorithm tags must be strings");
        tags.push_back(a[k].get<std::string>());
      }
    } else {
      fail("/algorithm", "'algorithm' must be a tag or a non-empty array of tags");
    }
    for (std::size_t k = 0; k < tags.size(); ++k) {
      const std::string ptr = a.is_array() ? "/algorithm/" + std::to_string(k) : "/algorithm";
      if (std::find(algorithm_tags().begin(), algorithm_tags().end(), tags[k]) == algorithm_tags().end())
        fail(ptr, "unknown algorithm '" + tags[k] + "'");
      if (std::count(tags.begin(), tags.end(), tags[k]) > 1) fail(ptr, "algorithm '" + tags[k] + "' listed twice");
    }
    c.algorithms = tags;
  }

  if (!j.contains("environment")) fail("", "missing required key 'environment'");
  {
    const json& e = j["environment"];
    if (!e.is_object()) fail("/environment", "'environment' must be an object with 'name' and 'params'");
    detail::check_keys(e, {"name", "params"}, loc, source, "/environment", "key");
    if (!e.contains("name") || !e["name"].is_string()) fail("/environment", "'environment.name' must be a string");
    c.environment = e["name"].get<std::string>();
    if (std::find(environment_tags().begin(), environment_tags().end(), c.environment) == environment_tags().end())
      fail("/environment/name", "unknown environment '" + c.environment + "'");
    if (e.contains("params")) {
      if (!e["params"].is_object()) fail("/environment/params", "'environment.params' must be an object");
      c.env_params = e["params"];
    }
    const std::string base = "/environment/params";
    if (c.environment == "matrix_game") {
      detail::check_keys(c.env_params, keys_of<MatrixGameParams>(), loc, source, base, "environment parameter");
    } else if (c.environment == "aggregation") {
      detail::check_keys(c.env_params, keys_of<envs::Aggregation::Params>(), loc, source, base, "environment parameter");
      detail::bind_checked<envs::Aggregation::Params>(c.env_params, loc, source, base);
    } else if (c.environment == "mill") {
      detail::check_keys(c.env_params, keys_of<envs::Mill::Params>(), loc, source, base, "environment parameter");
      detail::bind_checked<envs::Mill::Params>(c.env_params, loc, source, base);
    } else {
      detail::check_keys(c.env_params, keys_of<TabularParams>(), loc, source, base, "environment parameter");
      detail::bind_checked<TabularParams>(c.env_params, loc, source, base);
    }
  }

  if (j.contains("hyperparameters")) {
    if (!j["hyperparameters"].is_object()) fail("/hyperparameters", "'hyperparameters' must be an object");
    c.hyperparameters = j["hyperparameters"];
  }
  std::set<std::string> allowed;
  for (const auto& a : c.algorithms) {
    const auto k = family_keys(family_of(a, c.environment));
    allowed.insert(k.begin(), k.end());
  }
  detail::check_keys(c.hyperparameters, allowed, loc, source, "/hyperparameters", "hyperparameter");
  for (const auto& a : c.algorithms) {
    const std::string base = "/hyperparameters";
    switch (family_of(a, c.environment)) {
      case Family::Stochastic: detail::bind_checked<algo::StochasticConfig>(c.hyperparameters, loc, source, base); break;
      case Family::Deterministic: detail::bind_checked<algo::DeterministicConfig>(c.hyperparameters, loc, source, base); break;
      case Family::Coma: detail::bind_checked<baselines::ComaConfig>(c.hyperparameters, loc, source, base); break;
      case Family::MaddpgDiscrete: detail::bind_checked<baselines::MaddpgConfig>(c.hyperparameters, loc, source, base); break;
    }
  }

  auto integer = [&](const char* key, auto& field, long long lo) {
    if (!j.contains(key)) return;
    const json& v = j[key];
    const std::string ptr = std::string("/") + key;
    if (!v.is_number_integer()) fail(ptr, std::string("'") + key + "' must be an integer");
    if (v.get<long long>() < lo) fail(ptr, std::string("'") + key + "' must be >= " + std::to_string(lo));
    field = v.get<std::remove_reference_t<decltype(field)>>();
  };
  integer("total_steps", c.total_steps, 1);
  integer("metric_period", c.metric_period, 1);
  integer("eval_episodes", c.eval_episodes, 1);
  integer("variance_samples", c.variance_samples, 0);
  if (c.variance_samples == 1) fail("/variance_samples", "'variance_samples' must be 0 or at least 2");
  if (j.contains("record_wall_clock")) {
    if (!j["record_wall_clock"].is_boolean()) fail("/record_wall_clock", "'record_wall_clock' must be true or false");
    c.record_wall_clock = j["record_wall_clock"].get<bool>();
  }
  if (j.contains("output_dir")) {
    if (!j["output_dir"].is_string() || j["output_dir"].get<std::string>().empty())
      fail("/output_dir", "'output_dir' must be a non-empty string");
    c.output_dir = j["output_dir"].get<std::string>();
  }
  if (j.contains("seeds")) {
    const json& s = j["seeds"];
    if (!s.is_array() || s.empty()) fail("/seeds", "'seeds' must be a non-empty array of non-negative integers");
    c.seeds.clear();
    for (std::size_t k = 0; k < s.size(); ++k) {
      const std::string ptr = "/seeds/" + std::to_string(k);
      if (!s[k].is_number_integer() || s[k].get<long long>() < 0) fail(ptr, "seeds must be non-negative integers");
      const auto v = s[k].get<std::uint64_t>();
      if (std::find(c.seeds.begin(), c.seeds.end(), v) != c.seeds.end()) fail(ptr, "seed listed twice");
      c.seeds.push_back(v);
    }
  }

  // Environment and trainer constructors carry the remaining range checks
  // and the algorithm/action-space compatibility rules.
  std::unique_ptr<envs::Environment> env;
  try {
    env = make_environment(c);
  } catch (const Error& e) {
    fail("/environment", e.what());
  }
  for (std::size_t k = 0; k < c.algorithms.size(); ++k) {
    try {
      auto run = run_settings(c, c.algorithms[k], c.seeds.front());
      make_trainer(c, c.algorithms[k], *env, run);
    } catch (const Error& e) {
      const bool compat = std::string(e.what()).find("action space") != std::string::npos;
      const std::string ptr = compat ? (c.algorithms.size() > 1 ? "/algorithm/" + std::to_string(k) : "/algorithm")
                                     : "/hyperparameters";
      fail(ptr, c.algorithms[k] + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigParseError(path, {}, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

}  // namespace dop::harness
