#pragma once

// Flat `key = value` training configuration. Every recognized key must be
// present, unknown keys are rejected, `#` starts a comment.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trfp/diffcore/tape.hpp"
#include "trfp/error.hpp"

namespace trfp {

struct TrainConfig {
  std::string env = "multigoal";
  int K = 4;
  int L = 1;
  double gamma = 0.99;
  int batch = 256;
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  double lambda_fm = 0.1;
  std::vector<diff::Index> hidden{256, 256, 256};
  std::vector<diff::Index> critic_hidden{256, 256, 256};
  std::vector<diff::Index> sigma_hidden{64, 64};
  std::int64_t buffer = 1000000;
  int eval_steps = 4;
  int candidates = 4;
  std::uint64_t seed = 0;
  std::int64_t total_steps = 1000000;
  std::int64_t warmup_random_steps = 5000;
  bool no_fm = false;
  bool no_qguide = false;
  bool no_tail = false;
  double tau_polyak = 0.005;
  double sigma_min = 1e-3;
  double sigma_max = 0.5;
  double sigma_init = 0.1;
  double alpha_init = 0.2;
  bool learn_alpha = true;
  double grad_clip = 10.0;
  double bound_penalty = 1.0;
  int updates_per_step = 1;
  std::int64_t checkpoint_every = 10000;
  std::int64_t log_every = 1000;
  int eval_episodes = 20;

  // lambda_fm after the no_fm switch.
  double effective_lambda_fm() const { return no_fm ? 0.0 : lambda_fm; }
  // Candidate count after the no_qguide switch.
  int effective_candidates() const { return no_qguide ? 1 : candidates; }

  void validate() const {
    if (K < 1) throw ConfigError("config: K must be >= 1");
    if (L < 1 || L > K) throw ConfigError("config: L must satisfy 1 <= L <= K");
    if (bound_penalty < 0.0) throw ConfigError("config: bound_penalty must be >= 0");
    if (lambda_fm < 0.0) throw ConfigError("config: lambda_fm must be >= 0");
    if (candidates < 1) throw ConfigError("config: candidates must be >= 1");
    if (eval_steps < 1) throw ConfigError("config: eval_steps must be >= 1");
    if (batch < 1) throw ConfigError("config: batch must be >= 1");
    if (buffer < batch) throw ConfigError("config: buffer must hold at least one batch");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("config: gamma must lie in [0, 1)");
    if (!(tau_polyak > 0.0 && tau_polyak <= 1.0)) throw ConfigError("config: tau_polyak must lie in (0, 1]");
    if (!(sigma_min > 0.0 && sigma_min < sigma_init && sigma_init < sigma_max)) {
      throw ConfigError("config: need 0 < sigma_min < sigma_init < sigma_max");
    }
    if (!(alpha_init > 0.0)) throw ConfigError("config: alpha_init must be > 0");
    if (updates_per_step < 1) throw ConfigError("config: updates_per_step must be >= 1");
    if (total_steps < 0 || warmup_random_steps < 0) throw ConfigError("config: step counts must be >= 0");
    if (checkpoint_every < 1 || log_every < 1) throw ConfigError("config: cadences must be >= 1");
    if (eval_episodes < 1) throw ConfigError("config: eval_episodes must be >= 1");
    for (const auto* h : {&hidden, &critic_hidden, &sigma_hidden}) {
      for (auto w : *h) {
        if (w < 1) throw ConfigError("config: layer widths must be >= 1");
      }
    }
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("config: key '" + key + "' has invalid value '" + text + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + text + "'");
}

inline std::vector<diff::Index> parse_widths(const std::string& key, const std::string& text) {
  std::vector<diff::Index> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<diff::Index>(key, trim(item)));
  return out;
}

inline std::string format_widths(const std::vector<diff::Index>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string key, T TrainConfig::*m) {
  return {key,
          [m](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*m);
            } else {
              return std::to_string(c.*m);
            }
          },
          [m, key](TrainConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); }};
}

inline Field flag(std::string key, bool TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m, key](TrainConfig& c, const std::string& v) { c.*m = parse_bool(key, v); }};
}

inline Field widths(std::string key, std::vector<diff::Index> TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return format_widths(c.*m); },
          [m, key](TrainConfig& c, const std::string& v) { c.*m = parse_widths(key, v); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"env", [](const TrainConfig& c) { return c.env; }, [](TrainConfig& c, const std::string& v) { c.env = v; }},
      number("K", &TrainConfig::K),
      number("L", &TrainConfig::L),
      number("gamma", &TrainConfig::gamma),
      number("batch", &TrainConfig::batch),
      number("lr_actor", &TrainConfig::lr_actor),
      number("lr_critic", &TrainConfig::lr_critic),
      number("lr_alpha", &TrainConfig::lr_alpha),
      number("lambda_fm", &TrainConfig::lambda_fm),
      widths("hidden", &TrainConfig::hidden),
      widths("critic_hidden", &TrainConfig::critic_hidden),
      widths("sigma_hidden", &TrainConfig::sigma_hidden),
      number("buffer", &TrainConfig::buffer),
      number("eval_steps", &TrainConfig::eval_steps),
      number("candidates", &TrainConfig::candidates),
      number("seed", &TrainConfig::seed),
      number("total_steps", &TrainConfig::total_steps),
      number("warmup_random_steps", &TrainConfig::warmup_random_steps),
      flag("no_fm", &TrainConfig::no_fm),
      flag("no_qguide", &TrainConfig::no_qguide),
      flag("no_tail", &TrainConfig::no_tail),
      number("tau_polyak", &TrainConfig::tau_polyak),
      number("sigma_min", &TrainConfig::sigma_min),
      number("sigma_max", &TrainConfig::sigma_max),
      number("sigma_init", &TrainConfig::sigma_init),
      number("alpha_init", &TrainConfig::alpha_init),
      flag("learn_alpha", &TrainConfig::learn_alpha),
      number("grad_clip", &TrainConfig::grad_clip),
      number("bound_penalty", &TrainConfig::bound_penalty),
      number("updates_per_step", &TrainConfig::updates_per_step),
      number("checkpoint_every", &TrainConfig::checkpoint_every),
      number("log_every", &TrainConfig::log_every),
      number("eval_episodes", &TrainConfig::eval_episodes),
  };
  return table;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : config_detail::fields()) keys.push_back(f.key);
  return keys;
}

// Parses key/value text. Missing, unknown or duplicated keys are errors.
inline TrainConfig parse_config(const std::string& text) {
  using namespace config_detail;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError("config: unrecognized key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    it->second->set(cfg, value);
  }
  for (const auto& f : fields()) {
    if (!seen.contains(f.key)) throw ConfigError("config: missing key '" + f.key + "'");
  }
  cfg.validate();
  return cfg;
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace trfp
