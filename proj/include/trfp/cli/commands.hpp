#pragma once

// Operator commands behind the trfp_cli binary. Each returns a process exit
// status and reports problems on `err`; nothing here calls exit().

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trfp/diffcore/checkpoint.hpp"
#include "trfp/envs/make_env.hpp"
#include "trfp/envs/trajectory_csv.hpp"
#include "trfp/error.hpp"
#include "trfp/eval/eval.hpp"
#include "trfp/trainer/config.hpp"
#include "trfp/trainer/off_policy_loop.hpp"
#include "trfp/trainer/trfp_agent.hpp"

#ifndef TRFP_BUILD_ID
#define TRFP_BUILD_ID "unknown"
#endif

namespace trfp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kTrainingFault = 3, kUsageError = 4 };

struct TrainOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> total_steps;
  std::string outdir;
  std::string ablation;  // empty, no_fm, no_qguide or no_tail
};

struct EvalCommandOptions {
  std::string checkpoint;
  std::string env;
  int episodes = 20;
  int steps = 4;
  int candidates = 4;
  std::uint64_t seed = 0;
  std::string report_path;      // defaults to <checkpoint>.eval.json
  std::string trajectory_path;  // optional CSV
};

struct DiagnoseOptions {
  std::string checkpoint;
  std::string env;  // optional; zero states of the policy's width otherwise
  int samples = 64;
  std::uint64_t seed = 0;
  std::string report_path;  // defaults to <checkpoint>.diagnose.json
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

inline void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

inline void apply_ablation(TrainConfig& cfg, const std::string& flag) {
  if (flag.empty()) return;
  if (flag == "no_fm") {
    cfg.no_fm = true;
  } else if (flag == "no_qguide") {
    cfg.no_qguide = true;
  } else if (flag == "no_tail") {
    cfg.no_tail = true;
  } else {
    throw UsageError("unknown ablation '" + flag + "' (expected no_fm|no_qguide|no_tail)");
  }
}

inline ordered_json manifest_json(const std::string& config_text, const TrainOptions& opt, const TrainConfig& cfg,
                                  const std::string& started, const std::optional<std::string>& finished) {
  ordered_json m;
  m["config"] = config_text;
  m["config_path"] = opt.config_path;
  m["effective_config"] = serialize_config(cfg);
  m["build_id"] = TRFP_BUILD_ID;
  m["seeds"] = {cfg.seed};
  m["outdir"] = opt.outdir;
  m["ablation"] = opt.ablation.empty() ? ordered_json(nullptr) : ordered_json(opt.ablation);
  m["lambda_fm"] = cfg.effective_lambda_fm();
  m["eval_candidates"] = cfg.effective_candidates();
  m["started_at"] = started;
  m["finished_at"] = finished ? ordered_json(*finished) : ordered_json(nullptr);
  return m;
}

// Trains to total_steps. Writes, in order: manifest.json, metrics.jsonl,
// ckpt_<step>.trfp every checkpoint_every steps, final.trfp and eval.json
// (evaluated with the config's eval settings), then rewrites the manifest
// with the finish time.
inline int cmd_train(const TrainOptions& opt, std::ostream& err = std::cerr) {
  std::string config_text;
  TrainConfig cfg;
  try {
    config_text = read_text_file(opt.config_path);
    cfg = parse_config(config_text);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.total_steps) cfg.total_steps = *opt.total_steps;
    apply_ablation(cfg, opt.ablation);
    cfg.validate();
    if (opt.outdir.empty()) throw ConfigError("--outdir is required");
    fs::create_directories(opt.outdir);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  const fs::path out(opt.outdir);
  const std::string started = utc_timestamp();
  write_json(out / "manifest.json", manifest_json(config_text, opt, cfg, started, std::nullopt));

  std::unique_ptr<envs::Env> env;
  try {
    env = envs::make_env(cfg.env);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
  const std::unique_ptr<envs::Env> proto = env->clone();
  Rng init_rng = derive_stream(cfg.seed, 0);
  TrfpAgent agent = make_trfp_agent(cfg, env->observation_dim(), env->action_dim(), init_rng);
  OffPolicyTrainer<TrfpAgent> trainer(std::move(agent), std::move(env), cfg);

  std::ofstream metrics_file(out / "metrics.jsonl", std::ios::trunc);
  JsonlWriter metrics(metrics_file);
  auto log_line = [&](const OffPolicyTrainer<TrfpAgent>& t) {
    ordered_json j;
    j["step"] = t.steps();
    j["updates"] = t.updates();
    j["episodes"] = t.episode_returns().size();
    j["recent_return"] = t.recent_return();
    const ordered_json m = to_json(t.last_metrics());
    for (auto& [k, v] : m.items()) j[k] = v;
    metrics.write(j);
  };

  try {
    while (trainer.steps() < cfg.total_steps) {
      trainer.step();
      const std::int64_t s = trainer.steps();
      if (s % cfg.log_every == 0 || s == cfg.total_steps) log_line(trainer);
      if (s % cfg.checkpoint_every == 0) {
        diff::save_checkpoint((out / ("ckpt_" + std::to_string(s) + ".trfp")).string(),
                              agent_checkpoint(trainer.agent()));
      }
    }
    if (cfg.total_steps == 0) log_line(trainer);
  } catch (const TrainingFault& e) {
    metrics_file.flush();
    ordered_json dump;
    dump["error"] = e.what();
    dump["step"] = trainer.steps();
    dump["updates"] = trainer.updates();
    dump["last_metrics"] = to_json(trainer.last_metrics());
    write_json(out / "fault.json", dump);
    diff::save_checkpoint((out / "fault_snapshot.trfp").string(), agent_checkpoint(trainer.agent()));
    err << "training fault: " << e.what() << " (diagnostics in " << (out / "fault.json").string() << ")\n";
    return kTrainingFault;
  }
  metrics_file.flush();
  diff::save_checkpoint((out / "final.trfp").string(), agent_checkpoint(trainer.agent()));

  eval::EvalOptions eo;
  eo.episodes = cfg.eval_episodes;
  eo.steps = cfg.eval_steps;
  eo.candidates = cfg.effective_candidates();
  eo.seed = cfg.seed;
  const eval::EvalReport report = eval::evaluate(trainer.agent().policy, trainer.agent().critic, *proto, eo);
  write_json(out / "eval.json", eval::to_json(report));

  write_json(out / "manifest.json", manifest_json(config_text, opt, cfg, started, utc_timestamp()));
  return kOk;
}

inline int cmd_ablate(const TrainOptions& opt, std::ostream& err = std::cerr) {
  if (opt.ablation.empty()) {
    err << "error: ablate needs --ablate no_fm|no_qguide|no_tail\n";
    return kUsageError;
  }
  return cmd_train(opt, err);
}

inline int cmd_eval(const EvalCommandOptions& opt, std::ostream& err = std::cerr) {
  try {
    const diff::Checkpoint ckpt = diff::load_checkpoint(opt.checkpoint);
    const flow::FlowPolicyParams policy = get_policy(ckpt);
    const critic::CriticEnsemble critic = get_critic(ckpt);
    if (opt.env.empty()) throw ConfigError("--env is required");
    const std::unique_ptr<envs::Env> env = envs::make_env(opt.env);
    if (env->observation_dim() != policy.obs_dim || env->action_dim() != policy.action_dim) {
      throw ConfigError("checkpoint dimensions do not match environment '" + opt.env + "'");
    }
    std::ofstream csv_file;
    std::optional<envs::TrajectoryCsvWriter> csv;
    eval::EvalOptions eo;
    eo.episodes = opt.episodes;
    eo.steps = opt.steps;
    eo.candidates = opt.candidates;
    eo.seed = opt.seed;
    if (!opt.trajectory_path.empty()) {
      csv_file.open(opt.trajectory_path, std::ios::trunc);
      if (!csv_file) throw ConfigError("cannot write '" + opt.trajectory_path + "'");
      csv.emplace(csv_file, env->observation_dim(), env->action_dim());
      eo.trajectories = &*csv;
    }
    const eval::EvalReport report = eval::evaluate(policy, critic, *env, eo);
    const std::string path = opt.report_path.empty() ? opt.checkpoint + ".eval.json" : opt.report_path;
    write_json(path, eval::to_json(report));
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

inline int cmd_diagnose(const DiagnoseOptions& opt, std::ostream& err = std::cerr) {
  try {
    const diff::Checkpoint ckpt = diff::load_checkpoint(opt.checkpoint);
    const flow::FlowPolicyParams policy = get_policy(ckpt);
    const int K = static_cast<int>(diff::require(ckpt, "meta.K").to_scalar());
    const int L = static_cast<int>(diff::require(ckpt, "meta.L").to_scalar());
    flow::check_chain_shape(K, L);
    if (opt.samples < 1) throw ConfigError("--samples must be >= 1");
    Matrix states = Matrix::Zero(opt.samples, policy.obs_dim);
    if (!opt.env.empty()) {
      const std::unique_ptr<envs::Env> env = envs::make_env(opt.env);
      if (env->observation_dim() != policy.obs_dim) {
        throw ConfigError("checkpoint dimensions do not match environment '" + opt.env + "'");
      }
      states = eval::sample_start_states(*env, opt.samples, opt.seed);
    }
    Rng rng = derive_stream(opt.seed, 0x64696167u);
    const eval::FlowDiagnostics d =
        eval::flow_diagnostics(policy, states, rng, K, static_cast<double>(K - L) / K);
    const std::string path = opt.report_path.empty() ? opt.checkpoint + ".diagnose.json" : opt.report_path;
    write_json(path, eval::to_json(d));
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace trfp::cli
