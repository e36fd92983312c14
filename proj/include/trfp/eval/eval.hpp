#pragma once

// Evaluation protocols: deterministic Heun sampling with a chosen step count,
// critic-guided choice among N candidates, per-goal visit counts on the
// multigoal world, and prefix-flow diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trfp/critic/critic.hpp"
#include "trfp/envs/env.hpp"
#include "trfp/envs/trajectory_csv.hpp"
#include "trfp/flow_policy/diagnostics.hpp"
#include "trfp/flow_policy/flow_policy.hpp"
#include "trfp/rng.hpp"

namespace trfp::eval {

using diff::Index;
using diff::Matrix;

// Scores a batch of candidate actions for identical states: (states, actions) -> batch x 1.
using Scorer = std::function<Matrix(const Matrix& states, const Matrix& actions)>;

inline Scorer twin_min_scorer(const critic::CriticEnsemble& e) {
  return [&e](const Matrix& s, const Matrix& a) { return critic::min_online_q(e, s, a); };
}

// Index of the largest score; the first one wins ties.
inline Index select_candidate(const Matrix& scores) {
  Index best = 0;
  for (Index i = 1; i < scores.rows(); ++i) {
    if (scores(i, 0) > scores(best, 0)) best = i;
  }
  return best;
}

// N deterministic samples from independent priors; returns the one the scorer
// ranks highest. Candidates are scored at their clamped (executed) values.
inline envs::Vector q_guided_select(const flow::FlowPolicyParams& p, const Scorer& score, const envs::Vector& state,
                                    int candidates, int steps, Rng& rng) {
  if (candidates < 1) throw ConfigError("q_guided_select: need at least one candidate");
  const Matrix u0 = standard_normal(rng, candidates, p.action_dim);
  const Matrix states = state.transpose().replicate(candidates, 1);
  const Matrix actions = flow::sample_eval(p, states, u0, steps);
  if (candidates == 1) return actions.row(0).transpose();
  const Index best = select_candidate(score(states, actions.cwiseMax(-1.0).cwiseMin(1.0)));
  return actions.row(best).transpose();
}

// Picks an action for one state; the rng belongs to the current episode.
using ActionFn = std::function<envs::Vector(const envs::Vector& state, Rng& rng)>;

struct EvalOptions {
  int episodes = 20;
  int steps = 4;
  int candidates = 4;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: TRFP_THREADS or 1
  envs::TrajectoryCsvWriter* trajectories = nullptr;
};

struct EvalReport {
  std::string env;
  int steps = 0;
  int candidates = 0;
  double mean_return = 0.0;
  double std_return = 0.0;  // population standard deviation
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;
  std::vector<int> episode_goals;      // goal index per episode, -1 if none
  std::vector<int> mode_visit_counts;  // multigoal only, else empty
  std::optional<nlohmann::ordered_json> diagnostics;
};

struct ModeCoverage {
  std::vector<int> counts;
  bool covered = false;
};

inline ModeCoverage mode_coverage(const std::vector<int>& counts) {
  ModeCoverage m{counts, !counts.empty()};
  for (int c : counts) m.covered = m.covered && c >= 1;
  return m;
}

inline ModeCoverage mode_coverage(const EvalReport& r) { return mode_coverage(r.mode_visit_counts); }

inline int thread_cap(int requested) {
  if (requested > 0) return requested;
  if (const char* v = std::getenv("TRFP_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) return n;
  }
  return 1;
}

struct EpisodeRecord {
  double ret = 0.0;
  int length = 0;
  int goal = -1;
  std::vector<envs::Vector> observations;
  std::vector<envs::Vector> actions;
  std::vector<double> rewards;
  std::vector<bool> dones;
};

inline EpisodeRecord run_episode(envs::Env& env, const ActionFn& act, Rng& rng, bool keep) {
  EpisodeRecord rec;
  envs::EnvState s = env.reset(rng);
  while (!s.done) {
    const envs::Vector a = act(s.observation, rng);
    const envs::StepResult r = env.step(a);
    if (keep) {
      rec.observations.push_back(s.observation);
      rec.actions.push_back(env.clamp_action(a));
      rec.rewards.push_back(r.reward);
      rec.dones.push_back(r.done);
    }
    rec.ret += r.reward;
    rec.length += 1;
    if (r.goal_index >= 0) rec.goal = r.goal_index;
    s = r.state;
  }
  return rec;
}

// Episodes use rng streams derived from (seed, episode index), so the report
// does not depend on how many workers run them.
inline EvalReport evaluate(const ActionFn& act, const envs::Env& proto, const EvalOptions& opt) {
  if (opt.episodes < 1) throw ConfigError("evaluate: episodes must be >= 1");
  std::vector<EpisodeRecord> recs(static_cast<std::size_t>(opt.episodes));
  const bool keep = opt.trajectories != nullptr;
  const int workers = std::min(thread_cap(opt.threads), opt.episodes);
  auto work = [&](int first) {
    std::unique_ptr<envs::Env> env = proto.clone();
    for (int e = first; e < opt.episodes; e += workers) {
      Rng rng = derive_stream(opt.seed, static_cast<std::uint64_t>(e));
      recs[static_cast<std::size_t>(e)] = run_episode(*env, act, rng, keep);
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  EvalReport r;
  r.env = proto.name();
  r.steps = opt.steps;
  r.candidates = opt.candidates;
  if (proto.name() == "multigoal") r.mode_visit_counts.assign(4, 0);
  for (std::size_t e = 0; e < recs.size(); ++e) {
    const EpisodeRecord& rec = recs[e];
    r.episode_returns.push_back(rec.ret);
    r.episode_lengths.push_back(rec.length);
    r.episode_goals.push_back(rec.goal);
    if (rec.goal >= 0 && !r.mode_visit_counts.empty()) r.mode_visit_counts[static_cast<std::size_t>(rec.goal)] += 1;
    if (keep) {
      for (std::size_t k = 0; k < rec.observations.size(); ++k) {
        opt.trajectories->write(static_cast<int>(e), static_cast<int>(k), rec.observations[k], rec.actions[k],
                                rec.rewards[k], rec.dones[k]);
      }
    }
  }
  const double n = static_cast<double>(r.episode_returns.size());
  for (double v : r.episode_returns) r.mean_return += v / n;
  double var = 0.0;
  for (double v : r.episode_returns) var += (v - r.mean_return) * (v - r.mean_return) / n;
  r.std_return = std::sqrt(var);
  return r;
}

inline EvalReport evaluate(const flow::FlowPolicyParams& p, const critic::CriticEnsemble& e, const envs::Env& proto,
                           const EvalOptions& opt) {
  const Scorer score = twin_min_scorer(e);
  ActionFn act = [&](const envs::Vector& s, Rng& rng) {
    return q_guided_select(p, score, s, opt.candidates, opt.steps, rng);
  };
  return evaluate(act, proto, opt);
}

struct FlowDiagnostics {
  std::vector<double> straightness;
  std::vector<double> max_abs_divergence;
  std::vector<double> delta_pre;
  std::vector<bool> bound_holds;
  double tau = 0.0;

  bool all_bounds_hold() const {
    return std::all_of(bound_holds.begin(), bound_holds.end(), [](bool b) { return b; });
  }
};

// Straightness of the `steps`-step evaluation trajectory and the prefix
// log-density error over [0, tau] for one prior draw per state row.
inline FlowDiagnostics flow_diagnostics(const flow::FlowPolicyParams& p, const Matrix& states, Rng& rng, int steps,
                                        double tau, int substeps = 20) {
  FlowDiagnostics d;
  d.tau = tau;
  const Matrix u0 = standard_normal(rng, states.rows(), p.action_dim);
  const Matrix st = flow::straightness(flow::eval_trajectory(p, states, u0, steps));
  const flow::PrefixDensityError err = flow::prefix_logdensity_error(p, states, u0, tau, substeps);
  for (Index i = 0; i < states.rows(); ++i) {
    d.straightness.push_back(st(i, 0));
    d.max_abs_divergence.push_back(err.max_abs_divergence(i, 0));
    d.delta_pre.push_back(err.delta(i, 0));
    d.bound_holds.push_back(err.bound_holds(i));
  }
  return d;
}

// Initial observations of `samples` episodes, drawn from derived streams.
inline Matrix sample_start_states(const envs::Env& proto, int samples, std::uint64_t seed) {
  std::unique_ptr<envs::Env> env = proto.clone();
  Matrix out(samples, proto.observation_dim());
  for (int i = 0; i < samples; ++i) {
    Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i));
    out.row(i) = env->reset(rng).observation.transpose();
  }
  return out;
}

namespace detail {
inline nlohmann::ordered_json summary(const std::vector<double>& v) {
  if (v.empty()) return {{"mean", 0.0}, {"max", 0.0}};
  double mean = 0.0;
  for (double x : v) mean += x / static_cast<double>(v.size());
  return {{"mean", mean}, {"max", *std::max_element(v.begin(), v.end())}};
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const FlowDiagnostics& d) {
  std::vector<double> abs_delta;
  for (double x : d.delta_pre) abs_delta.push_back(std::abs(x));
  nlohmann::ordered_json j;
  j["samples"] = d.straightness.size();
  j["tau_cut"] = d.tau;
  j["straightness"] = detail::summary(d.straightness);
  j["max_abs_divergence"] = detail::summary(d.max_abs_divergence);
  j["abs_delta_pre"] = detail::summary(abs_delta);
  j["bound_holds_all"] = d.all_bounds_hold();
  j["per_sample"] = {{"straightness", d.straightness},
                     {"max_abs_divergence", d.max_abs_divergence},
                     {"delta_pre", d.delta_pre}};
  return j;
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["env"] = r.env;
  j["steps"] = r.steps;
  j["candidates"] = r.candidates;
  j["episodes"] = r.episode_returns.size();
  j["mean_return"] = r.mean_return;
  j["std_return"] = r.std_return;
  j["episode_returns"] = r.episode_returns;
  j["episode_lengths"] = r.episode_lengths;
  if (!r.mode_visit_counts.empty()) {
    j["episode_goals"] = r.episode_goals;
    j["mode_visit_counts"] = r.mode_visit_counts;
    j["covered"] = mode_coverage(r).covered;
  }
  if (r.diagnostics) j["diagnostics"] = *r.diagnostics;
  return j;
}

}  // namespace trfp::eval
