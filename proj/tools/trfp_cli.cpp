#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "trfp/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace trfp::cli;
  CLI::App app{"Train, evaluate and inspect flow policies"};
  app.require_subcommand(1);

  TrainOptions train;
  std::uint64_t train_seed = 0;
  std::int64_t total_steps = 0;
  auto add_train_flags = [&](CLI::App* sub) {
    sub->add_option("--config", train.config_path, "key = value config file")->required();
    sub->add_option("--seed", train_seed, "overrides the config seed");
    sub->add_option("--outdir", train.outdir, "output directory")->required();
    sub->add_option("--total-steps", total_steps, "overrides total_steps");
  };
  CLI::App* train_cmd = app.add_subcommand("train", "run training");
  add_train_flags(train_cmd);
  train_cmd->add_option("--ablate", train.ablation, "no_fm|no_qguide|no_tail");
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train with one component removed");
  add_train_flags(ablate_cmd);
  ablate_cmd->add_option("--ablate", train.ablation, "no_fm|no_qguide|no_tail")->required();

  EvalCommandOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--env", ev.env, "multigoal|pendulum|reacher")->required();
  eval_cmd->add_option("--episodes", ev.episodes);
  eval_cmd->add_option("--steps", ev.steps, "ODE steps per action (1, 4, ...)");
  eval_cmd->add_option("--candidates", ev.candidates, "actions scored by the critic");
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--report", ev.report_path, "JSON report path");
  eval_cmd->add_option("--trajectories", ev.trajectory_path, "optional CSV of every step");

  DiagnoseOptions diag;
  CLI::App* diag_cmd = app.add_subcommand("diagnose", "straightness and divergence of the prefix flow");
  diag_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  diag_cmd->add_option("--env", diag.env, "sample start states from this environment");
  diag_cmd->add_option("--samples", diag.samples);
  diag_cmd->add_option("--seed", diag.seed);
  diag_cmd->add_option("--report", diag.report_path, "JSON report path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed() || ablate_cmd->parsed()) {
      CLI::App* sub = train_cmd->parsed() ? train_cmd : ablate_cmd;
      if (sub->count("--seed")) train.seed = train_seed;
      if (sub->count("--total-steps")) train.total_steps = total_steps;
      return ablate_cmd->parsed() ? cmd_ablate(train) : cmd_train(train);
    }
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (diag_cmd->parsed()) return cmd_diagnose(diag);
  } catch (const trfp::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
