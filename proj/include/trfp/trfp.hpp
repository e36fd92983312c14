#pragma once

#include "trfp/critic/critic.hpp"
#include "trfp/diffcore/adam.hpp"
#include "trfp/diffcore/checkpoint.hpp"
#include "trfp/diffcore/mlp.hpp"
#include "trfp/diffcore/tape.hpp"
#include "trfp/envs/bandit.hpp"
#include "trfp/envs/make_env.hpp"
#include "trfp/envs/multigoal.hpp"
#include "trfp/envs/pendulum.hpp"
#include "trfp/envs/reacher.hpp"
#include "trfp/envs/trajectory_csv.hpp"
#include "trfp/error.hpp"
#include "trfp/eval/eval.hpp"
#include "trfp/flow_policy/diagnostics.hpp"
#include "trfp/flow_policy/flow_policy.hpp"
#include "trfp/flow_policy/stub_fields.hpp"
#include "trfp/rng.hpp"
#include "trfp/trainer/config.hpp"
#include "trfp/trainer/gaussian_sac.hpp"
#include "trfp/trainer/metrics.hpp"
#include "trfp/trainer/off_policy_loop.hpp"
#include "trfp/trainer/replay_buffer.hpp"
#include "trfp/trainer/temperature.hpp"
#include "trfp/trainer/transition.hpp"
#include "trfp/trainer/trfp_agent.hpp"
