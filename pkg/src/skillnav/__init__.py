"""skillnav: a mapless-navigation laboratory.

A 2D differential-drive simulator with exact range sensing, a
coverage/reachability reward, a from-scratch recurrent skill-ensemble
Q-network with two baselines, sequence-replay training with burn-in, and an
evaluation/robustness harness.
"""

from .core import Point2, Pose2, ROBOT_RADIUS_M, wrap_angle
from .world import (DistanceField, MapMetadata, OccupancyGrid, UNREACHABLE,
                    compute_distance_field, load_builtin_map, load_map,
                    resolve_map, sample_spawn_goal, save_map, serialize_map)
from .raycast import BEAM_COUNT, MAX_RANGE_M, raycast_scan
from .reward import (CoverageGrid, RewardBreakdown, goal_reachable,
                     nav_reward, total_reward, update_coverage)
from .sim import (EpisodeState, NavEnv, NoiseConfig, Observation, Twist,
                  action_to_twist, build_observation, check_goal_reached,
                  step_kinematics)
from .diffcore import (ParamSet, ParamSpec, grad_check, init_params,
                       load_checkpoint, optimizer_step, polyak_update,
                       save_checkpoint)
from .agents import (PolicyOutput, SqnConfig, act_epsilon_greedy, aggregate_q,
                     build_params, decision_forward, perception_forward,
                     policy_forward, skill_heads_forward)
from .training import (EpisodeSequence, LearnerConfig, ReplayBuffer,
                       RunConfig, StepRecord, compute_sequence_loss,
                       epsilon_at, rollout_episode, train)
from .evalharness import (EvalResult, EvalScenario, TrajectoryLog, evaluate,
                          robustness_sweep)
from .oracle import OracleAgent

__version__ = "0.1.0"
