import csv
import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from skillnav.agents import SqnConfig, build_params
from skillnav.diffcore import save_checkpoint
from skillnav.evalharness import (
    DISTURBANCE_LEVELS, OBS_NOISE_LEVELS, EvalScenario, evaluate,
    load_policy, robustness_sweep,
)
from skillnav.oracle import OracleAgent, inflate_obstacles
from skillnav.render import (
    eta_trace_plot, learning_curve_plot, trajectory_csv, trajectory_image,
    render_outputs,
)
from skillnav.world import load_builtin_map


@pytest.fixture(scope="module")
def random_ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpt")
    cfg = SqnConfig(n_skills=2, feature_width=32)
    params = build_params(cfg, np.random.default_rng(0))
    path = d / "random.ckpt"
    save_checkpoint(path, params, meta={"agent_kind": "sqn", "n_skills": "2",
                                        "feature_width": "32", "n_actions": "5",
                                        "map": "desk_maze", "seed": "0"})
    return path


def small_scenario(map_name="desk_maze", n=4, seeds=(0, 1)):
    return EvalScenario(map_name=map_name, n_episodes=n, seeds=seeds)


def test_random_agent_rarely_succeeds(random_ckpt):
    result, logs = evaluate(random_ckpt, small_scenario(n=6))
    assert result.success_mean < 0.35
    assert len(logs) == 12


def test_checkpoint_untouched_by_evaluation(random_ckpt):
    before = hashlib.sha256(random_ckpt.read_bytes()).hexdigest()
    evaluate(random_ckpt, small_scenario(n=2, seeds=(0,)))
    assert hashlib.sha256(random_ckpt.read_bytes()).hexdigest() == before


def results_equal(a, b):
    def eq(x, y):
        if isinstance(x, float) and isinstance(y, float):
            return (math.isnan(x) and math.isnan(y)) or x == y
        return x == y
    if not all(eq(getattr(a, f), getattr(b, f))
               for f in ("success_mean", "success_std", "time_steps_mean",
                         "time_steps_std", "avg_reward")):
        return False
    return all(
        sa.seed == sb.seed and eq(sa.success_rate, sb.success_rate)
        and eq(sa.mean_steps_success, sb.mean_steps_success)
        and eq(sa.mean_reward, sb.mean_reward)
        for sa, sb in zip(a.per_seed, b.per_seed))


def test_evaluation_is_deterministic(random_ckpt):
    a, _ = evaluate(random_ckpt, small_scenario(n=3))
    b, _ = evaluate(random_ckpt, small_scenario(n=3))
    assert results_equal(a, b)


def test_aggregates_match_emitted_csv(random_ckpt, tmp_path):
    scenario = small_scenario(n=5, seeds=(0, 1, 2))
    result, _ = evaluate(random_ckpt, scenario, out_dir=tmp_path)
    rows = list(csv.DictReader(open(tmp_path / "eval_episodes.csv")))
    assert len(rows) == 15
    per_seed_sr = []
    per_seed_steps = []
    per_seed_reward = []
    for seed in (0, 1, 2):
        mine = [r for r in rows if int(r["seed"]) == seed]
        sr = sum(int(r["success"]) for r in mine) / len(mine)
        per_seed_sr.append(sr)
        ok_steps = [int(r["steps"]) for r in mine if int(r["success"])]
        if ok_steps:
            per_seed_steps.append(np.mean(ok_steps))
        per_seed_reward.append(np.mean([float(r["reward"]) for r in mine]))
    assert result.success_mean == np.mean(per_seed_sr)
    assert result.success_std == np.std(per_seed_sr)
    if per_seed_steps:
        assert result.time_steps_mean == pytest.approx(np.mean(per_seed_steps))
    assert result.avg_reward == pytest.approx(np.mean(per_seed_reward))


def test_oracle_succeeds_on_desk_maze():
    result, logs = evaluate("oracle", small_scenario(n=6, seeds=(0, 1)))
    assert result.success_mean == 1.0
    assert all(l.outcome == "success" for l in logs)


def test_sweep_has_exact_paper_levels(random_ckpt, tmp_path):
    rows = robustness_sweep(random_ckpt, "desk_maze", "disturbance",
                            n_episodes=2, seeds=(0,), out_dir=tmp_path)
    assert [lv for lv, _ in rows] == list(DISTURBANCE_LEVELS) == [0.0, 0.1, 0.2, 0.3]
    rows = robustness_sweep(random_ckpt, "desk_maze", "observation",
                            n_episodes=2, seeds=(0,), out_dir=tmp_path)
    assert [lv for lv, _ in rows] == list(OBS_NOISE_LEVELS) == [0.0, 0.2, 0.4, 0.6]
    text = (tmp_path / "robust_observation.csv").read_text().strip().split("\n")
    assert len(text) == 5  # header + 4 levels


def test_sweep_zero_level_equals_plain_evaluate(random_ckpt):
    rows = robustness_sweep(random_ckpt, "desk_maze", "disturbance",
                            n_episodes=3, seeds=(0, 1))
    plain, _ = evaluate(random_ckpt, small_scenario(n=3, seeds=(0, 1)))
    assert results_equal(rows[0][1], plain)


def test_bad_axis_rejected(random_ckpt):
    with pytest.raises(ValueError):
        robustness_sweep(random_ckpt, "desk_maze", "both")


def test_load_policy_rejects_headerless(tmp_path):
    cfg = SqnConfig(feature_width=16)
    params = build_params(cfg, np.random.default_rng(0))
    path = tmp_path / "no_meta.ckpt"
    save_checkpoint(path, params, meta={})
    with pytest.raises(ValueError):
        load_policy(path)


# ------------------------------------------------------------------ render

def test_render_bundle(tmp_path, random_ckpt):
    grid, meta = load_builtin_map("desk_maze")
    _, logs = evaluate("oracle", small_scenario(n=1, seeds=(0,)))
    files = render_outputs(logs, grid, meta, tmp_path)
    assert any(p.suffix == ".png" for p in files)
    assert any(p.suffix == ".csv" for p in files)


def test_trajectory_image_dimensions(tmp_path):
    from PIL import Image
    grid, meta = load_builtin_map("desk_maze")
    _, logs = evaluate("oracle", small_scenario(n=1, seeds=(0,)))
    p = trajectory_image(grid, logs[0], tmp_path / "t.png", scale=3)
    img = Image.open(p)
    assert img.size == (grid.width_cells * 3, grid.height_cells * 3)


def test_trajectory_csv_one_row_per_step(tmp_path, random_ckpt):
    result, logs = evaluate(random_ckpt, small_scenario(n=1, seeds=(0,)))
    log = logs[0]
    path = trajectory_csv(log, tmp_path / "traj.csv")
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(log)
    # eta rows sum to 1
    for r in rows:
        s = float(r["eta0"]) + float(r["eta1"])
        assert abs(s - 1.0) <= 1e-6


def test_eta_trace_plot(tmp_path, random_ckpt):
    _, logs = evaluate(random_ckpt, small_scenario(n=1, seeds=(0,)))
    p = eta_trace_plot(logs[0], tmp_path / "eta.png")
    assert p.exists() and p.stat().st_size > 0


def test_learning_curve_plot(tmp_path):
    m = tmp_path / "metrics.csv"
    m.write_text("episode,phase,seed,epsilon,reward,success,steps,loss_mean,wall_ms\n"
                 + "".join(f"{i},train,0,0.4,{i * 0.1},{i % 2},50,0.5,10\n"
                           for i in range(40)))
    p = learning_curve_plot(m, tmp_path / "curve.png")
    assert p.exists() and p.stat().st_size > 0
