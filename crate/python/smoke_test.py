#!/usr/bin/env python3
"""Smoke test for the memact_py extension module.

Builds the cdylib if needed, copies it next to this script as
memact_py.so, and exercises the simulator, the memory bank, and a tiny
train/eval round trip.

Run from the repository root:  python3 python/smoke_test.py
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def ensure_module():
    built = ROOT / "target" / "debug" / "libmemact_py.so"
    local = Path(__file__).resolve().parent / "memact_py.so"
    if not built.exists() or built.stat().st_mtime > (
        local.stat().st_mtime if local.exists() else 0
    ):
        subprocess.run(["cargo", "build", "-p", "memact-py"], cwd=ROOT, check=True)
    shutil.copy2(built, local)
    sys.path.insert(0, str(local.parent))


def test_env_expert_rollout(m):
    for task in ["seq_push_buttons", "guess_where", "pick_place_order", "markov_reach"]:
        env = m.Env(task, seed=7)
        while not env.done and env.steps < env.horizon:
            delta, done = env.step(env.expert_action())
        assert env.done and abs(env.score - 1.0) < 1e-12, (task, env.score)
    print("ok: scripted expert scores 1.0 on all tasks")


def test_env_errors(m):
    try:
        m.Env("no_such_task", seed=0)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown task must raise")
    env = m.Env("markov_reach", seed=0)
    try:
        env.step([0.0])  # wrong action dimension
    except ValueError:
        pass
    else:
        raise AssertionError("bad action dimension must raise")
    print("ok: invalid inputs raise ValueError")


def test_memoryless_bounds(m):
    assert m.memoryless_bound("markov_reach") == 1.0
    assert m.memoryless_bound("seq_push_buttons") < 1.0
    print("ok: memoryless bounds (buttons %.2f)" % m.memoryless_bound("seq_push_buttons"))


def test_bank(m):
    bank = m.Bank(2)
    bank.push("cognitive", [1.0, 0.0], 1, 0.0)
    bank.push("cognitive", [1.0, 0.0], 1, 1.0)
    bank.push("cognitive", [0.0, 1.0], 1, 2.0)
    bank.consolidate("merge")
    entries = bank.entries("cognitive")
    assert len(entries) == 2
    # the identical adjacent pair merges by averaging values and timesteps
    assert entries[0] == (0.5, [1.0, 0.0])
    assert entries[1] == (2.0, [0.0, 1.0])
    assert bank.capacity == 2
    print("ok: similarity-merge consolidation")


def test_timestep_encoding(m):
    d = 8
    te = m.timestep_encoding_py(3.0, d)
    for k in range(d // 2):
        freq = 10000.0 ** (-(2.0 * k) / d)
        assert abs(te[2 * k] - math.sin(3.0 * freq)) < 1e-12
        assert abs(te[2 * k + 1] - math.cos(3.0 * freq)) < 1e-12
    print("ok: sinusoidal timestep encoding")


def test_train_eval_round_trip(m):
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        n = m.gen_demos("markov_reach", 20, 3, tmp / "demos")
        assert n == 20
        (tmp / "cfg.toml").write_text(
            "\n".join(
                [
                    'task = "markov_reach"',
                    "total_steps = 20",
                    "batch_size = 8",
                    "chunk_len = 4",
                    "exec_horizon = 1",
                    "n_p = 2",
                    "d_p = 8",
                    "d_c = 8",
                    "d_model = 16",
                    "n_blocks = 1",
                    "heads = 2",
                    "heads_perceptual = 2",
                    "se_ratio = 2",
                ]
            )
        )
        steps = m.train_py(tmp / "cfg.toml", tmp / "demos", tmp / "run")
        assert steps == 20
        report = m.evaluate_py(tmp / "run" / "checkpoint.json", "markov_reach", 5, 123)
        assert report["trials"] == 5
        assert len(report["per_trial"]) == 5
        assert 0.0 <= report["mean_score"] <= 1.0
        charts = m.plot_metrics_py(tmp / "run" / "metrics.csv", tmp / "chart")
        assert all(Path(c).exists() for c in charts)
    print("ok: gen-demos -> train -> eval -> plot round trip")


def main():
    ensure_module()
    import memact_py as m

    test_env_expert_rollout(m)
    test_env_errors(m)
    test_memoryless_bounds(m)
    test_bank(m)
    test_timestep_encoding(m)
    test_train_eval_round_trip(m)
    print("smoke test passed")


if __name__ == "__main__":
    main()
