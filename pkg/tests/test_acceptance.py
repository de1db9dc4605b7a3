"""End-to-end acceptance checks; each prints one PASS/FAIL line with its measurement.

The learning-curve runs (two tasks, three seeds, default config) are trained
once per session and reused by the reward-gap, AUC and persistence checks.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from conftest import make_list
from test_core import check_episode
from panelmdp.agent import AgentConfig, DQNAgent, QNetwork, make_batch, td_loss, train
from panelmdp.baselines import brute_force_optimal, random_actions, row_major_actions
from panelmdp.cli import load_agent, run_eval, run_training
from panelmdp.config import default_config
from panelmdp.core import NULL, PanelSpec, StepRecord, initial_state, legal_actions, rollout_placement, transition
from panelmdp.evaluation import expected_rewards
from panelmdp.nn import AttentionBlock, DenseStack, EmbeddingTable, GruCell, grad_check, load_tensors
from panelmdp.sim import GridUserSimulator, SimulatorConfig, expected_episode_reward, realized_reward, sample_feedback

SEEDS = (0, 1, 2)
TASKS = ("reorg", "select_reorg")


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")


@lru_cache(maxsize=None)
def trained(task, seed, out_root):
    cfg = default_config(task, seed)
    return cfg, run_training(cfg, f"{out_root}/{task}-{seed}")


@pytest.fixture(scope="session")
def runs_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance_runs"))


# -- 1: gradients ---------------------------------------------------------------


def _check_module(forward_loss, params):
    return grad_check(forward_loss, params, step=1e-5)


def test_criterion_1_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}

    stack = DenseStack([5, 7, 4, 3], rng)
    x = rng.standard_normal((6, 5))
    w_out = rng.standard_normal((6, 3))

    def dense_loss(backward):
        y, caches = stack.forward(x)
        if backward:
            stack.backward(w_out, caches)
        return float((y * w_out).sum())

    errors["dense"] = _check_module(dense_loss, stack.parameters())

    att = AttentionBlock(8, 8, 2, rng)
    X = rng.standard_normal((3, 4, 8))
    wa = rng.standard_normal((3, 8))

    def attn_loss(backward):
        y, cache = att.forward(X)
        if backward:
            att.backward(wa, cache)
        return float((y * wa).sum())

    errors["attention"] = _check_module(attn_loss, att.parameters())

    gru = GruCell(3, 5, rng)
    S = rng.standard_normal((3, 4, 3))
    lengths = np.array([4, 2, 0])
    wg = rng.standard_normal((3, 5))

    def gru_loss(backward):
        h, cache = gru.forward(S, lengths)
        if backward:
            gru.backward(wg, cache)
        return float((h * wg).sum())

    errors["gru"] = _check_module(gru_loss, gru.parameters())

    emb = EmbeddingTable(6, 4, rng)
    idx = np.array([[1, 3, 1], [5, 0, 1]])
    we = rng.standard_normal((2, 3, 4))

    def emb_loss(backward):
        rows, cache = emb.forward(idx)
        if backward:
            emb.backward(we, cache)
        return float((rows * we).sum())

    errors["embedding"] = _check_module(emb_loss, emb.parameters())

    # the assembled Q-network at its default size on a fixed 2-record batch
    spec = PanelSpec(2, 3, allow_null=True, null_penalty=0.1)
    net = QNetwork(spec, 16, 16, AgentConfig(), rng)
    L = make_list(16, d=16, seed=5)
    s0 = initial_state(L)
    s1 = transition(transition(s0, NULL, spec), spec.slots()[4], spec)
    batch = [
        StepRecord(s0, NULL, -0.1, transition(s0, NULL, spec), False),
        StepRecord(s1, spec.slots()[1], 0.0, transition(s1, spec.slots()[1], spec), False),
    ]
    targets = np.array([0.3, 0.8])

    def q_loss(backward):
        if backward:
            net.zero_grad()
        return td_loss(net, batch, targets, backward=backward)

    errors["q_network_loss"] = _check_module(q_loss, net.parameters())
    elapsed = time.perf_counter() - t0
    worst = max(errors.values())
    ok = worst <= 1e-4 and elapsed < 60
    detail = ", ".join(f"{k}={v:.2e}" for k, v in errors.items())
    report(capsys, 1, ok, f"max rel err {worst:.2e} <= 1e-4 ({detail}); {elapsed:.1f}s < 60s")
    assert ok


# -- 2: advantage centering ---------------------------------------------------------


def test_criterion_2_centering_identity(capsys):
    spec = PanelSpec(2, 3, allow_null=True)
    net = QNetwork(spec, 16, 16, AgentConfig(), np.random.default_rng(1))
    rng = np.random.default_rng(2)
    states = []
    for k in range(1000):
        s = initial_state(make_list(16, d=16, seed=k))
        for _ in range(rng.integers(0, 16)):
            legal = sorted(legal_actions(s, spec))
            s = transition(s, legal[rng.integers(len(legal))], spec)
            if len(s.used_slots) == spec.n_slots:
                break
        states.append(s)
    q, cache = net.forward(make_batch(states, spec))
    worst = float(np.max(np.abs((q - cache[4]).mean(axis=1))))
    ok = worst <= 1e-9
    report(capsys, 2, ok, f"max |mean_a(Q - V)| = {worst:.2e} <= 1e-9 over 1000 states")
    assert ok


# -- 3: environment invariants -------------------------------------------------------


def test_criterion_3_environment_fuzz(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    violations = 0
    for k in range(10_000):
        rows, cols = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        spec = PanelSpec(rows, cols, allow_null=bool(rng.integers(2)))
        L = make_list(int(rng.integers(1, 13)), d=2, seed=k)
        try:
            check_episode(spec, L, rng)
        except AssertionError:
            violations += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 60
    report(capsys, 3, ok, f"{violations} violations in 10000 episodes; {elapsed:.1f}s < 60s")
    assert ok


# -- 4: tiny MDP against the brute-force oracle ---------------------------------------


def test_criterion_4_tiny_mdp_oracle(capsys):
    t0 = time.perf_counter()
    spec = PanelSpec(2, 2, allow_null=False)
    sim = GridUserSimulator(SimulatorConfig(K=4, rows=2, cols=2, seed=11, noise=0.5), fixed_request=True)
    user, ranking = sim.new_request(None)
    _, best = brute_force_optimal(user, ranking, spec, sim.grid, spec.null_penalty)
    agent = DQNAgent(spec, 4, sim.config.d, AgentConfig(seed=11))
    episodes = 3000
    train(agent, sim, episodes, feedback="expected")
    achieved = float(expected_rewards(agent.net, [(user, ranking)], spec, sim)[0])
    elapsed = time.perf_counter() - t0
    ratio = achieved / best
    panel, traj = rollout_placement(row_major_actions(spec), ranking, spec)
    row_ratio = expected_episode_reward(user, panel, sim.grid, traj, 0.0) / best
    ok = ratio >= 0.95 and elapsed <= 600
    report(
        capsys, 4, ok,
        f"greedy {achieved:.5f} / optimal {best:.5f} = {ratio:.4f} >= 0.95 after {episodes} episodes "
        f"(row_major reaches {row_ratio:.4f}); {elapsed:.0f}s <= 600s",
    )
    assert ok


# -- 5 and 6: trained policies against baselines -------------------------------------


def test_criterion_5_middle_bias_exploitation(capsys, runs_dir):
    cfg, result = trained("reorg", 0, runs_dir)
    learned = run_eval(cfg, "learned", 1000, agent=result.agent).average_expected_reward
    row = run_eval(cfg, "row_major", 1000).average_expected_reward
    rand = run_eval(cfg, "random", 1000).average_expected_reward
    oracle = run_eval(cfg, "oracle", 1000).average_expected_reward
    gain_row, gain_rand = learned / row - 1, learned / rand - 1
    ok = gain_row >= 0.05 and gain_rand >= 0.15
    report(
        capsys, 5, ok,
        f"learned {learned:.4f} vs row_major {row:.4f} ({gain_row:+.2%}, need >= +5%), "
        f"vs random {rand:.4f} ({gain_rand:+.2%}, need >= +15%); oracle ceiling {oracle:.4f} ({oracle / row - 1:+.2%} over row_major)",
    )
    assert ok


def test_criterion_6_selection_auc(capsys, runs_dir):
    cfg, result = trained("select_reorg", 0, runs_dir)
    learned = run_eval(cfg, "learned", 1000, agent=result.agent).auc
    rand = run_eval(cfg, "random", 1000).auc
    ok = learned >= 0.70 and abs(rand - 0.5) <= 0.02
    report(capsys, 6, ok, f"learned AUC {learned:.4f} >= 0.70; random AUC {rand:.4f} within 0.50 +/- 0.02")
    assert ok


# -- 7: learning curves ----------------------------------------------------------------


def test_criterion_7_learning_curves(capsys, runs_dir):
    parts, ok = [], True
    for task in TASKS:
        for seed in SEEDS:
            _, result = trained(task, seed, runs_dir)
            first, last = result.thirds()
            ok &= last > first
            parts.append(f"{task}/seed{seed}: {first:.4f} -> {last:.4f}")
    report(capsys, 7, ok, "final-third eval reward > first-third; " + "; ".join(parts))
    assert ok


# -- 8: determinism and persistence --------------------------------------------------------


def test_criterion_8_determinism_and_persistence(capsys, runs_dir, tmp_path):
    cfg = default_config("select_reorg", 5)
    cfg.eval_requests = 50
    a = run_training(cfg, tmp_path / "a", episodes=300)
    b = run_training(cfg, tmp_path / "b", episodes=300)
    same_bytes = all(
        (tmp_path / "a" / "checkpoint" / f).read_bytes() == (tmp_path / "b" / "checkpoint" / f).read_bytes()
        for f in ("tensors.bin", "manifest.json")
    )
    tensors, _ = load_tensors(tmp_path / "a" / "checkpoint")
    live = a.agent.state_tensors()
    round_trip = set(tensors) == set(live) and all(tensors[k].tobytes() == live[k].tobytes() for k in live)
    cfg0, result = trained("select_reorg", 0, runs_dir)
    in_memory = run_eval(cfg0, "learned", 200, agent=result.agent)
    reloaded = run_eval(cfg0, "learned", 200, agent=load_agent(result.out_dir / "checkpoint", cfg0))
    same_eval = in_memory.summary() == reloaded.summary() and in_memory.episode_rewards == reloaded.episode_rewards
    ok = same_bytes and round_trip and same_eval and b.agent.train_steps == a.agent.train_steps
    report(
        capsys, 8, ok,
        f"identical checkpoints {same_bytes}; bit-exact round trip {round_trip}; reloaded eval identical {same_eval}",
    )
    assert ok


# -- 9: simulator calibration ---------------------------------------------------------------


def test_criterion_9_simulator_calibration(capsys):
    sim = GridUserSimulator(SimulatorConfig(K=10, seed=9, noise=0.5))
    rng = np.random.default_rng(9)
    n, worst = 100_000, 0.0
    for k in range(20):
        spec = PanelSpec(2, 3, allow_null=bool(k % 2), null_penalty=0.1)
        user, ranking = sim.new_request(rng)
        panel, traj = rollout_placement(random_actions(spec, rng), ranking, spec)
        expected = expected_episode_reward(user, panel, sim.grid, traj, 0.1)
        draws = sample_feedback(user, panel, sim.grid, rng, size=n)
        realized = np.array([realized_reward(d, traj, 0.1) for d in draws])
        sd = realized.std(ddof=1) / np.sqrt(n)
        worst = max(worst, abs(realized.mean() - expected) / sd if sd > 0 else 0.0)
    ok = worst <= 3.0
    report(capsys, 9, ok, f"max |MC - analytic| = {worst:.2f} s.d. <= 3 over 20 panels x 100000 draws")
    assert ok
