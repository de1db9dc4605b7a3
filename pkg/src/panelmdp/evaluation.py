"""Batched greedy rollouts and policy evaluation on simulated requests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .agent import QNetwork, make_batch
from .baselines import (
    PolicyKind,
    actions_policy,
    assignment_policy,
    brute_force_search,
    random_assignment,
    row_major_actions,
)
from .core import (
    Panel,
    PanelSpec,
    RankingList,
    RewardSpec,
    SlotAction,
    StepRecord,
    apply_placement,
    assign_rewards,
    initial_state,
    is_terminal,
    legal_mask,
    rollout_placement,
    transition,
)
from .metrics import compute_auc
from .sim import realized_reward, true_affinity


@dataclass
class Episode:
    panel: Panel
    trajectory: list[StepRecord]
    q: list[np.ndarray] = field(default_factory=list)


def greedy_rollouts(net: QNetwork, rankings: Sequence[RankingList], spec: PanelSpec) -> list[Episode]:
    """Run ``argmax`` episodes for many lists at once, one batched forward per step.

    Produces exactly what :func:`~panelmdp.core.rollout_placement` would with
    the greedy policy, plus the Q-vector seen at every step.
    """
    states = [initial_state(r) for r in rankings]
    panels = [Panel(spec) for _ in rankings]
    trajs: list[list[StepRecord]] = [[] for _ in rankings]
    qs: list[list[np.ndarray]] = [[] for _ in rankings]
    active = [i for i, s in enumerate(states) if not is_terminal(s, spec)]
    while active:
        q = net.forward(make_batch([states[i] for i in active], spec))[0]
        still = []
        for row, i in enumerate(active):
            s = states[i]
            legal = np.flatnonzero(legal_mask(s, spec))
            a = SlotAction.from_index(legal[np.argmax(q[row, legal])], spec)
            if not a.is_null:
                panels[i] = apply_placement(panels[i], a, s.current_item)
            nxt = transition(s, a, spec)
            term = is_terminal(nxt, spec)
            trajs[i].append(StepRecord(s, a, 0.0, nxt, term))
            qs[i].append(q[row].copy())
            states[i] = nxt
            if not term:
                still.append(i)
        active = still
    return [Episode(p, t, qv) for p, t, qv in zip(panels, trajs, qs)]


def selection_scores(episode: Episode, spec: PanelSpec) -> np.ndarray:
    """Per processed candidate: best legal slot Q minus the NULL Q."""
    out = []
    for rec, q in zip(episode.trajectory, episode.q):
        mask = legal_mask(rec.state, spec)
        mask[spec.null_index] = False
        out.append(q[mask].max() - q[spec.null_index])
    return np.array(out)


def selection_labels(user, episode: Episode, spec: PanelSpec) -> np.ndarray:
    """1 iff the processed item is among the top ``M*N`` candidates by true affinity."""
    ranking = episode.trajectory[0].state.list
    aff = true_affinity(user, ranking.items)
    top = set(np.argsort(-aff, kind="stable")[: spec.n_slots].tolist())
    return np.array([int(rec.state.t in top) for rec in episode.trajectory])


@dataclass
class EvalReport:
    policy: str
    n_episodes: int
    average_reward: float
    average_expected_reward: float
    reward_std: float
    auc: Optional[float] = None
    episode_rewards: list[float] = field(default_factory=list)
    episode_expected: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        d = {
            "policy": self.policy,
            "n_episodes": self.n_episodes,
            "average_reward": self.average_reward,
            "average_expected_reward": self.average_expected_reward,
            "reward_std": self.reward_std,
        }
        if self.auc is not None:
            d["auc"] = self.auc
        return d


def policy_episodes(kind, requests, spec, sim, rng, net=None, cap=None) -> list[Episode]:
    """Roll out one baseline or the learned policy on every request."""
    kind = PolicyKind(kind)
    if kind is PolicyKind.LEARNED:
        if net is None:
            raise ValueError("the learned policy needs a network")
        return greedy_rollouts(net, [r for _, r in requests], spec)
    eps = []
    for user, ranking in requests:
        if kind is PolicyKind.ROW_MAJOR:
            policy = row_major_actions(spec)
        elif kind is PolicyKind.RANDOM:
            policy = assignment_policy(random_assignment(ranking, spec, rng))
        else:
            kw = {} if cap is None else {"cap": cap}
            acts, _ = brute_force_search(user, ranking, spec, sim.grid, spec.null_penalty, **kw)
            policy = actions_policy(acts)
        panel, traj = rollout_placement(policy, ranking, spec)
        eps.append(Episode(panel, traj))
    return eps


def evaluate(kind, requests, spec: PanelSpec, sim, rng, net=None, with_auc=None, cap=None) -> EvalReport:
    """Average realized (sampled) and analytic expected reward over ``requests``.

    With ``with_auc`` (default: whenever NULL is allowed) the pooled
    selection AUC is computed over every processed candidate. The learned
    policy is scored by its Q-gap; baselines carry no scores, so each
    processed candidate gets an independent uniform score.
    """
    kind = PolicyKind(kind)
    episodes = policy_episodes(kind, requests, spec, sim, rng, net=net, cap=cap)
    rewards_spec = RewardSpec.for_panel(spec)
    realized, expected = [], []
    scores, labels = [], []
    if with_auc is None:
        with_auc = spec.allow_null and any(len(r) > spec.n_slots for _, r in requests)
    for (user, _), ep in zip(requests, episodes):
        bought = sim.feedback(user, ep.panel, rng)
        traj = assign_rewards(ep.trajectory, bought, rewards_spec)
        realized.append(realized_reward(bought, traj, rewards_spec.null_penalty))
        expected.append(sim.expected_reward(user, ep.panel, traj, rewards_spec.null_penalty))
        if with_auc:
            labels.append(selection_labels(user, ep, spec))
            if kind is PolicyKind.LEARNED:
                scores.append(selection_scores(ep, spec))
            else:
                scores.append(rng.random(len(ep.trajectory)))
    auc = None
    if with_auc:
        auc = compute_auc(np.concatenate(scores), np.concatenate(labels))
    return EvalReport(
        policy=kind.value,
        n_episodes=len(requests),
        average_reward=float(np.mean(realized)),
        average_expected_reward=float(np.mean(expected)),
        reward_std=float(np.std(realized, ddof=1)) if len(realized) > 1 else 0.0,
        auc=auc,
        episode_rewards=[float(r) for r in realized],
        episode_expected=[float(e) for e in expected],
    )


def expected_rewards(net: QNetwork, requests, spec: PanelSpec, sim) -> np.ndarray:
    """Analytic expected reward of the greedy policy on each request (no sampling)."""
    episodes = greedy_rollouts(net, [r for _, r in requests], spec)
    return np.array(
        [sim.expected_reward(u, ep.panel, ep.trajectory, spec.null_penalty) for (u, _), ep in zip(requests, episodes)]
    )
