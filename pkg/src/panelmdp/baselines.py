"""Reference placement policies: row-major, uniform random, brute-force oracle."""

from __future__ import annotations

import enum
from math import comb, factorial
from typing import Mapping

import numpy as np

from .core import NULL, Panel, PanelSpec, RankingList, SlotAction, apply_placement
from .exceptions import EnumerationCapExceeded
from .sim import ExaminationGrid, SyntheticUser, purchase_propensity

DEFAULT_ENUMERATION_CAP = 10**6


class PolicyKind(enum.Enum):
    ROW_MAJOR = "row_major"
    RANDOM = "random"
    ORACLE = "oracle"
    LEARNED = "learned"


def enumeration_size(K: int, spec: PanelSpec) -> int:
    """``C(K, M*N) * (M*N)!`` with ``K`` capped below by the panel size."""
    s = spec.n_slots
    return comb(max(K, s), s) * factorial(s)


# -- row-major ---------------------------------------------------------------


def row_major_actions(spec: PanelSpec):
    """Policy placing ``i_{t+1}`` at slot index ``t`` (left to right, top to bottom)."""

    def policy(state):
        return SlotAction.from_index(state.t, spec)

    return policy


def row_major_policy(ranking: RankingList, spec: PanelSpec) -> Panel:
    panel = Panel(spec)
    for k, item in enumerate(ranking.items[: spec.n_slots]):
        panel = apply_placement(panel, SlotAction.from_index(k, spec), item)
    return panel


# -- random ------------------------------------------------------------------------


def random_assignment(ranking: RankingList, spec: PanelSpec, rng) -> dict[int, SlotAction]:
    """Map ``min(K, M*N)`` random item ids to distinct random slots.

    Without NULL every processed item must be placed, so only the first
    ``M*N`` items are eligible.
    """
    n = min(len(ranking), spec.n_slots)
    pool = len(ranking) if spec.allow_null else n
    chosen = np.sort(rng.choice(pool, size=n, replace=False))
    slots = rng.permutation(spec.n_slots)[:n]
    return {ranking[int(k)].id: SlotAction.from_index(int(s), spec) for k, s in zip(chosen, slots)}


def assignment_policy(assignment: Mapping[int, SlotAction]):
    """Policy that places assigned items at their slot and discards the rest."""

    def policy(state):
        return assignment.get(state.current_item.id, NULL)

    return policy


def panel_from_assignment(ranking: RankingList, spec: PanelSpec, assignment) -> Panel:
    panel = Panel(spec)
    for item in ranking:
        if item.id in assignment:
            panel = apply_placement(panel, assignment[item.id], item)
    return panel


def random_policy(ranking: RankingList, spec: PanelSpec, rng) -> Panel:
    return panel_from_assignment(ranking, spec, random_assignment(ranking, spec, rng))


def random_actions(spec: PanelSpec, rng):
    """Uniform draw from the legal actions at every step."""
    from .core import legal_actions

    def policy(state):
        legal = sorted(legal_actions(state, spec))
        return legal[rng.integers(len(legal))]

    return policy


# -- brute force ------------------------------------------------------------------


def brute_force_search(
    user: SyntheticUser,
    ranking: RankingList,
    spec: PanelSpec,
    grid: ExaminationGrid,
    null_penalty: float,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> tuple[tuple[SlotAction, ...], float]:
    """Exhaustive search over every legal episode.

    Returns the action sequence with the highest analytic expected reward
    and that reward. Episodes are visited in lexicographic order of their
    integer action encodings and only a strictly better value replaces the
    incumbent, so ties resolve to the lexicographically smallest sequence.
    """
    size = enumeration_size(len(ranking), spec)
    if size > cap:
        raise EnumerationCapExceeded(f"enumeration size {size} exceeds cap {cap}")
    slots = spec.slots()
    # propensity of item k at slot index j, computed once
    prop = np.array([[purchase_propensity(user, it, s, grid) for s in slots] for it in ranking])
    K, S = len(ranking), spec.n_slots
    null_code = spec.null_index
    best = [-np.inf, None]
    actions: list[int] = []
    used = [False] * S

    def leaf(total, n_null):
        value = total / (1.0 + total) - null_penalty * n_null
        if value > best[0]:
            best[0], best[1] = value, tuple(actions)

    def visit(t, placed, total, n_null):
        if t >= K or placed == S:
            leaf(total, n_null)
            return
        for j in range(S):
            if not used[j]:
                used[j] = True
                actions.append(j)
                visit(t + 1, placed + 1, total + prop[t, j], n_null)
                actions.pop()
                used[j] = False
        if spec.allow_null:
            actions.append(null_code)
            visit(t + 1, placed, total, n_null + 1)
            actions.pop()

    visit(0, 0, 0.0, 0)
    return tuple(SlotAction.from_index(a, spec) for a in best[1]), float(best[0])


def brute_force_optimal(user, ranking, spec, grid, null_penalty, cap: int = DEFAULT_ENUMERATION_CAP):
    """Optimal panel and its expected reward for a tiny instance."""
    acts, value = brute_force_search(user, ranking, spec, grid, null_penalty, cap)
    panel = Panel(spec)
    for item, a in zip(ranking, acts):
        if not a.is_null:
            panel = apply_placement(panel, a, item)
    return panel, value


def actions_policy(actions):
    """Replay a fixed action sequence indexed by time step."""
    actions = tuple(actions)

    def policy(state):
        return actions[state.t]

    return policy
