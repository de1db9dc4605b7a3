"""Panel-MDP domain types and environment mechanics.

Time steps are ranks in the input list and actions are panel slots plus a
NULL (discard) action. Slots are 1-based ``(m, n)`` pairs; time steps are
0-based. In serialized artifacts an action is the integer row-major slot
index ``(m - 1) * N + (n - 1)`` with ``M * N`` standing for NULL.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import total_ordering
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .exceptions import (
    ContractViolation,
    EpisodeExhausted,
    InconsistentFeedback,
    InvalidPlacement,
    ParseError,
    ShapeError,
    SlotConflict,
)

__all__ = [
    "Item",
    "RankingList",
    "PanelSpec",
    "SlotAction",
    "NULL",
    "EnvState",
    "Panel",
    "StepRecord",
    "RewardSpec",
    "initial_state",
    "legal_actions",
    "transition",
    "is_terminal",
    "apply_placement",
    "rollout_placement",
    "assign_rewards",
    "assign_expected_rewards",
    "StepRow",
    "write_trajectory_jsonl",
    "read_trajectory_jsonl",
]


@dataclass(frozen=True, eq=False)
class Item:
    id: int
    embedding: np.ndarray
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise ShapeError(f"item {self.id}: embedding must be 1-D, got shape {emb.shape}")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)

    @property
    def dim(self) -> int:
        return self.embedding.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Item):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.embedding, other.embedding)

    def __hash__(self):
        return hash(self.id)

    def __repr__(self):
        return f"Item(id={self.id}, dim={self.dim})"


class RankingList:
    """Upstream candidate items in rank order (``i_1 .. i_K``)."""

    __slots__ = ("_items", "_embeddings", "_ids")

    def __init__(self, items: Iterable[Item]):
        items = tuple(items)
        if not items:
            raise ValueError("a ranking list needs at least one item")
        ids = tuple(it.id for it in items)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids in ranking list")
        dims = {it.dim for it in items}
        if len(dims) != 1:
            raise ShapeError(f"inconsistent item embedding dims {sorted(dims)}")
        self._items = items
        self._ids = ids
        emb = np.stack([it.embedding for it in items])
        emb.setflags(write=False)
        self._embeddings = emb

    @property
    def items(self) -> tuple[Item, ...]:
        return self._items

    @property
    def ids(self) -> tuple[int, ...]:
        return self._ids

    @property
    def embeddings(self) -> np.ndarray:
        """Read-only ``(K, d)`` array of item embeddings."""
        return self._embeddings

    @property
    def dim(self) -> int:
        return self._embeddings.shape[1]

    def __len__(self):
        return len(self._items)

    def __getitem__(self, k):
        return self._items[k]

    def __iter__(self):
        return iter(self._items)

    def __eq__(self, other):
        if not isinstance(other, RankingList):
            return NotImplemented
        return self is other or (
            self._ids == other._ids and np.array_equal(self._embeddings, other._embeddings)
        )

    def __hash__(self):
        return hash(self._ids)

    def __repr__(self):
        return f"RankingList(K={len(self)}, ids={list(self._ids)})"


@dataclass(frozen=True)
class PanelSpec:
    rows: int
    cols: int
    allow_null: bool = True
    null_penalty: float = 0.1

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValueError(f"panel must be at least 1x1, got {self.rows}x{self.cols}")
        if self.null_penalty < 0:
            raise ValueError("null_penalty must be nonnegative")

    @property
    def n_slots(self) -> int:
        return self.rows * self.cols

    @property
    def n_actions(self) -> int:
        """Size of the fixed action set, NULL included even when disabled."""
        return self.rows * self.cols + 1

    @property
    def null_index(self) -> int:
        return self.rows * self.cols

    def slots(self) -> list["SlotAction"]:
        return [SlotAction(m, n) for m in range(1, self.rows + 1) for n in range(1, self.cols + 1)]

    def action_set(self) -> frozenset["SlotAction"]:
        acts = set(self.slots())
        if self.allow_null:
            acts.add(NULL)
        return frozenset(acts)

    def contains(self, action: "SlotAction") -> bool:
        if action.is_null:
            return True
        return 1 <= action.m <= self.rows and 1 <= action.n <= self.cols


@total_ordering
@dataclass(frozen=True)
class SlotAction:
    """Either ``Slot(m, n)`` (both set) or ``Null`` (both ``None``)."""

    m: Optional[int] = None
    n: Optional[int] = None

    def __post_init__(self):
        if (self.m is None) != (self.n is None):
            raise ValueError("slot action needs both m and n, or neither for NULL")
        if self.m is not None and (self.m < 1 or self.n < 1):
            raise ValueError(f"slot indices are 1-based, got ({self.m}, {self.n})")

    @property
    def is_null(self) -> bool:
        return self.m is None

    def to_index(self, spec: PanelSpec) -> int:
        if self.is_null:
            return spec.null_index
        if not spec.contains(self):
            raise ContractViolation(f"{self} outside {spec.rows}x{spec.cols} panel")
        return (self.m - 1) * spec.cols + (self.n - 1)

    @classmethod
    def from_index(cls, index: int, spec: PanelSpec) -> "SlotAction":
        index = int(index)
        if index == spec.null_index:
            return NULL
        if not 0 <= index < spec.null_index:
            raise ContractViolation(f"action index {index} outside 0..{spec.null_index}")
        return cls(index // spec.cols + 1, index % spec.cols + 1)

    def __repr__(self):
        return "Null" if self.is_null else f"Slot({self.m},{self.n})"

    # Null sorts after every slot so tie-breaking follows the integer encoding.
    def __lt__(self, other):
        if not isinstance(other, SlotAction):
            return NotImplemented
        return _sort_key(self) < _sort_key(other)


def _sort_key(a: SlotAction):
    return (1, 0, 0) if a.is_null else (0, a.m, a.n)


NULL = SlotAction()


@dataclass(frozen=True)
class EnvState:
    list: RankingList
    t: int = 0
    history: tuple[SlotAction, ...] = ()

    def __post_init__(self):
        if not isinstance(self.history, tuple):
            object.__setattr__(self, "history", tuple(self.history))
        if len(self.history) != self.t:
            raise ValueError(f"history length {len(self.history)} != t={self.t}")
        if not 0 <= self.t <= len(self.list):
            raise ValueError(f"t={self.t} outside 0..{len(self.list)}")
        placed = [a for a in self.history if not a.is_null]
        if len(set(placed)) != len(placed):
            raise ValueError("history repeats a slot")

    @property
    def K(self) -> int:
        return len(self.list)

    @property
    def used_slots(self) -> frozenset[SlotAction]:
        return frozenset(a for a in self.history if not a.is_null)

    def action_codes(self, spec: PanelSpec) -> tuple[int, ...]:
        """History as integer action encodings (cached per panel width)."""
        key = ("_codes", spec.cols, spec.null_index)
        cached = self.__dict__.get(key[0])
        if cached is not None and cached[0] == key:
            return cached[1]
        cols, null = spec.cols, spec.null_index
        codes = tuple(null if a.m is None else (a.m - 1) * cols + a.n - 1 for a in self.history)
        object.__setattr__(self, "_codes", (key, codes))
        return codes

    @property
    def current_item(self) -> Item:
        """The item ``i_{t+1}`` processed at this step."""
        if self.t >= self.K:
            raise EpisodeExhausted("no item left to process")
        return self.list[self.t]


def initial_state(ranking: RankingList) -> EnvState:
    return EnvState(ranking, 0, ())


class Panel:
    """An ``M x N`` grid of optional items; immutable."""

    __slots__ = ("spec", "_grid")

    def __init__(self, spec: PanelSpec, grid=None):
        self.spec = spec
        if grid is None:
            grid = tuple((None,) * spec.cols for _ in range(spec.rows))
        else:
            grid = tuple(tuple(row) for row in grid)
            if len(grid) != spec.rows or any(len(r) != spec.cols for r in grid):
                raise ShapeError("grid shape does not match panel spec")
            ids = [it.id for row in grid for it in row if it is not None]
            if len(ids) != len(set(ids)):
                raise ValueError("an item appears in more than one cell")
        self._grid = grid

    @property
    def grid(self) -> tuple[tuple[Optional[Item], ...], ...]:
        return self._grid

    def __getitem__(self, slot: SlotAction) -> Optional[Item]:
        return self._grid[slot.m - 1][slot.n - 1]

    def filled(self) -> list[tuple[SlotAction, Item]]:
        """Filled cells in row-major order."""
        return [
            (SlotAction(m + 1, n + 1), it)
            for m, row in enumerate(self._grid)
            for n, it in enumerate(row)
            if it is not None
        ]

    @property
    def is_full(self) -> bool:
        return all(it is not None for row in self._grid for it in row)

    def item_ids(self) -> np.ndarray:
        """``(M, N)`` int array of item ids, ``-1`` marking empty cells."""
        return np.array(
            [[-1 if it is None else it.id for it in row] for row in self._grid], dtype=np.int64
        )

    def __eq__(self, other):
        if not isinstance(other, Panel):
            return NotImplemented
        return self.spec == other.spec and self._grid == other._grid

    def __repr__(self):
        return f"Panel({self.spec.rows}x{self.spec.cols}, ids={self.item_ids().tolist()})"


@dataclass(frozen=True)
class StepRecord:
    state: EnvState
    action: SlotAction
    reward: float
    next_state: EnvState
    terminal: bool


@dataclass(frozen=True)
class RewardSpec:
    purchase_reward: float = 1.0
    non_purchase_reward: float = 0.0
    null_penalty: float = 0.1

    def __post_init__(self):
        if not self.purchase_reward > self.non_purchase_reward:
            raise ValueError("purchase_reward must exceed non_purchase_reward")
        if self.null_penalty < 0:
            raise ValueError("null_penalty must be nonnegative")

    @classmethod
    def for_panel(cls, spec: PanelSpec, **kw) -> "RewardSpec":
        return cls(null_penalty=spec.null_penalty, **kw)


def legal_actions(state: EnvState, spec: PanelSpec) -> frozenset[SlotAction]:
    """Return ``A_t``: unused slots, plus NULL when the panel allows it."""
    used = state.used_slots
    acts = {a for a in spec.slots() if a not in used}
    if spec.allow_null:
        acts.add(NULL)
    return frozenset(acts)


def legal_mask(state: EnvState, spec: PanelSpec) -> np.ndarray:
    """Boolean mask over the ``M*N + 1`` action encodings."""
    key = (spec.rows, spec.cols, spec.allow_null)
    cached = state.__dict__.get("_mask")
    if cached is not None and cached[0] == key:
        return cached[1].copy()
    mask = np.ones(spec.n_actions, dtype=bool)
    if state.t:
        mask[list(state.action_codes(spec))] = False
    mask[spec.null_index] = spec.allow_null
    object.__setattr__(state, "_mask", (key, mask))
    return mask.copy()


def transition(state: EnvState, action: SlotAction, spec: Optional[PanelSpec] = None) -> EnvState:
    """Advance one step: ``t -> t + 1`` and append ``action`` to the history.

    Without ``spec`` only the panel-independent legality (slot reuse) is
    checked; with it, bounds and the NULL flag are checked as well.
    """
    if state.t >= state.K:
        raise EpisodeExhausted(f"t={state.t} already reached K={state.K}")
    if spec is not None:
        if not spec.contains(action) or (action.is_null and not spec.allow_null):
            raise ContractViolation(f"{action!r} is not a legal action for this panel")
    if not action.is_null and action in state.used_slots:
        raise ContractViolation(f"{action!r} was already chosen")
    return EnvState(state.list, state.t + 1, state.history + (action,))


def is_terminal(state: EnvState, spec: PanelSpec) -> bool:
    if state.t >= state.K:
        return True
    return len(state.used_slots) >= spec.n_slots


def apply_placement(panel: Panel, action: SlotAction, item: Item) -> Panel:
    if action.is_null:
        raise InvalidPlacement("cannot place an item with the NULL action")
    if not panel.spec.contains(action):
        raise InvalidPlacement(f"{action!r} outside the panel")
    if panel[action] is not None:
        raise SlotConflict(f"{action!r} already holds item {panel[action].id}")
    grid = [list(row) for row in panel.grid]
    grid[action.m - 1][action.n - 1] = item
    return Panel(panel.spec, grid)


Policy = Callable[[EnvState], SlotAction]


def rollout_placement(
    policy: Policy, ranking: RankingList, spec: PanelSpec
) -> tuple[Panel, list[StepRecord]]:
    """Place items ``i_1 .. i_K`` in order until the episode terminates.

    Rewards in the returned trajectory are all zero; feedback is attached
    afterwards with :func:`assign_rewards`.
    """
    state = initial_state(ranking)
    panel = Panel(spec)
    records = []
    while not is_terminal(state, spec):
        action = policy(state)
        if action not in legal_actions(state, spec):
            raise ContractViolation(f"policy chose illegal action {action!r} at t={state.t}")
        if not action.is_null:
            panel = apply_placement(panel, action, state.current_item)
        nxt = transition(state, action, spec)
        records.append(StepRecord(state, action, 0.0, nxt, is_terminal(nxt, spec)))
        state = nxt
    return panel, records


def _relabel(trajectory, rewards_for):
    n = len(trajectory)
    return [
        replace(rec, reward=float(rewards_for(rec)), terminal=(i == n - 1))
        for i, rec in enumerate(trajectory)
    ]


def assign_rewards(
    trajectory: Sequence[StepRecord],
    purchased_slot: Optional[SlotAction],
    rewards: RewardSpec,
) -> list[StepRecord]:
    """Attach whole-panel feedback to every step of a complete episode."""
    if purchased_slot is not None:
        if purchased_slot.is_null or all(rec.action != purchased_slot for rec in trajectory):
            raise InconsistentFeedback(f"purchased slot {purchased_slot!r} was never filled")

    def reward(rec):
        if rec.action.is_null:
            return -rewards.null_penalty
        if rec.action == purchased_slot:
            return rewards.purchase_reward
        return rewards.non_purchase_reward

    return _relabel(trajectory, reward)


def assign_expected_rewards(
    trajectory: Sequence[StepRecord],
    purchase_probs: Mapping[SlotAction, float],
    rewards: RewardSpec,
) -> list[StepRecord]:
    """Deterministic variant of :func:`assign_rewards` using purchase probabilities."""

    def reward(rec):
        if rec.action.is_null:
            return -rewards.null_penalty
        p = purchase_probs.get(rec.action, 0.0)
        return p * rewards.purchase_reward + (1.0 - p) * rewards.non_purchase_reward

    return _relabel(trajectory, reward)


# -- trajectory JSON-lines ---------------------------------------------------


@dataclass(frozen=True)
class StepRow:
    t: int
    action: int
    reward: float
    terminal: bool
    item_id: int


def trajectory_rows(trajectory: Sequence[StepRecord], spec: PanelSpec) -> list[StepRow]:
    return [
        StepRow(
            t=rec.state.t,
            action=rec.action.to_index(spec),
            reward=float(rec.reward),
            terminal=bool(rec.terminal),
            item_id=int(rec.state.current_item.id),
        )
        for rec in trajectory
    ]


def write_trajectory_jsonl(trajectory: Sequence[StepRecord], spec: PanelSpec, fh) -> None:
    for row in trajectory_rows(trajectory, spec):
        fh.write(json.dumps(row.__dict__) + "\n")


def read_trajectory_jsonl(fh) -> list[StepRow]:
    rows = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rows.append(
                StepRow(
                    t=int(obj["t"]),
                    action=int(obj["action"]),
                    reward=float(obj["reward"]),
                    terminal=bool(obj["terminal"]),
                    item_id=int(obj["item_id"]),
                )
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad trajectory record: {exc}", line=lineno) from exc
    return rows
