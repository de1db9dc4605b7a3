"""Synthetic grid users: catalogs, preferences, slot examination and feedback.

The purchase model is a single categorical draw per panel. A filled slot
``(m, n)`` holding item ``i`` has propensity ``q = w[m, n] * sigmoid(u . e(i))``
and is purchased with probability ``q / (1 + Q)``, where ``Q`` sums the
propensities of all filled slots; nothing is purchased with probability
``1 / (1 + Q)``. This keeps the single-purchase behaviour exact and makes
the expected reward of a panel available in closed form.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Item, Panel, RankingList, SlotAction, StepRecord
from .exceptions import ConfigError
from .nn.checkpoint import load_tensors, save_tensors


@dataclass(frozen=True)
class SyntheticUser:
    id: int
    preference: np.ndarray

    @property
    def dim(self):
        return self.preference.shape[0]


@dataclass(frozen=True)
class ExaminationGrid:
    weights: np.ndarray
    row_decay: float
    middle_bias: float

    @property
    def shape(self):
        return self.weights.shape

    def __getitem__(self, slot: SlotAction) -> float:
        return float(self.weights[slot.m - 1, slot.n - 1])


@dataclass
class SimulatorConfig:
    catalog_size: int = 200
    d: int = 16
    K: int = 6
    rows: int = 2
    cols: int = 3
    row_decay: float = 0.8
    middle_bias: float = 0.8
    noise: float = 0.05
    seed: int = 0

    def validate(self):
        for name in ("catalog_size", "d", "K", "rows", "cols"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", field=name)
        for name in ("row_decay", "middle_bias"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"must lie in (0, 1], got {v}", field=name)
        if self.noise < 0:
            raise ConfigError("must be nonnegative", field="noise")
        if self.K > self.catalog_size:
            raise ConfigError(f"K={self.K} exceeds catalog size {self.catalog_size}", field="K")
        return self


def examination_weights(M: int, N: int, row_decay: float, middle_bias: float) -> ExaminationGrid:
    """``w[m, n] = row_decay**(m-1) * middle_bias**|n - (N+1)/2|`` (1-based)."""
    if not (0.0 < row_decay <= 1.0):
        raise ConfigError(f"row decay must lie in (0, 1], got {row_decay}", field="row_decay")
    if not (0.0 < middle_bias <= 1.0):
        raise ConfigError(f"middle bias must lie in (0, 1], got {middle_bias}", field="middle_bias")
    if M < 1 or N < 1:
        raise ConfigError(f"grid must be at least 1x1, got {M}x{N}")
    rows = row_decay ** np.arange(M, dtype=np.float64)
    centre = (N + 1) / 2.0
    cols = middle_bias ** np.abs(np.arange(1, N + 1) - centre)
    w = np.outer(rows, cols)
    w.setflags(write=False)
    return ExaminationGrid(w, float(row_decay), float(middle_bias))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def purchase_propensity(user: SyntheticUser, item: Item, slot: SlotAction, grid: ExaminationGrid) -> float:
    return grid[slot] * float(_sigmoid(user.preference @ item.embedding))


def slot_propensities(user: SyntheticUser, panel: Panel, grid: ExaminationGrid) -> dict[SlotAction, float]:
    return {slot: purchase_propensity(user, item, slot, grid) for slot, item in panel.filled()}


def purchase_probabilities(user, panel, grid) -> dict[SlotAction, float]:
    """Per-slot purchase probability ``q / (1 + Q)`` for every filled slot."""
    q = slot_propensities(user, panel, grid)
    total = 1.0 + sum(q.values())
    return {slot: v / total for slot, v in q.items()}


def sample_feedback(user, panel, grid, rng, size: Optional[int] = None):
    """Draw the purchased slot, or ``None`` for no purchase.

    With ``size`` a list of that many independent draws is returned.
    """
    q = slot_propensities(user, panel, grid)
    if not q:
        return None if size is None else [None] * size
    slots = list(q) + [None]
    weights = np.array([q[s] for s in slots[:-1]] + [1.0])
    k = rng.choice(len(weights), p=weights / weights.sum(), size=size)
    return slots[k] if size is None else [slots[i] for i in k]


def expected_episode_reward(user, panel, grid, trajectory: Sequence[StepRecord], null_penalty: float) -> float:
    total = sum(slot_propensities(user, panel, grid).values())
    n_null = sum(1 for rec in trajectory if rec.action.is_null)
    return total / (1.0 + total) - null_penalty * n_null


def realized_reward(purchased: Optional[SlotAction], trajectory, null_penalty: float) -> float:
    n_null = sum(1 for rec in trajectory if rec.action.is_null)
    return (1.0 if purchased is not None else 0.0) - null_penalty * n_null


# -- generators ---------------------------------------------------------------


class Catalog:
    def __init__(self, embeddings: np.ndarray, ids: Optional[Sequence[int]] = None):
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if ids is None:
            ids = range(embeddings.shape[0])
        self.items = tuple(Item(int(i), e) for i, e in zip(ids, embeddings))
        self.embeddings = np.stack([it.embedding for it in self.items])

    @property
    def d(self):
        return self.embeddings.shape[1]

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        return isinstance(other, Catalog) and [i.id for i in self.items] == [
            i.id for i in other.items
        ] and np.array_equal(self.embeddings, other.embeddings)


def generate_catalog(config: SimulatorConfig, rng) -> Catalog:
    """I.i.d. standard-normal item embeddings scaled by ``1/sqrt(d)``."""
    return Catalog(rng.standard_normal((config.catalog_size, config.d)) / np.sqrt(config.d))


def generate_user(config: SimulatorConfig, rng, user_id: int = 0) -> SyntheticUser:
    return SyntheticUser(int(user_id), rng.standard_normal(config.d) / np.sqrt(config.d))


def initial_ranking(user: SyntheticUser, catalog: Catalog, K: int, noise: float, rng) -> RankingList:
    """Top-``K`` items by ``u . e(i)`` plus Gaussian score noise, descending."""
    if K > len(catalog):
        raise ConfigError(f"K={K} exceeds catalog size {len(catalog)}", field="K")
    scores = catalog.embeddings @ user.preference
    if noise > 0:
        scores = scores + noise * rng.standard_normal(scores.shape)
    # stable sort on -score keeps ties in catalog order
    order = np.argsort(-scores, kind="stable")[:K]
    return RankingList(catalog.items[i] for i in order)


def true_affinity(user: SyntheticUser, items) -> np.ndarray:
    return np.array([user.preference @ it.embedding for it in items])


# -- persistence ----------------------------------------------------------------


def save_catalog(path, catalog: Catalog, seed=None):
    return save_tensors(
        path,
        {"catalog.embeddings": catalog.embeddings, "catalog.ids": np.array([i.id for i in catalog.items], dtype=np.float64)},
        seed=seed,
        extra={"kind": "catalog"},
    )


def load_catalog(path) -> Catalog:
    tensors, _ = load_tensors(path)
    return Catalog(tensors["catalog.embeddings"], tensors["catalog.ids"].astype(np.int64))


def save_users(path, users: Sequence[SyntheticUser], seed=None):
    return save_tensors(
        path,
        {
            "users.preferences": np.stack([u.preference for u in users]),
            "users.ids": np.array([u.id for u in users], dtype=np.float64),
        },
        seed=seed,
        extra={"kind": "users"},
    )


def load_users(path) -> list[SyntheticUser]:
    tensors, _ = load_tensors(path)
    ids = tensors["users.ids"].astype(np.int64)
    return [SyntheticUser(int(i), p.copy()) for i, p in zip(ids, tensors["users.preferences"])]


# -- request stream -------------------------------------------------------------


class GridUserSimulator:
    """Serves ``(user, ranking)`` requests and panel feedback.

    With ``fixed_request=True`` every request returns the same user and
    ranking list, which turns the task into a single deterministic MDP.
    """

    def __init__(self, config: SimulatorConfig, fixed_request: bool = False):
        self.config = config.validate()
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.catalog = generate_catalog(config, np.random.default_rng(seeds[0]))
        self.grid = examination_weights(config.rows, config.cols, config.row_decay, config.middle_bias)
        self.fixed_request = fixed_request
        self._fixed = None
        if fixed_request:
            frng = np.random.default_rng(seeds[1])
            user = generate_user(config, frng)
            self._fixed = (user, initial_ranking(user, self.catalog, config.K, config.noise, frng))
        self._next_id = 0

    def new_request(self, rng) -> tuple[SyntheticUser, RankingList]:
        if self._fixed is not None:
            return self._fixed
        user = generate_user(self.config, rng, self._next_id)
        self._next_id += 1
        return user, initial_ranking(user, self.catalog, self.config.K, self.config.noise, rng)

    def requests(self, n: int, seed: int) -> list[tuple[SyntheticUser, RankingList]]:
        """``n`` requests from an independent stream, e.g. a fixed eval set."""
        rng = np.random.default_rng(seed)
        if self._fixed is not None:
            return [self._fixed] * n
        out = []
        for i in range(n):
            user = generate_user(self.config, rng, i)
            out.append((user, initial_ranking(user, self.catalog, self.config.K, self.config.noise, rng)))
        return out

    def feedback(self, user, panel, rng):
        return sample_feedback(user, panel, self.grid, rng)

    def expected_reward(self, user, panel, trajectory, null_penalty):
        return expected_episode_reward(user, panel, self.grid, trajectory, null_penalty)

    def config_dict(self):
        return asdict(self.config)
