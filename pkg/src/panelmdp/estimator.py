"""Estimator-style wrappers: ``fit`` on a simulator, ``predict`` panels for ranking lists."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .agent import AgentConfig, DQNAgent, train
from .baselines import brute_force_optimal, random_policy, row_major_policy
from .core import PanelSpec, RankingList
from .evaluation import greedy_rollouts, selection_scores
from .exceptions import ConfigError, ShapeError
from .sim import SyntheticUser


def check_requests(X, require_users: bool = False):
    """Normalise input to a list of ``(user or None, RankingList)`` pairs.

    Accepts a single :class:`RankingList`, a sequence of them, or a
    sequence of ``(user, ranking)`` requests as served by the simulator.
    """
    if isinstance(X, RankingList):
        X = [X]
    if X is None or isinstance(X, (str, bytes)):
        raise TypeError("expected ranking lists or (user, ranking) requests")
    out = []
    for entry in X:
        if isinstance(entry, RankingList):
            out.append((None, entry))
        elif isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[1], RankingList):
            if entry[0] is not None and not isinstance(entry[0], SyntheticUser):
                raise TypeError(f"expected a SyntheticUser, got {type(entry[0]).__name__}")
            out.append(entry)
        else:
            raise TypeError(f"expected a RankingList or (user, ranking), got {type(entry).__name__}")
    if not out:
        raise ValueError("need at least one ranking list")
    if require_users and any(u is None for u, _ in out):
        raise ValueError("this placer needs (user, ranking) requests")
    return out


def check_dims(requests, K: int, d: int) -> None:
    for _, r in requests:
        if len(r) != K or r.dim != d:
            raise ShapeError(f"estimator was fit for K={K}, d={d}; got K={len(r)}, d={r.dim}")


class _PanelPlacer(BaseEstimator):
    """Shared panel-shape parameters for all placers."""

    def _spec(self) -> PanelSpec:
        return PanelSpec(self.rows, self.cols, self.allow_null, self.null_penalty)


class PanelDQN(_PanelPlacer):
    """Dueling DQN placer trained against a simulator.

    ``fit(simulator)`` runs epsilon-greedy training; ``predict(X)`` returns
    the greedy panel for each ranking list; ``decision_function(X)`` gives
    each processed item's selection score (best slot Q minus NULL Q).
    """

    def __init__(
        self,
        rows: int = 2,
        cols: int = 3,
        allow_null: bool = False,
        null_penalty: float = 0.1,
        n_episodes: int = 1000,
        feedback: str = "expected",
        gamma: float = 0.9,
        learning_rate: float = 1e-3,
        optimizer: str = "adam",
        batch_size: int = 32,
        target_sync: int = 200,
        replay_capacity: int = 10_000,
        warmup: int = 500,
        hidden: tuple = (64, 32),
        random_state: Optional[int] = 0,
    ):
        self.rows = rows
        self.cols = cols
        self.allow_null = allow_null
        self.null_penalty = null_penalty
        self.n_episodes = n_episodes
        self.feedback = feedback
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.batch_size = batch_size
        self.target_sync = target_sync
        self.replay_capacity = replay_capacity
        self.warmup = warmup
        self.hidden = hidden
        self.random_state = random_state

    def _agent_config(self) -> AgentConfig:
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.RandomState):
            seed = int(check_random_state(seed).randint(2**31 - 1))
        return AgentConfig(
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            batch_size=self.batch_size,
            target_sync=self.target_sync,
            replay_capacity=self.replay_capacity,
            warmup=self.warmup,
            hidden=tuple(self.hidden),
            seed=int(seed),
        ).validate()

    def fit(self, simulator, y=None):
        if self.n_episodes < 0:
            raise ConfigError("must be nonnegative", field="n_episodes")
        cfg = simulator.config
        if (cfg.rows, cfg.cols) != (self.rows, self.cols):
            raise ConfigError("simulator grid must match the panel shape", field="rows")
        spec = self._spec()
        agent = DQNAgent(spec, cfg.K, cfg.d, self._agent_config())
        self.metrics_ = train(agent, simulator, self.n_episodes, feedback=self.feedback)
        self.agent_ = agent
        self.spec_ = spec
        self.n_items_, self.item_dim_ = cfg.K, cfg.d
        return self

    def _rollouts(self, X):
        check_is_fitted(self, "agent_")
        requests = check_requests(X)
        check_dims(requests, self.n_items_, self.item_dim_)
        return greedy_rollouts(self.agent_.net, [r for _, r in requests], self.spec_)

    def predict(self, X):
        return [ep.panel for ep in self._rollouts(X)]

    def decision_function(self, X):
        return [selection_scores(ep, self.spec_) for ep in self._rollouts(X)]

    def save(self, path):
        check_is_fitted(self, "agent_")
        return self.agent_.save(path, extra={"estimator_params": _jsonable(self.get_params())})

    @classmethod
    def load(cls, path) -> "PanelDQN":
        from .nn.checkpoint import load_tensors

        _, manifest = load_tensors(path)
        params = manifest.get("extra", {}).get("estimator_params", {})
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        est = cls(**params)
        est.agent_ = DQNAgent.load(path)
        est.spec_ = est.agent_.spec
        est.n_items_, est.item_dim_ = est.agent_.K, est.agent_.item_dim
        est.metrics_ = []
        return est


def _jsonable(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


class RowMajorPlacer(_PanelPlacer):
    """Places the first ``M*N`` items left to right, top to bottom."""

    def __init__(self, rows: int = 2, cols: int = 3, allow_null: bool = False, null_penalty: float = 0.1):
        self.rows, self.cols, self.allow_null, self.null_penalty = rows, cols, allow_null, null_penalty

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        return self

    def predict(self, X):
        check_is_fitted(self, "spec_")
        return [row_major_policy(r, self.spec_) for _, r in check_requests(X)]


class RandomPlacer(_PanelPlacer):
    """Uniformly random items to uniformly random distinct slots."""

    def __init__(self, rows=2, cols=3, allow_null=False, null_penalty=0.1, random_state=None):
        self.rows, self.cols, self.allow_null, self.null_penalty = rows, cols, allow_null, null_penalty
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.spec_ = self._spec()
        seed = check_random_state(self.random_state).randint(2**31 - 1)
        self.rng_ = np.random.default_rng(seed)
        return self

    def predict(self, X):
        check_is_fitted(self, "spec_")
        return [random_policy(r, self.spec_, self.rng_) for _, r in check_requests(X)]


class OraclePlacer(_PanelPlacer):
    """Brute-force optimum under a known simulator; needs the user of each request."""

    def __init__(self, rows=2, cols=3, allow_null=False, null_penalty=0.1, cap: int = 10**6):
        self.rows, self.cols, self.allow_null, self.null_penalty = rows, cols, allow_null, null_penalty
        self.cap = cap

    def fit(self, simulator, y=None):
        self.spec_ = self._spec()
        self.grid_ = simulator.grid
        return self

    def predict(self, X):
        check_is_fitted(self, "grid_")
        out = []
        for user, ranking in check_requests(X, require_users=True):
            panel, _ = brute_force_optimal(user, ranking, self.spec_, self.grid_, self.null_penalty, self.cap)
            out.append(panel)
        return out
