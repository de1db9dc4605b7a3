"""Dueling deep-Q agent for Panel-MDP.

The state ``[L, t, H_t]`` is embedded as
``concat(mean(attention(e(i_1..i_K))), e(t), gru(e(a_0..a_{t-1})))``.
Two MLPs read that vector: one emits an advantage per action of the fixed
action set (``M*N`` slots plus NULL), the other a scalar state value, and
``Q = V + A - mean(A)``.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    EnvState,
    PanelSpec,
    RewardSpec,
    SlotAction,
    StepRecord,
    assign_expected_rewards,
    assign_rewards,
    legal_mask,
    rollout_placement,
)
from .exceptions import ConfigError, InsufficientDataError, NumericError, ShapeError
from .nn import AttentionBlock, DenseStack, EmbeddingTable, GruCell, Module, flatten_params, make_optimizer
from .nn.checkpoint import load_tensors, save_tensors
from .sim import purchase_probabilities, realized_reward


@dataclass
class AgentConfig:
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    # None: decay over the first half of the planned episodes
    epsilon_decay_episodes: Optional[int] = None
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    target_sync: int = 200
    replay_capacity: int = 10_000
    warmup: int = 500
    train_per_step: int = 1
    time_dim: int = 8
    action_dim: int = 8
    gru_hidden: int = 16
    model_dim: int = 16
    heads: int = 2
    hidden: tuple = (64, 32)
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"must lie in (0, 1), got {self.gamma}", field="gamma")
        for name in ("epsilon_start", "epsilon_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"must lie in [0, 1], got {v}", field=name)
        for name in ("batch_size", "target_sync", "replay_capacity", "time_dim", "action_dim", "gru_hidden", "model_dim", "heads"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", field=name)
        if self.warmup < 0 or self.train_per_step < 0:
            raise ConfigError("must be nonnegative", field="warmup" if self.warmup < 0 else "train_per_step")
        if self.learning_rate < 0:
            raise ConfigError("must be nonnegative", field="learning_rate")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", field="optimizer")
        if self.model_dim % self.heads:
            raise ConfigError("model_dim must be divisible by heads", field="heads")
        if self.epsilon_decay_episodes is not None and self.epsilon_decay_episodes < 0:
            raise ConfigError("must be nonnegative", field="epsilon_decay_episodes")
        return self

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown agent keys {sorted(unknown)}")
        return cls(**d)


def epsilon_at(config: AgentConfig, episode: int, total_episodes: int) -> float:
    """Linear decay from ``epsilon_start`` to ``epsilon_end``, then constant."""
    horizon = config.epsilon_decay_episodes
    if horizon is None:
        horizon = total_episodes // 2
    if horizon <= 0 or episode >= horizon:
        return config.epsilon_end
    frac = episode / horizon
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


# -- batching -------------------------------------------------------------------


@dataclass
class StateBatch:
    items: np.ndarray  # (B, K, d)
    t: np.ndarray  # (B,)
    history: np.ndarray  # (B, T) action indices, zero padded
    lengths: np.ndarray  # (B,)

    def __len__(self):
        return self.t.shape[0]


def make_batch(states: Sequence[EnvState], spec: PanelSpec) -> StateBatch:
    B = len(states)
    Ks = {s.K for s in states}
    if len(Ks) != 1:
        raise ShapeError(f"states in a batch must share K, got {sorted(Ks)}")
    items = np.stack([s.list.embeddings for s in states])
    t = np.fromiter((s.t for s in states), dtype=np.int64, count=B)
    T = int(t.max()) if B else 0
    hist = np.zeros((B, T), dtype=np.int64)
    for b, s in enumerate(states):
        if s.t:
            hist[b, : s.t] = s.action_codes(spec)
    return StateBatch(items, t, hist, t.copy())


class QNetwork(Module):
    def __init__(self, spec: PanelSpec, K: int, item_dim: int, config: AgentConfig, rng):
        self.spec = spec
        self.K = int(K)
        self.item_dim = int(item_dim)
        self.config = config
        self.attention = AttentionBlock(item_dim, config.model_dim, config.heads, rng, name="attn")
        self.gru = GruCell(config.action_dim, config.gru_hidden, rng, name="gru")
        self.time_embedding = EmbeddingTable(self.K, config.time_dim, rng, name="time")
        self.action_embedding = EmbeddingTable(spec.n_actions, config.action_dim, rng, name="action")
        self.state_dim = config.model_dim + config.time_dim + config.gru_hidden
        self.advantage = DenseStack([self.state_dim, *config.hidden, spec.n_actions], rng, name="adv")
        self.value = DenseStack([self.state_dim, *config.hidden, 1], rng, name="val")
        self.flat_values, self.flat_grads = flatten_params(self.parameters())

    def parameters(self):
        return (
            self.attention.parameters()
            + self.gru.parameters()
            + self.time_embedding.parameters()
            + self.action_embedding.parameters()
            + self.advantage.parameters()
            + self.value.parameters()
        )

    @property
    def n_actions(self):
        return self.spec.n_actions

    def zero_grad(self):
        self.flat_grads.fill(0.0)

    # forward / backward ----------------------------------------------------

    def encode(self, batch: StateBatch):
        if batch.items.shape[2] != self.item_dim:
            raise ShapeError(f"item embeddings have dim {batch.items.shape[2]}, network expects {self.item_dim}")
        if batch.items.shape[1] != self.K:
            raise ShapeError(f"lists have K={batch.items.shape[1]}, network expects {self.K}")
        if np.any(batch.t >= self.K):
            raise ShapeError("time embedding undefined for t >= K")
        e_list, c_att = self.attention.forward(batch.items)
        e_t, c_time = self.time_embedding.forward(batch.t)
        e_a, c_act = self.action_embedding.forward(batch.history)
        e_h, c_gru = self.gru.forward(e_a.reshape(len(batch), batch.history.shape[1], self.config.action_dim), batch.lengths)
        return np.concatenate([e_list, e_t, e_h], axis=1), (c_att, c_time, c_act, c_gru)

    def encode_backward(self, d_state, cache):
        c_att, c_time, c_act, c_gru = cache
        md, td = self.config.model_dim, self.config.time_dim
        self.attention.backward(d_state[:, :md], c_att)
        self.time_embedding.backward(d_state[:, md : md + td], c_time)
        d_ea = self.gru.backward(d_state[:, md + td :], c_gru)
        self.action_embedding.backward(d_ea, c_act)

    def forward(self, batch: StateBatch):
        """Return ``(Q, cache)`` with ``Q`` of shape ``(B, M*N + 1)``."""
        es, c_enc = self.encode(batch)
        adv, c_adv = self.advantage.forward(es)
        val, c_val = self.value.forward(es)
        q = val + (adv - adv.mean(axis=1, keepdims=True))
        return q, (c_enc, c_adv, c_val, adv, val)

    def backward(self, dq, cache):
        c_enc, c_adv, c_val, _, _ = cache
        dval = dq.sum(axis=1, keepdims=True)
        dadv = dq - dq.mean(axis=1, keepdims=True)
        d_es = self.advantage.backward(dadv, c_adv) + self.value.backward(dval, c_val)
        self.encode_backward(d_es, c_enc)

    def q_batch(self, states: Sequence[EnvState]) -> np.ndarray:
        return self.forward(make_batch(states, self.spec))[0]

    # parameters as tensors ---------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        return {p.name: p.value for p in self.parameters()}

    def load_state_tensors(self, tensors, prefix=""):
        for p in self.parameters():
            key = prefix + p.name
            if key not in tensors:
                raise ShapeError(f"missing tensor {key}")
            if tensors[key].shape != p.value.shape:
                raise ShapeError(f"{key}: shape {tensors[key].shape} != {p.value.shape}")
            p.value[...] = tensors[key]

    def clone(self) -> "QNetwork":
        twin = QNetwork(self.spec, self.K, self.item_dim, self.config, np.random.default_rng(0))
        sync_target(self, twin)
        return twin


def expected_parameter_count(spec: PanelSpec, K: int, item_dim: int, config: AgentConfig) -> int:
    """Closed-form parameter count of :class:`QNetwork` for a configuration."""
    D, H, A = config.model_dim, config.gru_hidden, spec.n_actions
    attn = 3 * (item_dim * D + D) + D * D + D
    gru = 3 * (config.action_dim * H + H * H + H)
    emb = K * config.time_dim + A * config.action_dim
    S = D + config.time_dim + H

    def mlp(out):
        sizes = [S, *config.hidden, out]
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    return attn + gru + emb + mlp(A) + mlp(1)


# -- single-state operations ----------------------------------------------------


def encode_state(net: QNetwork, state: EnvState) -> np.ndarray:
    return net.encode(make_batch([state], net.spec))[0][0]


def q_values(net: QNetwork, state: EnvState) -> np.ndarray:
    return net.q_batch([state])[0]


def state_value(net: QNetwork, state: EnvState) -> float:
    _, cache = net.forward(make_batch([state], net.spec))
    return float(cache[4][0, 0])


def select_action(net: QNetwork, state: EnvState, spec: PanelSpec, epsilon: float, rng) -> SlotAction:
    """Epsilon-greedy over the legal actions only; ties go to the lowest index."""
    mask = legal_mask(state, spec)
    legal = np.flatnonzero(mask)
    if epsilon > 0 and rng.random() < epsilon:
        return SlotAction.from_index(legal[rng.integers(len(legal))], spec)
    q = q_values(net, state)
    return SlotAction.from_index(legal[np.argmax(q[legal])], spec)


def greedy_policy(net: QNetwork, spec: PanelSpec):
    def policy(state):
        return select_action(net, state, spec, 0.0, None)

    return policy


def sync_target(net: QNetwork, target: QNetwork) -> None:
    """Copy online parameters into the target network bit for bit."""
    src, dst = net.parameters(), target.parameters()
    if len(src) != len(dst):
        raise ShapeError("online and target networks differ in structure")
    for a, b in zip(src, dst):
        if a.name != b.name or a.value.shape != b.value.shape:
            raise ShapeError(f"parameter mismatch: {a.name}{a.value.shape} vs {b.name}{b.value.shape}")
        np.copyto(b.value, a.value)


# -- replay memory -------------------------------------------------------------


class ReplayMemory:
    """Bounded FIFO store of transitions; sampling is uniform with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = int(capacity)
        self._buf: deque[StepRecord] = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def store(self, record: StepRecord) -> None:
        self._buf.append(record)

    def sample(self, batch_size: int, rng) -> list[StepRecord]:
        if len(self._buf) < batch_size or not self._buf:
            raise InsufficientDataError(f"need {batch_size} records, memory holds {len(self._buf)}")
        idx = rng.integers(0, len(self._buf), size=batch_size)
        return [self._buf[i] for i in idx]


def replay_store(memory: ReplayMemory, record: StepRecord) -> None:
    memory.store(record)


def replay_sample(memory: ReplayMemory, batch_size: int, rng) -> list[StepRecord]:
    return memory.sample(batch_size, rng)


# -- learning ---------------------------------------------------------------------


def td_targets(batch: Sequence[StepRecord], target_net: QNetwork, gamma: float, spec: PanelSpec) -> np.ndarray:
    """``y = r`` on terminal records, else ``r + gamma * max_legal Q_target(s')``."""
    y = np.array([rec.reward for rec in batch], dtype=np.float64)
    live = [i for i, rec in enumerate(batch) if not rec.terminal]
    if live:
        nxt = [batch[i].next_state for i in live]
        q = target_net.q_batch(nxt)
        masks = np.stack([legal_mask(s, spec) for s in nxt])
        best = np.where(masks, q, -np.inf).max(axis=1)
        y[live] += gamma * best
    return y


def td_loss(net: QNetwork, batch: Sequence[StepRecord], targets: np.ndarray, backward: bool = True) -> float:
    """Mean squared TD error; with ``backward`` gradients accumulate into ``net``."""
    states = [rec.state for rec in batch]
    actions = np.array([rec.action.to_index(net.spec) for rec in batch])
    q, cache = net.forward(make_batch(states, net.spec))
    rows = np.arange(len(batch))
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    if backward:
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * err / len(batch)
        net.backward(dq, cache)
    return loss


def train_step(net, target_net, memory, config: AgentConfig, rng, optimizer) -> float:
    """Sample a batch, take one optimizer step on the TD loss, return the pre-update loss."""
    batch = memory.sample(config.batch_size, rng)
    targets = td_targets(batch, target_net, config.gamma, net.spec)
    net.zero_grad()
    loss = td_loss(net, batch, targets)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite TD loss {loss} (targets range {targets.min()}..{targets.max()})")
    optimizer.step()
    return loss


# -- agent ----------------------------------------------------------------------------


@dataclass
class EpisodeMetrics:
    episode: int
    total_reward: float
    loss: float
    epsilon: float
    wall_ms: float
    expected_reward: float = float("nan")


class DQNAgent:
    """Online network, target network, replay memory, optimizer and counters."""

    def __init__(self, spec: PanelSpec, K: int, item_dim: int, config: AgentConfig):
        self.spec = spec
        self.config = config.validate()
        self.K, self.item_dim = int(K), int(item_dim)
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.net = QNetwork(spec, K, item_dim, config, np.random.default_rng(seeds[0]))
        self.target = self.net.clone()
        self.memory = ReplayMemory(config.replay_capacity)
        self.optimizer = make_optimizer(config.optimizer, self.net.parameters(), config.learning_rate)
        self.explore_rng = np.random.default_rng(seeds[1])
        self.replay_rng = np.random.default_rng(seeds[2])
        self.train_steps = 0
        self.episodes_done = 0
        self.epsilon = config.epsilon_start

    def act(self, state, epsilon=None):
        eps = self.epsilon if epsilon is None else epsilon
        return select_action(self.net, state, self.spec, eps, self.explore_rng)

    def observe(self, records: Sequence[StepRecord]) -> list[float]:
        """Store rewarded transitions and run the scheduled train steps."""
        losses = []
        for rec in records:
            self.memory.store(rec)
            if len(self.memory) < max(self.config.warmup, self.config.batch_size):
                continue
            for _ in range(self.config.train_per_step):
                losses.append(train_step(self.net, self.target, self.memory, self.config, self.replay_rng, self.optimizer))
                self.train_steps += 1
                if self.train_steps % self.config.target_sync == 0:
                    sync_target(self.net, self.target)
        return losses

    # persistence ---------------------------------------------------------

    def state_tensors(self):
        out = {f"online.{k}": v for k, v in self.net.state_tensors().items()}
        out.update({f"target.{k}": v for k, v in self.target.state_tensors().items()})
        out.update(self.optimizer.state_tensors())
        return out

    def save(self, path, extra=None):
        meta = {
            "kind": "dqn_agent",
            "agent_config": self.config.to_dict(),
            "panel": asdict(self.spec),
            "K": self.K,
            "item_dim": self.item_dim,
            "train_steps": self.train_steps,
            "episodes_done": self.episodes_done,
            "epsilon": self.epsilon,
            "optimizer_steps": self.optimizer.steps,
        }
        meta.update(extra or {})
        return save_tensors(path, self.state_tensors(), seed=self.config.seed, extra=meta)

    @classmethod
    def load(cls, path) -> "DQNAgent":
        from .exceptions import CheckpointError

        tensors, manifest = load_tensors(path)
        meta = manifest.get("extra", {})
        if meta.get("kind") != "dqn_agent":
            raise CheckpointError(f"{path} is not an agent checkpoint")
        spec = PanelSpec(**meta["panel"])
        agent = cls(spec, meta["K"], meta["item_dim"], AgentConfig.from_dict(meta["agent_config"]))
        try:
            agent.net.load_state_tensors(tensors, "online.")
            agent.target.load_state_tensors(tensors, "target.")
            agent.optimizer.load_state_tensors(tensors)
        except (KeyError, ShapeError) as exc:
            raise CheckpointError(f"checkpoint tensors do not match the network: {exc}") from exc
        agent.train_steps = meta["train_steps"]
        agent.episodes_done = meta["episodes_done"]
        agent.epsilon = meta["epsilon"]
        agent.optimizer.steps = meta["optimizer_steps"]
        return agent


def run_episode(agent: DQNAgent, sim, rng, epsilon: float, feedback: str = "sample"):
    """One rollout with simulator feedback; returns ``(rewarded trajectory, info)``."""
    user, ranking = sim.new_request(rng)
    panel, traj = rollout_placement(lambda s: agent.act(s, epsilon), ranking, agent.spec)
    rewards = RewardSpec.for_panel(agent.spec)
    if feedback == "expected":
        probs = purchase_probabilities(user, panel, sim.grid)
        traj = assign_expected_rewards(traj, probs, rewards)
        realized = sum(r.reward for r in traj)
    elif feedback == "sample":
        bought = sim.feedback(user, panel, rng)
        traj = assign_rewards(traj, bought, rewards)
        realized = realized_reward(bought, traj, rewards.null_penalty)
    else:
        raise ConfigError(f"unknown feedback mode {feedback!r}", field="feedback")
    expected = sim.expected_reward(user, panel, traj, rewards.null_penalty)
    return traj, {"user": user, "ranking": ranking, "panel": panel, "realized": realized, "expected": expected}


def train(
    agent: DQNAgent,
    sim,
    n_episodes: int,
    feedback: str = "sample",
    request_seed: Optional[int] = None,
    callback: Optional[Callable[[DQNAgent, EpisodeMetrics], None]] = None,
) -> list[EpisodeMetrics]:
    """Epsilon-greedy training loop over fresh simulated requests.

    Each episode is rolled out, rewarded from whole-panel feedback, split
    into transitions for the replay memory and followed by the scheduled
    train steps. The target network syncs every ``target_sync`` steps.
    """
    if request_seed is None:
        request_seed = agent.config.seed
    rng = np.random.default_rng(np.random.SeedSequence([request_seed, 7919]))
    metrics = []
    for ep in range(n_episodes):
        t0 = time.perf_counter()
        agent.epsilon = epsilon_at(agent.config, ep, n_episodes)
        traj, info = run_episode(agent, sim, rng, agent.epsilon, feedback)
        losses = agent.observe(traj)
        agent.episodes_done += 1
        row = EpisodeMetrics(
            episode=ep,
            total_reward=float(info["realized"]),
            loss=float(np.mean(losses)) if losses else float("nan"),
            epsilon=agent.epsilon,
            wall_ms=(time.perf_counter() - t0) * 1e3,
            expected_reward=float(info["expected"]),
        )
        metrics.append(row)
        if callback is not None:
            callback(agent, row)
    return metrics
