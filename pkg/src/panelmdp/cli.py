"""Command-line experiment harness: ``train``, ``eval``, ``compare``, ``curves``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agent import DQNAgent, EpisodeMetrics, train
from .baselines import PolicyKind
from .config import ExperimentConfig, config_from_dict, dump_config, load_config
from .core import write_trajectory_jsonl
from .evaluation import EvalReport, evaluate, expected_rewards, greedy_rollouts
from .exceptions import CheckpointError, ConfigError, PanelMDPError
from .metrics import export_curves, write_metrics
from .sim import GridUserSimulator

log = logging.getLogger("panelmdp")

EVAL_HEADER = ("episode", "mean_expected_reward")
# stream tags keep training, periodic evaluation and final evaluation independent
_EVAL_SET_TAG = 104_729
_REPORT_TAG = 130_363


def stream_seed(seed: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), tag])


@dataclass
class TrainResult:
    agent: DQNAgent
    metrics: list[EpisodeMetrics]
    eval_points: list[tuple[int, float]] = field(default_factory=list)
    out_dir: Optional[Path] = None

    def thirds(self) -> tuple[float, float]:
        """Mean periodic eval reward over the first and final third of training."""
        n = max(len(self.metrics), 1)
        first = [r for e, r in self.eval_points if e < n / 3]
        last = [r for e, r in self.eval_points if e >= 2 * n / 3]
        return float(np.mean(first)), float(np.mean(last))


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig) -> Path:
    """Hash every artifact under ``out_dir`` (except the manifest itself)."""
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p != out_dir / "manifest.json":
            files[p.relative_to(out_dir).as_posix()] = _sha256(p)
    doc = {"command": command, "seed": cfg.seed, "task": cfg.task, "files": files}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_eval_points(path: Path, points) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for ep, value in points:
            w.writerow([ep, repr(float(value))])


def read_eval_points(path) -> list[tuple[int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != EVAL_HEADER:
        raise PanelMDPError(f"{path}: unexpected header")
    return [(int(a), float(b)) for a, b in rows[1:]]


def make_agent(cfg: ExperimentConfig) -> DQNAgent:
    return DQNAgent(cfg.spec, cfg.sim.K, cfg.sim.d, cfg.agent)


def run_training(cfg: ExperimentConfig, out_dir=None, episodes: Optional[int] = None) -> TrainResult:
    """Train on fresh simulated requests and write the run's artifacts.

    A greedy evaluation on a fixed request set runs before training and
    then every ``eval_every`` episodes (plus once at the end); these points
    are the learning curve written to ``eval.csv``.
    """
    cfg.validate()
    n = cfg.train_episodes if episodes is None else int(episodes)
    if n < 0:
        raise ConfigError("must be nonnegative", field="train_episodes")
    sim = GridUserSimulator(cfg.sim)
    agent = make_agent(cfg)
    eval_set = sim.requests(cfg.eval_requests, stream_seed(cfg.seed, _EVAL_SET_TAG)) if cfg.eval_requests else []
    points: list[tuple[int, float]] = []

    def evaluate_now(ep):
        if eval_set:
            points.append((ep, float(expected_rewards(agent.net, eval_set, cfg.spec, sim).mean())))

    def callback(ag, row):
        done = row.episode + 1
        if done % cfg.eval_every == 0 or done == n:
            evaluate_now(done)
        if done % max(n // 20, 1) == 0:
            log.info("episode %d/%d reward %.4f eps %.3f", done, n, row.total_reward, row.epsilon)

    evaluate_now(0)
    metrics = train(agent, sim, n, feedback=cfg.feedback, callback=callback)
    result = TrainResult(agent, metrics, points)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / "config.yaml")
        write_metrics(out / "metrics.csv", metrics)
        _write_eval_points(out / "eval.csv", points)
        export_curves(out / "metrics.csv", out / "curves.csv", cfg.curve_bucket)
        agent.save(out / "checkpoint", extra={"task": cfg.task, "sim_config": sim.config_dict()})
        if eval_set:
            sample = eval_set[: min(10, len(eval_set))]
            with open(out / "trajectories.jsonl", "w", encoding="utf-8") as fh:
                for ep in greedy_rollouts(agent.net, [r for _, r in sample], cfg.spec):
                    write_trajectory_jsonl(ep.trajectory, cfg.spec, fh)
        write_manifest(out, "train", cfg)
        result.out_dir = out
    return result


def load_agent(checkpoint, cfg: ExperimentConfig) -> DQNAgent:
    """Load a checkpoint and check it matches the config's dimensions."""
    agent = DQNAgent.load(checkpoint)
    want = (cfg.spec.rows, cfg.spec.cols, cfg.spec.allow_null, cfg.sim.K, cfg.sim.d)
    got = (agent.spec.rows, agent.spec.cols, agent.spec.allow_null, agent.K, agent.item_dim)
    if want != got:
        raise CheckpointError(f"checkpoint dims (rows, cols, null, K, d) = {got} do not match config {want}")
    return agent


def run_eval(
    cfg: ExperimentConfig,
    policy: str = "learned",
    n_episodes: Optional[int] = None,
    checkpoint=None,
    agent: Optional[DQNAgent] = None,
) -> EvalReport:
    """Greedy rollouts on fresh requests: realized and analytic reward, AUC with NULL."""
    cfg.validate()
    kind = PolicyKind(policy)
    n = cfg.eval_episodes if n_episodes is None else int(n_episodes)
    if n < 1:
        raise ConfigError("need at least one evaluation episode", field="eval_episodes")
    net = None
    if kind is PolicyKind.LEARNED:
        if agent is None:
            if checkpoint is None:
                raise ConfigError("the learned policy needs --checkpoint", field="checkpoint")
            agent = load_agent(checkpoint, cfg)
        net = agent.net
    sim = GridUserSimulator(cfg.sim)
    seeds = stream_seed(cfg.seed, _REPORT_TAG).spawn(2)
    requests = sim.requests(n, seeds[0])
    rng = np.random.default_rng(seeds[1])
    with_auc = cfg.spec.allow_null and n * cfg.sim.K > cfg.spec.n_slots
    return evaluate(kind, requests, cfg.spec, sim, rng, net=net, with_auc=with_auc)


# -- command line ----------------------------------------------------------------


def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {item!r}", field="--set")
        out[key.strip()] = value.strip()
    return out


def resolve_config(args) -> ExperimentConfig:
    overrides = _parse_sets(getattr(args, "set", None))
    if getattr(args, "task", None):
        overrides.setdefault("task", args.task)
    if args.config:
        return load_config(args.config, seed=args.seed, overrides=overrides)
    tree: dict = {}
    for key, value in overrides.items():
        node = tree
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot nest under a scalar", field=key)
        node[leaf] = value
    return config_from_dict(tree, seed=args.seed)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    result = run_training(cfg, out, episodes=args.episodes)
    if result.eval_points:
        first, last = result.thirds() if len(result.metrics) >= 3 else (float("nan"),) * 2
        print(f"trained {len(result.metrics)} episodes; eval reward first third {first:.4f}, final third {last:.4f}")
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    report = run_eval(cfg, args.policy, args.episodes, checkpoint=args.checkpoint)
    _write_json(out / "eval_report.json", report.summary())
    write_manifest(out, "eval", cfg)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args, cfg)
    kinds = [k.value for k in PolicyKind if k is not PolicyKind.LEARNED]
    if args.checkpoint:
        kinds.insert(0, PolicyKind.LEARNED.value)
    rows = []
    for kind in kinds:
        try:
            rows.append(run_eval(cfg, kind, args.episodes, checkpoint=args.checkpoint).summary())
        except PanelMDPError as exc:
            if kind != PolicyKind.ORACLE.value:
                raise
            log.warning("skipping oracle: %s", exc)
    _write_json(out / "compare.json", rows)
    write_manifest(out, "compare", cfg)
    for r in rows:
        auc = f"  auc {r['auc']:.4f}" if "auc" in r else ""
        print(f"{r['policy']:>10}  expected {r['average_expected_reward']:.4f}  realized {r['average_reward']:.4f}{auc}")
    return 0


def cmd_curves(args) -> int:
    src = Path(args.metrics) if args.metrics else Path(args.out or ".") / "metrics.csv"
    dest = Path(args.out) / "curves.csv" if args.out else src.with_name("curves.csv")
    curves = export_curves(src, dest, args.bucket)
    print(f"wrote {len(curves)} buckets to {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panelmdp", description="Grid-panel re-ranking experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=False):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--task", choices=("reorg", "select_reorg"), help="task defaults when no config is given")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed; overrides the config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--episodes", type=int, help="episode count (training or evaluation)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted-path config override")
        p.add_argument("--checkpoint", help="checkpoint directory for the learned policy")
        if policy:
            p.add_argument("--policy", default="learned", choices=[k.value for k in PolicyKind])

    common(sub.add_parser("train", help="train an agent"))
    common(sub.add_parser("eval", help="evaluate one policy"), policy=True)
    common(sub.add_parser("compare", help="evaluate all baselines (and a checkpoint)"))
    p = sub.add_parser("curves", help="bucket a metrics CSV into curves.csv")
    p.add_argument("--metrics", help="metrics CSV (default: <out>/metrics.csv)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--bucket", type=int, default=100)
    return parser


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "curves": cmd_curves}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        print("config error: seed: must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (PanelMDPError, FloatingPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
