import pytest

from panelmdp.config import (
    config_from_dict,
    default_config,
    dump_config,
    get_path,
    load_config,
    set_path,
)
from panelmdp.exceptions import ConfigError


def test_task_defaults():
    reorg = default_config("reorg")
    assert (reorg.sim.K, reorg.panel.allow_null) == (6, False)
    sel = default_config("select_reorg")
    assert (sel.sim.K, sel.panel.allow_null, sel.panel.null_penalty) == (16, True, 0.1)
    assert reorg.train_episodes == 10_000


def test_dotted_path_access():
    cfg = default_config()
    set_path(cfg, "agent.learning_rate", "0.01")
    set_path(cfg, "sim.row_decay", 0.5)
    set_path(cfg, "agent.hidden", "[8, 4]")
    set_path(cfg, "panel.allow_null", "false")
    assert get_path(cfg, "agent.learning_rate") == 0.01
    assert cfg.sim.row_decay == 0.5
    assert cfg.agent.hidden == (8, 4)


@pytest.mark.parametrize("path", ["agent.nope", "nope", "sim.agent.gamma", "agent"])
def test_unknown_keys_are_errors(path):
    with pytest.raises(ConfigError):
        set_path(default_config(), path, 1)


def test_unknown_section_in_document():
    with pytest.raises(ConfigError) as err:
        config_from_dict({"optim": {"lr": 1}})
    assert err.value.field == "optim"


@pytest.mark.parametrize(
    "tree,field",
    [
        ({"task": "reorg", "panel": {"allow_null": True}}, "panel.allow_null"),
        ({"task": "reorg", "sim": {"K": 7}}, "sim.K"),
        ({"task": "select_reorg", "sim": {"K": 6}}, "sim.K"),
        ({"task": "select_reorg", "panel": {"allow_null": False}}, "panel.allow_null"),
        ({"agent": {"gamma": 1.5}}, "agent.gamma"),
        ({"sim": {"rows": 3}}, "sim.rows"),
        ({"task": "ranking"}, "task"),
        ({"agent": {"batch_size": "many"}}, "agent.batch_size"),
    ],
)
def test_invariant_violations_name_the_field(tree, field):
    with pytest.raises(ConfigError) as err:
        config_from_dict(tree)
    assert err.value.field == field
    assert field in str(err.value)


def test_seed_argument_wins(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("task: select_reorg\nseed: 3\nagent:\n  learning_rate: 0.002\n")
    assert load_config(p).seed == 3
    cfg = load_config(p, seed=11)
    assert cfg.seed == 11 and cfg.agent.seed == 11 and cfg.sim.seed == 11
    assert cfg.agent.learning_rate == 0.002


def test_seed_range():
    with pytest.raises(ConfigError):
        config_from_dict({}, seed=-1)
    assert config_from_dict({}, seed=2**64 - 1).seed == 2**64 - 1


def test_overrides_and_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("task: reorg\n")
    cfg = load_config(p, overrides={"agent.batch_size": "16", "train_episodes": "7"})
    assert cfg.agent.batch_size == 16 and cfg.train_episodes == 7
    dumped = dump_config(cfg, tmp_path / "out.yaml")
    assert load_config(dumped).to_dict() == cfg.to_dict()


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
