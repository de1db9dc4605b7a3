import numpy as np
import pytest

from panelmdp.core import Item, Panel, PanelSpec, RankingList, SlotAction, apply_placement
from panelmdp.sim import ExaminationGrid, SyntheticUser


def make_list(K, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return RankingList(Item(i, rng.standard_normal(d)) for i in range(K))


def axis_user(d=2):
    """User whose affinity with an item equals the item's first coordinate."""
    pref = np.zeros(d)
    pref[0] = 1.0
    return SyntheticUser(0, pref)


def affinity_items(affinities, d=2):
    """Items whose affinity with :func:`axis_user` is exactly the given values."""
    out = []
    for i, a in enumerate(affinities):
        e = np.zeros(d)
        e[0] = a
        out.append(Item(i, e))
    return out


def uniform_grid(M, N, weight=1.0):
    w = np.full((M, N), float(weight))
    return ExaminationGrid(w, 1.0, 1.0)


def fill_panel(spec, placements):
    """``placements``: iterable of (slot index, item)."""
    panel = Panel(spec)
    for idx, item in placements:
        panel = apply_placement(panel, SlotAction.from_index(idx, spec), item)
    return panel


@pytest.fixture
def spec23():
    return PanelSpec(2, 3, allow_null=False)


@pytest.fixture
def spec23_null():
    return PanelSpec(2, 3, allow_null=True, null_penalty=0.1)
