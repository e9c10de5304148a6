"""Shared generators and fixtures for the test suite.

Random instances are always derived from an explicit seed so that every
test run sees the same data.  Costs are dyadic rationals (multiples of
1/16 or coarser), which keeps every energy comparison exact in binary
floating point, ties included.
"""
from __future__ import annotations

import random

import numpy as np
import pytest

from hxcut.energy import (Composition, EnergyModel, PREFER_COARSER,
                          ScaleFamily, combine_linear)
from hxcut.hierarchy import Hierarchy
from hxcut.optimize import minimum_cut


def random_tree(rng: random.Random, leaves: int, max_arity: int = 4,
                with_levels: bool = False) -> Hierarchy:
    """Random abstract hierarchy: leaf ids 0..leaves-1, internal ids above."""
    next_id = leaves

    def build(leaf_ids: list[int]) -> tuple[int, dict]:
        nonlocal next_id
        if len(leaf_ids) == 1:
            return leaf_ids[0], {}
        k = rng.randint(2, min(max_arity, len(leaf_ids)))
        ids = list(leaf_ids)
        rng.shuffle(ids)
        cutpoints = sorted(rng.sample(range(1, len(ids)), k - 1))
        groups = [ids[a:b] for a, b in zip([0] + cutpoints, cutpoints + [len(ids)])]
        kids, children = [], {}
        for g in groups:
            cid, sub = build(sorted(g))
            kids.append(cid)
            children.update(sub)
        me = next_id
        next_id += 1
        children[me] = tuple(sorted(kids))
        return me, children

    root, children = build(list(range(leaves)))
    levels = None
    if with_levels:
        h0 = Hierarchy(children, root)
        levels = {}
        for n in h0.postorder():
            ch = h0.children(n)
            levels[n] = 0.0 if not ch else 1.0 + max(levels[c] for c in ch)
    return Hierarchy(children, root, level_index=levels)


def dyadic(rng: random.Random, hi: int = 64, q: float = 8.0) -> float:
    return rng.randint(0, hi) / q


def random_costs(rng: random.Random, h: Hierarchy) -> dict[int, float]:
    return {n: dyadic(rng) for n in h.node_ids}


def random_sum_model(rng: random.Random, h: Hierarchy) -> EnergyModel:
    return EnergyModel.composed(random_costs(rng, h), Composition.SUM)


def random_sup_model(rng: random.Random, h: Hierarchy) -> EnergyModel:
    return EnergyModel.composed(random_costs(rng, h), Composition.SUP)


def affine_parts(rng: random.Random, h: Hierarchy) -> tuple[EnergyModel, EnergyModel]:
    """Random fit term plus a regularizer that is strictly cheaper on a node
    than on its sons, which makes the affine family climb to the root."""
    mu = {n: rng.randint(0, 512) / 16.0 for n in h.node_ids}
    par: dict[int, float] = {}
    for n in h.postorder():
        ch = h.children(n)
        if not ch:
            par[n] = rng.randint(8, 64) / 8.0
        else:
            par[n] = (rng.randint(2, 6) / 8.0) * sum(par[c] for c in ch)
    return (EnergyModel.composed(mu, Composition.SUM),
            EnergyModel.composed(par, Composition.SUM))


def affine_climbing_family(rng: random.Random, h: Hierarchy,
                           points: int = 8) -> ScaleFamily:
    """Affine family on a grid extended until the pyramid ends at the root."""
    fit, reg = affine_parts(rng, h)

    def family_for(grid):
        return ScaleFamily(tuple(grid),
                           lambda lam: combine_linear((1.0, lam), (fit, reg)),
                           PREFER_COARSER)

    grid = [0.0] + [2.0 ** k for k in range(points - 1)]
    while True:
        fam = family_for(grid)
        res = minimum_cut(h, fam.model_at(grid[-1]), PREFER_COARSER)
        if res.cut.members == frozenset((h.root,)):
            return fam
        grid.append(grid[-1] * 2)
        assert grid[-1] < 2 ** 80, "regularizer never dominates"


def random_image(rng_seed: int, shape: tuple[int, int], channels: int = 1):
    from hxcut.imaging import ImagePlane
    g = np.random.default_rng(rng_seed)
    if channels == 1:
        return ImagePlane(g.integers(0, 256, shape, dtype=np.uint8))
    return ImagePlane(g.integers(0, 256, (*shape, 3), dtype=np.uint8))


def balanced_binary(leaves: int) -> Hierarchy:
    """Balanced binary tree over a power-of-two leaf count."""
    assert leaves & (leaves - 1) == 0
    ids = list(range(leaves))
    children: dict[int, tuple[int, ...]] = {}
    nxt = leaves
    while len(ids) > 1:
        nxt_ids = []
        for a, b in zip(ids[0::2], ids[1::2]):
            children[nxt] = (a, b)
            nxt_ids.append(nxt)
            nxt += 1
        ids = nxt_ids
    return Hierarchy(children, ids[0])


def star_mask() -> np.ndarray:
    """Five-armed digital star: three straight arms and two staircases."""
    m = np.zeros((15, 15), dtype=bool)
    m[6:9, 6:9] = True
    m[1:6, 7] = True
    m[9:14, 7] = True
    m[7, 1:6] = True
    for k in range(3):
        m[5 - k, 8 + k] = True
        m[5 - k, 9 + k] = True
        m[9 + k, 8 + k] = True
        m[9 + k, 9 + k] = True
    return m


@pytest.fixture
def ce1():
    from hxcut.energies import fixture_ce1
    return fixture_ce1()


@pytest.fixture
def ce2():
    from hxcut.energies import fixture_ce2
    return fixture_ce2()


def fixture_trees() -> list[Hierarchy]:
    """Small trees used by the algebra suite (at most 8 leaves)."""
    from hxcut.energies import fixture_ce1
    rng = random.Random(7)
    return [fixture_ce1()[0], balanced_binary(8), random_tree(rng, 7, 3)]
