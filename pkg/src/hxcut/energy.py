"""Energies on partial partitions, their algebra, and climbing-axiom checks.

An energy assigns a nonnegative value to any partial partition whose classes
are nodes of a hierarchy.  Two shapes are supported:

* composed: a per-class cost extended to partitions by a composition law
  (sum, supremum or infimum over the classes);
* direct: an arbitrary function of the member set, for energies that do not
  decompose per class.

Minimum-cut machinery relies on two monotonicity properties of energies:
hierarchical increasingness (an energy comparison between two partitions of
the same support survives concatenation with any disjoint partition) and,
for families indexed by a scale, scale increasingness (once a node beats the
cuts of its own subtree, it keeps beating them at every larger scale).  Both
properties are universally quantified, so the checkers here are exhaustive
at desk scale and fall back to seeded uniform sampling beyond a budget.

Ties between a node and a cut of the node are broken symbolically.  The
lexicographic rule (compare values, then apply the tie preference) is
equivalent to perturbing the energy by any epsilon smaller than the least
positive value gap, so no numeric epsilon is ever tuned.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .hierarchy import (Cut, Hierarchy, count_cuts, cut_by_index,
                        enumerate_cuts)


class Composition(Enum):
    SUM = "sum"
    SUP = "sup"
    INF = "inf"


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Energy on partial partitions; composed per class or direct."""

    composition: Composition | None
    per_class: Mapping[int, float] | Callable[[int], float] | None
    direct_fn: Callable[[frozenset[int]], float] | None
    name: str = ""

    @staticmethod
    def composed(per_class, composition: Composition, name: str = "") -> "EnergyModel":
        if isinstance(per_class, Mapping):
            bad = [k for k, v in per_class.items() if v < 0]
            if bad:
                raise ValueError(f"negative class cost for nodes {sorted(bad)}")
            per_class = dict(per_class)
        return EnergyModel(composition, per_class, None, name)

    @staticmethod
    def direct(fn: Callable[[frozenset[int]], float], name: str = "") -> "EnergyModel":
        return EnergyModel(None, None, fn, name)

    @property
    def is_composed(self) -> bool:
        return self.composition is not None

    def class_cost(self, node: int) -> float:
        pc = self.per_class
        if isinstance(pc, Mapping):
            try:
                return pc[node]
            except KeyError:
                raise ValueError(f"no cost priced for class {node}") from None
        return pc(node)


def evaluate(model: EnergyModel, cut_or_members) -> float:
    """Energy of a partial partition given as a Cut or an id collection."""
    members = cut_or_members.members if isinstance(cut_or_members, Cut) \
        else frozenset(cut_or_members)
    if not members:
        raise ValueError("cannot evaluate an empty partial partition")
    if model.is_composed:
        vals = [model.class_cost(m) for m in members]
        if model.composition is Composition.SUM:
            return sum(vals)
        if model.composition is Composition.SUP:
            return max(vals)
        return min(vals)
    return model.direct_fn(members)


def as_direct(model: EnergyModel) -> EnergyModel:
    """Wrap any model as a direct one (used to sum sup-composed energies)."""
    return EnergyModel.direct(lambda members, _m=model: evaluate(_m, members),
                              name=model.name)


# ----------------------------------------------------------------------
# tie policies
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TiePolicy:
    """How an exact energy tie between a node and a finer cut is resolved.

    `coarser` keeps the node, `finer` keeps the cut, and `threshold` keeps
    the node exactly when the tied value does not exceed omega0.  A
    threshold of +inf therefore behaves as `coarser` and -inf as `finer`.
    """

    mode: str  # "coarser" | "finer" | "threshold"
    omega0: float = float("inf")

    def keeps_node_on_tie(self, value: float) -> bool:
        if self.mode == "coarser":
            return True
        if self.mode == "finer":
            return False
        return value <= self.omega0

    @staticmethod
    def threshold(omega0: float) -> "TiePolicy":
        return TiePolicy("threshold", float(omega0))


PREFER_COARSER = TiePolicy("coarser")
PREFER_FINER = TiePolicy("finer")


class Side(Enum):
    COARSE = "coarse"
    FINE = "fine"


def compare_with_tie(model: EnergyModel, tie: TiePolicy,
                     coarse: Cut, fine: Cut) -> Side:
    """Pick between a one-class cut and a finer cut of the same node.

    Lower energy wins; an exact tie falls back to the tie policy.
    """
    vc = evaluate(model, coarse)
    vf = evaluate(model, fine)
    if vc < vf:
        return Side.COARSE
    if vf < vc:
        return Side.FINE
    return Side.COARSE if tie.keeps_node_on_tie(vc) else Side.FINE


# ----------------------------------------------------------------------
# energy algebra
# ----------------------------------------------------------------------

def combine_linear(weights: Sequence[float], models: Sequence[EnergyModel],
                   name: str = "") -> EnergyModel:
    """Pointwise nonnegative linear combination of energies.

    Sum-composed inputs combine into a sum-composed result; any direct input
    makes the result direct.  Sup/inf-composed inputs are rejected (their
    pointwise sum is not per-class composable; wrap them with `as_direct`).
    """
    ws = tuple(float(w) for w in weights)
    ms = tuple(models)
    if len(ws) != len(ms):
        raise ValueError("one weight per energy")
    if not ms:
        raise ValueError("empty energy family")
    if any(w < 0 for w in ws):
        raise ValueError("weights must be nonnegative")
    for m in ms:
        if m.is_composed and m.composition is not Composition.SUM:
            raise ValueError(
                "sup/inf-composed energies cannot be combined linearly; use as_direct")
    if all(m.is_composed for m in ms):
        def cost(node: int, _ws=ws, _ms=ms) -> float:
            return sum(w * m.class_cost(node) for w, m in zip(_ws, _ms))
        return EnergyModel.composed(cost, Composition.SUM, name=name)

    def fn(members: frozenset[int], _ws=ws, _ms=ms) -> float:
        return sum(w * evaluate(m, members) for w, m in zip(_ws, _ms))
    return EnergyModel.direct(fn, name=name)


def _combine_lattice(models: Sequence[EnergyModel], pick, name: str) -> EnergyModel:
    ms = tuple(models)
    if not ms:
        raise ValueError("empty energy family")

    def fn(members: frozenset[int], _ms=ms) -> float:
        return pick(evaluate(m, members) for m in _ms)
    return EnergyModel.direct(fn, name=name)


def combine_inf(models: Sequence[EnergyModel], name: str = "inf") -> EnergyModel:
    """Pointwise infimum of a family of energies."""
    return _combine_lattice(models, min, name)


def combine_sup(models: Sequence[EnergyModel], name: str = "sup") -> EnergyModel:
    """Pointwise supremum of a family of energies."""
    return _combine_lattice(models, max, name)


# ----------------------------------------------------------------------
# scale families
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScaleFamily:
    """Finite increasing grid of scales with an energy per scale."""

    scales: tuple[float, ...]
    generator: Callable[[float], EnergyModel]
    tie: TiePolicy

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if not scales:
            raise ValueError("empty scale grid")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly increasing")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "_cache", {})

    def model_at(self, scale: float) -> EnergyModel:
        got = self._cache.get(scale)
        if got is None:
            got = self.generator(scale)
            self._cache[scale] = got
        return got


# ----------------------------------------------------------------------
# climbing-axiom checkers
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    ok: bool
    counterexample: tuple | None
    exhaustive: bool
    tested: int
    seed: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def _disjoint_nodes(h: Hierarchy, s: int) -> list[int]:
    return [t for t in h.node_ids
            if not h.is_ancestor(t, s) and not h.is_ancestor(s, t)]


def _triple_space(h: Hierarchy) -> tuple[list[tuple[int, int]], list[int], int]:
    pairs: list[tuple[int, int]] = []
    weights: list[int] = []
    total = 0
    for s in h.node_ids:
        cs = count_cuts(h, s)
        for t in _disjoint_nodes(h, s):
            w = cs * cs * count_cuts(h, t)
            pairs.append((s, t))
            weights.append(w)
            total += w
    return pairs, weights, total


def _member_lists(h: Hierarchy, node: int, cache: dict) -> list[frozenset[int]]:
    got = cache.get(node)
    if got is None:
        got = [c.members for c in enumerate_cuts(h, node, limit=10 ** 18)]
        cache[node] = got
    return got


def check_h_increasing(model: EnergyModel, h: Hierarchy,
                       budget: int = 200_000, seed: int = 0) -> CheckResult:
    """Search for a violation of hierarchical increasingness.

    Tests, over same-summit cut pairs (pi1, pi2) and disjoint cuts pi0,
    that an energy comparison between pi1 and pi2 survives concatenation
    with pi0.  Exhaustive when the triple space fits in `budget`, otherwise
    uniform sampling with the recorded seed.
    """
    pairs, weights, total = _triple_space(h)
    if total == 0:
        return CheckResult(True, None, True, 0)
    cuts: dict[int, list[frozenset[int]]] = {}
    vals: dict[int, list[float]] = {}

    def values_of(n: int) -> list[float]:
        got = vals.get(n)
        if got is None:
            got = [evaluate(model, m) for m in _member_lists(h, n, cuts)]
            vals[n] = got
        return got

    if total <= budget:
        tested = 0
        for s, t in pairs:
            ms, vs = _member_lists(h, s, cuts), values_of(s)
            mt = _member_lists(h, t, cuts)
            for m1, v1 in zip(ms, vs):
                for m2, v2 in zip(ms, vs):
                    if m1 == m2:
                        tested += len(mt)
                        continue
                    if v1 > v2:
                        tested += len(mt)
                        continue
                    for m0 in mt:
                        tested += 1
                        if evaluate(model, m1 | m0) > evaluate(model, m2 | m0):
                            ce = (Cut(t, m0), Cut(s, m1), Cut(s, m2))
                            return CheckResult(False, ce, True, tested)
        return CheckResult(True, None, True, tested)

    rng = random.Random(seed)
    for k in range(budget):
        s, t = rng.choices(pairs, weights=weights)[0]
        m1 = frozenset(cut_by_index(h, s, rng.randrange(count_cuts(h, s))))
        m2 = frozenset(cut_by_index(h, s, rng.randrange(count_cuts(h, s))))
        m0 = frozenset(cut_by_index(h, t, rng.randrange(count_cuts(h, t))))
        if m1 == m2:
            continue
        if evaluate(model, m1) > evaluate(model, m2):
            continue
        if evaluate(model, m1 | m0) > evaluate(model, m2 | m0):
            ce = (Cut(t, m0), Cut(s, m1), Cut(s, m2))
            return CheckResult(False, ce, False, k + 1, seed)
    return CheckResult(True, None, False, budget, seed)


def check_cross_h_increasing(models: Sequence[EnergyModel], h: Hierarchy,
                             budget: int = 200_000, seed: int = 0) -> CheckResult:
    """Pairwise variant over a family: a comparison between energies i and j
    must survive concatenation.  All ordered pairs (i, j) are checked,
    including i = j.  This is the hypothesis under which the pointwise
    inf and sup of the family stay h-increasing.
    """
    ms_list = tuple(models)
    pairs, weights, total = _triple_space(h)
    total *= len(ms_list) ** 2
    if total == 0:
        return CheckResult(True, None, True, 0)
    cuts: dict[int, list[frozenset[int]]] = {}
    if total <= budget:
        tested = 0
        for s, t in pairs:
            mems_s = _member_lists(h, s, cuts)
            mems_t = _member_lists(h, t, cuts)
            for i, ei in enumerate(ms_list):
                for j, ej in enumerate(ms_list):
                    for m1 in mems_s:
                        v1 = evaluate(ei, m1)
                        for m2 in mems_s:
                            if evaluate(ej, m2) < v1:
                                tested += len(mems_t)
                                continue
                            for m0 in mems_t:
                                tested += 1
                                if evaluate(ei, m1 | m0) > evaluate(ej, m2 | m0):
                                    ce = (i, j, Cut(t, m0), Cut(s, m1), Cut(s, m2))
                                    return CheckResult(False, ce, True, tested)
        return CheckResult(True, None, True, tested)

    rng = random.Random(seed)
    for k in range(budget):
        s, t = rng.choices(pairs, weights=weights)[0]
        i = rng.randrange(len(ms_list))
        j = rng.randrange(len(ms_list))
        m1 = frozenset(cut_by_index(h, s, rng.randrange(count_cuts(h, s))))
        m2 = frozenset(cut_by_index(h, s, rng.randrange(count_cuts(h, s))))
        m0 = frozenset(cut_by_index(h, t, rng.randrange(count_cuts(h, t))))
        if evaluate(ms_list[i], m1) > evaluate(ms_list[j], m2):
            continue
        if evaluate(ms_list[i], m1 | m0) > evaluate(ms_list[j], m2 | m0):
            ce = (i, j, Cut(t, m0), Cut(s, m1), Cut(s, m2))
            return CheckResult(False, ce, False, k + 1, seed)
    return CheckResult(True, None, False, budget, seed)


def check_scale_increasing(family: ScaleFamily, h: Hierarchy,
                           budget: int = 200_000, seed: int = 0) -> CheckResult:
    """Search for a violation of scale increasingness.

    For scale indices j < k, every node S and every cut pi of S: if the
    scale-j energy of {S} does not exceed that of pi, the same must hold at
    scale k.  The counterexample, when found, is (scale_j, scale_k, S, pi).
    """
    scales = family.scales
    per_node = [(n, count_cuts(h, n) - 1) for n in h.node_ids]
    space = sum(c for _, c in per_node)
    npairs = len(scales) * (len(scales) - 1) // 2
    total = space * npairs
    if total == 0:
        return CheckResult(True, None, True, 0)
    cuts: dict[int, list[frozenset[int]]] = {}
    if total <= budget:
        tested = 0
        for a in range(len(scales)):
            ea = family.model_at(scales[a])
            for b in range(a + 1, len(scales)):
                eb = family.model_at(scales[b])
                for n, _ in per_node:
                    node_a = evaluate(ea, (n,))
                    node_b = evaluate(eb, (n,))
                    for m in _member_lists(h, n, cuts):
                        if m == frozenset((n,)):
                            continue
                        tested += 1
                        if node_a <= evaluate(ea, m) and node_b > evaluate(eb, m):
                            ce = (scales[a], scales[b], n, Cut(n, m))
                            return CheckResult(False, ce, True, tested)
        return CheckResult(True, None, True, tested)

    rng = random.Random(seed)
    nodes = [n for n, c in per_node if c > 0]
    node_w = [c for _, c in per_node if c > 0]
    for k in range(budget):
        a = rng.randrange(len(scales) - 1)
        b = rng.randrange(a + 1, len(scales))
        n = rng.choices(nodes, weights=node_w)[0]
        m = frozenset(cut_by_index(h, n, rng.randrange(1, count_cuts(h, n))))
        ea, eb = family.model_at(scales[a]), family.model_at(scales[b])
        if evaluate(ea, (n,)) <= evaluate(ea, m) and \
                evaluate(eb, (n,)) > evaluate(eb, m):
            ce = (scales[a], scales[b], n, Cut(n, m))
            return CheckResult(False, ce, False, k + 1, seed)
    return CheckResult(True, None, False, budget, seed)
