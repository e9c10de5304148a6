"""Minimum cuts, monotone pyramids and persistence of hierarchy nodes.

The core routine is a single ascending pass over the merge tree: at each
node, the energy of the node taken as one class is compared against the
concatenation of the children's optimal cuts, ties resolved by the tie
policy.  For h-increasing energies the pass returns a global minimum cut of
the subtree; for arbitrary energies it returns only the greedy value, and a
brute-force oracle over the full cut enumeration is provided to measure the
gap.

A scale family swept over its grid yields, per node, the scale of
apparition (first grid scale at which the node beats the concatenation of
its children's temporary minimum cuts) and the scale of removal (first
apparition among its strict ancestors).  Nodes persist on the half-open
interval [apparition, removal); at removal the covering ancestor claims the
support, which keeps every per-scale member set an exact tiling.  The whole
pyramid of minimum cuts of a climbing family is reconstructed from those
two bounds alone, as are the frontier saliencies.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Mapping

import numpy as np

from .energy import Composition, EnergyModel, ScaleFamily, TiePolicy, evaluate
from .hierarchy import (Cut, CutLimitExceeded, Hierarchy, count_cuts,
                        enumerate_cuts, make_cut, refinement_le, restrict)

INF = math.inf


class Choice(Enum):
    TOOK_NODE = "node"
    TOOK_SONS = "sons"


@dataclass(frozen=True)
class OptResult:
    cut: Cut
    energy: float
    per_node_choice: Mapping[int, Choice]
    tie_events: tuple[int, ...]
    eval_calls: int


def minimum_cut(h: Hierarchy, model: EnergyModel, tie: TiePolicy,
                summit: int | None = None) -> OptResult:
    """Optimal cut of a node by one ascending pass (children before parents).

    Composed models run on a pure value recurrence, one class-cost
    evaluation per node.  Direct models additionally evaluate the explicit
    member set of the children's concatenation, which is meant for
    desk-scale fixtures only.
    """
    top = summit if summit is not None else h.root
    order = h.postorder(top)
    value: dict[int, float] = {}
    choice: dict[int, Choice] = {}
    members: dict[int, frozenset[int]] | None = None if model.is_composed else {}
    ties: list[int] = []
    eval_calls = 0

    for n in order:
        kids = h.children(n)
        if not kids:
            value[n] = evaluate(model, (n,))
            eval_calls += 1
            choice[n] = Choice.TOOK_NODE
            if members is not None:
                members[n] = frozenset((n,))
            continue
        node_val = evaluate(model, (n,))
        eval_calls += 1
        if model.is_composed:
            kvals = [value[k] for k in kids]
            if model.composition is Composition.SUM:
                sons_val = sum(kvals)
            elif model.composition is Composition.SUP:
                sons_val = max(kvals)
            else:
                sons_val = min(kvals)
            sons_members = None
        else:
            sons_members = frozenset().union(*(members[k] for k in kids))
            sons_val = evaluate(model, sons_members)
            eval_calls += 1
        if node_val < sons_val:
            took = True
        elif sons_val < node_val:
            took = False
        else:
            ties.append(n)
            took = tie.keeps_node_on_tie(node_val)
        choice[n] = Choice.TOOK_NODE if took else Choice.TOOK_SONS
        value[n] = node_val if took else sons_val
        if members is not None:
            members[n] = frozenset((n,)) if took else sons_members

    out: list[int] = []
    stack = [top]
    while stack:
        n = stack.pop()
        if choice[n] is Choice.TOOK_NODE:
            out.append(n)
        else:
            stack.extend(h.children(n))
    cut = Cut(top, frozenset(out))
    return OptResult(cut, value[top], choice, tuple(ties), eval_calls)


@dataclass(frozen=True)
class OracleResult:
    cut: Cut
    energy: float
    minima_count: int
    greedy_consistent: bool


def minimum_cut_oracle(h: Hierarchy, model: EnergyModel, tie: TiePolicy,
                       summit: int | None = None,
                       limit: int = 1_000_000) -> OracleResult:
    """Ground truth by exhaustive enumeration of every cut of the summit.

    The energy is the true minimum over all cuts.  The returned cut applies
    the same lexicographic tie rule as the ascending pass, derived here from
    per-subtree enumerated minima instead of propagated values: descending
    from the summit, a node is kept exactly when its own energy beats (or
    ties per policy) the enumerated minimum over the proper cuts of its
    subtree.  When that descent does not reach the global minimum value
    (which is the signature of a non-h-increasing energy), the first global
    argmin in enumeration order is returned instead and
    `greedy_consistent` is False.
    """
    top = summit if summit is not None else h.root
    n_cuts = count_cuts(h, top)
    if n_cuts > limit:
        raise CutLimitExceeded(f"node {top} has {n_cuts} cuts, limit is {limit}")

    best_val: float | None = None
    best_members: frozenset[int] | None = None
    minima = 0
    for c in enumerate_cuts(h, top, limit=limit):
        v = evaluate(model, c.members)
        if best_val is None or v < best_val:
            best_val, best_members, minima = v, c.members, 1
        elif v == best_val:
            minima += 1

    proper_min: dict[int, float] = {}
    for node in h.postorder(top):
        if h.is_leaf(node):
            continue
        it = enumerate_cuts(h, node, limit=limit)
        next(it)  # the one-class cut {node} is not a proper cut
        proper_min[node] = min(evaluate(model, c.members) for c in it)

    picked: list[int] = []
    stack = [top]
    while stack:
        x = stack.pop()
        if h.is_leaf(x):
            picked.append(x)
            continue
        vx = evaluate(model, (x,))
        vs = proper_min[x]
        if vx < vs or (vx == vs and tie.keeps_node_on_tie(vx)):
            picked.append(x)
        else:
            stack.extend(h.children(x))
    greedy = frozenset(picked)
    if evaluate(model, greedy) == best_val:
        return OracleResult(Cut(top, greedy), best_val, minima, True)
    return OracleResult(Cut(top, best_members), best_val, minima, False)


# ----------------------------------------------------------------------
# pyramids of minimum cuts
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Pyramid:
    scales: tuple[float, ...]
    cuts: tuple[Cut, ...]
    energies: tuple[float, ...]
    monotone: bool
    violations: tuple[int, ...]  # indices j with cuts[j] not refined by cuts[j+1]


def pyramid(h: Hierarchy, family: ScaleFamily) -> Pyramid:
    """Per-scale minimum cut of the root, with a refinement-order audit.

    For a climbing family the cuts increase with the scale; any violation
    of that order is reported, never silently accepted.
    """
    cuts: list[Cut] = []
    energies: list[float] = []
    for s in family.scales:
        res = minimum_cut(h, family.model_at(s), family.tie)
        cuts.append(res.cut)
        energies.append(res.energy)
    bad = tuple(j for j in range(len(cuts) - 1)
                if not refinement_le(h, cuts[j], cuts[j + 1]))
    return Pyramid(family.scales, tuple(cuts), tuple(energies), not bad, bad)


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PersistenceTable:
    """Scale of apparition and of removal per node.

    apparition is +inf for nodes that never become a temporary minimum on
    the grid; removal is +inf for nodes no strict ancestor ever covers.
    A node is persistent iff apparition < removal, and then belongs to the
    minimum cuts of the half-open scale interval [apparition, removal).
    """

    scales: tuple[float, ...]
    lambda_plus: Mapping[int, float]
    lambda_minus: Mapping[int, float]

    def persistent(self, node: int) -> bool:
        return self.lambda_plus[node] < self.lambda_minus[node]

    def to_csv(self) -> str:
        def fmt(v: float) -> str:
            return "inf" if math.isinf(v) else repr(v)
        lines = ["node_id,lambda_plus,lambda_minus,persistent"]
        for n in sorted(self.lambda_plus):
            lines.append(f"{n},{fmt(self.lambda_plus[n])},"
                         f"{fmt(self.lambda_minus[n])},"
                         f"{int(self.persistent(n))}")
        return "\n".join(lines) + "\n"


def _sweep(h: Hierarchy, family: ScaleFamily) -> list[OptResult]:
    workers = 1
    env = os.environ.get("HXCUT_THREADS", "")
    if env.strip():
        workers = max(1, int(env))
    runs = [(s, family.model_at(s)) for s in family.scales]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda sm: minimum_cut(h, sm[1], family.tie), runs))
    return [minimum_cut(h, m, family.tie) for _, m in runs]


def persistence(h: Hierarchy, family: ScaleFamily) -> PersistenceTable:
    """Two-pass computation of the per-node persistence bounds.

    Ascending pass: sweep the grid and record, per node, the first scale at
    which the node is chosen over the concatenation of its children's
    temporary minimum cuts (leaves are their own minimum cut from the first
    scale on).  Descending pass: a node is removed at the earliest
    apparition among its strict ancestors.
    """
    lp: dict[int, float] = {}
    for scale, res in zip(family.scales, _sweep(h, family)):
        for node, ch in res.per_node_choice.items():
            if ch is Choice.TOOK_NODE and node not in lp:
                lp[node] = scale
    for n in h.node_ids:
        lp.setdefault(n, INF)

    lm: dict[int, float] = {h.root: INF}
    for n in reversed(h.postorder()):
        for c in h.children(n):
            lm[c] = min(lm[n], lp[n])
    return PersistenceTable(family.scales, lp, lm)


def cut_at_scale(table: PersistenceTable, h: Hierarchy, scale: float) -> Cut:
    """Members are the nodes whose persistence interval contains `scale`."""
    lo, hi = table.scales[0], table.scales[-1]
    if not lo <= scale <= hi:
        raise ValueError(f"scale {scale} outside the grid [{lo}, {hi}]")
    members = [n for n in h.node_ids
               if table.lambda_plus[n] <= scale < table.lambda_minus[n]]
    return make_cut(h, h.root, members)


# ----------------------------------------------------------------------
# saliency
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SaliencyTable:
    """Per leaf pair, the first grid scale at which the pair is merged.

    +inf when the two leaves never share a class of a minimum cut on the
    grid.  For grid-backed hierarchies only 4-adjacent leaf pairs are
    tabulated; abstract hierarchies get the full leaf-pair table.
    """

    pair_weights: Mapping[tuple[int, int], float]
    merge_scale: Mapping[int, float]

    def weight(self, a: int, b: int) -> float:
        return self.pair_weights[(a, b) if a < b else (b, a)]

    def max_finite(self) -> float:
        finite = [w for w in self.pair_weights.values() if math.isfinite(w)]
        return max(finite) if finite else 0.0


def _adjacent_leaf_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = a != b
        for x, y in zip(a[diff].ravel(), b[diff].ravel()):
            x, y = int(x), int(y)
            pairs.add((x, y) if x < y else (y, x))
    return pairs


def saliency(table: PersistenceTable, h: Hierarchy) -> SaliencyTable:
    """Frontier weights derived from the persistence bounds alone.

    Two leaves merge at the first scale at which some common ancestor is a
    class of the minimum cut, i.e. the least apparition scale among the
    persistent ancestors of their lowest common ancestor.
    """
    best: dict[int, float] = {}
    for n in reversed(h.postorder()):
        own = table.lambda_plus[n] if table.persistent(n) else INF
        p = h.parent(n)
        best[n] = own if p is None else min(own, best[p])
    if h.is_grid_backed:
        pairs = _adjacent_leaf_pairs(h.leaf_labels)
    else:
        pairs = {(a, b) for a, b in combinations(sorted(h.leaves()), 2)}
    weights = {(a, b): best[h.lca(a, b)] for a, b in pairs}
    return SaliencyTable(weights, best)


# ----------------------------------------------------------------------
# top-down consistency
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TopDownResult:
    ok: bool
    node: int | None

    def __bool__(self) -> bool:
        return self.ok


def check_top_down(h: Hierarchy, model: EnergyModel, tie: TiePolicy) -> TopDownResult:
    """Verify that the root optimum restricts to the subtree optimum.

    Every node met by the root's minimum cut (no single member strictly
    contains it) must see the restriction of that cut equal its own
    subtree minimum cut.  Returns the first violating node, if any.
    """
    root_cut = minimum_cut(h, model, tie).cut
    for s in h.node_ids:
        if any(m != s and h.is_ancestor(m, s) for m in root_cut.members):
            continue  # not met: s is strictly inside one class
        r = restrict(h, root_cut, s)
        sub = minimum_cut(h, model, tie, summit=s)
        if r.members != sub.cut.members:
            return TopDownResult(False, s)
    return TopDownResult(True, None)
