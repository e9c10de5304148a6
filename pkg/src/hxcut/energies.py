"""Concrete energies: piecewise-constant fits, coding costs, range and
lasso constraints, boundary concavity, and two small reference fixtures.

Additive energies price each class independently and extend by summation;
they combine a goodness-of-fit term with a regularization term weighted by
an increasing scale, which makes the per-scale minimum cuts climb towards
the root.  The constraint energies (range, lasso) price classes 0 or 1 and
extend by supremum, with a zero-threshold tie rule: a parent tied with its
sons is kept exactly when the tied energy is 0, so the optimum keeps the
largest classes that satisfy the constraint and splits everything else.

The two fixtures encode hierarchies on the unit square (realized as a 2x2
grid with half-unit pixel edges) whose energies break, respectively,
hierarchical increasingness and scale increasingness; they pin down the
exact values used across the test-suite.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .energy import (Composition, EnergyModel, PREFER_COARSER, ScaleFamily,
                     TiePolicy, combine_linear, evaluate)
from .hierarchy import Cut, Hierarchy
from .imaging import (ImagePlane, StatsTable, boundary_length,
                      chrominance_module, compute_stats, load_image,
                      luminance_sum_plane, region_concavity)

INF = math.inf

# bits to encode one class mean, fixed by the coding model
MEAN_CODING_BITS = 24.0


class BudgetError(RuntimeError):
    """No cut of the pyramid satisfies the requested budget."""


# ----------------------------------------------------------------------
# additive energies
# ----------------------------------------------------------------------

def fit_energy(stats: StatsTable, scale: float = 1.0) -> EnergyModel:
    """Per-class sum of squared deviations from the class mean."""
    costs = {n: scale * s.fit_residual() for n, s in stats.per_node.items()}
    return EnergyModel.composed(costs, Composition.SUM, name="fit")


def boundary_energy(stats: StatsTable) -> EnergyModel:
    """Per-class boundary length (border edges at half weight)."""
    costs = {n: s.boundary for n, s in stats.per_node.items()}
    return EnergyModel.composed(costs, Composition.SUM, name="boundary")


def mumford_shah(stats: StatsTable, lam: float) -> EnergyModel:
    """Piecewise-constant fit plus lam times the boundary length."""
    return combine_linear((1.0, float(lam)), (fit_energy(stats), boundary_energy(stats)),
                          name=f"mumford-shah({lam})")


@dataclass(frozen=True, eq=False)
class AffineEnergySpec:
    """Fit term, regularizer, and the increasing scale weights tying them."""

    fit: EnergyModel
    regularizer: EnergyModel
    lambdas: tuple[float, ...]

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ValueError("scale weights must be strictly increasing")
        object.__setattr__(self, "lambdas", lams)

    def model_at(self, lam: float) -> EnergyModel:
        return combine_linear((1.0, float(lam)), (self.fit, self.regularizer))

    def family(self, tie: TiePolicy = PREFER_COARSER) -> ScaleFamily:
        return ScaleFamily(self.lambdas, self.model_at, tie)


def mumford_shah_family(stats: StatsTable, lambdas: Sequence[float],
                        tie: TiePolicy = PREFER_COARSER) -> ScaleFamily:
    return AffineEnergySpec(fit_energy(stats), boundary_energy(stats),
                            tuple(lambdas)).family(tie)


def coding_cost(h: Hierarchy, image: ImagePlane, c: float = 2.0,
                channel: str = "luminance") -> tuple[EnergyModel, EnergyModel]:
    """Fit and coding-cost parts of the thumbnail compression energy.

    The regularizer prices a class at 24 bits for its mean plus c/2 per
    boundary edge unit.  The fit is the squared deviation of the selected
    channel from the class mean: the luminance (r+g+b)/3, computed exactly
    on the integer plane r+g+b and rescaled by 1/9, or the 8-bit quantized
    chrominance module.
    """
    if channel == "luminance":
        plane = luminance_sum_plane(image)
        scale = 1.0 / 9.0
    elif channel == "chrominance":
        plane = chrominance_module(image)
        scale = 1.0
    else:
        raise ValueError(f"unknown channel {channel!r}")
    stats = compute_stats(h, plane)
    fit = fit_energy(stats, scale=scale)
    reg_costs = {n: MEAN_CODING_BITS + 0.5 * c * s.boundary
                 for n, s in stats.per_node.items()}
    reg = EnergyModel.composed(reg_costs, Composition.SUM, name="coding-cost")
    return fit, reg


@dataclass(frozen=True)
class LagrangianChoice:
    index: int
    scale: float
    cut: Cut
    regularizer_value: float


def lagrangian_select(pyr, regularizer: EnergyModel, budget: float) -> LagrangianChoice:
    """Smallest pyramid scale whose cut meets the regularizer budget.

    Along a climbing affine pyramid the regularizer term never increases,
    so this is the cut with the greatest regularizer value not exceeding
    the budget.  A budget below the coarsest cut's value is unattainable.
    """
    for j, cut in enumerate(pyr.cuts):
        v = evaluate(regularizer, cut)
        if v <= budget:
            return LagrangianChoice(j, pyr.scales[j], cut, v)
    raise BudgetError(f"no pyramid cut meets the budget {budget}")


def compression_budget(pixel_count: int, rate: float) -> float:
    """Bit budget for a target compression rate on a 24-bit image."""
    if rate <= 0:
        raise ValueError("compression rate must be positive")
    return MEAN_CODING_BITS * pixel_count / rate


# ----------------------------------------------------------------------
# supremum-composed constraint energies
# ----------------------------------------------------------------------

def range_constraint(stats: StatsTable, c: float) -> EnergyModel:
    """0/1 energy: a class costs 0 iff its value amplitude is at most c."""
    costs = {n: 0.0 if s.value_range() <= c else 1.0
             for n, s in stats.per_node.items()}
    return EnergyModel.composed(costs, Composition.SUP, name=f"range({c})")


def range_family(stats: StatsTable, c_grid: Sequence[float]) -> ScaleFamily:
    """Family over an increasing grid of amplitude bounds.

    Its pyramid is always monotone: amplitudes grow along root paths, so
    the maximal class within bound at a pixel only climbs as the bound
    grows.  Note that the family can still fail the literal scale
    definition quantified over all cuts, because two tiling classes of
    small amplitude may union to a class of large amplitude.
    """
    return ScaleFamily(tuple(c_grid), lambda c: range_constraint(stats, c),
                       TiePolicy.threshold(0.0))


def lasso_energy(h: Hierarchy, mask: np.ndarray) -> EnergyModel:
    """0/1 energy: a class costs 0 iff its support lies inside the mask."""
    if h.leaf_labels is None:
        raise ValueError("the lasso needs a grid-backed hierarchy")
    m = np.asarray(mask, dtype=bool)
    if m.shape != h.leaf_labels.shape:
        raise ValueError(f"mask shape {m.shape} does not match grid "
                         f"{h.leaf_labels.shape}")
    vals, inv = np.unique(h.leaf_labels, return_inverse=True)
    inv = inv.ravel()
    inside_px = np.bincount(inv, weights=m.ravel(), minlength=len(vals))
    total_px = np.bincount(inv, minlength=len(vals))
    leaf_inside = {int(v): inside_px[i] == total_px[i] for i, v in enumerate(vals)}
    inside: dict[int, bool] = {}
    for n in h.postorder():
        ch = h.children(n)
        if not ch:
            inside[n] = leaf_inside[n]
        else:
            inside[n] = all(inside[k] for k in ch)
    costs = {n: 0.0 if inside[n] else 1.0 for n in h.node_ids}
    return EnergyModel.composed(costs, Composition.SUP, name="lasso")


def lasso_family(h: Hierarchy, masks: Sequence[np.ndarray]) -> ScaleFamily:
    """Climbing family over an increasing sequence of lasso masks."""
    ms = [np.asarray(m, dtype=bool) for m in masks]
    for a, b in zip(ms, ms[1:]):
        if not np.all(b[a]):
            raise ValueError("lasso masks must be increasing")
    models = [lasso_energy(h, m) for m in ms]
    scales = tuple(float(i) for i in range(len(ms)))
    return ScaleFamily(scales, lambda s: models[int(s)], TiePolicy.threshold(0.0))


# ----------------------------------------------------------------------
# boundary concavity
# ----------------------------------------------------------------------

def concavity_energy(h: Hierarchy) -> EnergyModel:
    """Per-class concavity index, additive over classes.

    Digitally convex classes cost 1; each concave right-angle turn of the
    boundary adds a quarter.  Classes that are not simply connected are
    priced +inf with a warning.
    """
    if h.leaf_labels is None:
        raise ValueError("concavity needs a grid-backed hierarchy")
    labels = h.leaf_labels
    costs: dict[int, float] = {}
    for n in h.node_ids:
        mask = np.isin(labels, tuple(h.leaf_set(n)))
        val = region_concavity(mask)
        if val is None:
            warnings.warn(f"class {n} is not simply connected; priced +inf",
                          stacklevel=2)
            costs[n] = INF
        else:
            costs[n] = val
    return EnergyModel.composed(costs, Composition.SUM, name="concavity")


# ----------------------------------------------------------------------
# reference fixtures
# ----------------------------------------------------------------------

def _quartered_square() -> Hierarchy:
    # unit square as a 2x2 grid: leaves are quarters, internal nodes the
    # left/right halves, pixel edges measure half a unit each
    labels = np.array([[0, 2], [1, 3]])
    children = {4: (0, 1), 5: (2, 3), 6: (4, 5)}
    level = {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0, 4: 1.0, 5: 1.0, 6: 2.0}
    return Hierarchy(children, 6, width=2, height=2,
                     leaf_labels=labels, level_index=level)


def perimeter_lengths(h: Hierarchy) -> dict[int, float]:
    """Per-node boundary length in grid units scaled so the root support
    is the unit square (border edges at half weight)."""
    side = max(h.width, h.height)
    out: dict[int, float] = {}
    for n in h.node_ids:
        mask = np.isin(h.leaf_labels, tuple(h.leaf_set(n))).astype(np.int64)
        out[n] = boundary_length(mask, 1) / side
    return out


CE1_KINK = 5.0


def fixture_ce1() -> tuple[Hierarchy, EnergyModel]:
    """Quartered unit square with a kinked frontier-length energy.

    The energy of a partial partition is the total boundary length of its
    classes, minus 5 once that total exceeds 5.  The kink makes the energy
    non-h-increasing: the ascending pass settles for the halves while the
    four quarters together cost only 1.
    """
    h = _quartered_square()
    lengths = perimeter_lengths(h)

    def fn(members: frozenset[int], _len=lengths) -> float:
        total = sum(_len[m] for m in members)
        return total if total <= CE1_KINK else total - CE1_KINK

    return h, EnergyModel.direct(fn, name="ce1")


CE2_SWITCH = 1.5
CE2_LOW = {0: 3.0, 1: 3.0, 2: 2.0, 3: 2.0, 4: 6.0, 5: 6.0, 6: 19.0}
CE2_HIGH = {0: 2.0, 1: 2.0, 2: 3.0, 3: 3.0, 4: 6.0, 5: 6.0, 6: 19.0}


def fixture_ce2() -> tuple[Hierarchy, ScaleFamily]:
    """Two-scale additive family whose optima flip sides across the grid.

    Below the switch the right leaves are cheap, above it the left ones;
    each scale taken alone is h-increasing, but the two minimum cuts are
    incomparable, so the family is not scale increasing and the pyramid
    cannot be monotone.
    """
    h = _quartered_square()

    def gen(scale: float) -> EnergyModel:
        table = CE2_LOW if scale <= CE2_SWITCH else CE2_HIGH
        return EnergyModel.composed(table, Composition.SUM, name=f"ce2@{scale}")

    return h, ScaleFamily((1.0, 2.0), gen, PREFER_COARSER)


def direct_table(h: Hierarchy, model: EnergyModel) -> dict[str, float]:
    """Tabulate a model on every antichain of the tree, keyed by the
    comma-joined sorted member ids.  Desk-scale fixtures only."""
    def antichains(node: int) -> list[frozenset[int]]:
        ch = h.children(node)
        out = [frozenset(), frozenset((node,))]
        if ch:
            parts = [antichains(c) for c in ch]
            acc = [frozenset()]
            for p in parts:
                acc = [a | q for a in acc for q in p]
            out.extend(a for a in acc if a and a != frozenset((node,)))
        return out

    table: dict[str, float] = {}
    for mem in antichains(h.root):
        if mem:
            key = ",".join(str(i) for i in sorted(mem))
            table[key] = evaluate(model, mem)
    return table


# ----------------------------------------------------------------------
# configuration schema
# ----------------------------------------------------------------------

def parse_tie(obj) -> TiePolicy:
    if obj is None or obj == "coarser":
        return PREFER_COARSER
    if obj == "finer":
        return TiePolicy("finer")
    if isinstance(obj, Mapping) and "threshold" in obj:
        return TiePolicy.threshold(float(obj["threshold"]))
    if isinstance(obj, (list, tuple)) and len(obj) == 2 and obj[0] == "threshold":
        return TiePolicy.threshold(float(obj[1]))
    raise ValueError(f"unknown tie policy {obj!r}")


def _load_mask(path: str, base_dir: str | None) -> np.ndarray:
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    return load_image(path).data > 0


def from_config(cfg: Mapping, h: Hierarchy | None = None,
                image: ImagePlane | None = None,
                base_dir: str | None = None):
    """Build an energy model or a scale family from its JSON object form.

    Returns an EnergyModel for single-scale types and a ScaleFamily when
    the config carries a grid (`lambdas`, `c_grid`, `masks`, `scales`).
    """
    kind = cfg["type"]

    def need_grid():
        if h is None:
            raise ValueError(f"energy type {kind!r} needs a hierarchy")
        if kind in ("mumford-shah", "coding-cost") and image is None:
            raise ValueError(f"energy type {kind!r} needs an image")

    if kind == "table":
        if "per_partition" in cfg:
            table = {k: float(v) for k, v in cfg["per_partition"].items()}

            def fn(members: frozenset[int], _t=table) -> float:
                key = ",".join(str(i) for i in sorted(members))
                try:
                    return _t[key]
                except KeyError:
                    raise ValueError(f"partition {key} not priced") from None
            return EnergyModel.direct(fn, name=cfg.get("name", "table"))
        costs = {int(k): float(v) for k, v in cfg["per_class"].items()}
        comp = Composition(cfg.get("composition", "sum"))
        return EnergyModel.composed(costs, comp, name=cfg.get("name", "table"))

    if kind == "table-family":
        comp = Composition(cfg.get("composition", "sum"))
        scales = tuple(float(s) for s in cfg["scales"])
        tables = {float(k): {int(i): float(v) for i, v in t.items()}
                  for k, t in cfg["tables"].items()}

        def gen(s: float, _t=tables, _c=comp) -> EnergyModel:
            return EnergyModel.composed(_t[s], _c)
        return ScaleFamily(scales, gen, parse_tie(cfg.get("tie")))

    if kind == "mumford-shah":
        need_grid()
        stats = compute_stats(h, image)
        if "lambdas" in cfg:
            return mumford_shah_family(stats, cfg["lambdas"],
                                       parse_tie(cfg.get("tie")))
        return mumford_shah(stats, float(cfg["lambda"]))

    if kind == "coding-cost":
        need_grid()
        fit, reg = coding_cost(h, image, c=float(cfg.get("c", 2.0)),
                               channel=cfg.get("channel", "luminance"))
        if "lambdas" in cfg:
            return AffineEnergySpec(fit, reg, tuple(cfg["lambdas"])).family(
                parse_tie(cfg.get("tie")))
        lam = float(cfg["lambda"])
        return AffineEnergySpec(fit, reg, (lam,)).model_at(lam)

    if kind == "range":
        need_grid()
        if image is None:
            raise ValueError("range energy needs an image")
        stats = compute_stats(h, image)
        if "c_grid" in cfg:
            return range_family(stats, cfg["c_grid"])
        return range_constraint(stats, float(cfg["c"]))

    if kind == "lasso":
        need_grid()
        if "masks" in cfg:
            return lasso_family(h, [_load_mask(p, base_dir) for p in cfg["masks"]])
        return lasso_energy(h, _load_mask(cfg["mask"], base_dir))

    if kind == "concavity":
        need_grid()
        return concavity_energy(h)

    raise ValueError(f"unknown energy type {kind!r}")
