import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import (balanced_binary, fixture_trees, random_costs,
                      random_sum_model, random_sup_model, random_tree,
                      affine_climbing_family)
from hxcut.energy import (CheckResult, Composition, EnergyModel,
                          PREFER_COARSER, PREFER_FINER, ScaleFamily, Side,
                          TiePolicy, as_direct, check_cross_h_increasing,
                          check_h_increasing, check_scale_increasing,
                          combine_inf, combine_linear, combine_sup,
                          compare_with_tie, evaluate)
from hxcut.hierarchy import Cut, count_cuts, enumerate_cuts, make_cut
from hxcut.optimize import minimum_cut


def test_evaluate_sum(ce1):
    h, _ = ce1
    e = EnergyModel.composed({0: 1.5, 1: 1.5}, Composition.SUM)
    assert evaluate(e, (0, 1)) == 3.0


def test_evaluate_sup_singleton():
    e = EnergyModel.composed({4: 2.25}, Composition.SUP)
    assert evaluate(e, (4,)) == 2.25


def test_evaluate_ce2_partition():
    e = EnergyModel.composed({2: 2.0, 3: 2.0, 4: 6.0}, Composition.SUM)
    assert evaluate(e, (2, 3, 4)) == 10.0


def test_evaluate_inf_and_errors():
    e = EnergyModel.composed({0: 3.0, 1: 5.0}, Composition.INF)
    assert evaluate(e, (0, 1)) == 3.0
    with pytest.raises(ValueError, match="not priced|no cost"):
        evaluate(e, (7,))
    with pytest.raises(ValueError):
        evaluate(e, ())
    with pytest.raises(ValueError):
        EnergyModel.composed({0: -1.0}, Composition.SUM)


def test_combine_linear_arithmetic():
    ones = EnergyModel.composed({0: 1.0, 1: 1.0}, Composition.SUM)
    twos = EnergyModel.composed({0: 2.0, 1: 2.0}, Composition.SUM)
    lin = combine_linear((2.0, 3.0), (ones, twos))
    assert evaluate(lin, (0, 1)) == 16.0
    same = combine_linear((1.0,), (ones,))
    assert evaluate(same, (0, 1)) == evaluate(ones, (0, 1))


def test_combine_linear_affine_is_pointwise(ce2):
    h, fam = ce2
    fit = EnergyModel.composed({n: float(n) for n in h.node_ids}, Composition.SUM)
    reg = EnergyModel.composed({n: 1.0 for n in h.node_ids}, Composition.SUM)
    lam = 2.5
    affine = combine_linear((1.0, lam), (fit, reg))
    for c in enumerate_cuts(h):
        assert evaluate(affine, c) == evaluate(fit, c) + lam * evaluate(reg, c)


def test_combine_linear_rejects_sup():
    sup = EnergyModel.composed({0: 1.0}, Composition.SUP)
    with pytest.raises(ValueError, match="as_direct"):
        combine_linear((1.0,), (sup,))
    lin = combine_linear((1.0, 1.0), (as_direct(sup), as_direct(sup)))
    assert evaluate(lin, (0,)) == 2.0
    with pytest.raises(ValueError):
        combine_linear((), ())
    with pytest.raises(ValueError):
        combine_linear((-1.0,), (as_direct(sup),))


def test_combine_inf_sup():
    a = EnergyModel.composed({0: 1.0, 1: 1.0}, Composition.SUM)
    b = EnergyModel.composed({0: 3.0, 1: 3.0}, Composition.SUM)
    assert evaluate(combine_inf([a]), (0, 1)) == evaluate(a, (0, 1))
    assert evaluate(combine_sup([a, b]), (0, 1)) == 6.0
    assert evaluate(combine_inf([a, b]), (0, 1)) == 2.0
    with pytest.raises(ValueError):
        combine_inf([])


def test_compare_with_tie(ce1):
    h, _ = ce1
    coarse = make_cut(h, 4, (4,))
    fine = make_cut(h, 4, (0, 1))
    strict = EnergyModel.composed({4: 2.0, 0: 1.5, 1: 1.5}, Composition.SUM)
    assert compare_with_tie(strict, PREFER_COARSER, coarse, fine) is Side.COARSE
    tied6 = EnergyModel.composed({4: 6.0, 0: 3.0, 1: 3.0}, Composition.SUM)
    assert compare_with_tie(tied6, PREFER_COARSER, coarse, fine) is Side.COARSE
    assert compare_with_tie(tied6, PREFER_FINER, coarse, fine) is Side.FINE
    tied0 = EnergyModel.composed({4: 0.0, 0: 0.0, 1: 0.0}, Composition.SUP)
    tied1 = EnergyModel.composed({4: 1.0, 0: 1.0, 1: 1.0}, Composition.SUP)
    t0 = TiePolicy.threshold(0.0)
    assert compare_with_tie(tied0, t0, coarse, fine) is Side.COARSE
    assert compare_with_tie(tied1, t0, coarse, fine) is Side.FINE


def test_threshold_extremes_match_plain_policies():
    as_coarser = TiePolicy.threshold(math.inf)
    as_finer = TiePolicy.threshold(-math.inf)
    for v in (0.0, 1.0, 17.5):
        assert as_coarser.keeps_node_on_tie(v) == PREFER_COARSER.keeps_node_on_tie(v)
        assert as_finer.keeps_node_on_tie(v) == PREFER_FINER.keeps_node_on_tie(v)


@pytest.mark.parametrize("seed", range(6))
def test_sum_sup_inf_are_h_increasing(seed):
    rng = random.Random(seed)
    h = random_tree(rng, rng.randint(4, 9))
    for comp in (Composition.SUM, Composition.SUP, Composition.INF):
        e = EnergyModel.composed(random_costs(rng, h), comp)
        assert check_h_increasing(e, h).ok


def test_ce1_not_h_increasing(ce1):
    h, e = ce1
    res = check_h_increasing(e, h)
    assert not res.ok and res.exhaustive
    pi0, pi1, pi2 = res.counterexample
    v1, v2 = evaluate(e, pi1), evaluate(e, pi2)
    assert v1 <= v2
    assert evaluate(e, pi1.members | pi0.members) > evaluate(e, pi2.members | pi0.members)


def test_sampling_mode_flagged():
    rng = random.Random(3)
    h = random_tree(rng, 12, 2)
    e = random_sum_model(rng, h)
    res = check_h_increasing(e, h, budget=50, seed=5)
    assert res.ok and not res.exhaustive and res.seed == 5 and res.tested <= 50


def test_scale_increasing_jw_family():
    rng = random.Random(11)
    h = random_tree(rng, 7)
    base = random_costs(rng, h)

    def gen(j):
        return EnergyModel.composed({n: j * c for n, c in base.items()},
                                    Composition.SUM)
    fam = ScaleFamily((1.0, 2.0, 3.0), gen, PREFER_COARSER)
    assert check_scale_increasing(fam, h).ok


@pytest.mark.parametrize("seed", range(4))
def test_scale_increasing_affine_family(seed):
    rng = random.Random(40 + seed)
    h = random_tree(rng, rng.randint(4, 9))
    fam = affine_climbing_family(rng, h, points=5)
    assert check_scale_increasing(fam, h, budget=5000, seed=seed).ok


def test_ce2_not_scale_increasing(ce2):
    h, fam = ce2
    res = check_scale_increasing(fam, h)
    assert not res.ok
    sj, sk, node, cut = res.counterexample
    ej, ek = fam.model_at(sj), fam.model_at(sk)
    assert evaluate(ej, (node,)) <= evaluate(ej, cut)
    assert evaluate(ek, (node,)) > evaluate(ek, cut)


def test_scale_family_validation():
    gen = lambda s: EnergyModel.composed({0: s}, Composition.SUM)
    with pytest.raises(ValueError):
        ScaleFamily((), gen, PREFER_COARSER)
    with pytest.raises(ValueError):
        ScaleFamily((2.0, 1.0), gen, PREFER_COARSER)
    fam = ScaleFamily((1.0, 2.0), gen, PREFER_COARSER)
    assert fam.model_at(1.0) is fam.model_at(1.0)  # cached


# ----------------------------------------------------------------------
# tie handling is exactly the epsilon perturbation
# ----------------------------------------------------------------------

def _positive_gap(h, model) -> float:
    values = []
    for n in h.node_ids:
        for c in enumerate_cuts(h, n):
            values.append(evaluate(model, c))
    values = sorted(set(values))
    gaps = [b - a for a, b in zip(values, values[1:])]
    return min(gaps) if gaps else 1.0


def _perturbed(model, tie, eps):
    def fn(members):
        v = evaluate(model, members)
        single = len(members) == 1
        if tie.mode == "coarser":
            extra = 0.0 if single else eps
        elif tie.mode == "finer":
            extra = eps if single else 0.0
        else:
            if v <= tie.omega0:
                extra = 0.0 if single else eps
            else:
                extra = eps if single else 0.0
        return v + extra
    return EnergyModel.direct(fn)


@pytest.mark.parametrize("tie", [PREFER_COARSER, PREFER_FINER,
                                 TiePolicy.threshold(4.0)])
@pytest.mark.parametrize("seed", range(5))
def test_epsilon_equivalence(seed, tie):
    # force ties: costs on a tiny value grid
    rng = random.Random(500 + seed)
    h = random_tree(rng, rng.randint(4, 8))
    costs = {n: rng.randint(0, 4) * 2.0 for n in h.node_ids}
    model = EnergyModel.composed(costs, Composition.SUM)
    eps = 0.5 * _positive_gap(h, model)
    pert = _perturbed(model, tie, eps)
    plain = minimum_cut(h, model, tie)
    strict = minimum_cut(h, pert, PREFER_COARSER)
    assert not strict.tie_events  # epsilon below the least gap: never ties
    assert strict.per_node_choice == plain.per_node_choice
    assert strict.cut.members == plain.cut.members


# ----------------------------------------------------------------------
# lattice structure of h-increasing families
# ----------------------------------------------------------------------

def _capped_sup_family(rng, h, k=3):
    # sup-composed energies sharing one base, floored at different caps;
    # such families satisfy the pairwise concatenation condition
    base = random_costs(rng, h)
    caps = sorted(rng.randint(0, 32) / 8.0 for _ in range(k))
    return [EnergyModel.composed({n: max(a, c) for n, c in base.items()},
                                 Composition.SUP) for a in caps]


@pytest.mark.parametrize("seed", range(4))
def test_cross_family_inf_sup_stay_h_increasing(seed):
    rng = random.Random(900 + seed)
    h = random_tree(rng, rng.randint(4, 8))
    fam = _capped_sup_family(rng, h)
    assert check_cross_h_increasing(fam, h, budget=300_000).ok
    assert check_h_increasing(combine_inf(fam), h).ok
    assert check_h_increasing(combine_sup(fam), h).ok


def test_cross_checker_rejects_scaled_sums():
    h = balanced_binary(4)
    base = {0: 0.0, 1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0, 5: 1.0, 6: 1.0}
    fam = [EnergyModel.composed({n: a * c for n, c in base.items()},
                                Composition.SUM) for a in (1.0, 2.0)]
    res = check_cross_h_increasing(fam, h)
    assert not res.ok


@pytest.mark.parametrize("seed", range(3))
def test_linear_combination_h_increasing(seed):
    rng = random.Random(700 + seed)
    h = random_tree(rng, rng.randint(4, 8))
    e1, e2 = random_sum_model(rng, h), random_sum_model(rng, h)
    lin = combine_linear((1.5, 0.25), (e1, e2))
    assert check_h_increasing(lin, h).ok


def test_add_scale_free_energy_preserves_scale_increasingness():
    for seed in range(6):
        rng = random.Random(1100 + seed)
        h = random_tree(rng, rng.randint(4, 8))
        fam = affine_climbing_family(rng, h, points=4)
        w0 = random_sum_model(rng, h)
        shifted = ScaleFamily(
            fam.scales,
            lambda s, _f=fam, _w=w0: combine_linear((1.0, 1.0), (_f.model_at(s), _w)),
            fam.tie)
        assert check_scale_increasing(shifted, h, budget=4000, seed=seed).ok


def test_inf_combination_differs_from_inf_of_minimum_cuts():
    """The minimum cut of a pointwise infimum need not be the
    refinement-infimum of the per-energy minimum cuts."""
    from hxcut.optimize import minimum_cut as mc

    def inf_of_cuts(h, a, b):
        members = set()
        for leaf in h.leaves():
            ca = next(m for m in a.members if h.is_ancestor(m, leaf))
            cb = next(m for m in b.members if h.is_ancestor(m, leaf))
            members.add(ca if h.is_ancestor(cb, ca) else cb)
        return frozenset(members)

    found = False
    for seed in range(200):
        rng = random.Random(seed)
        h = random_tree(rng, rng.randint(4, 6))
        e1, e2 = random_sum_model(rng, h), random_sum_model(rng, h)
        combined = combine_inf([e1, e2])
        got = mc(h, combined, PREFER_COARSER).cut
        c1 = mc(h, e1, PREFER_COARSER).cut
        c2 = mc(h, e2, PREFER_COARSER).cut
        if got.members != inf_of_cuts(h, c1, c2):
            found = True
            break
    assert found
