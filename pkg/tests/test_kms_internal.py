"""Internal dynamical conditions over the sampled automorphism group."""
import math

import numpy as np
import pytest

from toposkms.errors import DomainMismatch, NotFaithful
from toposkms.kms_internal import (
    SampledGroup,
    breve_measure,
    breve_spectrum,
    breve_truth_thresholds,
    check_internal_C1,
    check_internal_C2,
    faithful_automorphisms,
    fixed_point_subgroup,
    is_faithful_action,
    orbits,
    same_action,
)
from toposkms.kms_external import TruthObject, check_C1
from toposkms.presheaf import daseinisation_subobject

from conftest import GRID5

TWO_PI = 2 * math.pi


def test_group_samples_must_contain_zero(c3_gibbs):
    with pytest.raises(DomainMismatch):
        SampledGroup(c3_gibbs.flow, [0.5, 1.0])


def test_strip_offsets_default_to_the_full_strip(c3_gibbs):
    group = SampledGroup(c3_gibbs.flow, [0.0, 1.0], validate=False)
    assert group.gammas == [0.0, 1.0]  # beta = 1
    pts = group.strip_samples()
    assert complex(1.0, 1.0) in pts and complex(0.0, 0.0) in pts
    assert len(pts) == 4


def test_samples_must_close_under_the_group_law(c3_gibbs):
    with pytest.raises(DomainMismatch):
        SampledGroup(c3_gibbs.flow, [0.0, 1.0])


def test_strip_offsets_validated(c3_gibbs):
    with pytest.raises(DomainMismatch):
        SampledGroup(c3_gibbs.flow, [0.0], strip_gammas=[0.5, 1.0])
    with pytest.raises(DomainMismatch):
        SampledGroup(c3_gibbs.flow, [0.0], strip_gammas=[0.0, 1.5])
    group = SampledGroup(c3_gibbs.flow, [0.0],
                         strip_gammas=[0.0, 0.25, 1.0])
    assert group.gammas == [0.0, 0.25, 1.0]


def test_cyclic_group_closes(c3_gibbs):
    group = SampledGroup.cyclic(c3_gibbs.flow, 5, TWO_PI)
    assert len(group.samples) == 5
    assert group.samples[0] == 0.0
    assert abs(group.samples[-1] - 4 * TWO_PI / 5) < 1e-12


def test_orbit_decomposition(c3_gibbs):
    # the diagonal context is fixed by every sample: one orbit
    dec = orbits(c3_gibbs.group, c3_gibbs.vdiag)
    assert len(dec.orbits) == 1
    assert dec.representatives == [0.0]
    # the example context visits four distinct images
    dec = orbits(c3_gibbs.group, c3_gibbs.vex)
    assert len(dec.orbits) == 4
    assert sorted(dec.orbits[0]) == [0.0, TWO_PI]


def test_fixed_point_subgroup(c3_gibbs):
    fixed = fixed_point_subgroup(c3_gibbs.group, c3_gibbs.poset.contexts)
    assert fixed == [0.0, TWO_PI]


def test_faithfulness_classification(c3_gibbs):
    rep = faithful_automorphisms(c3_gibbs.group, c3_gibbs.vex)
    assert rep.fixes_all == [0.0, TWO_PI]
    assert len(rep.faithful) == 3
    assert rep.middle == []
    # no sample sits between "fixes everything" and "moves freely", so
    # the action splits cleanly on both contexts
    assert is_faithful_action(c3_gibbs.group, c3_gibbs.vex)
    rep_d = faithful_automorphisms(c3_gibbs.group, c3_gibbs.vdiag)
    assert rep_d.faithful == []
    assert rep_d.fixes_all == list(GRID5)


def test_same_action_ignores_phase():
    u = np.diag([1.0, 1.0, 1.0])
    assert same_action(u, np.exp(0.7j) * u)
    assert not same_action(u, np.diag([1.0, 1.0, -1.0]))


def test_internal_c1_passes_for_gibbs(c3_gibbs):
    rep = check_internal_C1(c3_gibbs.state, list(c3_gibbs.subs.values()),
                            c3_gibbs.group)
    assert rep.max_spread <= 1e-9
    # every entry records the measure at each group sample
    for entry in rep.entries:
        assert set(entry.values) == set(GRID5)


def test_internal_c1_fails_for_pure(c3_pure):
    rep = check_internal_C1(c3_pure.state, [c3_pure.subs["S1"]],
                            c3_pure.group)
    assert rep.max_spread >= 1e-1
    assert abs(rep.max_spread - 1.0) < 1e-12  # cos^2 sweeps from 1 to 0
    worst = max(rep.entries, key=lambda e: e.spread)
    assert worst.subobject == "S1"
    assert worst.context_id


def test_daseinised_rank_one_families_coarsen_to_identity(c3_pure):
    # e_1 and e_2 are not below the rank-one block of the example context,
    # so their approximations collapse to the identity on its whole orbit
    # and the induced measures cannot distinguish the samples of any state
    for k in (0, 1):
        e = np.zeros((3, 3))
        e[k, k] = 1.0
        sub = daseinisation_subobject(e, c3_pure.presheaf, f"D{k}")
        assert sub.component("Vex") == frozenset({0, 1})
        rep = check_internal_C1(c3_pure.state, [sub], c3_pure.group)
        assert rep.max_spread <= 1e-12
    # e_3 sits below the rank-two complement, so its approximation stays
    # proper and does feel the non-invariance of the pure state
    e3 = np.diag([0.0, 0.0, 1.0])
    sub3 = daseinisation_subobject(e3, c3_pure.presheaf, "D2")
    assert sub3.component("Vex") == frozenset({1})
    rep3 = check_internal_C1(c3_pure.state, [sub3], c3_pure.group)
    assert rep3.max_spread >= 1e-1


def test_internal_c2_strip_for_gibbs(c3_gibbs):
    rep = check_internal_C2(c3_gibbs.state, c3_gibbs.group,
                            c3_gibbs.subs["S1"], c3_gibbs.subs["S2"])
    assert rep.mode == "strip"
    assert rep.gamma == 1.0  # defaults to beta
    assert rep.max_residual <= 1e-8
    assert rep.passed(1e-8)
    # entries carry both sides per (context, sample)
    assert {e.context_id for e in rep.entries} <= set(
        c3_gibbs.subs["S1"].domain)


def test_internal_c2_strip_needs_faithful_state(c3_pure):
    with pytest.raises(NotFaithful):
        check_internal_C2(c3_pure.state, c3_pure.group,
                          c3_pure.subs["S1"], c3_pure.subs["S2"])


def test_internal_c2_degenerates_to_constancy(c3_gibbs, c3_pure):
    # at gamma = 0 both legs of the diagram reduce to the same meet, so
    # the check collapses onto the first condition and shares its verdict
    good = check_internal_C2(c3_gibbs.state, c3_gibbs.group,
                             c3_gibbs.subs["S1"], c3_gibbs.subs["S2"],
                             gamma=0.0)
    assert good.mode == "constancy"
    assert good.constancy is not None
    c1 = check_internal_C1(c3_gibbs.state,
                           [c3_gibbs.subs["S1"], c3_gibbs.subs["S2"]],
                           c3_gibbs.group)
    assert good.passed(1e-9) == (c1.max_spread <= 1e-9) == True

    bad = check_internal_C2(c3_pure.state, c3_pure.group,
                            c3_pure.subs["S1"], c3_pure.subs["S2"],
                            gamma=0.0)
    c1_bad = check_internal_C1(c3_pure.state,
                               [c3_pure.subs["S1"], c3_pure.subs["S2"]],
                               c3_pure.group)
    assert bad.passed(1e-9) == (c1_bad.max_spread <= 1e-9) == False


def test_external_c1_implies_internal_c1(c3_gibbs, c3_pure):
    # on the closed grid, constancy along the orbit is weaker than the
    # external condition: whenever the latter holds the former must too
    for model in (c3_gibbs, c3_pure):
        ext = check_C1(model.state, model.flow, [model.subs["S1"]],
                       list(GRID5))
        internal = check_internal_C1(model.state, [model.subs["S1"]],
                                     model.group)
        if ext.max_residual <= 1e-9:
            assert internal.max_spread <= 1e-9


def test_breve_measure_is_well_defined_on_orbits(c3_gibbs, c3_pure):
    # samples inducing the same moved context must agree on the value;
    # that holds for any state, invariant or not
    good = breve_measure(c3_gibbs.state, c3_gibbs.subs["S1"],
                         c3_gibbs.group, "Vex")
    assert good.orbit_spread <= 1e-12
    bad = breve_measure(c3_pure.state, c3_pure.subs["S1"],
                        c3_pure.group, "Vex")
    assert bad.orbit_spread <= 1e-12
    # the values are indexed by orbit representatives; only the invariant
    # state assigns them a common value
    assert set(bad.values) == {0.0, math.pi / 2, math.pi, 3 * math.pi / 2}
    assert max(good.values.values()) - min(good.values.values()) <= 1e-12
    assert max(bad.values.values()) - min(bad.values.values()) >= 1e-1


def test_breve_spectrum_fibers(c3_gibbs):
    b = breve_spectrum(c3_gibbs.group, c3_gibbs.poset, "Vex")
    assert b.context_id == "Vex"
    assert set(b.fibers) == {0.0, math.pi / 2, math.pi, 3 * math.pi / 2}
    # each fiber records the two-point spectrum of the moved context
    assert all(f == 2 for f in b.fibers.values())


def test_breve_truth_thresholds(c3_gibbs):
    truth = TruthObject(c3_gibbs.state, c3_gibbs.presheaf)
    b = breve_truth_thresholds(truth, c3_gibbs.subs["S1"],
                               c3_gibbs.group, "Vex")
    vals = list(b.fibers.values())
    assert max(vals) - min(vals) <= 1e-12
