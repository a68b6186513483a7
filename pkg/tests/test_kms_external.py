"""External dynamical conditions, truth objects, and flow equivalence."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toposkms.errors import AmbiguousMatch, NotFaithful
from toposkms.kms_external import (
    AutomorphismFlow,
    StageVR,
    TruthObject,
    check_C1,
    check_C2,
    check_expectation_kms,
    check_truth_value_invariance,
    expectation_value,
    gibbs_state,
    mu_equivalent,
    strong_mu_equivalence,
    truth_value,
    twist,
)
from toposkms.numerics import frob, is_unitary

from conftest import GIBBS_WEIGHTS, GRID5, build_c3


def test_gibbs_weights_frozen():
    state = gibbs_state(np.diag([0.0, 1.0, 2.0]), 1.0)
    diag = np.diag(state.matrix).real
    assert np.allclose(sorted(diag, reverse=True), GIBBS_WEIGHTS, atol=1e-15)
    assert abs(np.trace(state.matrix) - 1.0) < 1e-12


def test_flow_is_a_one_parameter_group():
    flow = AutomorphismFlow(np.diag([0.0, 1.0, 2.0]))
    assert frob(flow.unitary(0.0) - np.eye(3)) < 1e-14
    u = flow.unitary(0.4) @ flow.unitary(1.1)
    assert frob(u - flow.unitary(1.5)) < 1e-12
    assert is_unitary(flow.unitary(-2.3))


@given(t=st.floats(-5, 5), s=st.floats(-5, 5))
def test_flow_group_law_on_operators(t, s):
    flow = AutomorphismFlow(np.diag([0.0, 1.0, 2.0]))
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    twice = flow.apply(t, flow.apply(s, a))
    assert frob(twice - flow.apply(t + s, a)) < 1e-10


def test_flow_conventions_share_the_real_axis():
    # the convention label steers how downstream checks read the strip;
    # the real-time action itself is the same unitary conjugation
    h = np.diag([0.0, 1.0, 2.0])
    fwd = AutomorphismFlow(h, convention="hamiltonian")
    rev = AutomorphismFlow(h, convention="modular")
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert frob(fwd.apply(0.7, a) - rev.apply(0.7, a)) < 1e-12
    assert fwd.convention == "hamiltonian"
    assert rev.convention == "modular"
    with pytest.raises(Exception):
        AutomorphismFlow(h, convention="unknown")


def test_complex_continuation_matches_boundary():
    flow = AutomorphismFlow(np.diag([0.0, 1.0, 2.0]), beta=1.0)
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert frob(flow.apply_complex(0.7 + 0j, a) - flow.apply(0.7, a)) < 1e-12
    # analytic continuation to i*beta conjugates by the Boltzmann factor
    shifted = flow.apply_complex(1j, a)
    boltz = np.diag(np.exp([0.0, -1.0, -2.0]))
    expected = boltz @ a @ np.linalg.inv(boltz)
    assert frob(shifted - expected) < 1e-12


def test_c1_passes_for_gibbs(c3_gibbs):
    rep = check_C1(c3_gibbs.state, c3_gibbs.flow,
                   list(c3_gibbs.subs.values()), c3_gibbs.t_grid)
    assert rep.max_residual <= 1e-9
    assert rep.convention == "hamiltonian"
    # entries cover every sub-object, grid point, and orbit context
    assert len(rep.entries) == 3 * len(c3_gibbs.t_grid) * 4


def test_c1_consistency_gap_small_on_closed_grid(c3_gibbs):
    rep = check_C1(c3_gibbs.state, c3_gibbs.flow,
                   [c3_gibbs.subs["S1"]], list(GRID5))
    assert rep.max_residual <= 1e-9
    # poset lookup and direct transport agree where both are available
    assert rep.consistency_gap <= 1e-9


def test_c1_fails_for_pure_superposition(c3_pure):
    rep = check_C1(c3_pure.state, c3_pure.flow,
                   [c3_pure.subs["S1"]], c3_pure.t_grid)
    assert rep.max_residual >= 1e-2
    worst = max(rep.entries, key=lambda e: abs(e.lhs - e.rhs))
    assert worst.subobject == "S1"
    assert worst.context_id
    assert worst.t in c3_pure.t_grid


def test_c2_boundary_for_gibbs(c3_gibbs):
    subs = c3_gibbs.subs
    names = ["S1", "S2", "S12"]
    for a in names:
        for b in names:
            if a == b:
                continue
            rep = check_C2(c3_gibbs.state, c3_gibbs.flow, subs[a], subs[b],
                           "Vex", [-1.0, 0.0, 0.5, 1.0])
            assert rep.max_boundary_residual <= 1e-8, (a, b)
            assert rep.max_strip_gap <= 1e-10
            assert rep.beta == 1.0


def test_c2_value_at_zero_is_the_meet_measure(c3_gibbs):
    from toposkms.measure import measure_of
    from toposkms.presheaf import subobject_meet

    rep = check_C2(c3_gibbs.state, c3_gibbs.flow, c3_gibbs.subs["S1"],
                   c3_gibbs.subs["S12"], "Vex", [0.0])
    meet = subobject_meet(c3_gibbs.subs["S1"], c3_gibbs.subs["S12"])
    mu = measure_of(c3_gibbs.state, meet)
    assert abs(rep.f_at_zero - mu.values["Vex"]) < 1e-10


def test_c2_requires_a_faithful_state(c3_pure):
    with pytest.raises(NotFaithful):
        check_C2(c3_pure.state, c3_pure.flow, c3_pure.subs["S1"],
                 c3_pure.subs["S2"], "Vex", [0.0, 0.5])


def test_truth_object_membership_table(c3_example):
    """diag(0.5, 0.3, 0.2): memberships at the example stage follow the
    closed-form thresholds (a1+a2)/2 = 0.4 and 1 - (a1+a2)/2 = 0.6."""
    truth = TruthObject(c3_example.state, c3_example.presheaf)
    subs = c3_example.subs
    expected = {
        0.3: {"S1": True, "S2": True, "S12": True},
        0.45: {"S1": False, "S2": True, "S12": True},
        0.5: {"S1": False, "S2": True, "S12": True},
        0.7: {"S1": False, "S2": False, "S12": True},
    }
    for r, row in expected.items():
        stage = StageVR("Vex", r)
        for name, want in row.items():
            assert truth.contains(subs[name], stage) is want, (name, r)


def test_truth_tau_values_frozen(c3_example):
    truth = TruthObject(c3_example.state, c3_example.presheaf)
    subs = c3_example.subs
    assert truth.tau(subs["S1"], "Vex") == 0.39999999999999991
    assert truth.tau(subs["S2"], "Vex") == 0.59999999999999987
    assert truth.tau(subs["S12"], "Vex") == 0.99999999999999978


def test_truth_members_count(c3_gibbs):
    truth = TruthObject(c3_gibbs.state, c3_gibbs.presheaf)
    members = truth.members_at(StageVR("Vex", 0.3))
    # of the four sub-objects over a two-point stage, the empty one is out
    # and S2, S12 are in; S1 carries mu = 0.455 >= 0.3 so it is in as well
    assert len(members) == 3


def test_truth_value_transport(c3_gibbs):
    tv = truth_value(c3_gibbs.state, np.diag([1.0, 0.0, 0.0]), "Vdiag", 0.3,
                     c3_gibbs.presheaf)
    assert tv.totally_true
    assert tv.max_diff(tv) == 0.0
    assert set(tv.table) == set(c3_gibbs.poset.lower_set("Vdiag"))


def test_cutoff_invariance_gibbs(c3_gibbs):
    for p in (np.diag([1.0, 0.0, 0.0]),
              np.array([[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 0]])):
        for cid in ("Vdiag", "Vex"):
            for r in (0.3, 0.7):
                rep = check_truth_value_invariance(
                    c3_gibbs.state, c3_gibbs.flow, p, cid, r,
                    c3_gibbs.presheaf, list(GRID5))
                assert rep.max_residual <= 1e-9, (cid, r)


def test_cutoff_invariance_fails_for_pure(c3_pure):
    rep = check_truth_value_invariance(
        c3_pure.state, c3_pure.flow,
        np.array([[0.5, 0.5, 0], [0.5, 0.5, 0], [0, 0, 0]]),
        "Vex", 0.3, c3_pure.presheaf, list(GRID5))
    assert rep.max_residual >= 1e-2
    worst = max(rep.entries, key=lambda e: e.residual)
    assert worst.worst_context


def test_expectation_identity(c3_gibbs):
    p = np.diag([1.0, 0.0, 0.0])
    rep = expectation_value(p, c3_gibbs.state,
                            contexts=list(c3_gibbs.poset.contexts))
    assert abs(rep.value - rep.trace_value) <= 1e-10
    assert not rep.inserted_context
    # an operator outside every context forces an inserted context
    q = np.array([[0.5, 0.0, 0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.5]])
    rep2 = expectation_value(q, c3_gibbs.state,
                             contexts=list(c3_gibbs.poset.contexts))
    assert rep2.inserted_context
    assert abs(rep2.value - rep2.trace_value) <= 1e-10


def test_expectation_kms_identity(c3_gibbs):
    a = np.diag([1.0, 0.0, 0.0])
    b = np.array([[0.0, 1.0, 0], [1.0, 0.0, 0], [0, 0, 0]])
    rep = check_expectation_kms(c3_gibbs.state, c3_gibbs.flow, a, b)
    assert rep.max_residual <= 1e-10


def test_twisted_truth_is_mu_equivalent(c3_gibbs):
    truth = TruthObject(c3_gibbs.state, c3_gibbs.presheaf)
    for t in (math.pi / 2, math.pi):
        tw = twist(truth, c3_gibbs.flow, t)
        for stage in (StageVR("Vex", 0.3), StageVR("Vdiag", 0.5)):
            res = mu_equivalent(c3_gibbs.state, truth, tw, stage)
            assert res.equivalent
            assert res.max_gap <= 1e-9
            assert res.size_a == res.size_b


def test_strong_equivalence_over_stages(c3_gibbs):
    truth = TruthObject(c3_gibbs.state, c3_gibbs.presheaf)
    tw = twist(truth, c3_gibbs.flow, math.pi / 2)
    stages = [StageVR(cid, r) for cid in ("Vex", "Vdiag")
              for r in (0.3, 0.7)]
    res = strong_mu_equivalence(c3_gibbs.state, truth, tw, stages)
    assert res.equivalent
    assert res.naturality_gap == 0


def test_degenerate_state_reports_ambiguity():
    mixed = build_c3(np.eye(3) / 3)
    truth = TruthObject(mixed.state, mixed.presheaf)
    tw = twist(truth, mixed.flow, math.pi / 2)
    with pytest.raises(AmbiguousMatch) as exc:
        strong_mu_equivalence(mixed.state, truth, tw,
                              [StageVR("Vdiag", 0.3)])
    assert exc.value.stage.context_id == "Vdiag"
    assert len(exc.value.candidates) >= 2
