"""Contexts, the poset of abelian subalgebras, and its closure operations."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from toposkms.algebra import (
    Context,
    algebra_element_coefficients,
    apply_automorphism,
    bicommutant_check,
    build_poset,
    coarse_graining_map,
    commutant,
    context_from_operators,
    contexts_equal,
    evaluate,
    includes,
    lattice_projection,
    meet_context,
    projection_lattice,
    spectrum,
)
from toposkms.errors import (
    ContextMissing,
    NotInAlgebra,
    PosetTooLarge,
    TrivialAlgebra,
)
from toposkms.kms_external import AutomorphismFlow
from toposkms.kms_internal import SampledGroup
from toposkms.numerics import frob

from conftest import P12SYM, diagonal_context


def test_blocks_must_partition_identity():
    with pytest.raises(NotInAlgebra):
        Context([np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])])
    with pytest.raises(NotInAlgebra):
        Context([np.diag([1.0, 1, 0]), np.diag([0, 1.0, 1])])


def test_trivial_algebra_is_excluded():
    with pytest.raises(TrivialAlgebra):
        Context([np.eye(3)])


def test_blocks_sort_rank_first():
    # the example context lists its rank-one block before the rank-two one
    vex = context_from_operators([P12SYM], "Vex")
    assert vex.k == 2
    ranks = [int(round(np.trace(b.matrix).real)) for b in vex.blocks]
    assert ranks == [1, 2]
    assert frob(vex.blocks[0].matrix - P12SYM) < 1e-12


def test_block_order_is_input_independent():
    a = Context([np.diag([1.0, 0, 0]), np.diag([0, 1.0, 1])], "A")
    b = Context([np.diag([0, 1.0, 1]), np.diag([1.0, 0, 0])], "B")
    assert contexts_equal(a, b)
    assert a.signature() == b.signature()
    for ba, bb in zip(a.blocks, b.blocks):
        assert np.array_equal(ba.matrix, bb.matrix)


def test_context_from_operators_recovers_eigenblocks():
    v = context_from_operators([np.diag([3.0, 3.0, 7.0])], "V")
    assert v.k == 2
    w = diagonal_context(3, "W")
    assert includes(v, w)  # the coarse context sits inside the fine one
    assert not includes(w, v)


def test_meet_of_incomparable_contexts():
    vdiag = diagonal_context(3, "Vdiag")
    vex = context_from_operators([P12SYM], "Vex")
    # common subalgebra is the scalars only, which is not a context
    assert meet_context(vdiag, vex) is None
    two = Context([np.diag([1.0, 1, 0]), np.diag([0, 0, 1.0])], "T")
    m = meet_context(vdiag, two)
    assert m is not None and contexts_equal(m, two)


def test_projection_lattice_size():
    v = diagonal_context(3, "V")
    lat = projection_lattice(v)
    assert len(lat) == 2 ** 3


def test_lattice_projection_sums_blocks():
    v = diagonal_context(3, "V")
    p = lattice_projection(v, {0, 2})
    expected = v.blocks[0].matrix + v.blocks[2].matrix
    assert frob(p.matrix - expected) < 1e-12


def test_character_evaluation():
    v = context_from_operators([np.diag([2.0, 2.0, 5.0])], "V")
    chars = spectrum(v)
    assert len(chars) == v.k == 2
    # a character sends one block to 1 and the other to 0
    for lam in chars:
        vals = [evaluate(v, lam, b.matrix) for b in v.blocks]
        assert sorted(round(x.real) for x in vals) == [0, 1]
    # distinct characters pick distinct blocks
    picks = {tuple(round(evaluate(v, lam, b.matrix).real) for b in v.blocks)
             for lam in chars}
    assert len(picks) == 2


def test_algebra_element_coefficients_roundtrip():
    v = diagonal_context(3, "V")
    a = (1.0 * v.blocks[0].matrix + 4.5 * v.blocks[1].matrix
         - 2.0 * v.blocks[2].matrix)
    coeffs = algebra_element_coefficients(v, a)
    rebuilt = sum(c * b.matrix for c, b in zip(coeffs, v.blocks))
    assert frob(rebuilt - a) < 1e-12
    with pytest.raises(NotInAlgebra):
        algebra_element_coefficients(v, P12SYM)


def test_commutant_dimensions():
    # diagonal maximal abelian in M_3: commutant is itself (dimension 3)
    v = diagonal_context(3, "V")
    basis = commutant([b.matrix for b in v.blocks], 3)
    assert len(basis) == 3
    # two-block context in M_3: commutant is M_1 + M_2 (dimension 5)
    w = Context([np.diag([1.0, 0, 0]), np.diag([0, 1.0, 1])], "W")
    assert len(commutant([b.matrix for b in w.blocks], 3)) == 5
    assert bicommutant_check(v)


def test_coarse_graining_map_is_surjective():
    vdiag = diagonal_context(3, "Vdiag")
    coarse = Context([np.diag([1.0, 1, 0]), np.diag([0, 0, 1.0])], "C")
    mapping = coarse_graining_map(vdiag, coarse)
    assert len(mapping) == 3  # one target block per fine block
    assert set(mapping) == {0, 1}
    # the fine block below the rank-one coarse block maps alone
    counts = [mapping.count(j) for j in (0, 1)]
    assert sorted(counts) == [1, 2]


def test_apply_automorphism_preserves_structure():
    flow = AutomorphismFlow(np.diag([0.0, 1.0, 2.0]))
    vex = context_from_operators([P12SYM], "Vex")
    moved = apply_automorphism(flow.unitary(0.7), vex)
    assert moved.k == vex.k
    ranks = [int(round(np.trace(b.matrix).real)) for b in moved.blocks]
    assert ranks == [1, 2]
    assert not contexts_equal(moved, vex)
    # t = 2*pi returns to the start for integer spectrum
    back = apply_automorphism(flow.unitary(2 * math.pi), vex)
    assert contexts_equal(back, vex)


def test_c3_poset_closure_shape(c3_gibbs):
    poset = c3_gibbs.poset
    ids = sorted(c.id for c in poset.contexts)
    assert len(ids) == 8
    assert {"Vdiag", "Vex"} <= set(ids)
    # maximal elements: the diagonal context plus the four orbit images
    assert len(poset.maximal_ids()) == 5
    # three proper coarse-grainings sit below the diagonal context
    below_diag = [cid for cid in poset.lower_set("Vdiag") if cid != "Vdiag"]
    assert len(below_diag) == 3
    # the example context has no proper subcontexts
    assert poset.lower_set("Vex") == ["Vex"]


def test_lower_sets_are_downward_closed(c3_gibbs):
    poset = c3_gibbs.poset
    for v in poset.contexts:
        assert poset.is_lower_set(poset.lower_set(v.id))


def test_poset_order_axioms(diag4):
    poset = diag4.poset
    n = len(poset.contexts)
    assert n == 14  # partitions of a 4-set into >= 2 parts
    leq = poset.leq
    for i in range(n):
        assert leq[i, i]
        for j in range(n):
            if leq[i, j] and leq[j, i]:
                assert i == j
            for k in range(n):
                if leq[i, j] and leq[j, k]:
                    assert leq[i, k]


def test_poset_context_lookup(c3_gibbs):
    poset = c3_gibbs.poset
    assert poset.context("Vex").k == 2
    with pytest.raises(ContextMissing):
        poset.context("no-such-context")
    with pytest.raises(ContextMissing):
        poset.index_of("no-such-context")


def test_find_equal_matches_up_to_tolerance(c3_gibbs):
    poset = c3_gibbs.poset
    vex2 = context_from_operators([P12SYM + 1e-13], "renamed")
    assert poset.find_equal(vex2) == "Vex"
    p13 = np.array([[0.5, 0.0, 0.5], [0.0, 0.0, 0.0], [0.5, 0.0, 0.5]])
    absent = context_from_operators([p13], "absent")
    assert poset.find_equal(absent) is None


def test_poset_size_cap():
    with pytest.raises(PosetTooLarge):
        build_poset([diagonal_context(4, "D4")], downward_closure=True,
                    max_contexts=5)


def test_group_closure_adds_orbit_images():
    flow = AutomorphismFlow(np.diag([0.0, 1.0, 2.0]))
    group = SampledGroup(flow, [0.0, math.pi / 2, math.pi, 3 * math.pi / 2,
                                2 * math.pi])
    vex = context_from_operators([P12SYM], "Vex")
    poset = build_poset([vex], group=group, group_depth=1)
    assert len(poset.contexts) == 4  # t = 0 and t = 2*pi coincide


@given(seed=st.integers(0, 2**31 - 1))
def test_random_two_block_contexts_compare_consistently(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(g)
    p = q[:, :1] @ q[:, :1].conj().T
    v = context_from_operators([p], "V")
    w = diagonal_context(3, "W")
    # a random rank-one context is almost surely incomparable with the
    # diagonal one, but both relations can never hold simultaneously
    assert not (includes(w, v) and includes(v, w))
    assert contexts_equal(v, v)
