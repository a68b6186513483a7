"""External KMS structure: one-parameter flows acting on the context
poset from outside, invariance of state measures (condition C1), the
analytic boundary condition (C2), and truth-object transport.

The flow alpha_t is conjugation by exp(itH).  Under the modular
convention the generator is read as the modular Hamiltonian of the
reference state at inverse temperature beta (Delta = exp(-beta H),
alpha_z = conjugation by Delta^(-iz/beta) = exp(izH)), so both
conventions act identically at equal generator; the flag travels with
the flow and is echoed in reports.

Condition C1 compares the measure of a sub-object at a context with its
value at the flowed context; C2 extends t -> tr(rho P_T alpha_t(P_S)) to
the strip 0 <= Im z <= beta and compares the upper boundary with the
order-swapped correlation.  Gibbs states at the flow temperature satisfy
both exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import (
    ContextPoset,
    apply_automorphism,
    context_from_operators,
    contexts_equal,
)
from .errors import (
    AmbiguousMatch,
    DomainMismatch,
    NotFaithful,
    NotHermitian,
    PosetNotClosed,
)
from .measure import State, measure_of
from .numerics import (
    as_complex_matrix,
    dagger,
    frob,
    hermitian_eig,
    is_hermitian,
)
from .presheaf import (
    ClopenSubobject,
    SpectralPresheaf,
    complete_downward,
    enumerate_subobjects,
    outer_daseinisation,
    pullback,
)
from .tolerances import DEFAULT_TOL, TolerancePolicy

CONVENTIONS = ("hamiltonian", "modular")


class AutomorphismFlow:
    """alpha_t = conjugation by exp(itH), extended entirely in t."""

    __slots__ = ("h", "beta", "convention", "dim", "_eigvals", "_eigvecs")

    def __init__(self, h, beta: float = 1.0, convention: str = "hamiltonian",
                 tol: TolerancePolicy = DEFAULT_TOL):
        hm = as_complex_matrix(h)
        if not is_hermitian(hm, tol):
            raise NotHermitian("flow generator must be Hermitian")
        if convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {convention!r}")
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.h = hm
        self.beta = float(beta)
        self.convention = convention
        self.dim = hm.shape[0]
        self._eigvals, self._eigvecs = hermitian_eig(hm, tol)

    def unitary(self, t: float) -> np.ndarray:
        u = self._eigvecs
        return (u * np.exp(1j * float(t) * self._eigvals)) @ dagger(u)

    def apply(self, t: float, a) -> np.ndarray:
        u = self.unitary(t)
        return u @ as_complex_matrix(a) @ dagger(u)

    def apply_complex(self, z: complex, a) -> np.ndarray:
        """Entire continuation: exp(izH) a exp(-izH)."""
        u = self._eigvecs
        left = (u * np.exp(1j * complex(z) * self._eigvals)) @ dagger(u)
        right = (u * np.exp(-1j * complex(z) * self._eigvals)) @ dagger(u)
        return left @ as_complex_matrix(a) @ right

    def real_unitaries(self, t_values):
        return [(float(t), self.unitary(t)) for t in t_values]


def flow_element(flow: AutomorphismFlow, t: float):
    """The automorphism at parameter t as a callable on matrices."""
    u = flow.unitary(t)
    ud = dagger(u)

    def alpha(a):
        return u @ as_complex_matrix(a) @ ud

    return alpha


def gibbs_state(h, beta: float, tol: TolerancePolicy = DEFAULT_TOL) -> State:
    """exp(-beta H) / tr(exp(-beta H)), computed in the eigenbasis with
    the largest weight factored out for stability."""
    w, u = hermitian_eig(as_complex_matrix(h), tol)
    shifted = -beta * (w - w.min())
    weights = np.exp(shifted)
    weights = weights / weights.sum()
    return State((u * weights) @ dagger(u), tol)


def flow_saturated_family(presheaf: SpectralPresheaf, base_context_id: str,
                          base_indices, unitaries, name: str = "",
                          tol: TolerancePolicy | None = None) -> ClopenSubobject:
    """The flow-equivariant sub-object generated by a block set.

    Each (t, U) carries the base component to the poset context equal to
    U V U* through the block correspondence Q_i -> U Q_i U*; the result
    is completed downward.  Two group elements landing on the same
    context must induce the same component (checked), and every image
    must already belong to the poset (PosetNotClosed otherwise).
    """
    tol = tol or presheaf.tol
    poset = presheaf.poset
    base = poset.context(base_context_id)
    base_indices = frozenset(int(i) for i in base_indices)
    assignments = {}
    seen_from = {}
    pairs = [(0.0, np.eye(base.dim, dtype=np.complex128))]
    pairs += [(float(t), np.asarray(u, dtype=np.complex128))
              for t, u in unitaries]
    for t, u in pairs:
        moved = apply_automorphism(u, base, tol)
        target_id = poset.find_equal(moved)
        if target_id is None:
            raise PosetNotClosed(
                f"orbit of {base_context_id} leaves the poset at t={t!r}"
            )
        target = poset.context(target_id)
        relabel = {}
        for i, q in enumerate(base.blocks):
            moved_q = u @ q.matrix @ dagger(u)
            dists = [frob(moved_q - r.matrix) for r in target.blocks]
            j = int(np.argmin(dists))
            if dists[j] > max(10 * tol.eps_order, tol.eps_order):
                raise PosetNotClosed(
                    f"block correspondence failed at t={t!r}"
                )
            relabel[i] = j
        component = frozenset(relabel[i] for i in base_indices)
        if target_id in assignments:
            if assignments[target_id] != component:
                raise DomainMismatch(
                    f"inconsistent components at {target_id} reached from "
                    f"t={seen_from[target_id]!r} and t={t!r}"
                )
        else:
            assignments[target_id] = component
            seen_from[target_id] = t
    sub = complete_downward(presheaf, assignments, name=name)
    sub.flow_equivariant = True
    return sub


# --------------------------------------------------------------------------
# condition C1


@dataclass
class C1Entry:
    subobject: str
    t: float
    context_id: str
    lhs: float
    rhs: float
    path: str  # "poset" or "direct"

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class C1Report:
    entries: list
    max_residual: float
    consistency_gap: float  # poset lookup vs direct evaluation, where both exist
    convention: str

    def passed(self, eps: float) -> bool:
        return self.max_residual <= eps

    def worst(self):
        return max(self.entries, key=lambda e: e.residual, default=None)


def check_C1(state: State, flow: AutomorphismFlow, subobjects, t_grid,
             tol: TolerancePolicy | None = None) -> C1Report:
    """Invariance of the measure under the flow.

    For each sub-object S, context V and parameter t the two sides are
        lhs = tr(rho P_{S_V})        rhs = tr(rho P_{S at alpha_t V}).
    The flowed component is looked up in the poset when the moved
    context is present in the domain of S; otherwise, for
    flow-equivariant families, it is evaluated directly as
    U_t P_{S_V} U_t*.  When both routes exist they are compared and the
    gap reported.
    """
    if isinstance(subobjects, ClopenSubobject):
        subobjects = [subobjects]
    entries = []
    gap = 0.0
    for sub in subobjects:
        tol_s = tol or sub.presheaf.tol
        poset = sub.presheaf.poset
        for t in t_grid:
            u = flow.unitary(t)
            ud = dagger(u)
            for cid in sub.components:
                v = poset.context(cid)
                p_here = sub.projection_at(cid).matrix
                lhs = float(np.real(np.trace(state.matrix @ p_here)))
                moved = apply_automorphism(u, v, tol_s)
                target_id = poset.find_equal(moved)
                p_direct = (u @ p_here @ ud) if sub.flow_equivariant else None
                if target_id is not None and target_id in sub.components:
                    p_moved = sub.projection_at(target_id).matrix
                    path = "poset"
                    if p_direct is not None:
                        gap = max(gap, frob(p_moved - p_direct))
                elif p_direct is not None:
                    p_moved = p_direct
                    path = "direct"
                else:
                    raise PosetNotClosed(
                        f"context {cid} flows out of the domain at t={t!r} "
                        f"and the family is not flow-equivariant"
                    )
                rhs = float(np.real(np.trace(state.matrix @ p_moved)))
                entries.append(C1Entry(subobject=sub.name or "S", t=float(t),
                                       context_id=cid, lhs=lhs, rhs=rhs,
                                       path=path))
    worst = max((e.residual for e in entries), default=0.0)
    return C1Report(entries=entries, max_residual=worst, consistency_gap=gap,
                    convention=flow.convention)


# --------------------------------------------------------------------------
# condition C2


@dataclass
class C2BoundaryEntry:
    t: float
    upper: complex        # F(t + i beta)
    swapped: complex      # tr(rho alpha_t(P_S) P_T)

    @property
    def residual(self) -> float:
        return abs(self.upper - self.swapped)


@dataclass
class C2Report:
    context_id: str
    beta: float
    convention: str
    boundary: list
    strip_points: list    # (z, matrix value, eigenseries value)
    max_boundary_residual: float
    max_strip_gap: float
    f_at_zero: complex

    def passed(self, eps: float, strip_eps: float = 1e-10) -> bool:
        return (self.max_boundary_residual <= eps
                and self.max_strip_gap <= strip_eps)


def _eigenseries_coefficients(state: State, flow: AutomorphismFlow, ps, pt):
    """F(z) = sum_{k,l} c_kl exp(i z (lam_k - lam_l)) in the eigenbasis
    of the generator; returns (frequencies, coefficients) flattened."""
    u = flow._eigvecs
    lam = flow._eigvals
    rho_t = dagger(u) @ state.matrix @ u
    ps_t = dagger(u) @ ps @ u
    pt_t = dagger(u) @ pt @ u
    a = rho_t @ pt_t
    n = lam.shape[0]
    freqs, coeffs = [], []
    for k in range(n):
        for l in range(n):
            freqs.append(lam[k] - lam[l])
            coeffs.append(a[l, k] * ps_t[k, l])
    return np.asarray(freqs), np.asarray(coeffs)


def check_C2(state: State, flow: AutomorphismFlow, sub_s: ClopenSubobject,
             sub_t: ClopenSubobject, context_id: str, t_samples,
             n_strip: int = 20,
             tol: TolerancePolicy | None = None) -> C2Report:
    """Two-point boundary condition at a context.

    F(z) = tr(rho P_{T_V} alpha_z(P_{S_V})) is entire; the check compares
    F(t + i beta) against tr(rho alpha_t(P_{S_V}) P_{T_V}) on the sample
    grid, and witnesses analyticity by matching the matrix evaluation
    against the closed-form eigenfrequency series at n_strip points of
    the strip 0 <= Im z <= beta.  The state must be faithful.
    """
    tol = tol or sub_s.presheaf.tol
    if not state.is_faithful(tol):
        raise NotFaithful("boundary comparison requires a faithful state")
    ps = sub_s.projection_at(context_id).matrix
    pt = sub_t.projection_at(context_id).matrix
    beta = flow.beta
    rho = state.matrix

    freqs, coeffs = _eigenseries_coefficients(state, flow, ps, pt)

    def f_matrix(z: complex) -> complex:
        return complex(np.trace(rho @ pt @ flow.apply_complex(z, ps)))

    def f_series(z: complex) -> complex:
        return complex(np.sum(coeffs * np.exp(1j * complex(z) * freqs)))

    boundary = []
    for t in t_samples:
        z = float(t) + 1j * beta
        upper = f_matrix(z)
        swapped = complex(np.trace(rho @ flow.apply(t, ps) @ pt))
        boundary.append(C2BoundaryEntry(t=float(t), upper=upper,
                                        swapped=swapped))

    ts = [float(t) for t in t_samples] or [0.0]
    t_lo, t_hi = min(ts), max(ts)
    if t_hi - t_lo < 1e-12:
        t_lo, t_hi = t_lo - 1.0, t_hi + 1.0
    strip_points = []
    gap = 0.0
    half = max(n_strip // 2, 1)
    for i in range(n_strip):
        if i < half:
            frac = i / max(half - 1, 1)
            z = complex(t_lo + (t_hi - t_lo) * frac, beta * frac)
        else:
            frac = (i - half) / max(n_strip - half - 1, 1)
            z = complex(t_lo + (t_hi - t_lo) * frac, beta / 2.0)
        mv, sv = f_matrix(z), f_series(z)
        gap = max(gap, abs(mv - sv))
        strip_points.append((z, mv, sv))

    return C2Report(
        context_id=context_id,
        beta=beta,
        convention=flow.convention,
        boundary=boundary,
        strip_points=strip_points,
        max_boundary_residual=max((e.residual for e in boundary), default=0.0),
        max_strip_gap=gap,
        f_at_zero=f_matrix(0.0),
    )


# --------------------------------------------------------------------------
# truth objects


@dataclass(frozen=True)
class StageVR:
    context_id: str
    r: float


class TruthObject:
    """T^{rho,r}_V: clopen sub-objects of Sigma|_(down V) whose measure
    stays >= r on the whole lower set.  Membership thresholds are exact:
    tau(S, V) = min_{V' <= V} mu(S)(V') and S is in iff tau >= r."""

    def __init__(self, state: State, presheaf: SpectralPresheaf,
                 cap: int = 100_000, tol: TolerancePolicy | None = None):
        self.state = state
        self.presheaf = presheaf
        self.tol = tol or presheaf.tol
        self.cap = cap
        self._enumerations = {}

    def tau(self, sub: ClopenSubobject, context_id: str) -> float:
        below = set(self.presheaf.below(context_id))
        if not below <= sub.domain:
            raise DomainMismatch(
                f"sub-object is not defined on the lower set of {context_id}"
            )
        section = measure_of(self.state, sub.restricted_to(context_id),
                             self.tol)
        return section.minimum()

    def contains(self, sub: ClopenSubobject, stage: StageVR) -> bool:
        return self.tau(sub, stage.context_id) >= stage.r

    def _all_subobjects(self, context_id: str):
        if context_id not in self._enumerations:
            subs = enumerate_subobjects(self.presheaf, context_id, self.cap)
            subs.sort(key=lambda s: s.canonical_key())
            self._enumerations[context_id] = subs
        return self._enumerations[context_id]

    def members_at(self, stage: StageVR):
        return [s for s in self._all_subobjects(stage.context_id)
                if self.tau(s, stage.context_id) >= stage.r]


class TwistedTruthObject:
    """The truth object transported along a flow element: members at
    (V, r) are the pullbacks of the members at (alpha_t V, r)."""

    def __init__(self, base: TruthObject, t: float, unitary):
        self.base = base
        self.t = float(t)
        self.unitary = np.asarray(unitary, dtype=np.complex128)
        self.presheaf = base.presheaf
        self.state = base.state
        self.tol = base.tol

    def _moved_stage(self, stage: StageVR) -> StageVR:
        poset = self.presheaf.poset
        v = poset.context(stage.context_id)
        moved = apply_automorphism(self.unitary, v, self.tol)
        target_id = poset.find_equal(moved)
        if target_id is None:
            raise PosetNotClosed(
                f"stage context {stage.context_id} flows out of the poset"
            )
        return StageVR(target_id, stage.r)

    def members_at(self, stage: StageVR):
        moved = self._moved_stage(stage)
        domain = self.presheaf.below(stage.context_id)
        out = []
        for s in self.base.members_at(moved):
            out.append(pullback(self.unitary, s, self.tol, domain=domain))
        out.sort(key=lambda s: s.canonical_key())
        return out

    def contains(self, sub: ClopenSubobject, stage: StageVR) -> bool:
        key = sub.restricted_to(stage.context_id).canonical_key()
        return any(key == m.canonical_key() for m in self.members_at(stage))


def twist(truth: TruthObject, flow: AutomorphismFlow, t: float) -> TwistedTruthObject:
    return TwistedTruthObject(truth, t, flow.unitary(t))


# --------------------------------------------------------------------------
# truth values as cutoff tables


@dataclass
class TruthValue:
    """The degree to which 'the proposition holds at least to level r'
    is settled at each context below the stage: V' -> min(r, mu)."""

    context_id: str
    r: float
    table: dict

    @property
    def totally_true(self) -> bool:
        return all(abs(v - self.r) <= 1e-12 for v in self.table.values())

    def max_diff(self, other: "TruthValue") -> float:
        if set(self.table) != set(other.table):
            raise DomainMismatch("truth values live on different lower sets")
        return max(abs(self.table[c] - other.table[c]) for c in self.table)


def truth_value(state: State, p, context_id: str, r: float,
                presheaf: SpectralPresheaf,
                tol: TolerancePolicy | None = None,
                transport=None) -> TruthValue:
    """Cutoff table of the outer approximation of p on the lower set of
    the stage context.  `transport`, when given, is applied to the
    approximating projection before taking the trace (used for flow
    transport checks)."""
    tol = tol or presheaf.tol
    pm = as_complex_matrix(p)
    table = {}
    for cid in presheaf.below(context_id):
        v = presheaf.poset.context(cid)
        d = outer_daseinisation(pm, v, tol).matrix
        if transport is not None:
            d = transport(d)
        table[cid] = min(float(r), float(np.real(np.trace(state.matrix @ d))))
    return TruthValue(context_id=context_id, r=float(r), table=table)


@dataclass
class TruthInvarianceEntry:
    t: float
    residual: float
    worst_context: str


@dataclass
class TruthInvarianceReport:
    entries: list
    max_residual: float

    def passed(self, eps: float) -> bool:
        return self.max_residual <= eps


def check_truth_value_invariance(state: State, flow: AutomorphismFlow, p,
                                 context_id: str, r: float,
                                 presheaf: SpectralPresheaf, t_grid,
                                 tol: TolerancePolicy | None = None
                                 ) -> TruthInvarianceReport:
    """Compare the cutoff table of p with the table of the flowed
    proposition at the flowed stage, pulled back through the flow: the
    transported table is V' -> min(r, tr(rho U_t d(p)_{V'} U_t*))."""
    tol = tol or presheaf.tol
    base = truth_value(state, p, context_id, r, presheaf, tol)
    entries = []
    for t in t_grid:
        u = flow.unitary(t)
        ud = dagger(u)
        moved = truth_value(state, p, context_id, r, presheaf, tol,
                            transport=lambda d: u @ d @ ud)
        diffs = {c: abs(base.table[c] - moved.table[c]) for c in base.table}
        worst_ctx = max(diffs, key=diffs.get)
        entries.append(TruthInvarianceEntry(t=float(t),
                                            residual=diffs[worst_ctx],
                                            worst_context=worst_ctx))
    worst = max((e.residual for e in entries), default=0.0)
    return TruthInvarianceReport(entries=entries, max_residual=worst)


# --------------------------------------------------------------------------
# mu-equivalence of truth objects


def _section_of(state: State, sub: ClopenSubobject, tol) -> dict:
    return measure_of(state, sub, tol).values


def _section_gap(a: dict, b: dict) -> float:
    if set(a) != set(b):
        return float("inf")
    return max(abs(a[c] - b[c]) for c in a)


@dataclass
class MuEquivalenceResult:
    equivalent: bool
    stage: StageVR
    max_gap: float
    size_a: int
    size_b: int


def mu_equivalent(state: State, truth_a, truth_b, stage: StageVR,
                  eps: float | None = None,
                  tol: TolerancePolicy | None = None) -> MuEquivalenceResult:
    """Weak equivalence at a stage: the multisets of measure sections of
    the two member lists coincide within eps (some bijection preserves
    sections; ties allowed)."""
    tol = tol or truth_a.tol
    eps = tol.eps_measure if eps is None else eps
    members_a = truth_a.members_at(stage)
    members_b = truth_b.members_at(stage)
    if len(members_a) != len(members_b):
        return MuEquivalenceResult(False, stage, float("inf"),
                                   len(members_a), len(members_b))
    secs_a = [_section_of(state, s, tol) for s in members_a]
    secs_b = [_section_of(state, s, tol) for s in members_b]
    used = [False] * len(secs_b)
    worst = 0.0
    for sa in secs_a:
        best_j, best_gap = None, None
        for j, sb in enumerate(secs_b):
            if used[j]:
                continue
            g = _section_gap(sa, sb)
            if best_gap is None or g < best_gap:
                best_j, best_gap = j, g
        if best_gap is None or best_gap > eps:
            return MuEquivalenceResult(False, stage,
                                       best_gap if best_gap is not None
                                       else float("inf"),
                                       len(members_a), len(members_b))
        used[best_j] = True
        worst = max(worst, best_gap)
    return MuEquivalenceResult(True, stage, worst,
                               len(members_a), len(members_b))


@dataclass
class StrongMuEquivalenceResult:
    equivalent: bool
    matchings: dict          # stage -> list of (index in A, index in B)
    naturality_gap: int      # number of squares that fail to commute
    detail: str = ""


def strong_mu_equivalence(state: State, truth_a, truth_b, stages,
                          eps: float | None = None,
                          tol: TolerancePolicy | None = None
                          ) -> StrongMuEquivalenceResult:
    """Strong equivalence: at every stage the measure sections match the
    members of the two truth objects one-to-one (AmbiguousMatch if some
    section is shared by several members), and the induced matching
    commutes with restriction of stages to smaller contexts."""
    tol = tol or truth_a.tol
    eps = tol.eps_measure if eps is None else eps
    matchings = {}
    members = {}
    for stage in stages:
        ma = truth_a.members_at(stage)
        mb = truth_b.members_at(stage)
        members[stage] = (ma, mb)
        if len(ma) != len(mb):
            return StrongMuEquivalenceResult(
                False, matchings, 0,
                detail=f"member counts differ at {stage}: "
                       f"{len(ma)} vs {len(mb)}")
        secs_a = [_section_of(state, s, tol) for s in ma]
        secs_b = [_section_of(state, s, tol) for s in mb]
        pairing = []
        taken = set()
        for i, sa in enumerate(secs_a):
            hits = [j for j, sb in enumerate(secs_b)
                    if _section_gap(sa, sb) <= eps]
            if not hits:
                return StrongMuEquivalenceResult(
                    False, matchings, 0,
                    detail=f"member {i} unmatched at {stage}")
            distinct = {mb[j].canonical_key() for j in hits}
            if len(distinct) > 1:
                raise AmbiguousMatch(
                    f"measure section of member {i} at stage "
                    f"({stage.context_id}, r={stage.r}) matches "
                    f"{len(hits)} distinct members",
                    stage=stage,
                    candidates=[mb[j] for j in hits],
                )
            j = hits[0]
            if j in taken:
                return StrongMuEquivalenceResult(
                    False, matchings, 0,
                    detail=f"matching not injective at {stage}")
            taken.add(j)
            pairing.append((i, j))
        matchings[stage] = pairing

    # naturality: restriction of stages commutes with the matching
    ph = truth_a.presheaf
    bad = 0
    stage_list = list(stages)
    for big in stage_list:
        for small in stage_list:
            if big == small or abs(big.r - small.r) > 0:
                continue
            if small.context_id not in ph.below(big.context_id):
                continue
            ma_big, mb_big = members[big]
            ma_small, mb_small = members[small]
            match_big = dict(matchings[big])
            match_small = dict(matchings[small])
            keys_small_a = [s.canonical_key() for s in ma_small]
            keys_small_b = [s.canonical_key() for s in mb_small]
            for i, j in match_big.items():
                ra = ma_big[i].restricted_to(small.context_id).canonical_key()
                rb = mb_big[j].restricted_to(small.context_id).canonical_key()
                try:
                    ia = keys_small_a.index(ra)
                except ValueError:
                    bad += 1
                    continue
                if match_small.get(ia) is None:
                    bad += 1
                    continue
                if keys_small_b[match_small[ia]] != rb:
                    bad += 1
    return StrongMuEquivalenceResult(bool(bad == 0), matchings, bad)


# --------------------------------------------------------------------------
# expectation values through daseinisation


@dataclass
class ExpectationResult:
    value: float              # sum_i a_i min_V mu(d(P_i))(V)
    trace_value: float        # tr(rho A)
    eigenvalues: list
    inserted_context: bool

    @property
    def residual(self) -> float:
        return abs(self.value - self.trace_value)


def _spectral_projections(a, tol: TolerancePolicy):
    from .algebra import _cluster

    am = as_complex_matrix(a)
    w, u = hermitian_eig(am, tol)
    scale = max(1.0, float(np.max(np.abs(w))))
    groups = _cluster(w, tol.eps_eig * scale)
    out = []
    for idx in groups:
        cols = u[:, idx]
        out.append((float(np.mean(w[idx])), cols @ dagger(cols)))
    return out


def expectation_value(a, state: State, contexts=None,
                      tol: TolerancePolicy = DEFAULT_TOL) -> ExpectationResult:
    """Expectation of a Hermitian operator recovered from measures of
    outer approximations: each spectral projection contributes its
    eigenvalue times the minimum of its measure over all contexts.  The
    eigencontext of the operator is inserted so the minimum is attained
    exactly at tr(rho P_i)."""
    am = as_complex_matrix(a)
    if not is_hermitian(am, tol):
        raise NotHermitian("expectation values need a Hermitian operator")
    spectral = _spectral_projections(am, tol)
    trace_value = float(np.real(np.trace(state.matrix @ am)))
    if len(spectral) == 1:
        return ExpectationResult(value=spectral[0][0],
                                 trace_value=trace_value,
                                 eigenvalues=[spectral[0][0]],
                                 inserted_context=False)
    ctx_list = list(contexts.contexts) if isinstance(contexts, ContextPoset) \
        else list(contexts or [])
    eigctx = context_from_operators([am], context_id="eig", tol=tol)
    inserted = True
    for v in ctx_list:
        if contexts_equal(v, eigctx, tol):
            inserted = False
            break
    if inserted:
        ctx_list = ctx_list + [eigctx]
    total = 0.0
    for eigval, proj in spectral:
        best = None
        for v in ctx_list:
            val = float(np.real(np.trace(
                state.matrix @ outer_daseinisation(proj, v, tol).matrix)))
            best = val if best is None else min(best, val)
        total += eigval * best
    return ExpectationResult(value=total, trace_value=trace_value,
                             eigenvalues=[e for e, _ in spectral],
                             inserted_context=inserted)


@dataclass
class ExpectationKMSEntry:
    i: int
    j: int
    lhs: complex    # tr(rho P_i alpha_{i beta}(Q_j))
    rhs: complex    # tr(rho Q_j P_i)

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class ExpectationKMSReport:
    entries: list
    max_residual: float

    def passed(self, eps: float) -> bool:
        return self.max_residual <= eps


def check_expectation_kms(state: State, flow: AutomorphismFlow, a, b,
                          tol: TolerancePolicy = DEFAULT_TOL
                          ) -> ExpectationKMSReport:
    """Product-form boundary condition on spectral projections: for each
    pair (P_i of a, Q_j of b), tr(rho P_i alpha_{i beta}(Q_j)) must equal
    tr(rho Q_j P_i)."""
    if not state.is_faithful(tol):
        raise NotFaithful("boundary comparison requires a faithful state")
    pa = _spectral_projections(as_complex_matrix(a), tol)
    pb = _spectral_projections(as_complex_matrix(b), tol)
    rho = state.matrix
    z = 1j * flow.beta
    entries = []
    for i, (_, p) in enumerate(pa):
        for j, (_, q) in enumerate(pb):
            lhs = complex(np.trace(rho @ p @ flow.apply_complex(z, q)))
            rhs = complex(np.trace(rho @ q @ p))
            entries.append(ExpectationKMSEntry(i=i, j=j, lhs=lhs, rhs=rhs))
    worst = max((e.residual for e in entries), default=0.0)
    return ExpectationKMSReport(entries=entries, max_residual=worst)
