"""States, measures on clopen sub-objects, and state reconstruction.

A density matrix assigns to each clopen sub-object the global section
V -> tr(rho * P_{S_V}); these sections are order-reversing because outer
restriction only grows the supporting projection.  The converse
direction recovers a density matrix from an abstract measure table by
least squares over the traceless Hermitian parametrization
rho = I/n + sum_k c_k B_k.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .algebra import ContextPoset
from .errors import (
    DimMismatch,
    Infeasible,
    InconsistentTable,
    NotAdditive,
    NotAState,
    PosetNotClosed,
)
from .numerics import as_complex_matrix, dagger, frob, is_hermitian
from .presheaf import (
    ClopenSubobject,
    SpectralPresheaf,
    empty_subobject,
    full_subobject,
    heyting_negation,
    s_inverse,
    subobject_join,
    subobject_meet,
)
from .tolerances import DEFAULT_TOL, TolerancePolicy


class State:
    """Density matrix: Hermitian, unit trace, positive semi-definite."""

    __slots__ = ("matrix", "dim", "eigenvalues")

    def __init__(self, matrix, tol: TolerancePolicy = DEFAULT_TOL):
        m = as_complex_matrix(matrix)
        if not is_hermitian(m, tol):
            raise NotAState("density matrix must be Hermitian")
        tr = float(np.real(np.trace(m)))
        if abs(tr - 1.0) > tol.eps_eig:
            raise NotAState(f"trace is {tr!r}, expected 1")
        w = np.linalg.eigvalsh(m)
        if w[0] < -tol.eps_eig:
            raise NotAState(f"negative eigenvalue {w[0]!r}")
        self.matrix = m
        self.matrix.setflags(write=False)
        self.dim = m.shape[0]
        self.eigenvalues = w

    def is_faithful(self, tol: TolerancePolicy = DEFAULT_TOL) -> bool:
        return bool(self.eigenvalues[0] > tol.eps_eig)

    def expectation(self, a) -> float:
        return float(np.real(np.trace(self.matrix @ as_complex_matrix(a))))

    @classmethod
    def pure(cls, vector, tol: TolerancePolicy = DEFAULT_TOL) -> "State":
        v = np.asarray(vector, dtype=np.complex128).reshape(-1)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise NotAState("zero vector")
        v = v / nrm
        return cls(np.outer(v, v.conj()), tol)

    @classmethod
    def maximally_mixed(cls, n: int) -> "State":
        return cls(np.eye(n) / n)

    def conjugated(self, u, tol: TolerancePolicy = DEFAULT_TOL) -> "State":
        um = np.asarray(u, dtype=np.complex128)
        return State(um @ self.matrix @ dagger(um), tol)


@dataclass
class GlobalSection:
    """A real-valued assignment on contexts, checked order-reversing:
    smaller contexts carry larger (or equal) values."""

    poset: ContextPoset
    values: dict
    tol: TolerancePolicy = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        for small_id, large_id in self.poset.comparable_pairs():
            if small_id in self.values and large_id in self.values:
                lo, hi = self.values[large_id], self.values[small_id]
                if hi < lo - self.tol.eps_measure:
                    raise PosetNotClosed(
                        f"section increases from {small_id} to {large_id}: "
                        f"{hi!r} < {lo!r}"
                    )

    def __getitem__(self, context_id: str) -> float:
        return self.values[context_id]

    def minimum(self) -> float:
        return min(self.values.values())

    def domain(self):
        return frozenset(self.values.keys())


def measure_of(state: State, sub: ClopenSubobject,
               tol: TolerancePolicy | None = None) -> GlobalSection:
    """Section V -> tr(rho * P_{S_V}) over the sub-object domain."""
    tol = tol or sub.presheaf.tol
    values = {}
    for cid in sub.components:
        p = sub.projection_at(cid)
        values[cid] = float(np.real(np.trace(state.matrix @ p.matrix)))
    return GlobalSection(sub.presheaf.poset, values, tol)


@dataclass
class MeasurePropertyReport:
    normalization: float
    empty: float
    monotonicity: float
    modularity: float
    order_reversal: float
    complement_meet: float
    complement_join_max: float
    strictness_witness: float  # largest observed 1 - mu(S v ~S); > 0 = strict
    pairs_checked: int
    passed: bool


def verify_measure_properties(state: State, presheaf: SpectralPresheaf,
                              pairs, tol: TolerancePolicy | None = None,
                              eps: float | None = None) -> MeasurePropertyReport:
    """Check the measure axioms on a list of sub-object pairs.

    For each (S, T): normalization of the full/empty sub-objects on the
    union domain, monotonicity through meet and join, the modular law
    mu(SvT) + mu(S^T) = mu(S) + mu(T) stage-wise, order-reversal of every
    section, and the complement laws mu(S ^ ~S) = 0, mu(S v ~S) <= 1
    (recording how far below 1 the join gets).
    """
    tol = tol or presheaf.tol
    eps = tol.eps_measure if eps is None else eps
    res_norm = res_empty = res_mono = res_mod = res_rev = 0.0
    res_cmeet = 0.0
    cjoin_max = 0.0
    strict = 0.0

    full = measure_of(state, full_subobject(presheaf), tol)
    empty = measure_of(state, empty_subobject(presheaf), tol)
    res_norm = max((abs(v - 1.0) for v in full.values.values()), default=0.0)
    res_empty = max((abs(v) for v in empty.values.values()), default=0.0)

    def order_reversal_violation(section):
        worst = 0.0
        for small_id, large_id in presheaf.poset.comparable_pairs():
            if small_id in section.values and large_id in section.values:
                worst = max(worst, section.values[large_id]
                            - section.values[small_id])
        return worst

    n_pairs = 0
    for s, t in pairs:
        n_pairs += 1
        meet = subobject_meet(s, t)
        join = subobject_join(s, t)
        ms = measure_of(state, s, tol)
        mt = measure_of(state, t, tol)
        mmeet = measure_of(state, meet, tol)
        mjoin = measure_of(state, join, tol)
        for cid in ms.values:
            res_mono = max(res_mono,
                           mmeet.values[cid] - ms.values[cid],
                           mmeet.values[cid] - mt.values[cid],
                           ms.values[cid] - mjoin.values[cid],
                           mt.values[cid] - mjoin.values[cid])
            res_mod = max(res_mod, abs(mjoin.values[cid] + mmeet.values[cid]
                                       - ms.values[cid] - mt.values[cid]))
        for sec in (ms, mt, mmeet, mjoin):
            res_rev = max(res_rev, order_reversal_violation(sec))
        neg = heyting_negation(s)
        mneg_meet = measure_of(state, subobject_meet(s, neg), tol)
        mneg_join = measure_of(state, subobject_join(s, neg), tol)
        res_cmeet = max(res_cmeet,
                        max(abs(v) for v in mneg_meet.values.values()))
        for v in mneg_join.values.values():
            cjoin_max = max(cjoin_max, v)
            strict = max(strict, 1.0 - v)
        if any(v > 1.0 + eps for v in mneg_join.values.values()):
            res_norm = max(res_norm, cjoin_max - 1.0)

    passed = max(res_norm, res_empty, res_mono, res_mod, res_rev,
                 res_cmeet) <= eps
    return MeasurePropertyReport(
        normalization=res_norm, empty=res_empty, monotonicity=res_mono,
        modularity=res_mod, order_reversal=res_rev,
        complement_meet=res_cmeet, complement_join_max=cjoin_max,
        strictness_witness=strict, pairs_checked=n_pairs, passed=passed,
    )


@dataclass
class GroupActionEntry:
    t: float
    context_id: str
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class GroupActionReport:
    entries: list
    max_residual: float

    def passed(self, threshold: float) -> bool:
        return self.max_residual <= threshold


def group_action_check(state: State, flow, sub: ClopenSubobject, t_values,
                       tol: TolerancePolicy | None = None) -> GroupActionReport:
    """Compare the pulled-back measure with the measure of the moved state.

    For each context V and parameter t the two sides are
        lhs = tr(rho * U_t'* P_{S at U_t V U_t*} U_t)
        rhs = tr(U_t rho U_t* * P_{S_V})
    which agree for every sub-object exactly when the state is invariant
    under the flow.  The component at the moved context is taken from the
    poset when present, else (for flow-equivariant families) computed
    directly as U_t P_{S_V} U_t*.
    """
    from .algebra import apply_automorphism

    tol = tol or sub.presheaf.tol
    poset = sub.presheaf.poset
    entries = []
    for t in t_values:
        u = flow.unitary(t) if hasattr(flow, "unitary") else flow(t)
        ud = dagger(u)
        rho_t = u @ state.matrix @ ud
        for cid in sub.components:
            v = poset.context(cid)
            p_here = sub.projection_at(cid).matrix
            moved = apply_automorphism(u, v, tol)
            target_id = poset.find_equal(moved)
            if target_id is not None and target_id in sub.components:
                p_moved = sub.projection_at(target_id).matrix
            elif sub.flow_equivariant:
                p_moved = u @ p_here @ ud
            else:
                raise PosetNotClosed(
                    f"moved context of {cid} at t={t!r} absent and the "
                    f"sub-object is not flow-equivariant"
                )
            lhs = float(np.real(np.trace(state.matrix @ ud @ p_moved @ u)))
            rhs = float(np.real(np.trace(rho_t @ p_here)))
            entries.append(GroupActionEntry(t=float(t), context_id=cid,
                                            lhs=lhs, rhs=rhs))
    worst = max((e.residual for e in entries), default=0.0)
    return GroupActionReport(entries=entries, max_residual=worst)


# --------------------------------------------------------------------------
# abstract measures and reconstruction


@dataclass
class AbstractMeasure:
    """A table (context id, frozen character set) -> value in [0, 1].

    Construction checks intra-context coherence where the table allows:
    normalization on the full set, vanishing on the empty set, and
    additivity over disjoint unions present in the table.
    """

    poset: ContextPoset
    table: dict
    tol: TolerancePolicy = field(default=DEFAULT_TOL, repr=False)

    def __post_init__(self):
        cleaned = {}
        for (cid, subset), value in self.table.items():
            v = self.poset.context(cid)  # raises ContextMissing
            subset = frozenset(int(i) for i in subset)
            if subset and (min(subset) < 0 or max(subset) >= v.k):
                raise DimMismatch(f"character index out of range for {cid}")
            value = float(value)
            if value < -self.tol.eps_measure or value > 1 + self.tol.eps_measure:
                raise NotAdditive(f"value {value!r} outside [0, 1]")
            cleaned[(cid, subset)] = value
        self.table = cleaned
        for (cid, subset), value in self.table.items():
            v = self.poset.context(cid)
            if len(subset) == v.k and abs(value - 1.0) > self.tol.eps_measure:
                raise NotAdditive(f"full set at {cid} has value {value!r}")
            if not subset and abs(value) > self.tol.eps_measure:
                raise NotAdditive(f"empty set at {cid} has value {value!r}")
        self._check_additivity()

    def _check_additivity(self):
        by_context = {}
        for (cid, subset), value in self.table.items():
            by_context.setdefault(cid, {})[subset] = value
        for cid, rows in by_context.items():
            subsets = list(rows)
            for i, a in enumerate(subsets):
                for b in subsets[i + 1:]:
                    if a & b:
                        continue
                    union = a | b
                    if union in rows:
                        gap = abs(rows[union] - rows[a] - rows[b])
                        if gap > 10 * self.tol.eps_measure:
                            raise NotAdditive(
                                f"additivity fails at {cid}: "
                                f"{sorted(a)} + {sorted(b)}"
                            )

    def projections(self):
        """Pairs (block-sum projection matrix, value), one per table row
        with a non-trivial subset."""
        out = []
        for (cid, subset), value in self.table.items():
            v = self.poset.context(cid)
            if not subset or len(subset) == v.k:
                continue
            out.append((s_inverse(subset, v).matrix, value))
        return out


def measure_table_of_state(state: State, poset: ContextPoset,
                           tol: TolerancePolicy = DEFAULT_TOL) -> AbstractMeasure:
    """The full measure table of a state: every character subset of every
    context, value tr(rho * P_subset)."""
    table = {}
    for v in poset.contexts:
        for mask in range(1 << v.k):
            subset = frozenset(i for i in range(v.k) if mask & (1 << i))
            p = s_inverse(subset, v)
            table[(v.id, subset)] = float(
                np.real(np.trace(state.matrix @ p.matrix)))
    return AbstractMeasure(poset, table, tol)


def _traceless_hermitian_basis(n: int):
    """Generalized Gell-Mann matrices: an orthogonal basis of traceless
    Hermitian n x n matrices (n^2 - 1 elements)."""
    basis = []
    for i in range(n):
        for j in range(i + 1, n):
            m = np.zeros((n, n), dtype=np.complex128)
            m[i, j] = m[j, i] = 1.0
            basis.append(m)
            m = np.zeros((n, n), dtype=np.complex128)
            m[i, j] = -1.0j
            m[j, i] = 1.0j
            basis.append(m)
    for l in range(1, n):
        m = np.zeros((n, n), dtype=np.complex128)
        for i in range(l):
            m[i, i] = 1.0
        m[l, l] = -float(l)
        basis.append(m * np.sqrt(2.0 / (l * (l + 1))))
    return basis


@dataclass
class ReconstructionResult:
    state: State
    fit_residual: float       # max |tr(rho_hat P) - value| over table rows
    spanned_dim: int          # rank of the design matrix (<= n^2 - 1)
    underdetermined: bool
    min_eigenvalue: float     # before clipping
    clip_magnitude: float     # total weight removed by clipping


def state_from_measure(measure: AbstractMeasure, dim: int | None = None,
                       tol: TolerancePolicy | None = None) -> ReconstructionResult:
    """Least-squares density matrix matching an abstract measure table.

    Cross-context consistency is enforced first: rows whose block-sum
    projections coincide must carry equal values (InconsistentTable).
    The fit runs over rho = I/n + sum_k c_k B_k with a traceless
    Hermitian basis, so the trace constraint is exact.  Eigenvalues in
    [-1e-6, 0) are clipped and the state renormalized; anything lower is
    Infeasible.  The result flags an underdetermined fit when the rows
    span fewer than n^2 - 1 traceless directions.
    """
    tol = tol or measure.tol
    rows = measure.projections()
    if not rows:
        raise InconsistentTable("table has no informative rows")
    n = dim or rows[0][0].shape[0]
    for i, (p, val) in enumerate(rows):
        if p.shape[0] != n:
            raise DimMismatch("mixed dimensions in measure table")
        for q, val2 in rows[i + 1:]:
            if frob(p - q) <= tol.eps_order and abs(val - val2) > 10 * tol.eps_measure:
                raise InconsistentTable(
                    f"equal projections carry values {val!r} and {val2!r}"
                )

    basis = _traceless_hermitian_basis(n)
    a = np.zeros((len(rows), len(basis)))
    b = np.zeros(len(rows))
    for r, (p, val) in enumerate(rows):
        b[r] = val - float(np.real(np.trace(p))) / n
        for k, bk in enumerate(basis):
            a[r, k] = float(np.real(np.trace(bk @ p)))
    coeff, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    rho = np.eye(n, dtype=np.complex128) / n
    for c, bk in zip(coeff, basis):
        rho = rho + c * bk

    w, u = np.linalg.eigh(rho)
    min_eig = float(w[0])
    if min_eig < -1e-6:
        raise Infeasible(
            f"no density matrix fits the table: minimal eigenvalue {min_eig!r}"
        )
    clipped = np.clip(w, 0.0, None)
    clip_mag = float(np.sum(clipped - w))
    rho_hat = (u * clipped) @ dagger(u)
    rho_hat = rho_hat / float(np.real(np.trace(rho_hat)))
    state = State(rho_hat, tol)
    fit_res = max(abs(float(np.real(np.trace(state.matrix @ p))) - val)
                  for p, val in rows)
    return ReconstructionResult(
        state=state,
        fit_residual=fit_res,
        spanned_dim=int(rank),
        underdetermined=bool(rank < n * n - 1),
        min_eigenvalue=min_eig,
        clip_magnitude=clip_mag,
    )
