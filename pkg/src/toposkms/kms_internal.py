"""Internal KMS structure: the flow sampled at finitely many parameters
and treated as a group object acting on the context poset from inside.

A sampled group is a finite parameter set closed under negation and the
group law up to identity action (two parameters are identified when the
corresponding conjugations agree, e.g. a full period of an integer
spectrum).  Relative to a context V the samples decompose into orbits:
g ~ g' when alpha_{g-g'} fixes every block of V.  Internal objects
("breve" objects) carry one fiber per orbit representative; the internal
measure of a sub-object is the per-representative family of values
tr(rho P_{S at alpha_g V}).

The internal first condition asks this family to be constant over the
whole sample set; the second compares tr(rho P_T alpha_{g+i*gamma}(P_S))
with tr(rho alpha_g(P_S) P_T) at gamma = beta.  At gamma = 0 both sides
of the defining diagram collapse to the measure of the same meet, so the
degenerate check reduces to the first condition and shares its verdict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import Context, ContextPoset, apply_automorphism
from .errors import DomainMismatch, NotFaithful, PosetNotClosed
from .kms_external import AutomorphismFlow, TruthObject
from .measure import State
from .numerics import dagger, frob, null_space
from .presheaf import ClopenSubobject
from .tolerances import DEFAULT_TOL, TolerancePolicy


def same_action(u, v, eps: float = 1e-9) -> bool:
    """True when two unitaries implement the same conjugation, i.e.
    differ by a global phase."""
    n = u.shape[0]
    w = dagger(v) @ u
    phase = np.trace(w) / n
    return frob(w - phase * np.eye(n)) <= eps * max(1.0, abs(phase) * n)


class SampledGroup:
    """A finite sample of a one-parameter group, closed up to identity
    action under negation and addition, together with the strip offsets
    gamma in [0, beta] that extend it into the complex plane.

    The gamma = 0 copies of the real samples always belong to the
    extension, so the sampled group sits inside its own strip."""

    def __init__(self, flow: AutomorphismFlow, samples, strip_gammas=None,
                 tol: TolerancePolicy = DEFAULT_TOL, validate: bool = True):
        self.flow = flow
        self.samples = [float(t) for t in samples]
        if not any(abs(t) <= 1e-12 for t in self.samples):
            raise DomainMismatch("sampled group must contain 0")
        if strip_gammas is None:
            strip_gammas = [0.0, flow.beta]
        self.strip_gammas = sorted(float(g) for g in strip_gammas)
        if not any(abs(g) <= 1e-12 for g in self.strip_gammas):
            raise DomainMismatch(
                "strip offsets must include 0 so the group lies in its "
                "own extension"
            )
        if self.strip_gammas[0] < 0 or self.strip_gammas[-1] > flow.beta + 1e-12:
            raise DomainMismatch("strip offsets must lie in [0, beta]")
        self._unitaries = [flow.unitary(t) for t in self.samples]
        self.tol = tol
        if validate:
            self._validate()

    @classmethod
    def cyclic(cls, flow: AutomorphismFlow, n_samples: int, period: float,
               strip_gammas=None,
               tol: TolerancePolicy = DEFAULT_TOL) -> "SampledGroup":
        """n equally spaced samples of one period (the group law closes
        whenever conjugation by the full period is the identity)."""
        samples = [k * float(period) / n_samples for k in range(n_samples)]
        return cls(flow, samples, strip_gammas, tol)

    @property
    def gammas(self):
        return list(self.strip_gammas)

    def strip_samples(self):
        return [complex(t, g) for t in self.samples for g in self.strip_gammas]

    def __len__(self):
        return len(self.samples)

    def unitary(self, t: float) -> np.ndarray:
        for s, u in zip(self.samples, self._unitaries):
            if abs(s - t) <= 1e-12:
                return u
        return self.flow.unitary(t)

    def real_unitaries(self):
        return list(zip(self.samples, self._unitaries))

    def _has_action(self, u) -> bool:
        return any(same_action(u, v) for v in self._unitaries)

    def _validate(self):
        for t, u in zip(self.samples, self._unitaries):
            if not self._has_action(dagger(u)):
                raise DomainMismatch(
                    f"sample set is not closed under negation at t={t!r}"
                )
        for i, u in enumerate(self._unitaries):
            for v in self._unitaries[i:]:
                if not self._has_action(u @ v):
                    raise DomainMismatch(
                        "sample set is not closed under the group law"
                    )


def fixed_point_subgroup(group: SampledGroup, contexts,
                         tol: TolerancePolicy = DEFAULT_TOL):
    """Sample parameters whose conjugation fixes every block of every
    given context (pass a ContextPoset or an iterable of contexts)."""
    if isinstance(contexts, ContextPoset):
        contexts = contexts.contexts
    contexts = list(contexts)
    fixed = []
    for t, u in group.real_unitaries():
        ud = dagger(u)
        ok = True
        for v in contexts:
            for q in v.blocks:
                if frob(u @ q.matrix @ ud - q.matrix) > 10 * tol.eps_order:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            fixed.append(t)
    return fixed


@dataclass
class OrbitDecomposition:
    context_id: str
    orbits: list            # list of lists of sample parameters
    representatives: list   # smallest parameter of each orbit

    @property
    def count(self) -> int:
        return len(self.orbits)


def orbits(group: SampledGroup, context: Context,
           tol: TolerancePolicy = DEFAULT_TOL) -> OrbitDecomposition:
    """Partition the samples: g ~ g' when alpha_{g - g'} fixes every
    block of the context (computed as U_g U_g'^* directly, so the
    difference need not be a sample)."""
    pairs = group.real_unitaries()
    classes = []
    for t, u in pairs:
        placed = False
        for cls in classes:
            _, u0 = cls[0]
            w = u @ dagger(u0)
            wd = dagger(w)
            if all(frob(w @ q.matrix @ wd - q.matrix) <= 10 * tol.eps_order
                   for q in context.blocks):
                cls.append((t, u))
                placed = True
                break
        if not placed:
            classes.append([(t, u)])
    classes.sort(key=lambda cls: min(t for t, _ in cls))
    orbs = [sorted(t for t, _ in cls) for cls in classes]
    return OrbitDecomposition(context_id=context.id, orbits=orbs,
                              representatives=[o[0] for o in orbs])


@dataclass
class FaithfulnessReport:
    context_id: str
    faithful: list      # fixed sub-algebra is the scalars
    middle: list        # fixed sub-algebra strictly between
    fixes_all: list     # fixes every block

    @property
    def all_faithful_or_trivial(self) -> bool:
        return not self.middle


def faithful_automorphisms(group: SampledGroup, context: Context,
                           tol: TolerancePolicy = DEFAULT_TOL
                           ) -> FaithfulnessReport:
    """Classify each sample by the dimension of the fixed sub-algebra
    {A in V : alpha_g(A) = A}: dimension 1 means only scalars survive
    (the action is faithful on V), dimension k means every block is
    fixed; anything in between lands in the middle set."""
    k = context.k
    faithful, middle, fixes_all = [], [], []
    for t, u in group.real_unitaries():
        ud = dagger(u)
        cols = []
        for q in context.blocks:
            cols.append((u @ q.matrix @ ud - q.matrix).reshape(-1))
        b = np.stack(cols, axis=1)
        dim_fixed = null_space(b, tol.eps_eig).shape[1]
        if dim_fixed <= 1:
            faithful.append(t)
        elif dim_fixed >= k:
            fixes_all.append(t)
        else:
            middle.append(t)
    return FaithfulnessReport(context_id=context.id, faithful=faithful,
                              middle=middle, fixes_all=fixes_all)


def is_faithful_action(group: SampledGroup, context: Context,
                       tol: TolerancePolicy = DEFAULT_TOL) -> bool:
    """True when every sample outside the fixed-point set acts with
    scalar-only fixed sub-algebra and no sample lands in between."""
    report = faithful_automorphisms(group, context, tol)
    return not report.middle


def _moved_value(state: State, sub: ClopenSubobject, u, context_id: str,
                 tol: TolerancePolicy) -> float:
    """tr(rho P_{S at U V U*}), via poset lookup or, for flow-equivariant
    families, direct conjugation."""
    poset = sub.presheaf.poset
    v = poset.context(context_id)
    moved = apply_automorphism(u, v, tol)
    target_id = poset.find_equal(moved)
    if target_id is not None and target_id in sub.components:
        p = sub.projection_at(target_id).matrix
    elif sub.flow_equivariant:
        p = u @ sub.projection_at(context_id).matrix @ dagger(u)
    else:
        raise PosetNotClosed(
            f"context {context_id} moves out of the domain and the family "
            f"is not flow-equivariant"
        )
    return float(np.real(np.trace(state.matrix @ p)))


@dataclass
class BreveMeasure:
    context_id: str
    decomposition: OrbitDecomposition
    values: dict            # orbit representative -> value
    orbit_spread: float     # max in-orbit deviation (well-definedness)

    @property
    def spread(self) -> float:
        vals = list(self.values.values())
        return max(vals) - min(vals) if vals else 0.0


def breve_measure(state: State, sub: ClopenSubobject, group: SampledGroup,
                  context_id: str,
                  tol: TolerancePolicy | None = None) -> BreveMeasure:
    """The internal measure of a sub-object at a context: one value per
    orbit representative, tr(rho P_{S at alpha_g V}).  Values within an
    orbit are verified equal and the deviation reported."""
    tol = tol or sub.presheaf.tol
    v = sub.presheaf.poset.context(context_id)
    dec = orbits(group, v, tol)
    values = {}
    in_orbit = 0.0
    for orbit, rep in zip(dec.orbits, dec.representatives):
        vals = [_moved_value(state, sub, group.unitary(t), context_id, tol)
                for t in orbit]
        values[rep] = vals[0]
        in_orbit = max(in_orbit, max(vals) - min(vals))
    return BreveMeasure(context_id=context_id, decomposition=dec,
                        values=values, orbit_spread=in_orbit)


@dataclass
class InternalC1Entry:
    subobject: str
    context_id: str
    values: dict        # sample -> value

    @property
    def spread(self) -> float:
        vals = list(self.values.values())
        return max(vals) - min(vals) if vals else 0.0


@dataclass
class InternalC1Report:
    entries: list
    max_spread: float

    def passed(self, eps: float) -> bool:
        return self.max_spread <= eps

    def worst(self):
        return max(self.entries, key=lambda e: e.spread, default=None)


def check_internal_C1(state: State, sub, group: SampledGroup,
                      tol: TolerancePolicy | None = None) -> InternalC1Report:
    """Constancy of the internal measure: at every context of the
    sub-object domain the values tr(rho P_{S at alpha_g V}) must agree
    over the whole sample set."""
    subs = [sub] if isinstance(sub, ClopenSubobject) else list(sub)
    entries = []
    for s in subs:
        tol_s = tol or s.presheaf.tol
        for cid in sorted(s.components):
            values = {}
            for t, u in group.real_unitaries():
                values[t] = _moved_value(state, s, u, cid, tol_s)
            entries.append(InternalC1Entry(subobject=s.name or "S",
                                           context_id=cid, values=values))
    worst = max((e.spread for e in entries), default=0.0)
    return InternalC1Report(entries=entries, max_spread=worst)


@dataclass
class InternalC2Entry:
    context_id: str
    g: float
    lhs: complex    # tr(rho P_T alpha_{g + i gamma}(P_S))
    rhs: complex    # tr(rho alpha_g(P_S) P_T)

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


@dataclass
class InternalC2Report:
    context_ids: list
    gamma: float
    mode: str       # "strip" or "constancy"
    entries: list
    max_residual: float
    constancy: InternalC1Report | None = None

    def passed(self, eps: float) -> bool:
        return self.max_residual <= eps


def check_internal_C2(state: State, group: SampledGroup,
                      sub_s: ClopenSubobject, sub_t: ClopenSubobject,
                      context_ids=None, gamma: float | None = None,
                      tol: TolerancePolicy | None = None) -> InternalC2Report:
    """Boundary condition over the sampled group: for every sample g and
    every shared context, tr(rho P_T alpha_{g + i gamma}(P_S)) is compared
    with tr(rho alpha_g(P_S) P_T).  gamma defaults to the flow temperature.

    The strip degenerates at gamma = 0: both sides of the defining diagram
    become meets of the same pair of sub-objects and agree identically, and
    what survives is the requirement that the measures of S and T are
    constant along the sampled orbits.  That degenerate mode therefore
    reports the constancy spread, so its verdict matches
    check_internal_C1 on the same inputs."""
    flow = group.flow
    tol = tol or sub_s.presheaf.tol
    if context_ids is None:
        context_ids = sorted(set(sub_s.components) & set(sub_t.components))
    gamma = flow.beta if gamma is None else float(gamma)

    if abs(gamma) <= 1e-14:
        constancy = check_internal_C1(state, [sub_s, sub_t], group, tol)
        entries = [e for e in constancy.entries
                   if e.context_id in set(context_ids)]
        worst = max((e.spread for e in entries), default=0.0)
        return InternalC2Report(context_ids=list(context_ids), gamma=0.0,
                                mode="constancy", entries=entries,
                                max_residual=worst, constancy=constancy)

    if not state.is_faithful(tol):
        raise NotFaithful("boundary comparison requires a faithful state")
    rho = state.matrix
    entries = []
    for cid in context_ids:
        ps = sub_s.projection_at(cid).matrix
        pt = sub_t.projection_at(cid).matrix
        for g in group.samples:
            twisted = flow.apply_complex(complex(g, gamma), ps)
            lhs = complex(np.trace(rho @ pt @ twisted))
            rhs = complex(np.trace(rho @ flow.apply(g, ps) @ pt))
            entries.append(InternalC2Entry(context_id=cid, g=float(g),
                                           lhs=lhs, rhs=rhs))
    worst = max((e.residual for e in entries), default=0.0)
    return InternalC2Report(context_ids=list(context_ids), gamma=gamma,
                            mode="strip", entries=entries,
                            max_residual=worst)


# --------------------------------------------------------------------------
# breve objects: internal presheaves fibred over orbit representatives


@dataclass
class BreveObject:
    context_id: str
    decomposition: OrbitDecomposition
    fibers: dict    # orbit representative -> payload


def breve_object(group: SampledGroup, poset: ContextPoset, context_id: str,
                 fiber_fn, tol: TolerancePolicy = DEFAULT_TOL) -> BreveObject:
    """Generic internal object at a context: one fiber per orbit
    representative, computed by fiber_fn(g, U_g, moved_context_id).
    The moved context id is None when the orbit leaves the poset."""
    v = poset.context(context_id)
    dec = orbits(group, v, tol)
    fibers = {}
    for rep in dec.representatives:
        u = group.unitary(rep)
        moved = apply_automorphism(u, v, tol)
        fibers[rep] = fiber_fn(rep, u, poset.find_equal(moved))
    return BreveObject(context_id=context_id, decomposition=dec,
                       fibers=fibers)


def breve_spectrum(group: SampledGroup, poset: ContextPoset, context_id: str,
                   tol: TolerancePolicy = DEFAULT_TOL) -> BreveObject:
    """Internal spectral object: the fiber at g is the character count
    of the moved context (constant along the flow)."""
    k = poset.context(context_id).k

    def fiber(_g, _u, target_id):
        return poset.context(target_id).k if target_id is not None else k

    return breve_object(group, poset, context_id, fiber, tol)


def breve_truth_thresholds(truth: TruthObject, sub: ClopenSubobject,
                           group: SampledGroup, context_id: str,
                           tol: TolerancePolicy | None = None) -> BreveObject:
    """Internal truth thresholds: the fiber at g is tau(S, alpha_g V),
    the membership threshold of the sub-object at the moved stage."""
    tol = tol or truth.tol
    poset = truth.presheaf.poset

    def fiber(g, _u, target_id):
        if target_id is None:
            raise PosetNotClosed(
                f"stage context {context_id} leaves the poset at g={g!r}"
            )
        return truth.tau(sub, target_id)

    return breve_object(group, poset, context_id, fiber, tol)
