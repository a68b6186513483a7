"""Abelian von Neumann sub-algebras of M_n and the poset they form.

A context is a finite-dimensional abelian *-algebra given by its minimal
projections: a partition of the identity into k >= 2 orthogonal blocks
(the trivial algebra C.1 is excluded).  Contexts are ordered by algebra
inclusion, which for partitions means coarse-graining: V' <= V iff every
block of V' is a sum of blocks of V.

build_poset grows a finite poset from seed contexts by three optional
closures: downward closure (all coarse-grainings), meet closure (pairwise
algebra intersections) and group closure (images under a sampled
one-parameter unitary group).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    ContextMissing,
    DimMismatch,
    LatticeTooLarge,
    NonCommuting,
    NotInAlgebra,
    NotIncluded,
    NotUnitary,
    PosetTooLarge,
    TrivialAlgebra,
)
from .numerics import (
    Projection,
    as_complex_matrix,
    dagger,
    frob,
    hermitian_eig,
    is_unitary,
    null_space,
    proj_leq,
    vec,
)
from .tolerances import DEFAULT_TOL, TolerancePolicy

#: hard cap on the number of blocks for 2^k lattice enumerations
MAX_LATTICE_BLOCKS = 20


def _rounded_bytes(m: np.ndarray, decimals: int = 6) -> bytes:
    r = np.round(m.real, decimals) + 0.0  # +0.0 normalizes -0.0
    i = np.round(m.imag, decimals) + 0.0
    return r.tobytes() + i.tobytes()


class Context:
    """An abelian sub-algebra of M_n, stored as its minimal projections.

    blocks are kept in a canonical order (rank, then rounded entries) so
    that fingerprints and character indexing are deterministic.
    """

    __slots__ = ("blocks", "dim", "id", "fingerprint")

    def __init__(self, blocks, context_id: str | None = None,
                 tol: TolerancePolicy = DEFAULT_TOL):
        blocks = [b if isinstance(b, Projection) else Projection(b, tol) for b in blocks]
        if len(blocks) < 2:
            raise TrivialAlgebra("a context needs at least two blocks; C.1 is excluded")
        dim = blocks[0].dim
        if any(b.dim != dim for b in blocks):
            raise DimMismatch("blocks have inconsistent dimensions")
        total = np.zeros((dim, dim), dtype=np.complex128)
        for a in blocks:
            total += a.matrix
        if frob(total - np.eye(dim)) > max(tol.eps_idem * 10 * len(blocks), 1e-9):
            raise NotInAlgebra("blocks do not sum to the identity")
        for i in range(len(blocks)):
            for j in range(i + 1, len(blocks)):
                if frob(blocks[i].matrix @ blocks[j].matrix) > tol.eps_order:
                    raise NotInAlgebra("blocks are not pairwise orthogonal")
        blocks.sort(key=lambda b: (b.rank, _rounded_bytes(b.matrix)))
        self.blocks = tuple(blocks)
        self.dim = dim
        h = hashlib.sha1()
        h.update(f"{dim}:{len(blocks)}".encode())
        for b in self.blocks:
            h.update(str(b.rank).encode())
            h.update(_rounded_bytes(b.matrix))
        self.fingerprint = h.hexdigest()
        self.id = context_id if context_id is not None else "V" + self.fingerprint[:10]

    @property
    def k(self) -> int:
        return len(self.blocks)

    def signature(self):
        """Cheap invariant used to bucket candidates for equality tests."""
        return (self.dim, self.k, tuple(b.rank for b in self.blocks))

    def span_basis(self):
        return [b.matrix for b in self.blocks]

    def __repr__(self):
        return f"Context(id={self.id!r}, dim={self.dim}, k={self.k})"


def contexts_equal(v1: Context, v2: Context, tol: TolerancePolicy = DEFAULT_TOL) -> bool:
    """Equality up to eps_order: fingerprint fast path, then greedy block
    matching by minimal Frobenius distance."""
    if v1.signature() != v2.signature():
        return False
    if v1.fingerprint == v2.fingerprint:
        return True
    unused = list(range(v2.k))
    for b in v1.blocks:
        best, best_d = None, None
        for j in unused:
            c = v2.blocks[j]
            if c.rank != b.rank:
                continue
            d = frob(b.matrix - c.matrix)
            if best_d is None or d < best_d:
                best, best_d = j, d
        if best is None or best_d > tol.eps_order:
            return False
        unused.remove(best)
    return True


def _hermitian_parts(a: np.ndarray):
    return (a + dagger(a)) / 2.0, (a - dagger(a)) / 2.0j


def _cluster(values: np.ndarray, width: float):
    """Group sorted real values into clusters separated by more than width."""
    order = np.argsort(values, kind="stable")
    clusters, current = [], [order[0]]
    for idx in order[1:]:
        if values[idx] - values[current[-1]] <= width:
            current.append(idx)
        else:
            clusters.append(current)
            current = [idx]
    clusters.append(current)
    return clusters


def context_from_operators(ops, context_id: str | None = None,
                           tol: TolerancePolicy = DEFAULT_TOL) -> Context:
    """Smallest context containing the given pairwise-commuting normal
    matrices, by sequential partition refinement of eigenspaces.

    Each operator is split into commuting Hermitian real/imaginary parts;
    each part refines the current joint eigenspace partition.  Degenerate
    eigenvalues are clustered at eps_eig * max(1, ||A||_F).
    """
    mats = [as_complex_matrix(a) for a in ops]
    if not mats:
        raise TrivialAlgebra("no operators given")
    n = mats[0].shape[0]
    for a in mats:
        if a.shape[0] != n:
            raise DimMismatch("operators have inconsistent dimensions")
    for i in range(len(mats)):
        hi = mats[i] @ dagger(mats[i]) - dagger(mats[i]) @ mats[i]
        if frob(hi) > tol.eps_order * max(1.0, frob(mats[i]) ** 2):
            raise NonCommuting(f"operator {i} is not normal")
        for j in range(i + 1, len(mats)):
            comm = mats[i] @ mats[j] - mats[j] @ mats[i]
            if frob(comm) > tol.eps_order * max(1.0, frob(mats[i]) * frob(mats[j])):
                raise NonCommuting(f"operators {i} and {j} do not commute")

    # each subspace is carried as an n x r matrix of orthonormal columns
    subspaces = [np.eye(n, dtype=np.complex128)]
    parts = []
    for a in mats:
        h, s = _hermitian_parts(a)
        parts.extend([h, s])
    for part in parts:
        scale = tol.eps_eig * max(1.0, frob(part))
        refined = []
        for y in subspaces:
            if y.shape[1] == 1:
                refined.append(y)
                continue
            compressed = dagger(y) @ part @ y
            w, u = hermitian_eig(compressed, tol)
            for cluster in _cluster(w, scale):
                refined.append(y @ u[:, cluster])
        subspaces = refined

    if len(subspaces) < 2:
        raise TrivialAlgebra("operators generate only the trivial algebra C.1")
    blocks = [Projection(y @ dagger(y), tol) for y in subspaces]
    ctx = Context(blocks, context_id, tol)
    # every input operator must be recovered from the block expansion
    for a in mats:
        coeffs = [np.trace(b.matrix @ a) / b.rank for b in ctx.blocks]
        resid = a - sum(c * b.matrix for c, b in zip(coeffs, ctx.blocks))
        if frob(resid) > max(tol.eps_eig * max(1.0, frob(a)) * n, 1e-8):
            raise NonCommuting("refinement failed to diagonalize an operator")
    return ctx


def projection_lattice(v: Context):
    """All 2^k subset-sum projections of the context, as (indices, matrix).

    Ordered by subset bitmask; guarded against k > MAX_LATTICE_BLOCKS.
    """
    if v.k > MAX_LATTICE_BLOCKS:
        raise LatticeTooLarge(f"2^{v.k} lattice elements exceed the enumeration guard")
    out = []
    for mask in range(1 << v.k):
        indices = frozenset(i for i in range(v.k) if mask & (1 << i))
        m = np.zeros((v.dim, v.dim), dtype=np.complex128)
        for i in indices:
            m = m + v.blocks[i].matrix
        out.append((indices, m))
    return out


def lattice_projection(v: Context, indices) -> Projection:
    m = np.zeros((v.dim, v.dim), dtype=np.complex128)
    for i in indices:
        m = m + v.blocks[i].matrix
    return Projection(m)


def algebra_element_coefficients(v: Context, a, tol: TolerancePolicy = DEFAULT_TOL):
    """Coefficients of a in the block basis; NotInAlgebra if a is outside
    the span of the blocks (within eps_order)."""
    m = as_complex_matrix(a)
    coeffs = np.array([np.trace(b.matrix @ m) / b.rank for b in v.blocks])
    resid = m - sum(c * b.matrix for c, b in zip(coeffs, v.blocks))
    if frob(resid) > tol.eps_order * max(1.0, frob(m)):
        raise NotInAlgebra("operator is not in the algebra spanned by the blocks")
    return coeffs


@dataclass(frozen=True)
class Character:
    """A point of the Gel'fand spectrum: evaluation against one block."""
    context_id: str
    index: int


def spectrum(v: Context):
    return [Character(v.id, i) for i in range(v.k)]


def evaluate(v: Context, character: Character, a,
             tol: TolerancePolicy = DEFAULT_TOL) -> complex:
    """Value of the character on an algebra element (its block coefficient)."""
    if character.context_id != v.id:
        raise ContextMissing("character belongs to a different context")
    coeffs = algebra_element_coefficients(v, a, tol)
    return complex(coeffs[character.index])


def commutant(matrices, n: int | None = None, rtol: float = 1e-10):
    """Orthonormalized basis of {X : [X, B] = 0 for every given B}.

    Solved as the joint null space of the stacked row-major superoperators
    1 (x) B^T - B (x) 1.
    """
    mats = [as_complex_matrix(b) for b in matrices]
    if not mats:
        raise ValueError("need at least one matrix")
    n = n or mats[0].shape[0]
    eye = np.eye(n, dtype=np.complex128)
    rows = []
    for b in mats:
        rows.append(np.kron(eye, b.T) - np.kron(b, eye))
    stacked = np.vstack(rows)
    basis = null_space(stacked, rtol)
    return [basis[:, j].reshape(n, n) for j in range(basis.shape[1])]


def _span_projector(mats, n: int) -> np.ndarray:
    """Orthogonal projector (in HS space) onto span of the given matrices."""
    cols = np.column_stack([vec(m) for m in mats])
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0] if s.size else 0.0)))
    u = u[:, :rank]
    return u @ dagger(u)


def bicommutant_check(v: Context, tol: TolerancePolicy = DEFAULT_TOL):
    """Verify V'' = V (span equality of HS projectors) and report dim V'."""
    base = v.span_basis()
    comm = commutant(base, v.dim)
    bicomm = commutant(comm, v.dim)
    p_v = _span_projector(base, v.dim)
    p_bi = _span_projector(bicomm, v.dim)
    ok = frob(p_v - p_bi) <= max(tol.eps_order * v.dim, 1e-7)
    return ok, len(comm)


def includes(v_prime: Context, v: Context, tol: TolerancePolicy = DEFAULT_TOL) -> bool:
    """True iff V' is a sub-algebra of V (every V'-block sums V-blocks)."""
    if v_prime.dim != v.dim:
        raise DimMismatch("contexts live in different dimensions")
    assignment = {}
    for i, q in enumerate(v.blocks):
        homes = [j for j, qp in enumerate(v_prime.blocks) if proj_leq(q, qp, tol)]
        if len(homes) != 1:
            return False
        assignment[i] = homes[0]
    for j, qp in enumerate(v_prime.blocks):
        total = np.zeros((v.dim, v.dim), dtype=np.complex128)
        for i, home in assignment.items():
            if home == j:
                total += v.blocks[i].matrix
        if frob(total - qp.matrix) > max(tol.eps_order * v.k, tol.eps_order):
            return False
    return True


def coarse_graining_map(v: Context, v_prime: Context,
                        tol: TolerancePolicy = DEFAULT_TOL):
    """Map block-index of V -> block-index of V' (V' <= V). NotIncluded if
    the contexts are not comparable."""
    if not includes(v_prime, v, tol):
        raise NotIncluded(f"{v_prime.id} is not a coarse-graining of {v.id}")
    out = []
    for q in v.blocks:
        for j, qp in enumerate(v_prime.blocks):
            if proj_leq(q, qp, tol):
                out.append(j)
                break
    return tuple(out)


def apply_automorphism(u, v: Context, tol: TolerancePolicy = DEFAULT_TOL,
                       context_id: str | None = None) -> Context:
    """Image context with blocks U Q_i U*; U must be unitary within 1e-10."""
    um = as_complex_matrix(u)
    if not is_unitary(um, 1e-10):
        raise NotUnitary("automorphism matrix is not unitary within 1e-10")
    blocks = [Projection(um @ b.matrix @ dagger(um), tol) for b in v.blocks]
    return Context(blocks, context_id, tol)


def _set_partitions(k: int):
    """All partitions of {0..k-1} via restricted growth strings, in a
    deterministic order; excludes nothing (caller filters)."""
    rgs = [0] * k

    def gen(i, max_used):
        if i == k:
            yield tuple(rgs)
            return
        for c in range(max_used + 2):
            rgs[i] = c
            yield from gen(i + 1, max(max_used, c))

    yield from gen(1, 0) if k > 0 else iter(())


class ContextPoset:
    """A finite poset of contexts with the inclusion order precomputed.

    leq[i, j] is True iff contexts[i] <= contexts[j] (i is a
    coarse-graining of j).  hasse lists cover pairs (child, parent).
    orbit_provenance maps a context index added by group closure to
    (t, base_index).
    """

    def __init__(self, contexts, tol: TolerancePolicy = DEFAULT_TOL,
                 closure_flags=None, orbit_provenance=None):
        self.contexts = list(contexts)
        self.tol = tol
        self.by_id = {v.id: i for i, v in enumerate(self.contexts)}
        if len(self.by_id) != len(self.contexts):
            raise ContextMissing("duplicate context ids in poset")
        self.closure_flags = dict(closure_flags or {})
        self.orbit_provenance = dict(orbit_provenance or {})
        n = len(self.contexts)
        leq = np.zeros((n, n), dtype=bool)
        for i, vi in enumerate(self.contexts):
            for j, vj in enumerate(self.contexts):
                if i == j:
                    leq[i, j] = True
                elif vi.dim == vj.dim and vi.k <= vj.k:
                    leq[i, j] = includes(vi, vj, tol)
        self.leq = leq
        self.hasse = []
        for i in range(n):
            for j in range(n):
                if i == j or not leq[i, j]:
                    continue
                if any(leq[i, m] and leq[m, j] and m not in (i, j) for m in range(n)):
                    continue
                self.hasse.append((i, j))

    def __len__(self):
        return len(self.contexts)

    def index_of(self, context_id: str) -> int:
        if context_id not in self.by_id:
            raise ContextMissing(f"no context with id {context_id!r}")
        return self.by_id[context_id]

    def context(self, context_id: str) -> Context:
        return self.contexts[self.index_of(context_id)]

    def find_equal(self, candidate: Context) -> str | None:
        """Id of a poset context equal to the candidate, or None."""
        for v in self.contexts:
            if contexts_equal(v, candidate, self.tol):
                return v.id
        return None

    def lower_set(self, context_id: str):
        j = self.index_of(context_id)
        return [self.contexts[i].id for i in range(len(self.contexts)) if self.leq[i, j]]

    def is_lower_set(self, ids) -> bool:
        idx = {self.index_of(c) for c in ids}
        for j in idx:
            for i in range(len(self.contexts)):
                if self.leq[i, j] and i not in idx:
                    return False
        return True

    def comparable_pairs(self):
        """(smaller_id, larger_id) for every strict inclusion."""
        n = len(self.contexts)
        out = []
        for i in range(n):
            for j in range(n):
                if i != j and self.leq[i, j]:
                    out.append((self.contexts[i].id, self.contexts[j].id))
        return out

    def maximal_ids(self):
        n = len(self.contexts)
        return [self.contexts[i].id for i in range(n)
                if not any(self.leq[i, j] for j in range(n) if j != i)]


def _coarse_grainings(v: Context, tol: TolerancePolicy):
    """All proper coarse-grainings of a context (excluding the trivial
    one-block merge), as new Contexts."""
    out = []
    for rgs in _set_partitions(v.k):
        groups = {}
        for i, g in enumerate(rgs):
            groups.setdefault(g, []).append(i)
        if len(groups) in (1, v.k):
            continue  # trivial algebra, or the context itself
        blocks = []
        for g in sorted(groups):
            m = np.zeros((v.dim, v.dim), dtype=np.complex128)
            for i in groups[g]:
                m = m + v.blocks[i].matrix
            blocks.append(Projection(m, tol))
        out.append(Context(blocks, None, tol))
    return out


def meet_context(v1: Context, v2: Context, tol: TolerancePolicy = DEFAULT_TOL):
    """Intersection algebra V1 ∧ V2, or None when it is trivial.

    Blocks are the connected components of the block-overlap graph
    (an edge wherever ||Q R||_F > eps_order).
    """
    if v1.dim != v2.dim:
        raise DimMismatch("contexts live in different dimensions")
    nodes = [(0, i) for i in range(v1.k)] + [(1, j) for j in range(v2.k)]
    parent = {nd: nd for nd in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for i in range(v1.k):
        for j in range(v2.k):
            if frob(v1.blocks[i].matrix @ v2.blocks[j].matrix) > tol.eps_order:
                union((0, i), (1, j))
    comps = {}
    for nd in nodes:
        comps.setdefault(find(nd), []).append(nd)
    if len(comps) < 2:
        return None
    blocks = []
    for members in comps.values():
        m = np.zeros((v1.dim, v1.dim), dtype=np.complex128)
        m2 = np.zeros_like(m)
        for side, idx in members:
            if side == 0:
                m = m + v1.blocks[idx].matrix
            else:
                m2 = m2 + v2.blocks[idx].matrix
        if frob(m - m2) > max(tol.eps_order * (v1.k + v2.k), tol.eps_order):
            return None  # not a common coarse-graining; intersection trivial
        blocks.append(Projection(m, tol))
    return Context(blocks, None, tol)


def build_poset(seeds, *, downward_closure: bool = False, meet_closure: bool = False,
                group=None, group_depth: int | None = None, max_contexts: int = 500,
                tol: TolerancePolicy = DEFAULT_TOL) -> ContextPoset:
    """Grow a poset from seed contexts under the requested closures.

    group may be a kms_internal.SampledGroup or any object with
    .real_unitaries() -> [(t, U)].  group_depth=None iterates group
    closure to a fixpoint; a positive integer bounds the number of
    closure sweeps (needed for non-closing sample grids).  Exceeding
    max_contexts raises PosetTooLarge.
    """
    contexts: list[Context] = []
    provenance = {}

    def add(candidate: Context, prov=None) -> int:
        for i, v in enumerate(contexts):
            if contexts_equal(v, candidate, tol):
                return i
        if len(contexts) >= max_contexts:
            raise PosetTooLarge(
                f"poset exceeded max_contexts={max_contexts} during closure"
            )
        contexts.append(candidate)
        if prov is not None:
            provenance[len(contexts) - 1] = prov
        return len(contexts) - 1

    for s in seeds:
        add(s)

    group_pairs = []
    if group is not None:
        group_pairs = [(t, u) for t, u in group.real_unitaries() if t != 0.0]

    changed = True
    sweeps = 0
    while changed:
        changed = False
        sweeps += 1
        if downward_closure:
            for v in list(contexts):
                for w in _coarse_grainings(v, tol):
                    before = len(contexts)
                    add(w)
                    changed = changed or len(contexts) > before
        if meet_closure:
            snapshot = list(contexts)
            for i in range(len(snapshot)):
                for j in range(i + 1, len(snapshot)):
                    w = meet_context(snapshot[i], snapshot[j], tol)
                    if w is not None:
                        before = len(contexts)
                        add(w)
                        changed = changed or len(contexts) > before
        if group_pairs and (group_depth is None or sweeps <= group_depth):
            for idx, v in enumerate(list(contexts)):
                for t, u in group_pairs:
                    w = apply_automorphism(u, v, tol)
                    before = len(contexts)
                    base = provenance.get(idx)
                    # track provenance back to the original (t composes)
                    if base is not None:
                        prov = (t + base[0], base[1])
                    else:
                        prov = (t, idx)
                    k = add(w, prov)
                    changed = changed or len(contexts) > before
        if group_pairs and group_depth is not None and sweeps >= group_depth \
                and not downward_closure and not meet_closure:
            break

    return ContextPoset(contexts, tol,
                        closure_flags={
                            "downward_closure": downward_closure,
                            "meet_closure": meet_closure,
                            "group_closure": bool(group_pairs),
                            "group_depth": group_depth,
                        },
                        orbit_provenance=provenance)
