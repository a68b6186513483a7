"""Scenario files: JSON descriptions of a model and the checks to run.

Complex entries are encoded as [re, im]; matrices as row-major nested
lists.  Every default is materialized into the resolved scenario dict so
the report echo pins down exactly what ran.  All validation failures
raise ScenarioError, which the CLI maps to exit code 2.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .algebra import Context, ContextPoset, build_poset, context_from_operators
from .errors import ContextMissing, ScenarioError, ToposKMSError
from .kms_external import CONVENTIONS, AutomorphismFlow, gibbs_state
from .kms_internal import SampledGroup
from .measure import State
from .presheaf import (
    SpectralPresheaf,
    daseinisation_subobject,
)
from .tolerances import DEFAULT_TOL, TolerancePolicy

MAX_DIM = 16

DEFAULT_CHECKS = [
    "poset", "presheaf", "measure", "external-c1", "external-c2",
    "truth", "equivalence", "internal-c1", "internal-c2",
    "modular", "reconstruction",
]

# fixed execution order; the CLI filters but never reorders
CHECK_ORDER = {name: i for i, name in enumerate(DEFAULT_CHECKS)}


def _as_number(x, what: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScenarioError(f"{what} must be a real number, got {x!r}")
    return float(x)


def _as_scalar(x, what: str) -> complex:
    """A JSON scalar: real number or [re, im] pair."""
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return complex(x)
    if (isinstance(x, list) and len(x) == 2
            and all(isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in x)):
        return complex(x[0], x[1])
    raise ScenarioError(f"{what} must be a number or [re, im] pair, got {x!r}")


def parse_matrix(m, what: str, dim: int | None = None) -> np.ndarray:
    if not isinstance(m, list) or not m or not all(isinstance(r, list) for r in m):
        raise ScenarioError(f"{what} must be a nested row-major list")
    rows = len(m)
    out = np.zeros((rows, len(m[0])), dtype=np.complex128)
    for i, row in enumerate(m):
        if len(row) != len(m[0]):
            raise ScenarioError(f"{what} has ragged rows")
        for j, x in enumerate(row):
            out[i, j] = _as_scalar(x, f"{what}[{i}][{j}]")
    if out.shape[0] != out.shape[1]:
        raise ScenarioError(f"{what} must be square, got {out.shape}")
    if dim is not None and out.shape[0] != dim:
        raise ScenarioError(f"{what} has dimension {out.shape[0]}, expected {dim}")
    return out


def parse_operator(spec, what: str, dim: int) -> np.ndarray:
    """A matrix given either literally or as {"diag": [...]}."""
    if isinstance(spec, dict) and set(spec) == {"diag"}:
        d = spec["diag"]
        if not isinstance(d, list) or len(d) != dim:
            raise ScenarioError(f"{what}.diag must be a list of length {dim}")
        return np.diag([_as_scalar(x, f"{what}.diag") for x in d]).astype(
            np.complex128)
    if isinstance(spec, dict) and set(spec) == {"matrix"}:
        return parse_matrix(spec["matrix"], what, dim)
    if isinstance(spec, list):
        return parse_matrix(spec, what, dim)
    raise ScenarioError(
        f"{what} must be a matrix, {{'matrix': ...}} or {{'diag': ...}}"
    )


def parse_vector(spec, what: str, dim: int) -> np.ndarray:
    if not isinstance(spec, list) or len(spec) != dim:
        raise ScenarioError(f"{what} must be a list of length {dim}")
    return np.array([_as_scalar(x, what) for x in spec], dtype=np.complex128)


@dataclass
class Scenario:
    """A parsed scenario plus every model object the checks need."""

    raw: dict
    resolved: dict
    name: str
    dim: int
    seed: int
    beta: float
    convention: str
    tol: TolerancePolicy
    checks: list
    state: State
    hamiltonian: np.ndarray | None
    flow: AutomorphismFlow | None
    group: SampledGroup | None
    projections: dict
    seed_contexts: list
    poset: ContextPoset
    presheaf: SpectralPresheaf
    subobjects: dict = field(default_factory=dict)
    t_grid: list = field(default_factory=list)
    r_queries: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    c2_context: str | None = None
    truth_stage: str | None = None


def _resolve_state(spec, dim, hamiltonian, beta, tol) -> tuple[State, dict]:
    if not isinstance(spec, dict):
        raise ScenarioError("state must be an object")
    try:
        if "matrix" in spec:
            return State(parse_matrix(spec["matrix"], "state.matrix", dim),
                         tol=tol), {"matrix": spec["matrix"]}
        if "pure" in spec:
            v = parse_vector(spec["pure"], "state.pure", dim)
            return State.pure(v, tol=tol), {"pure": spec["pure"]}
        if "spectrum" in spec:
            w = [_as_number(x, "state.spectrum") for x in spec["spectrum"]]
            if len(w) != dim:
                raise ScenarioError(
                    f"state.spectrum needs {dim} entries, got {len(w)}")
            if "basis" in spec:
                u = parse_matrix(spec["basis"], "state.basis", dim)
            else:
                u = np.eye(dim, dtype=np.complex128)
            rho = u @ np.diag(w).astype(np.complex128) @ u.conj().T
            return State(rho, tol=tol), {
                "spectrum": spec["spectrum"],
                "basis": spec.get("basis", "identity"),
            }
        if "gibbs" in spec:
            if hamiltonian is None:
                raise ScenarioError("gibbs state needs a hamiltonian")
            return gibbs_state(hamiltonian, beta, tol=tol), {
                "gibbs": True, "beta": beta}
    except ToposKMSError as exc:
        raise ScenarioError(f"state does not validate: {exc}") from exc
    raise ScenarioError(
        "state must provide one of: matrix, pure, spectrum, gibbs")


def _resolve_contexts(cfg, projections, dim, tol):
    if not isinstance(cfg, dict) or not cfg:
        raise ScenarioError("contexts must be a non-empty object")
    out = []
    for name, spec in cfg.items():
        if not isinstance(spec, dict):
            raise ScenarioError(f"context {name} must be an object")
        try:
            if "blocks" in spec:
                blocks = [
                    projections[b] if isinstance(b, str)
                    else parse_operator(b, f"context {name} block", dim)
                    for b in spec["blocks"]
                ]
                out.append(Context(blocks, context_id=name, tol=tol))
            elif "generated_by" in spec:
                ops = [
                    projections[b] if isinstance(b, str)
                    else parse_operator(b, f"context {name} generator", dim)
                    for b in spec["generated_by"]
                ]
                out.append(context_from_operators(ops, context_id=name, tol=tol))
            else:
                raise ScenarioError(
                    f"context {name} needs 'blocks' or 'generated_by'")
        except KeyError as exc:
            raise ScenarioError(
                f"context {name} references unknown projection {exc}") from exc
        except ToposKMSError as exc:
            raise ScenarioError(f"context {name} invalid: {exc}") from exc
    return out


def _resolve_subobjects(cfg, presheaf, group, projections, dim, tol):
    from .kms_external import flow_saturated_family

    subs = {}
    if cfg is None:
        return subs
    if not isinstance(cfg, dict):
        raise ScenarioError("subobjects must be an object")
    for name, spec in cfg.items():
        try:
            if "dasein" in spec:
                p = spec["dasein"]
                if isinstance(p, str):
                    if p not in projections:
                        raise ScenarioError(
                            f"subobject {name} references unknown "
                            f"projection {p!r}")
                    p = projections[p]
                else:
                    p = parse_operator(p, f"subobject {name}", dim)
                subs[name] = daseinisation_subobject(p, presheaf, name=name,
                                                     tol=tol)
            elif "saturated" in spec:
                s = spec["saturated"]
                if group is None:
                    raise ScenarioError(
                        f"subobject {name} needs a group for saturation")
                pairs = [(t, u) for t, u in group.real_unitaries()]
                subs[name] = flow_saturated_family(
                    presheaf, s["context"], set(s["blocks"]), pairs,
                    name=name, tol=tol)
            else:
                raise ScenarioError(
                    f"subobject {name} needs 'dasein' or 'saturated'")
        except ScenarioError:
            raise
        except (KeyError, ToposKMSError) as exc:
            raise ScenarioError(f"subobject {name} invalid: {exc}") from exc
    return subs


def load_scenario(path_or_dict, max_contexts_env: str | None = None) -> Scenario:
    """Parse, validate and materialize a scenario."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        try:
            with open(path_or_dict, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError("scenario root must be an object")

    dim = raw.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 2:
        raise ScenarioError("dim must be an integer >= 2")
    if dim > MAX_DIM:
        raise ScenarioError(f"dim {dim} exceeds the supported maximum {MAX_DIM}")

    name = raw.get("name", "scenario")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ScenarioError("seed must be an integer")
    beta = _as_number(raw.get("beta", 1.0), "beta")
    convention = raw.get("convention", "hamiltonian")
    if convention not in CONVENTIONS:
        raise ScenarioError(f"convention must be one of {CONVENTIONS}")

    tol_cfg = raw.get("tolerances", {})
    if not isinstance(tol_cfg, dict):
        raise ScenarioError("tolerances must be an object")
    try:
        tol = DEFAULT_TOL.override(**{k: _as_number(v, f"tolerances.{k}")
                                      for k, v in tol_cfg.items()})
    except KeyError as exc:
        raise ScenarioError(f"unknown tolerance key: {exc}") from exc

    checks = raw.get("checks", list(DEFAULT_CHECKS))
    if checks == "all":
        checks = list(DEFAULT_CHECKS)
    if (not isinstance(checks, list)
            or any(c not in CHECK_ORDER for c in checks)):
        raise ScenarioError(
            f"checks must be a sub-list of {DEFAULT_CHECKS}")
    checks = sorted(set(checks), key=CHECK_ORDER.__getitem__)

    hamiltonian = None
    if "hamiltonian" in raw:
        hamiltonian = parse_operator(raw["hamiltonian"], "hamiltonian", dim)

    state, state_echo = _resolve_state(raw.get("state"), dim, hamiltonian,
                                       beta, tol)

    flow = None
    if hamiltonian is not None:
        try:
            flow = AutomorphismFlow(hamiltonian, beta=beta,
                                    convention=convention, tol=tol)
        except ToposKMSError as exc:
            raise ScenarioError(f"hamiltonian invalid: {exc}") from exc

    projections = {
        pname: parse_operator(spec, f"projection {pname}", dim)
        for pname, spec in raw.get("projections", {}).items()
    }

    seeds = _resolve_contexts(raw.get("contexts"), projections, dim, tol)

    poset_cfg = raw.get("poset", {})
    if not isinstance(poset_cfg, dict):
        raise ScenarioError("poset must be an object")
    downward = bool(poset_cfg.get("downward_closure", True))
    meets = bool(poset_cfg.get("meet_closure", True))
    group_closure = bool(poset_cfg.get("group_closure", flow is not None))
    group_depth = int(poset_cfg.get("group_depth", 1))
    max_contexts = int(poset_cfg.get("max_contexts", 200))
    if max_contexts_env is None:
        max_contexts_env = os.environ.get("TOPOSKMS_MAX_CONTEXTS")
    if max_contexts_env:
        try:
            max_contexts = int(max_contexts_env)
        except ValueError as exc:
            raise ScenarioError(
                f"TOPOSKMS_MAX_CONTEXTS must be an integer: {exc}") from exc

    group = None
    group_cfg = raw.get("group")
    if group_cfg is not None:
        if flow is None:
            raise ScenarioError("group requires a hamiltonian")
        samples = [
            _as_number(t, "group.samples") for t in group_cfg.get("samples", [])
        ]
        gammas = group_cfg.get("strip_gammas")
        if gammas is not None:
            gammas = [_as_number(g, "group.strip_gammas") for g in gammas]
        try:
            group = SampledGroup(flow, samples, strip_gammas=gammas, tol=tol)
        except ToposKMSError as exc:
            raise ScenarioError(f"group grid invalid: {exc}") from exc

    t_grid = [_as_number(t, "t_grid") for t in raw.get("t_grid", [])]
    r_queries = [_as_number(r, "r_queries") for r in raw.get("r_queries", [])]

    try:
        poset = build_poset(
            seeds,
            downward_closure=downward,
            meet_closure=meets,
            group=group if group_closure else None,
            group_depth=group_depth,
            max_contexts=max_contexts,
            tol=tol,
        )
        if group_closure and flow is not None and t_grid:
            extra = SampledGroup(flow, sorted({0.0, *t_grid, *(-t for t in t_grid)}),
                                 strip_gammas=[0.0], tol=tol, validate=False)
            poset = build_poset(
                list(poset.contexts),
                downward_closure=downward,
                meet_closure=meets,
                group=extra,
                group_depth=group_depth,
                max_contexts=max_contexts,
                tol=tol,
            )
        presheaf = SpectralPresheaf(poset)
    except ToposKMSError as exc:
        raise ScenarioError(f"poset construction failed: {exc}") from exc

    subobjects = _resolve_subobjects(raw.get("subobjects"), presheaf, group,
                                     projections, dim, tol)

    pairs = raw.get("pairs")
    if pairs is None:
        names = sorted(subobjects)
        pairs = [[a, b] for a in names for b in names if a != b]
    for p in pairs:
        if (not isinstance(p, list) or len(p) != 2
                or any(q not in subobjects for q in p)):
            raise ScenarioError(f"pair {p} references unknown subobjects")

    for key, cid in (("c2_context", raw.get("c2_context")),
                     ("truth_stage", raw.get("truth_stage"))):
        if cid is not None:
            try:
                poset.index_of(cid)
            except ContextMissing as exc:
                raise ScenarioError(f"{key} {cid!r} not in poset") from exc
    c2_context = raw.get("c2_context")
    truth_stage = raw.get("truth_stage")

    resolved = {
        "name": name,
        "dim": dim,
        "seed": seed,
        "beta": beta,
        "convention": convention,
        "state": state_echo,
        "hamiltonian": raw.get("hamiltonian"),
        "projections": sorted(projections),
        "contexts": sorted(c.id for c in seeds),
        "poset": {
            "downward_closure": downward,
            "meet_closure": meets,
            "group_closure": group_closure,
            "group_depth": group_depth,
            "max_contexts": max_contexts,
            "size": len(poset.contexts),
        },
        "group": None if group is None else {
            "samples": group.samples,
            "strip_gammas": group.strip_gammas,
        },
        "t_grid": t_grid,
        "r_queries": r_queries,
        "subobjects": sorted(subobjects),
        "pairs": pairs,
        "c2_context": c2_context,
        "truth_stage": truth_stage,
        "checks": checks,
        "tolerances": {k: getattr(tol, k) for k in tol.__dataclass_fields__},
    }

    return Scenario(
        raw=raw, resolved=resolved, name=name, dim=dim, seed=seed, beta=beta,
        convention=convention, tol=tol, checks=checks, state=state,
        hamiltonian=hamiltonian, flow=flow, group=group,
        projections=projections, seed_contexts=seeds, poset=poset,
        presheaf=presheaf, subobjects=subobjects, t_grid=t_grid,
        r_queries=r_queries, pairs=pairs, c2_context=c2_context,
        truth_stage=truth_stage,
    )
