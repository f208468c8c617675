"""Graph potentials: linear sufficient statistics plus a log reference
measure, evaluated in full or as single-toggle change scores.

The potential of a graph is ``theta . w(g, X) + ln h(g)``. Change scores are
computed incrementally from local structure (never by re-evaluating the full
statistic vector), and every statistic advertises the set of toggles whose
change score it can perturb, which drives the simulation engine's dirty-set
cache updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

import numpy as np

from .graphs import Graph, Toggle, incident_toggle_indices, toggle_index

EDGES = "edges"
MUTUALS = "mutuals"
TRIANGLES = "triangles"
TWOSTARS = "twostars"
EDGECOV = "edgecov"


class PotentialError(ValueError):
    pass


class DirtyScope(IntEnum):
    """How far a single toggle's effect on other change scores reaches.

    SELF: only the toggled pair's own change score moves (its direction
    flips). DYAD: the reverse pair is affected too. INCIDENT: every toggle
    sharing a vertex with the flipped pair is affected.
    """

    SELF = 0
    DYAD = 1
    INCIDENT = 2


@dataclass(frozen=True, eq=False)
class StatisticTerm:
    """One sufficient-statistic term. ``covariate`` is required for the
    edge-covariate kind and must be an n-by-n real matrix."""

    kind: str
    covariate: np.ndarray | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in _STATS:
            raise PotentialError(f"unknown statistic kind {self.kind!r}")
        if self.kind == EDGECOV:
            if self.covariate is None:
                raise PotentialError("edgecov term requires a covariate matrix")
            cov = np.asarray(self.covariate, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise PotentialError(f"covariate must be square, got shape {cov.shape}")
            object.__setattr__(self, "covariate", cov)
        elif self.covariate is not None:
            raise PotentialError(f"{self.kind} term takes no covariate")
        if self.label is None:
            object.__setattr__(self, "label", self.kind)


def terms_equal(a: StatisticTerm, b: StatisticTerm) -> bool:
    if a.kind != b.kind:
        return False
    if a.covariate is None:
        return b.covariate is None
    return b.covariate is not None and np.array_equal(a.covariate, b.covariate)


COUNTING = "counting"
KRIVITSKY = "krivitsky"
RECIPROCITY = "reciprocity"
POWERLAW = "powerlaw"

_REF_KINDS = (COUNTING, KRIVITSKY, RECIPROCITY, POWERLAW)


@dataclass(frozen=True)
class ReferenceMeasure:
    """Baseline log-weighting over graphs.

    counting:    ln h = 0
    krivitsky:   ln h = -w_e ln n          (sparse-graph baseline)
    reciprocity: ln h = (w_m - w_e) ln n   (directed only)
    powerlaw:    ln h = (1-gamma)(w_m - w_e) ln n   (directed only)
    """

    kind: str = COUNTING
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in _REF_KINDS:
            raise PotentialError(f"unknown reference measure {self.kind!r}")
        if self.kind == POWERLAW:
            if self.gamma is None:
                raise PotentialError("powerlaw reference requires gamma")
        elif self.gamma is not None:
            raise PotentialError(f"{self.kind} reference takes no gamma")

    @property
    def needs_directed(self) -> bool:
        return self.kind in (RECIPROCITY, POWERLAW)


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A full potential: statistic terms, coefficients, reference measure."""

    terms: tuple[StatisticTerm, ...]
    theta: np.ndarray
    reference: ReferenceMeasure = ReferenceMeasure(COUNTING)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or len(theta) != len(self.terms):
            raise PotentialError(
                f"theta length {theta.shape} does not match {len(self.terms)} terms"
            )
        object.__setattr__(self, "theta", theta)

    def check_compatible(self, g: Graph) -> None:
        for term in self.terms:
            impl = _STATS[term.kind]
            if g.directed and not impl.directed_ok:
                raise PotentialError(f"{term.kind} not defined for directed graphs")
            if not g.directed and not impl.undirected_ok:
                raise PotentialError(f"{term.kind} requires a directed graph")
            if term.covariate is not None and term.covariate.shape[0] != g.n:
                raise PotentialError(
                    f"covariate is {term.covariate.shape[0]}x{term.covariate.shape[0]}"
                    f" but graph has n={g.n}"
                )
        if self.reference.needs_directed and not g.directed:
            raise PotentialError(f"{self.reference.kind} reference requires a directed graph")

    def labels(self) -> list[str]:
        return [t.label or t.kind for t in self.terms]


def potential_spec(
    terms: list[StatisticTerm] | list[str],
    theta,
    reference: ReferenceMeasure | str = COUNTING,
    gamma: float | None = None,
) -> PotentialSpec:
    """Convenience constructor accepting plain kind strings."""
    built = tuple(t if isinstance(t, StatisticTerm) else StatisticTerm(t) for t in terms)
    if isinstance(reference, str):
        reference = ReferenceMeasure(reference, gamma)
    return PotentialSpec(built, np.asarray(theta, dtype=float), reference)


# ---------------------------------------------------------------------------
# Statistic implementations. Registering a new kind here is the extension
# point for additional terms.


@dataclass(frozen=True)
class StatisticImpl:
    value: Callable[[StatisticTerm, Graph], float]
    change: Callable[[StatisticTerm, Graph, int, int, bool], float]
    scope: DirtyScope
    directed_ok: bool = True
    undirected_ok: bool = True


_STATS: dict[str, StatisticImpl] = {}


def register_statistic(kind: str, impl: StatisticImpl) -> None:
    if kind in _STATS:
        raise PotentialError(f"statistic kind {kind!r} already registered")
    _STATS[kind] = impl


def _edges_value(term: StatisticTerm, g: Graph) -> float:
    return float(g._wedges)


def _edges_change(term: StatisticTerm, g: Graph, i: int, j: int, adding: bool) -> float:
    return 1.0 if adding else -1.0


def _mutuals_value(term: StatisticTerm, g: Graph) -> float:
    return float(g._wmut)


def _mutuals_change(term: StatisticTerm, g: Graph, i: int, j: int, adding: bool) -> float:
    if not (g.adj[j] >> i & 1):
        return 0.0
    return 1.0 if adding else -1.0


def _triangles_value(term: StatisticTerm, g: Graph) -> float:
    # Undirected: closed triangles (each counted once). Directed: transitive
    # triples u->v, v->w, u->w, counted once via the u->v arc.
    total = 0
    if g.directed:
        for i in range(g.n):
            out_i = g.adj[i]
            m = out_i
            while m:
                j = (m & -m).bit_length() - 1
                m &= m - 1
                total += (out_i & g.adj[j]).bit_count()
        return float(total)
    for i in range(g.n):
        m = g.adj[i]
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            if j > i:
                total += (g.adj[i] & g.adj[j]).bit_count()
    return float(total / 3)


def _triangles_change(term: StatisticTerm, g: Graph, i: int, j: int, adding: bool) -> float:
    # The intersections below never contain i or j, so they are unaffected by
    # the state of the (i, j) edge itself.
    if g.directed:
        c = (
            (g.adj[i] & g.adj[j]).bit_count()
            + (g.in_adj[i] & g.in_adj[j]).bit_count()
            + (g.adj[i] & g.in_adj[j]).bit_count()
        )
    else:
        c = (g.adj[i] & g.adj[j]).bit_count()
    return float(c) if adding else float(-c)


def _twostars_value(term: StatisticTerm, g: Graph) -> float:
    # Undirected: pairs of edges sharing an endpoint. Directed: out-two-stars.
    return float(sum(d * (d - 1) // 2 for d in (g.adj[i].bit_count() for i in range(g.n))))


def _twostars_change(term: StatisticTerm, g: Graph, i: int, j: int, adding: bool) -> float:
    if g.directed:
        d = g.adj[i].bit_count()
        return float(d) if adding else float(-(d - 1))
    di, dj = g.adj[i].bit_count(), g.adj[j].bit_count()
    return float(di + dj) if adding else float(-(di + dj - 2))


def _edgecov_value(term: StatisticTerm, g: Graph) -> float:
    cov = term.covariate
    return float(sum(cov[i, j] for i, j in g.edges()))


def _edgecov_change(term: StatisticTerm, g: Graph, i: int, j: int, adding: bool) -> float:
    if not g.directed and i > j:
        i, j = j, i
    x = float(term.covariate[i, j])
    return x if adding else -x


register_statistic(EDGES, StatisticImpl(_edges_value, _edges_change, DirtyScope.SELF))
register_statistic(
    MUTUALS,
    StatisticImpl(_mutuals_value, _mutuals_change, DirtyScope.DYAD, undirected_ok=False),
)
register_statistic(TRIANGLES, StatisticImpl(_triangles_value, _triangles_change, DirtyScope.INCIDENT))
register_statistic(TWOSTARS, StatisticImpl(_twostars_value, _twostars_change, DirtyScope.INCIDENT))
register_statistic(EDGECOV, StatisticImpl(_edgecov_value, _edgecov_change, DirtyScope.SELF))


def statistic_value(term: StatisticTerm, g: Graph) -> float:
    return _STATS[term.kind].value(term, g)


def statistic_change(term: StatisticTerm, g: Graph, t: Toggle, adding: bool) -> float:
    return _STATS[term.kind].change(term, g, t.i, t.j, adding)


# ---------------------------------------------------------------------------
# Reference measures.


def log_reference(ref: ReferenceMeasure, g: Graph) -> float:
    if ref.kind == COUNTING:
        return 0.0
    ln_n = math.log(g.n)
    if ref.kind == KRIVITSKY:
        return -g._wedges * ln_n
    if ref.needs_directed and not g.directed:
        raise PotentialError(f"{ref.kind} reference requires a directed graph")
    gap = g._wmut - g._wedges
    if ref.kind == RECIPROCITY:
        return gap * ln_n
    return (1.0 - ref.gamma) * gap * ln_n


def log_reference_change(ref: ReferenceMeasure, g: Graph, t: Toggle, adding: bool) -> float:
    return _log_reference_change(ref, g, t.i, t.j, adding)


def _log_reference_change(ref: ReferenceMeasure, g: Graph, i: int, j: int, adding: bool) -> float:
    if ref.kind == COUNTING:
        return 0.0
    ln_n = math.log(g.n)
    d_we = 1.0 if adding else -1.0
    if ref.kind == KRIVITSKY:
        return -d_we * ln_n
    d_wm = d_we if g.adj[j] >> i & 1 else 0.0
    if ref.kind == RECIPROCITY:
        return (d_wm - d_we) * ln_n
    return (1.0 - ref.gamma) * (d_wm - d_we) * ln_n


_REF_SCOPE = {
    COUNTING: DirtyScope.SELF,
    KRIVITSKY: DirtyScope.SELF,
    RECIPROCITY: DirtyScope.DYAD,
    POWERLAW: DirtyScope.DYAD,
}


# ---------------------------------------------------------------------------
# Public evaluation surface.


def statistics(spec: PotentialSpec, g: Graph) -> np.ndarray:
    """The sufficient-statistic vector w(g, X), in term order."""
    spec.check_compatible(g)
    return np.array([statistic_value(t, g) for t in spec.terms], dtype=float)


def potential(spec: PotentialSpec, g: Graph) -> float:
    """theta . w(g, X) + ln h(g)."""
    return float(spec.theta @ statistics(spec, g)) + log_reference(spec.reference, g)


def change_score(spec: PotentialSpec, g: Graph, t: Toggle) -> float:
    """Potential of the toggled graph minus the potential of g, computed from
    local structure only."""
    spec.check_compatible(g)
    return change_score_nocheck(spec, g, t)


def change_score_nocheck(spec: PotentialSpec, g: Graph, t: Toggle) -> float:
    # Hot-loop variant: compatibility must have been checked once up front.
    g._check_pair(t.i, t.j)
    adding = not (g.adj[t.i] >> t.j & 1)
    total = 0.0
    for theta_k, term in zip(spec.theta, spec.terms):
        if theta_k != 0.0:
            total += theta_k * statistic_change(term, g, t, adding)
    return total + log_reference_change(spec.reference, g, t, adding)


def compile_change_score(spec: PotentialSpec):
    """A closure computing change scores with term dispatch resolved once;
    term order and arithmetic are identical to change_score_nocheck."""
    parts = [
        (float(th), _STATS[term.kind].change, term)
        for th, term in zip(spec.theta, spec.terms)
        if th != 0.0
    ]
    ref = spec.reference

    def fn(g: Graph, i: int, j: int, adding: bool) -> float:
        total = 0.0
        for th, chg, term in parts:
            total += th * chg(term, g, i, j, adding)
        return total + _log_reference_change(ref, g, i, j, adding)

    return fn


def dirty_scope(spec: PotentialSpec) -> DirtyScope:
    """Widest reach of any term or the reference measure in this potential."""
    scope = _REF_SCOPE[spec.reference.kind]
    for term in spec.terms:
        scope = max(scope, _STATS[term.kind].scope)
    return scope


def dirty_toggle_indices(spec: PotentialSpec, g: Graph, t: Toggle) -> tuple[int, ...]:
    """Indices (canonical order) of toggles whose change score under this
    potential may differ after flipping t. Always includes t itself."""
    scope = dirty_scope(spec)
    if scope == DirtyScope.INCIDENT:
        return incident_toggle_indices(g.n, g.directed, t.i, t.j)
    self_idx = toggle_index(g.n, g.directed, t)
    if scope == DirtyScope.DYAD and g.directed:
        rev_idx = toggle_index(g.n, g.directed, Toggle(t.j, t.i))
        return (min(self_idx, rev_idx), max(self_idx, rev_idx))
    return (self_idx,)
