"""The eight continuous-time graph process families and their transition
rates.

Each family assigns an instantaneous rate to every single-edge toggle from
the current graph. Four of them are driven by one potential q (target value,
rate-limited difference, inhibited difference, or source stability); three
are separable with distinct formation/dissolution drivers; one applies the
same difference kinetics to both sides. Every family has a closed-form
unnormalized stationary log-weight, exposed by ``equilibrium_log_weight`` and
verified exactly in the exact-verification module.

Rates are assembled from single-toggle change scores in log space and
exponentiated last; only the SAOM and differential-stability families need
the absolute potential of the current state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graphs import Graph, Toggle, all_toggles, edge_count, num_toggles
from .potentials import PotentialSpec, change_score_nocheck, potential


class ProcessError(ValueError):
    pass


class RateError(ValueError):
    """A rate evaluated to a non-finite value (runaway parameters)."""


class Family(str, Enum):
    COMPETING_RATE_SAOM = "saom"
    LERGM = "lergm"
    CHANGE_INHIBITION = "inhibit"
    DIFFERENTIAL_STABILITY = "stability"
    CONST_DISS_CSTERGM = "cstergm-cd"
    CONST_FORM_CSTERGM = "cstergm-cf"
    GENERAL_CSTERGM = "cstergm"
    CTERGM = "ctergm"


_NEEDS_RATE_CONSTANT = {
    Family.LERGM,
    Family.CHANGE_INHIBITION,
    Family.DIFFERENTIAL_STABILITY,
}
_NEEDS_POTENTIAL = {
    Family.COMPETING_RATE_SAOM,
    Family.LERGM,
    Family.CHANGE_INHIBITION,
    Family.DIFFERENTIAL_STABILITY,
    Family.CTERGM,
}
_NEEDS_FORMATION = {Family.CONST_DISS_CSTERGM, Family.GENERAL_CSTERGM}
_NEEDS_DISSOLUTION = {Family.CONST_FORM_CSTERGM, Family.GENERAL_CSTERGM}


@dataclass(frozen=True, eq=False)
class ProcessSpec:
    """One process family plus exactly the parameters it demands.

    rate_constant (A) applies to the bounded-rate and stability families;
    theta_d / theta_f are the constant log-rates of the one-sided separable
    families.
    """

    family: Family
    potential: PotentialSpec | None = None
    formation_potential: PotentialSpec | None = None
    dissolution_potential: PotentialSpec | None = None
    rate_constant: float | None = None
    theta_d: float | None = None
    theta_f: float | None = None

    def __post_init__(self):
        fam = self.family
        required = {
            "potential": fam in _NEEDS_POTENTIAL,
            "formation_potential": fam in _NEEDS_FORMATION,
            "dissolution_potential": fam in _NEEDS_DISSOLUTION,
            "rate_constant": fam in _NEEDS_RATE_CONSTANT,
            "theta_d": fam is Family.CONST_DISS_CSTERGM,
            "theta_f": fam is Family.CONST_FORM_CSTERGM,
        }
        for name, needed in required.items():
            value = getattr(self, name)
            if needed and value is None:
                raise ProcessError(f"family {fam.value!r} requires {name}")
            if not needed and value is not None:
                raise ProcessError(f"family {fam.value!r} does not take {name}")
        if self.rate_constant is not None and not self.rate_constant > 0:
            raise ProcessError(f"rate_constant must be > 0, got {self.rate_constant}")

    def check_compatible(self, g: Graph) -> None:
        if self.family is Family.COMPETING_RATE_SAOM and not g.directed:
            raise ProcessError("competing-rate SAOM requires a directed graph")
        for pot in (self.potential, self.formation_potential, self.dissolution_potential):
            if pot is not None:
                pot.check_compatible(g)

    def potentials(self) -> list[PotentialSpec]:
        return [
            p
            for p in (self.potential, self.formation_potential, self.dissolution_potential)
            if p is not None
        ]

    def primary_potential(self) -> PotentialSpec:
        return self.potentials()[0]


def _exp(x: float) -> float:
    try:
        r = math.exp(x)
    except OverflowError:
        raise RateError(f"rate overflow: exp({x})") from None
    if not math.isfinite(r):
        raise RateError(f"rate not finite: exp({x})")
    return r


def rate(spec: ProcessSpec, g: Graph, t: Toggle) -> float:
    """Instantaneous transition rate for flipping edge variable t at state g."""
    spec.check_compatible(g)
    return rate_nocheck(spec, g, t)


def rate_nocheck(spec: ProcessSpec, g: Graph, t: Toggle) -> float:
    fam = spec.family
    adding = not (g.adj[t.i] >> t.j & 1)
    if fam is Family.CONST_DISS_CSTERGM:
        if not adding:
            return _exp(spec.theta_d)
        return _exp(change_score_nocheck(spec.formation_potential, g, t))
    if fam is Family.CONST_FORM_CSTERGM:
        if adding:
            return _exp(spec.theta_f)
        return _exp(change_score_nocheck(spec.dissolution_potential, g, t))
    if fam is Family.GENERAL_CSTERGM:
        pot = spec.formation_potential if adding else spec.dissolution_potential
        return _exp(change_score_nocheck(pot, g, t))
    if fam is Family.DIFFERENTIAL_STABILITY:
        size = num_toggles(g.n, g.directed)
        return spec.rate_constant / size * _exp(-potential(spec.potential, g))
    delta = change_score_nocheck(spec.potential, g, t)
    if fam is Family.CTERGM:
        return _exp(delta)
    if fam is Family.LERGM:
        return spec.rate_constant / (1.0 + _exp(-delta))
    if fam is Family.CHANGE_INHIBITION:
        return spec.rate_constant * min(1.0, _exp(delta))
    # competing-rate SAOM: rate equals the exponentiated target potential
    return _exp(potential(spec.potential, g) + delta)


def rate_vector(spec: ProcessSpec, g: Graph) -> np.ndarray:
    """Rates for every toggle at state g, in canonical toggle order. Entry k
    equals rate(spec, g, toggle_k); the shared potential evaluation is hoisted
    out of the loop."""
    spec.check_compatible(g)
    fam = spec.family
    toggles = all_toggles(g.n, g.directed)
    out = np.empty(len(toggles))
    if fam is Family.DIFFERENTIAL_STABILITY:
        out.fill(spec.rate_constant / len(toggles) * _exp(-potential(spec.potential, g)))
        return out
    q_a = potential(spec.potential, g) if fam is Family.COMPETING_RATE_SAOM else 0.0
    for k, t in enumerate(toggles):
        adding = not (g.adj[t.i] >> t.j & 1)
        if fam is Family.CONST_DISS_CSTERGM:
            out[k] = (
                _exp(change_score_nocheck(spec.formation_potential, g, t))
                if adding
                else _exp(spec.theta_d)
            )
        elif fam is Family.CONST_FORM_CSTERGM:
            out[k] = (
                _exp(spec.theta_f)
                if adding
                else _exp(change_score_nocheck(spec.dissolution_potential, g, t))
            )
        elif fam is Family.GENERAL_CSTERGM:
            pot = spec.formation_potential if adding else spec.dissolution_potential
            out[k] = _exp(change_score_nocheck(pot, g, t))
        else:
            delta = change_score_nocheck(spec.potential, g, t)
            if fam is Family.CTERGM:
                out[k] = _exp(delta)
            elif fam is Family.LERGM:
                out[k] = spec.rate_constant / (1.0 + _exp(-delta))
            elif fam is Family.CHANGE_INHIBITION:
                out[k] = spec.rate_constant * min(1.0, _exp(delta))
            else:
                out[k] = _exp(q_a + delta)
    return out


def exit_rate(spec: ProcessSpec, g: Graph) -> float:
    """Total rate of leaving state g: the sum of rate() over all toggles."""
    return float(rate_vector(spec, g).sum())


def equilibrium_log_weight(spec: ProcessSpec, g: Graph) -> float:
    """Unnormalized log stationary weight of g under this family."""
    spec.check_compatible(g)
    fam = spec.family
    if fam is Family.CONST_DISS_CSTERGM:
        return potential(spec.formation_potential, g) - spec.theta_d * edge_count(g)
    if fam is Family.CONST_FORM_CSTERGM:
        return potential(spec.dissolution_potential, g) + spec.theta_f * edge_count(g)
    if fam is Family.GENERAL_CSTERGM:
        return potential(spec.formation_potential, g) + potential(spec.dissolution_potential, g)
    if fam is Family.CTERGM:
        return 2.0 * potential(spec.potential, g)
    return potential(spec.potential, g)


@dataclass(frozen=True, eq=False)
class LogWeight:
    """A stationary log-weight as a linear combination of potentials plus an
    edge-count offset; supports full evaluation and single-toggle changes."""

    components: tuple[tuple[float, PotentialSpec], ...]
    edge_coef: float = 0.0

    def check_compatible(self, g: Graph) -> None:
        for _, pot in self.components:
            pot.check_compatible(g)

    def value(self, g: Graph) -> float:
        total = self.edge_coef * edge_count(g)
        for coef, pot in self.components:
            total += coef * potential(pot, g)
        return total

    def change(self, g: Graph, t: Toggle) -> float:
        adding = not (g.adj[t.i] >> t.j & 1)
        total = self.edge_coef * (1.0 if adding else -1.0)
        for coef, pot in self.components:
            total += coef * change_score_nocheck(pot, g, t)
        return total


def equilibrium_form(spec: ProcessSpec) -> LogWeight:
    """The family's analytic equilibrium as a LogWeight object."""
    fam = spec.family
    if fam is Family.CONST_DISS_CSTERGM:
        return LogWeight(((1.0, spec.formation_potential),), edge_coef=-spec.theta_d)
    if fam is Family.CONST_FORM_CSTERGM:
        return LogWeight(((1.0, spec.dissolution_potential),), edge_coef=spec.theta_f)
    if fam is Family.GENERAL_CSTERGM:
        return LogWeight(((1.0, spec.formation_potential), (1.0, spec.dissolution_potential)))
    if fam is Family.CTERGM:
        return LogWeight(((2.0, spec.potential),))
    return LogWeight(((1.0, spec.potential),))


def saom_actor_hazard(spec: ProcessSpec, g: Graph, i: int) -> float:
    """Activation hazard of actor i: the sum of exponentiated target
    potentials over all of i's out-toggles."""
    if spec.family is not Family.COMPETING_RATE_SAOM:
        raise ProcessError("actor hazard is defined for the competing-rate SAOM only")
    spec.check_compatible(g)
    if not 0 <= i < g.n:
        raise ProcessError(f"actor index {i} out of range for n={g.n}")
    q_a = potential(spec.potential, g)
    return sum(
        _exp(q_a + change_score_nocheck(spec.potential, g, Toggle(i, j)))
        for j in range(g.n)
        if j != i
    )


def saom_choice_probabilities(spec: ProcessSpec, g: Graph, i: int) -> np.ndarray:
    """Multinomial-logit choice distribution of actor i over targets j != i,
    as a length-n vector (entry i is zero)."""
    if spec.family is not Family.COMPETING_RATE_SAOM:
        raise ProcessError("choice probabilities are defined for the competing-rate SAOM only")
    spec.check_compatible(g)
    if not 0 <= i < g.n:
        raise ProcessError(f"actor index {i} out of range for n={g.n}")
    deltas = np.array(
        [
            change_score_nocheck(spec.potential, g, Toggle(i, j)) if j != i else -math.inf
            for j in range(g.n)
        ]
    )
    weights = np.exp(deltas - deltas[np.isfinite(deltas)].max())
    return weights / weights.sum()
