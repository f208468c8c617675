"""Quasi-time Metropolis sampling from a target graph log-weight, plus the
cross-estimator consistency check between long-run simulation averages and
sampler averages.

The sampler proposes uniform random toggles and accepts with probability
min(1, exp(change in log-weight)); it targets the normalized weight exactly
and is used to validate simulations at sizes beyond exact enumeration. It is
not the embedded chain of any of the process families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Trajectory, batch_mean_se
from .graphs import Graph, all_toggles
from .potentials import _STATS, PotentialSpec, StatisticTerm, statistic_value
from .processes import LogWeight, ProcessSpec

_AUDIT_STEPS = 1000
_AUDIT_TOL = 1e-9
_N_BATCHES = 32


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    """Metropolis chain configuration. ``target`` is either a raw potential
    or a process equilibrium (LogWeight)."""

    target: LogWeight | PotentialSpec
    n: int
    directed: bool
    n_samples: int
    burn_in_steps: int = 0
    thin: int = 1
    seed: int = 0
    initial: Graph | None = None
    observables: tuple[StatisticTerm, ...] | None = None

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.burn_in_steps < 0:
            raise ValueError(f"burn_in_steps must be >= 0, got {self.burn_in_steps}")
        if self.observables is not None:
            object.__setattr__(self, "observables", tuple(self.observables))

    def log_weight(self) -> LogWeight:
        if isinstance(self.target, LogWeight):
            return self.target
        return LogWeight(((1.0, self.target),))

    def observable_terms(self) -> tuple[StatisticTerm, ...]:
        if self.observables is not None:
            return self.observables
        return self.log_weight().components[0][1].terms

    def observable_labels(self) -> list[str]:
        return [t.label or t.kind for t in self.observable_terms()]


def _run_chain(config: SamplerConfig, want_states: bool):
    lw = config.log_weight()
    g = config.initial.copy() if config.initial is not None else Graph(config.n, config.directed)
    if g.n != config.n or g.directed != config.directed:
        raise ValueError("initial graph does not match sampler shape")
    lw.check_compatible(g)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    toggles = all_toggles(config.n, config.directed)
    m = len(toggles)
    obs_terms = config.observable_terms()
    obs_chg = [(s, _STATS[term.kind].change, term) for s, term in enumerate(obs_terms)]
    cur_stats = [statistic_value(term, g) for term in obs_terms]
    cur_logw = lw.value(g)

    total_steps = config.burn_in_steps + config.n_samples * config.thin
    out = np.empty((config.n_samples, len(obs_terms)))
    states = [] if want_states else None
    n_accept = 0
    next_sample_at = config.burn_in_steps + config.thin
    sample_idx = 0
    for step_no in range(1, total_steps + 1):
        idx = int(rng.integers(m))
        t = toggles[idx]
        adding = not (g.adj[t.i] >> t.j & 1)
        delta = lw.change(g, t)
        u = 1.0 - rng.random()
        if math.log(u) < delta:
            for s, chg, term in obs_chg:
                cur_stats[s] += chg(term, g, t.i, t.j, adding)
            g._flip(t.i, t.j)
            cur_logw += delta
            n_accept += 1
        if step_no % _AUDIT_STEPS == 0:
            fresh = lw.value(g)
            if abs(fresh - cur_logw) > _AUDIT_TOL * max(1.0, abs(fresh)):
                raise SamplerError(
                    f"incremental log-weight drifted by {abs(fresh - cur_logw):.3e}"
                )
            cur_logw = fresh
        if step_no == next_sample_at:
            out[sample_idx] = cur_stats
            if states is not None:
                states.append(g.to_bits())
            sample_idx += 1
            next_sample_at += config.thin
    return out, states, n_accept / total_steps


def mcmc_sample(config: SamplerConfig) -> np.ndarray:
    """Post-burn-in, thinned statistic vectors from the Metropolis chain."""
    samples, _, _ = _run_chain(config, want_states=False)
    return samples


def mcmc_state_frequencies(config: SamplerConfig) -> dict[int, int]:
    """Visit counts per state (adjacency bits), for enumerable spaces."""
    _, states, _ = _run_chain(config, want_states=True)
    counts: dict[int, int] = {}
    for b in states:
        counts[b] = counts.get(b, 0) + 1
    return counts


@dataclass(frozen=True)
class CrosscheckReport:
    labels: list[str]
    sim_mean: np.ndarray
    sim_se: np.ndarray
    mcmc_mean: np.ndarray
    mcmc_se: np.ndarray
    z: np.ndarray
    flagged: list[str]

    @property
    def passed(self) -> bool:
        return not self.flagged

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "sim_mean": self.sim_mean.tolist(),
            "sim_se": self.sim_se.tolist(),
            "mcmc_mean": self.mcmc_mean.tolist(),
            "mcmc_se": self.mcmc_se.tolist(),
            "z": self.z.tolist(),
            "flagged": list(self.flagged),
            "passed": self.passed,
        }


def crosscheck(
    process: ProcessSpec,
    trajectory: Trajectory,
    samples: np.ndarray,
    sample_labels: list[str] | None = None,
    z_threshold: float = 4.0,
) -> CrosscheckReport:
    """Compare dwell-weighted simulation means against sampler means,
    statistic by statistic; |z| beyond the threshold is flagged.

    The sampler is expected to target the process's equilibrium log-weight;
    a mismatch shows up as flagged statistics, not as an error.
    """
    if sample_labels is not None and list(sample_labels) != list(trajectory.observable_labels):
        raise ValueError(
            f"statistic sets differ: simulation tracks {trajectory.observable_labels}, "
            f"sampler emits {sample_labels}"
        )
    if samples.ndim != 2 or samples.shape[1] != len(trajectory.observable_labels):
        raise ValueError(
            f"sampler output has {samples.shape[1] if samples.ndim == 2 else '?'} columns, "
            f"expected {len(trajectory.observable_labels)}"
        )
    sim_mean, sim_se = batch_mean_se(trajectory.batch_weights, trajectory.batch_stats)
    mcmc_mean, mcmc_se = _sample_batch_se(samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (sim_mean - mcmc_mean) / np.sqrt(sim_se**2 + mcmc_se**2)
    flagged = [
        lab
        for lab, zval in zip(trajectory.observable_labels, z)
        if not np.isfinite(zval) or abs(zval) > z_threshold
    ]
    return CrosscheckReport(
        labels=list(trajectory.observable_labels),
        sim_mean=sim_mean,
        sim_se=sim_se,
        mcmc_mean=mcmc_mean,
        mcmc_se=mcmc_se,
        z=z,
        flagged=flagged,
    )


def _sample_batch_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nb = min(_N_BATCHES, len(samples))
    splits = np.array_split(samples, nb, axis=0)
    means = np.array([s.mean(axis=0) for s in splits])
    grand = samples.mean(axis=0)
    if nb < 2:
        return grand, np.full(samples.shape[1], math.nan)
    se = means.std(axis=0, ddof=1) / math.sqrt(nb)
    return grand, se
