"""Event-driven simulation of a graph process: exponential holding times,
categorical toggle selection, trajectory recording.

The inner loop keeps a cached vector of per-toggle change scores and rebuilds
only the entries whose scores the last toggle can have perturbed (dirty
sets). A periodic audit recomputes every rate from scratch and fails loudly
if the incremental path has drifted.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TextIO

import numpy as np

from .graphs import Graph, Toggle, all_toggles
from .potentials import (
    _STATS,
    PotentialSpec,
    StatisticTerm,
    compile_change_score,
    dirty_toggle_indices,
    potential,
    statistic_value,
)
from .processes import Family, ProcessSpec, rate_vector

DWELL_MAP_MAX_BITS = 20
_BATCH_CHUNK_EVENTS = 256
_N_BATCHES = 32


class SimulationError(RuntimeError):
    pass


class AbsorbingStateError(SimulationError):
    """Every toggle rate is zero; the process cannot leave the state."""


class RateCacheError(SimulationError):
    """Incremental rate updates drifted from a full recomputation."""


class RecordMode(Enum):
    FULL_EVENTS = "full"
    STATISTICS_ONLY = "stats"
    TIME_AVERAGES = "averages"


@dataclass(frozen=True, eq=False)
class SimConfig:
    process: ProcessSpec
    initial: Graph
    t_max: float
    max_events: int
    seed: int
    record: RecordMode = RecordMode.TIME_AVERAGES
    burn_in: float = 0.0
    observables: tuple[StatisticTerm, ...] | None = None
    audit_interval: int = 1000
    audit_tol: float = 1e-9

    def __post_init__(self):
        if not (self.t_max > 0 or self.max_events > 0):
            raise ValueError("need t_max > 0 or max_events > 0")
        if self.max_events < 0:
            raise ValueError(f"max_events must be >= 0, got {self.max_events}")
        if self.burn_in < 0 or self.burn_in >= self.t_max:
            raise ValueError(f"burn_in must lie in [0, t_max), got {self.burn_in}")
        self.process.check_compatible(self.initial)
        if self.observables is not None:
            object.__setattr__(self, "observables", tuple(self.observables))

    def observable_spec(self) -> PotentialSpec:
        terms = self.observables
        if terms is None:
            terms = self.process.primary_potential().terms
        return PotentialSpec(tuple(terms), np.zeros(len(terms)))


@dataclass
class Trajectory:
    initial: Graph
    final: Graph
    events: list[tuple[float, Toggle]]
    status: str  # "t_max" | "max_events" | "absorbing"
    sim_time: float
    n_events: int
    observable_labels: list[str]
    time_averaged_stats: np.ndarray
    mean_exit_rate: float
    batch_stats: np.ndarray  # (B, k) dwell-weighted means per batch
    batch_weights: np.ndarray  # (B,) occupied time per batch
    stat_snapshots: list[tuple[float, np.ndarray]] | None = None
    mean_dwell_by_state: dict[int, tuple[float, int]] | None = None
    occupancy: dict[int, float] | None = None
    edge_lifetimes: list[float] = field(default_factory=list)

    @property
    def events_per_time(self) -> float:
        return self.n_events / self.sim_time if self.sim_time > 0 else math.nan

    def replay_final(self) -> Graph:
        """Re-apply the recorded toggles to the initial graph."""
        g = self.initial.copy()
        for _, t in self.events:
            g._flip(t.i, t.j)
        return g


def step(process: ProcessSpec, g: Graph, rng: np.random.Generator) -> tuple[float, Toggle]:
    """One event: holding time exponential with the state's exit rate, next
    toggle categorical in proportion to its rate. The two draws are
    independent (dwell first, then toggle)."""
    rates = rate_vector(process, g)
    total = float(rates.sum())
    if total <= 0.0:
        raise AbsorbingStateError(f"exit rate is 0 at {g!r}")
    dt = rng.exponential(1.0 / total)
    u = rng.random() * total
    idx = min(int(np.searchsorted(np.cumsum(rates), u, side="right")), len(rates) - 1)
    return dt, all_toggles(g.n, g.directed)[idx]


def _sexp(x: float) -> float:
    # exp with graceful saturation: overflow becomes inf (caught at the
    # exit-rate check), underflow is an ordinary 0.0
    return math.exp(x) if x < 709.0 else math.inf


class _RateCache:
    """Per-toggle change scores and rates, updated incrementally.

    Change-score closures, dirty-index lists, and branch dispatch are all
    resolved at construction; per-event work is a handful of scalar updates.
    """

    def __init__(self, spec: ProcessSpec, g: Graph):
        self.spec = spec
        self.g = g
        self.toggles = all_toggles(g.n, g.directed)
        self.m = len(self.toggles)
        fam = spec.family
        self.needs_q = fam in (Family.COMPETING_RATE_SAOM, Family.DIFFERENTIAL_STABILITY)
        self.pots: dict[str, PotentialSpec] = {}
        if fam in (Family.CONST_DISS_CSTERGM, Family.GENERAL_CSTERGM):
            self.pots["f"] = spec.formation_potential
        if fam in (Family.CONST_FORM_CSTERGM, Family.GENERAL_CSTERGM):
            self.pots["d"] = spec.dissolution_potential
        if fam in (
            Family.COMPETING_RATE_SAOM,
            Family.LERGM,
            Family.CHANGE_INHIBITION,
            Family.CTERGM,
        ):
            self.pots["q"] = spec.potential
        self.chg = {key: compile_change_score(pot) for key, pot in self.pots.items()}
        self.q_pot = spec.potential if self.needs_q else None
        self.q_chg = compile_change_score(self.q_pot) if self.q_pot is not None else None
        # dirty index lists per potential per flipped toggle, fixed up front
        self.dirty: dict[str, list[tuple[int, ...]]] = {
            key: [dirty_toggle_indices(pot, g, t) for t in self.toggles]
            for key, pot in self.pots.items()
        }
        if fam is Family.GENERAL_CSTERGM:
            self.dirty_union = [
                tuple(sorted(set(a) | set(b)))
                for a, b in zip(self.dirty["f"], self.dirty["d"])
            ]
        self.deltas: dict[str, list[float]] = {}
        self.refresh()

    def refresh(self) -> None:
        g = self.g
        self.add_mask = [not (g.adj[t.i] >> t.j & 1) for t in self.toggles]
        for key in self.pots:
            fn = self.chg[key]
            self.deltas[key] = [
                fn(g, t.i, t.j, self.add_mask[k]) for k, t in enumerate(self.toggles)
            ]
        self.q = potential(self.q_pot, g) if self.needs_q else 0.0
        self.rates = [0.0] * self.m
        self.total = 0.0
        self._update_rates(range(self.m))
        self.total = math.fsum(self.rates)

    def _update_rates(self, ks) -> None:
        fam = self.spec.family
        rates = self.rates
        if fam is Family.DIFFERENTIAL_STABILITY:
            val = self.spec.rate_constant / self.m * _sexp(-self.q)
            self.rates = [val] * self.m
            self.total = val * self.m
            return
        if fam is Family.COMPETING_RATE_SAOM:
            q = self.q
            self.rates = [_sexp(q + d) for d in self.deltas["q"]]
            self.total = math.fsum(self.rates)
            return
        total = self.total
        if fam is Family.LERGM:
            A = self.spec.rate_constant
            dq = self.deltas["q"]
            for k in ks:
                new = A / (1.0 + _sexp(-dq[k]))
                total += new - rates[k]
                rates[k] = new
        elif fam is Family.CHANGE_INHIBITION:
            A = self.spec.rate_constant
            dq = self.deltas["q"]
            for k in ks:
                new = A * min(1.0, _sexp(dq[k]))
                total += new - rates[k]
                rates[k] = new
        elif fam is Family.CTERGM:
            dq = self.deltas["q"]
            for k in ks:
                new = _sexp(dq[k])
                total += new - rates[k]
                rates[k] = new
        elif fam is Family.CONST_DISS_CSTERGM:
            const = math.exp(self.spec.theta_d)
            df = self.deltas["f"]
            add = self.add_mask
            for k in ks:
                new = _sexp(df[k]) if add[k] else const
                total += new - rates[k]
                rates[k] = new
        elif fam is Family.CONST_FORM_CSTERGM:
            const = math.exp(self.spec.theta_f)
            dd = self.deltas["d"]
            add = self.add_mask
            for k in ks:
                new = const if add[k] else _sexp(dd[k])
                total += new - rates[k]
                rates[k] = new
        else:  # general separable
            df, dd = self.deltas["f"], self.deltas["d"]
            add = self.add_mask
            for k in ks:
                new = _sexp(df[k]) if add[k] else _sexp(dd[k])
                total += new - rates[k]
                rates[k] = new
        self.total = total

    def apply(self, idx: int) -> None:
        """Flip toggle idx and bring the cache up to date."""
        t = self.toggles[idx]
        g = self.g
        if self.needs_q:
            chosen_delta = (
                self.deltas["q"][idx]
                if "q" in self.deltas
                else self.q_chg(g, t.i, t.j, self.add_mask[idx])
            )
        g._flip(t.i, t.j)
        self.add_mask[idx] = not self.add_mask[idx]
        add_mask = self.add_mask
        toggles = self.toggles
        for key in self.pots:
            fn = self.chg[key]
            arr = self.deltas[key]
            for k in self.dirty[key][idx]:
                tk = toggles[k]
                arr[k] = fn(g, tk.i, tk.j, add_mask[k])
        if self.needs_q:
            self.q += chosen_delta
        fam = self.spec.family
        if fam is Family.GENERAL_CSTERGM:
            self._update_rates(self.dirty_union[idx])
        elif "q" in self.pots:
            self._update_rates(self.dirty["q"][idx])
        elif fam is Family.CONST_DISS_CSTERGM:
            self._update_rates(self.dirty["f"][idx])
        elif fam is Family.CONST_FORM_CSTERGM:
            self._update_rates(self.dirty["d"][idx])
        else:  # differential stability: rates depend only on q
            self._update_rates(())

    def audit(self, tol: float) -> None:
        """Full recomputation; raises if the incremental rates drifted."""
        fresh = rate_vector(self.spec, self.g)
        scale = max(1.0, float(fresh.max()))
        drift = float(np.abs(fresh - np.asarray(self.rates)).max())
        if drift > tol * scale:
            raise RateCacheError(f"incremental rates drifted by {drift:.3e}")
        self.refresh()


def simulate(config: SimConfig) -> Trajectory:
    """Run one trajectory. Time averages are dwell-weighted over the
    post-burn-in window; holding times are capped at t_max."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    g = config.initial.copy()
    cache = _RateCache(config.process, g)
    obs_spec = config.observable_spec()
    obs_spec.check_compatible(g)
    obs_terms = obs_spec.terms
    obs_chg = [(s, _STATS[term.kind].change, term) for s, term in enumerate(obs_terms)]
    k_stats = len(obs_terms)

    cur_stats = [statistic_value(term, g) for term in obs_terms]
    cur_bits = g.to_bits()
    track_states = cache.m <= DWELL_MAP_MAX_BITS
    dwell_map: dict[int, list] = {} if track_states else None
    occupancy: dict[int, float] = {} if track_states else None

    t = 0.0
    n_events = 0
    events: list[tuple[float, Toggle]] = []
    snapshots: list[tuple[float, np.ndarray]] | None = (
        [] if config.record is RecordMode.STATISTICS_ONLY else None
    )
    lifetimes: list[float] = []
    formed_at: dict[tuple[int, int], float] = {}

    weight_total = 0.0
    stats_acc = [0.0] * k_stats
    exit_acc = 0.0
    chunks: list[tuple[float, np.ndarray]] = []
    chunk_w = 0.0
    chunk_acc = [0.0] * k_stats

    t_max = config.t_max
    burn_in = config.burn_in
    record_full = config.record is RecordMode.FULL_EVENTS
    audit_interval = config.audit_interval

    def account(dwell_start: float, dwell_end: float, exit_rate: float) -> None:
        nonlocal weight_total, exit_acc, chunk_w
        w = min(dwell_end, t_max) - max(dwell_start, burn_in)
        if w <= 0.0:
            return
        weight_total += w
        for s in range(k_stats):
            v = w * cur_stats[s]
            stats_acc[s] += v
            chunk_acc[s] += v
        chunk_w += w
        exit_acc += w * exit_rate
        if occupancy is not None:
            occupancy[cur_bits] = occupancy.get(cur_bits, 0.0) + w

    status = "max_events"
    while n_events < config.max_events:
        total = cache.total
        if not total > 0.0:
            if math.isnan(total):
                raise SimulationError("exit rate is NaN (runaway parameters)")
            # the process can never leave this state; expose it up to t_max
            if math.isfinite(t_max):
                account(t, t_max, 0.0)
                t = t_max
            status = "absorbing"
            break
        if math.isinf(total):
            raise SimulationError("exit rate overflowed (runaway parameters)")
        dt = rng.exponential(1.0 / total)
        if t + dt >= t_max:
            account(t, t_max, total)
            t = t_max
            status = "t_max"
            break
        u = rng.random() * total
        rates = cache.rates
        acc = 0.0
        idx = -1
        last_pos = 0
        for k in range(cache.m):
            r = rates[k]
            if r > 0.0:
                acc += r
                last_pos = k
                if u < acc:
                    idx = k
                    break
        if idx < 0:
            idx = last_pos
        account(t, t + dt, total)
        if dwell_map is not None:
            entry = dwell_map.setdefault(cur_bits, [0.0, 0])
            entry[0] += dt
            entry[1] += 1
        t += dt
        tog = cache.toggles[idx]
        adding = cache.add_mask[idx]
        pair = (tog.i, tog.j)
        if adding:
            formed_at[pair] = t
        elif pair in formed_at:
            lifetimes.append(t - formed_at.pop(pair))
        for s, chg, term in obs_chg:
            cur_stats[s] += chg(term, g, tog.i, tog.j, adding)
        cache.apply(idx)
        cur_bits ^= 1 << idx
        n_events += 1
        if record_full:
            events.append((t, tog))
        elif snapshots is not None:
            snapshots.append((t, np.array(cur_stats)))
        if n_events % _BATCH_CHUNK_EVENTS == 0:
            chunks.append((chunk_w, np.array(chunk_acc)))
            chunk_w = 0.0
            for s in range(k_stats):
                chunk_acc[s] = 0.0
        if audit_interval > 0 and n_events % audit_interval == 0:
            cache.audit(config.audit_tol)
            for s, term in enumerate(obs_terms):
                cur_stats[s] = statistic_value(term, g)
    chunks.append((chunk_w, np.array(chunk_acc)))

    time_avg = (
        np.array(stats_acc) / weight_total
        if weight_total > 0
        else np.full(k_stats, math.nan)
    )
    mean_exit = exit_acc / weight_total if weight_total > 0 else math.nan
    batch_w, batch_means = _merge_chunks(chunks, k_stats)

    return Trajectory(
        initial=config.initial,
        final=g,
        events=events,
        status=status,
        sim_time=t,
        n_events=n_events,
        observable_labels=obs_spec.labels(),
        time_averaged_stats=time_avg,
        mean_exit_rate=mean_exit,
        batch_stats=batch_means,
        batch_weights=batch_w,
        stat_snapshots=snapshots,
        mean_dwell_by_state={k: (v[0], v[1]) for k, v in dwell_map.items()}
        if dwell_map is not None
        else None,
        occupancy=occupancy,
        edge_lifetimes=lifetimes,
    )


def _merge_chunks(
    chunks: list[tuple[float, np.ndarray]], k_stats: int
) -> tuple[np.ndarray, np.ndarray]:
    """Coalesce fine-grained accumulation chunks into ~_N_BATCHES batches of
    (occupied time, dwell-weighted mean)."""
    chunks = [(w, acc) for w, acc in chunks if w > 0]
    if not chunks:
        return np.zeros(0), np.zeros((0, k_stats))
    n_batches = min(_N_BATCHES, len(chunks))
    per = math.ceil(len(chunks) / n_batches)
    weights, means = [], []
    for b in range(0, len(chunks), per):
        group = chunks[b : b + per]
        w = sum(c[0] for c in group)
        acc = np.sum([c[1] for c in group], axis=0)
        weights.append(w)
        means.append(acc / w)
    return np.array(weights), np.array(means)


def batch_mean_se(
    batch_weights: np.ndarray, batch_means: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Overall dwell-weighted mean and batch-means standard error."""
    w = batch_weights / batch_weights.sum()
    mean = w @ batch_means
    nb = len(w)
    if nb < 2:
        return mean, np.full(batch_means.shape[1], math.nan)
    dev = batch_means - mean
    var = (w[:, None] ** 2 * dev**2).sum(axis=0) * nb / (nb - 1)
    return mean, np.sqrt(var)


def replicate_config(config: SimConfig, k: int) -> SimConfig:
    """The configuration replicate k of an ensemble actually runs: identical
    except for a seed derived deterministically from (base seed, k)."""
    child = np.random.SeedSequence((config.seed, k))
    derived = int(child.generate_state(1, np.uint64)[0])
    return replace(config, seed=derived)


def ensemble(config: SimConfig, replicates: int, workers: int = 1) -> list[Trajectory]:
    """Independent replicates with deterministically derived seeds; the
    result does not depend on scheduling."""
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    configs = [replicate_config(config, k) for k in range(replicates)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(simulate, configs))
    return [simulate(c) for c in configs]


def write_event_log(traj: Trajectory, fh: TextIO) -> None:
    """Line-delimited JSON: {"t": .., "i": .., "j": .., "add": ..} per event."""
    g = traj.initial.copy()
    for t, tog in traj.events:
        add = not (g.adj[tog.i] >> tog.j & 1)
        fh.write(
            json.dumps({"t": t, "i": tog.i, "j": tog.j, "add": add}, separators=(", ", ": "))
            + "\n"
        )
        g._flip(tog.i, tog.j)
