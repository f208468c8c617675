"""TOML run configuration: parsing, strict validation, and assembly of
process/simulation/sampler objects.

Unknown keys are errors, not warnings; configs are versioned so that a
manifest plus a seed pins down a run exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import tomli

from .cfp import CFPParams
from .engine import RecordMode, SimConfig
from .graphs import Graph, read_edgelist
from .potentials import (
    COUNTING,
    EDGECOV,
    KRIVITSKY,
    POWERLAW,
    RECIPROCITY,
    PotentialError,
    PotentialSpec,
    ReferenceMeasure,
    StatisticTerm,
    potential_spec,
)
from .processes import Family, ProcessError, ProcessSpec
from .sampler import SamplerConfig

CONFIG_VERSION = 1

_REFERENCE_KEYS = {
    "counting": COUNTING,
    "krivitsky": KRIVITSKY,
    "reciprocity": RECIPROCITY,
    "powerlaw": POWERLAW,
}

_RECORD_KEYS = {
    "full": RecordMode.FULL_EVENTS,
    "stats": RecordMode.STATISTICS_ONLY,
    "averages": RecordMode.TIME_AVERAGES,
}


class ConfigError(Exception):
    pass


def _check_keys(table: dict, context: str, allowed: set[str], required: set[str]) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{context}]: {', '.join(sorted(unknown))}")
    missing = required - set(table)
    if missing:
        raise ConfigError(f"missing key(s) in [{context}]: {', '.join(sorted(missing))}")


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if "version" not in cfg:
        raise ConfigError("config must declare 'version'")
    if cfg["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg['version']!r}, expected {CONFIG_VERSION}")
    return cfg


def _build_terms(keys: list, n: int, base_dir: str) -> list[StatisticTerm]:
    terms = []
    for key in keys:
        if not isinstance(key, str):
            raise ConfigError(f"term key must be a string, got {key!r}")
        if key.startswith("edgecov:"):
            fname = key.split(":", 1)[1]
            path = fname if os.path.isabs(fname) else os.path.join(base_dir, fname)
            try:
                cov = np.loadtxt(path)
            except OSError:
                raise ConfigError(f"cannot read covariate file {path}") from None
            if cov.shape != (n, n):
                raise ConfigError(
                    f"covariate {fname} has shape {cov.shape}, expected ({n}, {n})"
                )
            terms.append(StatisticTerm(EDGECOV, covariate=cov, label=key))
        else:
            try:
                terms.append(StatisticTerm(key))
            except PotentialError as exc:
                raise ConfigError(str(exc)) from None
    return terms


def _build_potential(table: dict, context: str, n: int, base_dir: str) -> PotentialSpec:
    _check_keys(table, context, {"terms", "theta", "reference", "gamma"}, {"terms", "theta"})
    ref_key = table.get("reference", "counting")
    if ref_key not in _REFERENCE_KEYS:
        raise ConfigError(
            f"unknown reference {ref_key!r} in [{context}]; "
            f"expected one of {sorted(_REFERENCE_KEYS)}"
        )
    try:
        reference = ReferenceMeasure(_REFERENCE_KEYS[ref_key], table.get("gamma"))
        return potential_spec(
            _build_terms(table["terms"], n, base_dir), table["theta"], reference
        )
    except PotentialError as exc:
        raise ConfigError(f"[{context}]: {exc}") from None


_MODEL_KEYS = {
    "family",
    "terms",
    "theta",
    "reference",
    "gamma",
    "rate_constant",
    "theta_d",
    "theta_f",
    "formation",
    "dissolution",
}


def build_process(model: dict, n: int, base_dir: str) -> ProcessSpec:
    _check_keys(model, "model", _MODEL_KEYS, {"family"})
    family_key = model["family"]
    try:
        family = Family(family_key)
    except ValueError:
        raise ConfigError(
            f"unknown family {family_key!r}; expected one of "
            f"{sorted(f.value for f in Family)}"
        ) from None
    kwargs: dict = {}
    if "terms" in model or "theta" in model:
        sub = {k: model[k] for k in ("terms", "theta", "reference", "gamma") if k in model}
        kwargs["potential"] = _build_potential(sub, "model", n, base_dir)
    if "formation" in model:
        kwargs["formation_potential"] = _build_potential(
            model["formation"], "model.formation", n, base_dir
        )
    if "dissolution" in model:
        kwargs["dissolution_potential"] = _build_potential(
            model["dissolution"], "model.dissolution", n, base_dir
        )
    for key in ("rate_constant", "theta_d", "theta_f"):
        if key in model:
            kwargs[key] = float(model[key])
    try:
        return ProcessSpec(family, **kwargs)
    except ProcessError as exc:
        raise ConfigError(str(exc)) from None


_SIM_KEYS = {
    "n",
    "directed",
    "t_max",
    "max_events",
    "seed",
    "record",
    "burn_in",
    "replicates",
    "initial",
}


def _build_initial(sim: dict, base_dir: str) -> Graph:
    n, directed = int(sim["n"]), bool(sim["directed"])
    spec = sim.get("initial", "empty")
    if spec == "empty":
        return Graph(n, directed)
    if spec == "full":
        return Graph.complete(n, directed)
    path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
    try:
        with open(path) as fh:
            g = read_edgelist(fh)
    except OSError:
        raise ConfigError(f"cannot read initial graph {path}") from None
    if g.n != n or g.directed != directed:
        raise ConfigError(
            f"initial graph {spec} is {'directed' if g.directed else 'undirected'} "
            f"n={g.n}, config wants {'directed' if directed else 'undirected'} n={n}"
        )
    return g


def build_sim_config(
    cfg: dict, process: ProcessSpec, base_dir: str, seed_override: int | None = None
) -> tuple[SimConfig, int]:
    """Returns (config, replicates)."""
    sim = cfg["sim"]
    _check_keys(
        cfg["sim"], "sim", _SIM_KEYS, {"n", "directed", "t_max", "max_events", "seed", "record"}
    )
    record_key = sim["record"]
    if record_key not in _RECORD_KEYS:
        raise ConfigError(
            f"unknown record mode {record_key!r}; expected one of {sorted(_RECORD_KEYS)}"
        )
    replicates = int(sim.get("replicates", 1))
    if replicates < 1:
        raise ConfigError(f"replicates must be >= 1, got {replicates}")
    seed = int(seed_override if seed_override is not None else sim["seed"])
    try:
        config = SimConfig(
            process=process,
            initial=_build_initial(sim, base_dir),
            t_max=float(sim["t_max"]),
            max_events=int(sim["max_events"]),
            seed=seed,
            record=_RECORD_KEYS[record_key],
            burn_in=float(sim.get("burn_in", 0.0)),
        )
    except (ValueError, ProcessError, PotentialError) as exc:
        raise ConfigError(str(exc)) from None
    return config, replicates


_SAMPLER_KEYS = {"n_samples", "burn_in_steps", "thin", "seed"}

_SAMPLER_SEED_TAG = 0x53414D50  # distinct stream from simulation replicates


def build_sampler_config(cfg: dict, target, sim_seed: int) -> SamplerConfig:
    block = cfg.get("sampler")
    if block is None:
        raise ConfigError("crosscheck requires a [sampler] block")
    _check_keys(block, "sampler", _SAMPLER_KEYS, {"n_samples"})
    if "seed" in block:
        seed = int(block["seed"])
    else:
        child = np.random.SeedSequence((sim_seed, _SAMPLER_SEED_TAG))
        seed = int(child.generate_state(1, np.uint64)[0])
    sim = cfg["sim"]
    try:
        return SamplerConfig(
            target=target,
            n=int(sim["n"]),
            directed=bool(sim["directed"]),
            n_samples=int(block["n_samples"]),
            burn_in_steps=int(block.get("burn_in_steps", 1000)),
            thin=int(block.get("thin", 1)),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


_CFP_KEYS = {
    "r_m",
    "r_f",
    "r_d",
    "m_foci",
    "m_c",
    "m_gamma",
    "reciprocity",
    "mode",
    "horizon",
    "min_ratio",
    "allow_slow",
}


@dataclass(frozen=True)
class CFPRun:
    params: CFPParams
    mode: str  # "simulate" | "fastcheck"
    horizon: float
    min_ratio: float
    allow_slow: bool


def build_cfp_run(cfg: dict) -> CFPRun:
    block = cfg.get("cfp")
    if block is None:
        raise ConfigError("the cfp command requires a [cfp] block")
    _check_keys(block, "cfp", _CFP_KEYS, {"r_m", "r_f", "r_d"})
    mode = block.get("mode", "simulate")
    if mode not in ("simulate", "fastcheck"):
        raise ConfigError(f"unknown cfp mode {mode!r}; expected simulate or fastcheck")
    if ("m_c" in block) != ("m_gamma" in block):
        raise ConfigError("m_c and m_gamma must be given together")
    try:
        params = CFPParams(
            r_m=float(block["r_m"]),
            r_f=float(block["r_f"]),
            r_d=float(block["r_d"]),
            m_foci=int(block["m_foci"]) if "m_foci" in block else None,
            m_scale=(float(block["m_c"]), float(block["m_gamma"])) if "m_c" in block else None,
            reciprocity=bool(block.get("reciprocity", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    horizon = float(block.get("horizon", 0.0))
    if mode == "fastcheck" and horizon <= 0:
        raise ConfigError("fastcheck mode requires a positive cfp.horizon")
    return CFPRun(
        params=params,
        mode=mode,
        horizon=horizon,
        min_ratio=float(block.get("min_ratio", 1e3)),
        allow_slow=bool(block.get("allow_slow", False)),
    )


_TOP_KEYS = {"version", "model", "sim", "sampler", "cfp", "output"}


def validate_top_level(cfg: dict, command: str) -> None:
    _check_keys(cfg, "config", _TOP_KEYS, {"version", "sim", "output"})
    if command in ("simulate", "verify", "crosscheck") and "model" not in cfg:
        raise ConfigError(f"the {command} command requires a [model] block")
    _check_keys(cfg["output"], "output", {"dir"}, {"dir"})


def validate_verify_sim(sim: dict) -> tuple[int, bool]:
    _check_keys(sim, "sim", _SIM_KEYS, {"n", "directed"})
    return int(sim["n"]), bool(sim["directed"])
