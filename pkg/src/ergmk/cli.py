"""Batch command-line front end: simulate, verify, crosscheck, cfp.

Exit codes are a stable contract: 0 success, 1 runtime failure (including
absorbing states and reducible chains), 2 configuration error, 3
verification or crosscheck failure, 4 enumeration/event cap.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys


from . import __version__
from .cfp import CFPError, cfp_fast_mixing_check, simulate_cfp
from .config import (
    ConfigError,
    build_cfp_run,
    build_process,
    build_sampler_config,
    build_sim_config,
    load_config,
    validate_top_level,
    validate_verify_sim,
)
from .engine import (
    RecordMode,
    SimConfig,
    SimulationError,
    Trajectory,
    ensemble,
    simulate,
    write_event_log,
)
from .exact import (
    CapExceededError,
    ReducibleChainError,
    SolveError,
    StateSpace,
    compare_equilibrium,
    embedded_chain_check,
)
from .graphs import Graph
from .processes import equilibrium_form, rate_vector
from .sampler import crosscheck, mcmc_sample

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_VERIFY_FAILED = 3
EXIT_CAP = 4

_VERIFY_TOL = 1e-9


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _write_manifest(out_dir: str, command: str, cfg: dict, seed, outputs: list[str]) -> None:
    manifest = {
        "format_version": 1,
        "package_version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg,
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _summary_rows(trajs: list[Trajectory]) -> str:
    labels = trajs[0].observable_labels
    header = (
        ",".join(f"time_avg_{lab}" for lab in labels) + ",events,sim_time,mean_exit_rate"
    )
    lines = [header]
    for traj in trajs:
        cells = [repr(float(v)) for v in traj.time_averaged_stats]
        cells += [str(traj.n_events), repr(float(traj.sim_time)), repr(float(traj.mean_exit_rate))]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _require_sim_keys(sim: dict, keys: set[str]) -> None:
    missing = keys - set(sim)
    if missing:
        raise ConfigError(f"missing key(s) in [sim]: {', '.join(sorted(missing))}")


def cmd_simulate(cfg: dict, args, base_dir: str) -> int:
    _require_sim_keys(cfg["sim"], {"n", "directed"})
    process = build_process(cfg["model"], int(cfg["sim"]["n"]), base_dir)
    sim_config, replicates = build_sim_config(cfg, process, base_dir, args.seed)
    out_dir = args.out or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    if replicates == 1:
        trajs = [simulate(sim_config)]
    else:
        trajs = ensemble(sim_config, replicates, workers=args.threads)
    outputs = ["summary.csv", "manifest.json"]
    if sim_config.record is RecordMode.FULL_EVENTS:
        for k, traj in enumerate(trajs):
            name = "events.jsonl" if replicates == 1 else f"events_r{k:03d}.jsonl"
            with open(os.path.join(out_dir, name), "w") as fh:
                write_event_log(traj, fh)
            outputs.append(name)
    with open(os.path.join(out_dir, "summary.csv"), "w") as fh:
        fh.write(_summary_rows(trajs))
    _write_manifest(out_dir, "simulate", cfg, sim_config.seed, outputs)
    statuses = [t.status for t in trajs]
    _say(
        args,
        f"simulated {sum(t.n_events for t in trajs)} events over {len(trajs)} run(s); "
        f"statuses: {', '.join(statuses)}; outputs in {out_dir}",
    )
    if any(s == "absorbing" for s in statuses):
        return EXIT_RUNTIME
    if any(s == "max_events" for s in statuses):
        return EXIT_CAP
    return EXIT_OK


def cmd_verify(cfg: dict, args, base_dir: str) -> int:
    n, directed = validate_verify_sim(cfg["sim"])
    process = build_process(cfg["model"], n, base_dir)
    space = StateSpace(n, directed)
    report = compare_equilibrium(process, space)
    embedded_err = embedded_chain_check(process, space)
    passed = report.tv_distance <= _VERIFY_TOL and embedded_err <= _VERIFY_TOL
    payload = {
        "family": cfg["model"]["family"],
        "n": n,
        "directed": directed,
        "theta": _theta_summary(cfg["model"]),
        "states": space.size,
        "tv_distance": report.tv_distance,
        "max_rel_error": report.max_rel_error,
        "residual": report.residual,
        "embedded_max_error": embedded_err,
        "log_z": report.log_z,
        "tolerance": _VERIFY_TOL,
        "passed": passed,
    }
    out_dir = args.out or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out_dir, "verify", cfg, None, ["report.json", "manifest.json"])
    _say(
        args,
        f"verify {cfg['model']['family']} n={n}: tv={report.tv_distance:.3e} "
        f"embedded={embedded_err:.3e} -> {'pass' if passed else 'FAIL'}",
    )
    return EXIT_OK if passed else EXIT_VERIFY_FAILED


def _theta_summary(model: dict) -> dict:
    out = {}
    if "theta" in model:
        out["theta"] = list(model["theta"])
    for block in ("formation", "dissolution"):
        if block in model:
            out[block] = list(model[block]["theta"])
    for key in ("theta_d", "theta_f"):
        if key in model:
            out[key] = model[key]
    return out


def _dwell_diagnostics(traj: Trajectory, sim_config: SimConfig, top_states: int = 500) -> dict:
    """Observed holding times against the reciprocal exit rates.

    Each holding time scaled by its state's exit rate is a unit exponential,
    so the scaled dwells pool across states: the pooled z-score is
    (mean - 1) * sqrt(n). Per-state relative deviations are reported for
    well-visited states only.
    """
    if traj.mean_dwell_by_state is None:
        return {"states_checked": 0, "dwells_checked": 0}
    n, directed = sim_config.initial.n, sim_config.initial.directed
    by_visits = sorted(
        traj.mean_dwell_by_state.items(), key=lambda kv: kv[1][1], reverse=True
    )[:top_states]
    scaled_sum = 0.0
    n_dwells = 0
    rel_devs = []
    for bits, (total, count) in by_visits:
        g = Graph.from_bits(n, directed, bits)
        u = float(rate_vector(sim_config.process, g).sum())
        scaled_sum += u * total
        n_dwells += count
        if count >= 30:
            rel_devs.append(abs(total / count - 1.0 / u) * u)
    out = {
        "states_checked": len(by_visits),
        "dwells_checked": n_dwells,
        "pooled_z": (scaled_sum / n_dwells - 1.0) * math.sqrt(n_dwells)
        if n_dwells
        else math.nan,
    }
    if rel_devs:
        out["max_rel_dev"] = max(rel_devs)
        out["mean_rel_dev"] = sum(rel_devs) / len(rel_devs)
    return out


def cmd_crosscheck(cfg: dict, args, base_dir: str) -> int:
    _require_sim_keys(cfg["sim"], {"n", "directed"})
    process = build_process(cfg["model"], int(cfg["sim"]["n"]), base_dir)
    sim_config, _ = build_sim_config(cfg, process, base_dir, args.seed)
    traj = simulate(sim_config)
    sampler_config = build_sampler_config(cfg, equilibrium_form(process), sim_config.seed)
    samples = mcmc_sample(sampler_config)
    report = crosscheck(process, traj, samples)
    payload = report.to_dict()
    payload["dwell_diagnostics"] = _dwell_diagnostics(traj, sim_config)
    payload["events_per_time"] = traj.events_per_time
    payload["mean_exit_rate"] = traj.mean_exit_rate
    out_dir = args.out or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "crosscheck.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "samples.csv"), "w") as fh:
        fh.write(",".join(sampler_config.observable_labels()) + "\n")
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    _write_manifest(
        out_dir,
        "crosscheck",
        cfg,
        sim_config.seed,
        ["crosscheck.json", "samples.csv", "manifest.json"],
    )
    worst = max(abs(z) for z in report.z) if len(report.z) else math.nan
    _say(
        args,
        f"crosscheck: max |z| = {worst:.2f} over {report.labels}; "
        f"{'pass' if report.passed else 'FAIL: ' + ', '.join(report.flagged)}",
    )
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def _write_cfp_events(events, fh) -> None:
    for t, ev in events:
        rec: dict = {"t": t, "kind": ev.kind, "i": ev.i}
        if ev.kind == "migrate":
            rec["focus"] = ev.focus
        else:
            rec["j"] = ev.j
            rec["add"] = ev.kind == "form"
        fh.write(json.dumps(rec, separators=(", ", ": ")) + "\n")


def cmd_cfp(cfg: dict, args, base_dir: str) -> int:
    run = build_cfp_run(cfg)
    sim = cfg["sim"]
    _require_sim_keys(sim, {"n", "directed", "seed"})
    if run.mode == "simulate":
        _require_sim_keys(sim, {"t_max", "max_events"})
    n, directed = int(sim["n"]), bool(sim["directed"])
    if run.params.reciprocity and not directed:
        raise ConfigError("cfp reciprocity requires sim.directed = true")
    seed = int(args.seed if args.seed is not None else sim["seed"])
    out_dir = args.out or cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    if run.mode == "fastcheck":
        try:
            report = cfp_fast_mixing_check(
                run.params,
                n,
                run.horizon,
                seed=seed,
                directed=directed,
                min_ratio=run.min_ratio,
                allow_slow=run.allow_slow,
            )
        except CFPError as exc:
            print(f"cfp fastcheck precondition: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        with open(os.path.join(out_dir, "fastcheck.json"), "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        _write_manifest(out_dir, "cfp", cfg, seed, ["fastcheck.json", "manifest.json"])
        _say(
            args,
            f"cfp fastcheck: observed {report.observed_edge_prob:.4f} vs "
            f"predicted {report.predicted_edge_prob:.4f} (z={report.z_edge:.2f}) -> "
            f"{'pass' if report.passed else 'FLAGGED'}",
        )
        return EXIT_OK if report.passed else EXIT_VERIFY_FAILED
    record = sim.get("record", "averages") == "full"
    traj = simulate_cfp(
        run.params,
        n,
        directed,
        t_max=float(sim["t_max"]),
        max_events=int(sim["max_events"]),
        seed=seed,
        burn_in=float(sim.get("burn_in", 0.0)),
        record_events=record,
    )
    outputs = ["cfp_summary.csv", "manifest.json"]
    if record:
        with open(os.path.join(out_dir, "cfp_events.jsonl"), "w") as fh:
            _write_cfp_events(traj.events, fh)
        outputs.append("cfp_events.jsonl")
    with open(os.path.join(out_dir, "cfp_summary.csv"), "w") as fh:
        fh.write("mean_edge_prob,events,sim_time,migrations,formations,dissolutions\n")
        fh.write(
            f"{traj.mean_edge_prob!r},{traj.n_events},{traj.sim_time!r},"
            f"{traj.event_counts['migrate']},{traj.event_counts['form']},"
            f"{traj.event_counts['dissolve']}\n"
        )
    _write_manifest(out_dir, "cfp", cfg, seed, outputs)
    _say(
        args,
        f"cfp: {traj.n_events} events, mean edge probability "
        f"{traj.mean_edge_prob:.4f}, status {traj.status}",
    )
    return EXIT_CAP if traj.status == "max_events" else EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "crosscheck": cmd_crosscheck,
    "cfp": cmd_cfp,
}


def _threads_default() -> int:
    env = os.environ.get("ERGMK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergmk",
        description="Simulate and verify continuous-time graph processes.",
    )
    parser.add_argument("--version", action="version", version=f"ergmk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "run an event-driven simulation and write its artifacts"),
        ("verify", "enumerate the state space and check the analytic equilibrium"),
        ("crosscheck", "compare simulation time averages against sampler averages"),
        ("cfp", "run the contact formation process or its fast-mixing check"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument(
            "--threads",
            type=int,
            default=_threads_default(),
            help="worker threads for replicate ensembles (env ERGMK_THREADS)",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        validate_top_level(cfg, args.command)
        base_dir = os.path.dirname(os.path.abspath(args.config))
        return _COMMANDS[args.command](cfg, args, base_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as exc:
        print(f"cap exceeded: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ReducibleChainError, SolveError, SimulationError, CFPError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
