"""Command-line entry point.

Subcommands: ``simulate``, ``diagnose``, ``drift-check``, ``control-demo``,
``specfun``.  Exit codes: 0 success, 2 configuration error, 3 runtime or
numerical error.  Every run that writes files also writes ``manifest.json``
(config hash, seed, library versions, output checksums).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .errors import (ConfigError, ContractError, DomainError, InfeasibleTargetError, PotentialError, StencilError,
                     StepError, UnreachableError)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args)


def _write_json(path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _manifest(out_dir, cfg, command: str, files) -> None:
    from .config import canonical_json
    from .io import file_sha256
    man = {
        "command": command,
        "config": cfg.raw if cfg is not None else None,
        "config_sha256": cfg.hash if cfg is not None else None,
        "config_canonical": canonical_json(cfg.raw) if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "versions": {"nhb": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "outputs": {os.path.basename(f): file_sha256(f) for f in sorted(files)},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), man)


def _load(args):
    from .config import load_config
    overrides = {"seed": args.seed, "chains": args.chains, "output_dir": args.out}
    if args.config is None:
        return load_config({"schema_version": 1}, overrides)
    return load_config(args.config, overrides)


def _out_dir(cfg) -> str:
    d = cfg.output_dir
    os.makedirs(d, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(cfg, say) -> int:
    from .dynamics import simulate, support_bound_violations, xi_identity_error
    from .io import write_trajectory_csv, write_trajectory_npz
    from .model import State
    out = _out_dir(cfg)
    x0 = cfg.initial_state()
    C = cfg.chains
    icfg = cfg.integrator()
    if C == 1:
        tr = simulate(x0, icfg, cfg.pot, cfg.params, cfg.thinning)
        chains = [tr]
    else:
        batch = State(np.repeat(x0.q[None], C, 0), np.repeat(x0.p[None], C, 0), np.repeat(x0.xi[None], C, 0))
        tr = simulate(batch, icfg, cfg.pot, cfg.params, cfg.thinning)
        chains = [tr.chain(i) for i in range(C)]
    files = []
    npz = os.path.join(out, "trajectory.npz")
    write_trajectory_npz(npz, tr)
    files.append(npz)
    for i, ch in enumerate(chains[:16]):
        path = os.path.join(out, "trajectory.csv" if C == 1 else f"trajectory_chain{i}.csv")
        write_trajectory_csv(path, ch)
        files.append(path)
    summary = {
        "chains": C, "n_steps": icfg.n_steps, "dt": icfg.dt, "scheme": icfg.scheme, "stored_states": len(tr),
        "xi_identity_max_rel_error": xi_identity_error(tr, cfg.params),
        "support_bound_violations": support_bound_violations(tr, cfg.params),
        "n_halvings": tr.n_halvings, "n_rejected": tr.n_rejected,
        "brownian_increments_consumed": tr.brownian_increments_consumed,
        "failed_chains": sorted(tr.errors),
    }
    sp = os.path.join(out, "summary.json")
    _write_json(sp, summary)
    files.append(sp)
    _manifest(out, cfg, "simulate", files)
    say(f"simulated {C} chain(s) x {icfg.n_steps} steps -> {out}")
    say(f"xi identity max rel error {summary['xi_identity_max_rel_error']:.3e}; "
        f"support-bound violations {summary['support_bound_violations']}")
    return EXIT_RUNTIME if tr.errors else EXIT_OK


def cmd_diagnose(cfg, say, inputs, inputs_b=None) -> int:
    from .diagnostics import diagnose, tv_decay
    from .io import read_trajectory, write_csv_table
    if not inputs:
        raise ConfigError("diagnose needs at least one --input trajectory")
    trs = [read_trajectory(p) for p in inputs]
    if len(trs) > 1:
        if any(t.batched for t in trs) or any(t.q.shape != trs[0].q.shape for t in trs):
            raise ConfigError("multiple --input files must be single chains of equal length")
        tr = trs[0]
        tr = type(tr)(tr.times, np.stack([t.q for t in trs], 1), np.stack([t.p for t in trs], 1),
                      np.stack([t.xi for t in trs], 1), np.stack([t.kinetic_integral for t in trs], 1),
                      np.stack([t.arc_length for t in trs], 1), np.stack([t.active_time for t in trs], 1),
                      np.arange(len(trs)), tr.scheme, tr.dt)
    else:
        tr = trs[0]
    if len(tr) < 2:
        raise ConfigError("trajectory input has fewer than two states")
    d = cfg.raw["diagnostics"]
    rep = diagnose(tr, cfg.pot, cfg.params, float(d["burn_in_fraction"]), bool(d["stationarity"]))
    out = _out_dir(cfg)
    files = []
    if inputs_b:
        trb = read_trajectory(inputs_b)
        tv = tv_decay(tr, trb)
        rep.tv = {"rate": tv.rate, "r2": tv.r2, "window": list(tv.window), "monotone": tv.monotone()}
        p = os.path.join(out, "tv_decay.csv")
        write_csv_table(p, ["t", "tv", "floor"], np.column_stack([tv.times, tv.tv, tv.floor]))
        files.append(p)
    # histogram of q0 against the reference density (plot data)
    from .diagnostics import GibbsModel
    model = GibbsModel(cfg.pot, cfg.params)
    if model.logZq is not None:
        qs = tr.q[..., 0].ravel()
        hist, edges = np.histogram(qs, bins=int(d["histogram_bins"]), density=True)
        mid = 0.5 * (edges[1:] + edges[:-1])
        cdf = model.q_marginal_cdf(0)
        ref = (cdf(edges[1:]) - cdf(edges[:-1])) / np.diff(edges)
        p = os.path.join(out, "q0_histogram.csv")
        write_csv_table(p, ["q0", "empirical_density", "reference_density"], np.column_stack([mid, hist, ref]))
        files.append(p)
    if not rep.all_finite():
        raise DomainError("diagnostics report contains non-finite entries")
    rp = os.path.join(out, "diagnostics.json")
    _write_json(rp, rep.to_dict())
    files.append(rp)
    _manifest(out, cfg, "diagnose", files)
    say(f"temperature {rep.temperature:.5f} +- {rep.temperature_se:.5f}; xi mean {rep.xi_mean:.5f}, "
        f"var {rep.xi_var:.5f}")
    say("KS: " + ", ".join(f"{k}={v:.4f}" for k, v in rep.ks.items()))
    return EXIT_OK


def cmd_drift_check(cfg, say) -> int:
    from .certify import escalate
    ly = cfg.raw["lyapunov"]
    alpha, b0, e0 = cfg.lyapunov_inputs()
    log = (lambda e: say(json.dumps(e))) if not say.quiet else None
    lp, rep = escalate(cfg.pot, cfg.params, alpha, b0, e0, seeds=tuple(ly["seeds"]), n_samples=int(ly["n_samples"]),
                       explore_hi=float(ly["explore_hi"]), n_explore=int(ly["n_explore"]),
                       max_rounds=int(ly["max_rounds"]), seed=cfg.seed, log=log)
    out = _out_dir(cfg)
    p = os.path.join(out, "certificate.json")
    with open(p, "w", newline="\n") as fh:
        fh.write(rep.to_json())
        fh.write("\n")
    _manifest(out, cfg, "drift-check", [p])
    logk = "n/a" if rep.logK is None else f"{rep.logK:.6g}"
    say(f"{'PASS' if rep.passed else 'FAIL'}: {rep.message}; shell {rep.shell}, log K {logk}")
    return EXIT_OK if rep.passed else EXIT_RUNTIME


def cmd_control_demo(cfg, say) -> int:
    from .control import build_control_path, min_xi, verify_control
    from .io import write_csv_table
    from .model import State
    c = cfg.raw["control"]
    t = float(c["t"])
    x = cfg.control_origin()
    targets = c["targets"] or [{"q": list(np.asarray(x.q) + 0.5), "p": list(np.zeros(cfg.params.n)),
                                "xi": "boundary"},
                               {"q": list(np.asarray(x.q) + 0.5), "p": list(np.zeros(cfg.params.n)),
                                "xi": {"above_boundary": 0.05}},
                               {"q": list(np.asarray(x.q) + 0.5), "p": list(np.zeros(cfg.params.n)),
                                "xi": {"above_boundary": 3.0}},
                               {"q": list(np.asarray(x.q) + 0.5), "p": list(np.zeros(cfg.params.n)),
                                "xi": {"above_boundary": -1e-3}}]
    out = _out_dir(cfg)
    files = []
    results = []
    n = cfg.params.n
    for i, tg in enumerate(targets):
        if not isinstance(tg, dict) or set(tg) - {"q", "p", "xi"}:
            raise ConfigError(f"control.targets[{i}] must be an object with keys q, p, xi")
        q2 = np.asarray(tg["q"], float)
        p2 = np.asarray(tg.get("p", [0.0] * n), float)
        mx = min_xi(x, t, q2, cfg.params, cfg.pot)
        spec = tg["xi"]
        if spec == "boundary":
            xi2 = mx
        elif isinstance(spec, dict) and set(spec) == {"above_boundary"}:
            xi2 = mx + float(spec["above_boundary"])
        elif isinstance(spec, (int, float)):
            xi2 = float(spec)
        else:
            raise ConfigError(f"control.targets[{i}].xi must be a number, 'boundary' or {{'above_boundary': c}}")
        target = State(q2, p2, np.asarray(xi2))
        entry = {"index": i, "target": {"q": q2.tolist(), "p": p2.tolist(), "xi": xi2}, "min_xi": mx}
        try:
            path = build_control_path(x, t, target, cfg.pot, cfg.params)
        except InfeasibleTargetError as exc:
            entry.update(status="infeasible", message=str(exc))
            results.append(entry)
            say(f"target {i}: infeasible ({exc})")
            continue
        rep = verify_control(path, x, cfg.pot, cfg.params)
        entry.update(status="verified" if rep.max_error < 1e-6 else "mismatch", mode=path.mode, delta=path.delta,
                     s=path.s, verification=rep.to_dict())
        results.append(entry)
        phi, v, _, _ = path.evaluate(path.grid)
        xi_path = path.xi_at(path.grid, cfg.params)
        header = (["u"] + [f"q{j}" for j in range(n)] + [f"p{j}" for j in range(n)] + ["xi"]
                  + [f"eta{j}" for j in range(n)])
        p = os.path.join(out, f"control_path_{i}.csv")
        write_csv_table(p, header, np.column_stack([path.grid, phi, cfg.params.mass_vector * v, xi_path, path.eta]))
        files.append(p)
        say(f"target {i}: {path.mode} path, endpoint error {rep.max_error:.3e}")
    rp = os.path.join(out, "control_report.json")
    _write_json(rp, {"t": t, "origin": {"q": x.q.tolist(), "p": x.p.tolist(), "xi": float(x.xi)},
                     "targets": results})
    files.append(rp)
    _manifest(out, cfg, "control-demo", files)
    return EXIT_RUNTIME if any(r["status"] == "mismatch" for r in results) else EXIT_OK


def cmd_specfun(args, say) -> int:
    from .model import SystemParams
    from .specfun import F_unit, beta_star, dawson, dawson_max
    zs = np.asarray(args.z if args.z else [0.0, 0.5, 1.0, 2.0, 3.0, 10.0, 50.0, 100.0], float)
    dm = dawson_max()
    print(f"{'z':>10} {'D(z)':>24} {'F_unit(z)':>24}")
    for z, d, f in zip(zs, dawson(zs), F_unit(zs)):
        print(f"{z:>10.4g} {d:>24.17g} {f:>24.17g}")
    print(f"z* = {dm.z_star:.17g}")
    print(f"D_max = {dm.d_max:.17g}")
    print(f"beta* (kB T = {args.kT:g}) = {beta_star(SystemParams(T=args.kT)):.17g}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nhb", description="Thermostatted Langevin dynamics toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--chains", type=int, help="number of chains")
    common.add_argument("--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate trajectories")
    d = sub.add_parser("diagnose", parents=[common], help="diagnostics report for trajectories")
    d.add_argument("--input", action="append", default=[], help="trajectory file (.npz or .csv); repeatable")
    d.add_argument("--input-b", help="second ensemble (.npz) for TV decay")
    sub.add_parser("drift-check", parents=[common], help="certify the drift condition")
    sub.add_parser("control-demo", parents=[common], help="build and verify control paths")
    s = sub.add_parser("specfun", parents=[common], help="print Dawson function table and constants")
    s.add_argument("--z", type=float, nargs="*", help="evaluation points")
    s.add_argument("--kT", type=float, default=1.0, help="kB T used for beta*")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = _Out(args.quiet)
    try:
        if args.command == "specfun":
            return cmd_specfun(args, say)
        cfg = _load(args)
        if args.command == "simulate":
            return cmd_simulate(cfg, say)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, say, args.input, args.input_b)
        if args.command == "drift-check":
            return cmd_drift_check(cfg, say)
        if args.command == "control-demo":
            return cmd_control_demo(cfg, say)
    except (ConfigError, PotentialError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, DomainError, StencilError, StepError, UnreachableError, InfeasibleTargetError,
            FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
