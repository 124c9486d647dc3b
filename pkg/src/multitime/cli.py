"""Command-line harness: ``python -m multitime <subcommand> [--config ...]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import consistency as cons
from .config import ConfigError, RunConfig
from .fock import FockState
from .green import CSV_HEADER, compute_green, spacelike_abs_max, spacelike_residual
from .multi import Greens, PathError, evolve_multitime
from .reports import write_csv, write_json
from .single import IntegratorError, evolve_single


def _space_and_state(cfg: RunConfig, params, charges):
    space = params.space(max_particles=cfg["max_particles"], charges=tuple(charges) if charges else None)
    psi = FockState.random(space, np.random.default_rng(cfg["seed"]))
    return space, psi


def cmd_evolve(cfg: RunConfig, out: Path) -> list:
    params = cfg.params()
    ev_cfg = cfg["evolve"]
    space, psi = _space_and_state(cfg, params, ev_cfg["charges"])
    ev = evolve_single(params, psi, ev_cfg["t"], steps=ev_cfg["samples"], max_norm_drift=1e-8)
    probs = ev.sector_probabilities()
    names = [f"P{tuple(s)}".replace(" ", "") for s in space.sectors]
    rows = [[float(t), float(n), float(lk)] + [float(p[s]) for s in space.sectors]
            for t, n, lk, p in zip(ev.times, ev.norms, ev.leakage, probs)]
    write_csv(out / "evolve.csv", ["t", "norm", "leakage"] + names, rows, cfg.to_dict())
    failures = []
    drift = float(np.abs(ev.norms - ev.norms[0]).max())
    if drift > 1e-8:
        failures.append(f"norm drift {drift:.3e} > 1e-8")
    if cfg["coupling"]["strength"] == 0:
        spread = max(abs(p[s] - probs[0][s]) for p in probs for s in space.sectors)
        if spread > 1e-10:
            failures.append(f"sector probabilities drift {spread:.3e} > 1e-10 with zero coupling")
    write_json(out / "evolve.json", {"norm_drift": drift, "final_leakage": float(ev.leakage[-1]),
                                     "method": ev.method, "failures": failures}, cfg.to_dict())
    return failures


def cmd_green(cfg: RunConfig, out: Path) -> list:
    params = cfg.params()
    T = cfg["T"]
    summary, failures = {}, []
    for which in ("G", "Gbar"):
        table = compute_green(params, T, which)
        write_csv(out / f"green_{which}.csv", list(CSV_HEADER), table.csv_rows(), cfg.to_dict())
        curve = []
        for m in cfg["margins"]:
            try:
                curve.append([float(m), spacelike_residual(table, m)])
            except ValueError:
                curve.append([float(m), float("nan")])
        write_csv(out / f"green_{which}_residual.csv", ["margin", "residual"], curve, cfg.to_dict())
        vals = [r for _, r in curve if np.isfinite(r)]
        if any(b > a for a, b in zip(vals, vals[1:])):
            failures.append(f"{which} spacelike residual not monotone in margin")
        summary[which] = {"residual_by_margin": curve}
    summary["failures"] = failures
    write_json(out / "green.json", summary, cfg.to_dict())
    return failures


def _max_clock_gap(path, n_clocks, dt):
    clocks = np.zeros(n_clocks)
    gap = 0.0
    for c, steps in path:
        for k in np.atleast_1d(c):
            clocks[k] += steps * dt
        gap = max(gap, float(np.ptp(clocks)))
    return gap


def _margin_mask(state, sector, labels, spec, threshold):
    n = len(labels)
    dist = spec.offset_length[spec.displacement]
    mask = np.ones((spec.n_sites,) * n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] == labels[j]:
                continue
            shape = [1] * n
            shape[i] = shape[j] = spec.n_sites
            mask &= (dist >= threshold).reshape(shape)
    return mask


def _masked_diff(a, b, sector, labels, spec, ds, threshold):
    n = len(labels)
    if n == 0:
        return float(np.abs(a - b).max())
    d = np.abs(a - b).reshape(sum(((spec.n_sites, ds) for _ in labels), ()))
    d = d.max(axis=tuple(range(1, 2 * n, 2)))
    mask = _margin_mask(None, sector, labels, spec, threshold)
    return float(d[mask].max()) if mask.any() else 0.0


def cmd_multitime(cfg: RunConfig, out: Path) -> list:
    params = cfg.params()
    spec, ds = params.spec, params.ds
    mt = cfg["multitime"]
    target = [float(t) for t in mt["target"]]
    n_clocks = len(target)
    space, psi = _space_and_state(cfg, params, cfg["evolve"]["charges"])
    greens = Greens.exact(params)
    sub = int(mt["substeps"])
    paths = [[(tuple(c) if isinstance(c, list) else c, int(s)) for c, s in p] for p in mt["paths"]]

    def run(path, kappa, substeps):
        return evolve_multitime(params, psi, path, kappa, n_clocks=n_clocks, substeps=substeps,
                                greens=greens, target=target)

    finals, errs = [], []
    for p in paths:
        coarse, fine = run(p, cfg["kappa"], sub), run(p, cfg["kappa"], 2 * sub)
        finals.append(fine)
        errs.append(max(float(np.abs(coarse.blocks[k] - fine.blocks[k]).max()) / 15 for k in fine.blocks))
    stepper = max(errs)
    path_diff = max((float(np.abs(f.blocks[k] - finals[0].blocks[k]).max())
                     for f in finals[1:] for k in f.blocks), default=0.0)
    failures = []
    if path_diff > 10 * stepper:
        failures.append(f"path independence: discrepancy {path_diff:.3e} > 10 x stepper {stepper:.3e}")

    gap = max(_max_clock_gap(p, n_clocks, spec.dt) for p in paths[:1])
    margin = float(mt["margin"])
    kap_runs = {k: run(paths[0], k, 2 * sub) for k in mt["kappas"]}
    ref = kap_runs[mt["kappas"][0]]
    kdiff = 0.0
    for k, st in kap_runs.items():
        for (sector, labels), blk in st.blocks.items():
            kdiff = max(kdiff, _masked_diff(blk, ref.blocks[(sector, labels)], sector, labels, spec, ds,
                                            gap + margin))
    if gap > 0:
        tabs = [compute_green(params, gap, w) for w in ("G", "Gbar")]
        gtail = max(spacelike_abs_max(t, margin) for t in tabs)
    else:
        gtail = 0.0
    duration = sum(abs(s) for _, s in paths[0]) * spec.dt
    tail = duration * ds * gtail * psi.max_abs()
    kbudget = 2 * stepper + tail
    if kdiff > kbudget:
        failures.append(f"kappa independence: discrepancy {kdiff:.3e} > budget {kbudget:.3e}")

    for sector in space.sectors:
        if sector.n == 0:
            continue
        labels = tuple(min(i, n_clocks - 1) for i in range(sector.n))
        st = finals[0]
        name = "mt_" + "".join(str(v) for v in sector) + ".csv"
        write_csv(out / name, st.csv_header(sector.n), st.csv_rows(sector, labels), cfg.to_dict())
    write_json(out / "multitime.json", {
        "clocks": finals[0].clocks, "stepper_error": stepper, "path_discrepancy": path_diff,
        "kappa_discrepancy": kdiff, "kappa_budget": kbudget, "green_tail": tail, "margin": margin,
        "failures": failures}, cfg.to_dict())
    return failures


def cmd_consistency(cfg: RunConfig, out: Path) -> list:
    params = cfg.params()
    c = cfg["consistency"]
    rep = cons.consistency_report(params, cfg["seed"], n_probes=c["n_probes"], margin=c["margin"],
                                  t_max=c["t_max"], kappa=cfg["kappa"])
    failures = []
    if rep["n_consistent"] != 4:
        failures.append(f"{rep['n_consistent']} assignments marked consistent, expected 4")
    if not rep["agrees"]:
        failures.append("verdict disagrees with measured y-y residuals")
    write_json(out / "consistency.json", dict(rep, failures=failures), cfg.to_dict())
    return failures


def cmd_selftest(cfg: RunConfig, out: Path) -> list:
    from .selftest import run_all, summarize

    results = run_all(verbose=True)
    summary = summarize(results)
    for r in summary["criteria"]:
        r.pop("seconds")
    write_json(out / "selftest.json", summary, cfg.to_dict())
    return [r.name for r in results if not r.passed]


COMMANDS = {
    "evolve": cmd_evolve,
    "green": cmd_green,
    "multitime": cmd_multitime,
    "consistency": cmd_consistency,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="multitime", description=__doc__)
    ap.add_argument("--version", action="version", version=f"multitime {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", "") + " run")
        p.add_argument("--config", type=Path, help="JSON run config (defaults when omitted)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="BLAS threads")
    return ap


def run_subcommand(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(json.dumps(exc.as_dict()), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": "config", "field": "<file>", "message": str(exc)}), file=sys.stderr)
        return 2
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        with threadpool_limits(limits=args.threads):
            failures = COMMANDS[args.command](cfg, args.out)
    except (ValueError, PathError, IntegratorError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    if failures:
        for f in failures:
            print(f"FAILED: {f}", file=sys.stderr)
        return 1
    print(f"{args.command}: all tolerances met; outputs in {args.out}")
    return 0


def main() -> None:
    sys.exit(run_subcommand())
