"""Command-line entry point: ``cablegff {oracle,sample,estimate,werner,chains,report}``.

Exit codes: 0 success, 2 invalid configuration, 3 failed strict check,
4 resource budget exceeded.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import chains, config, experiments, walk_oracle
from .experiments import ConfigError, MonotonicityViolation
from .gff_route import MemoryBudgetError, open_edges, sample_dgff, save_field, write_edge_list
from .lattice import BoxSpec
from .loop_route import expected_loop_counts, sample_loop_soup, write_loop_dump

EXIT_OK, EXIT_CONFIG, EXIT_CHECK, EXIT_BUDGET = 0, 2, 3, 4
ORACLE_CACHE_RADIUS = 9
ORACLE_K = 16
WATSON_G3 = 1.516386059151978


class CheckFailure(RuntimeError):
    pass


def _resolve(args) -> config.RunConfig:
    cfg = config.load(args.config) if args.config else config.defaults()
    if os.environ.get("THREADS"):
        cfg.set("run", "threads", os.environ["THREADS"])
    for key in ("seed", "threads", "out", "route"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set("run", key, val)
    return cfg


def _outdir(cfg: config.RunConfig) -> Path:
    out = Path(cfg.get("run", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# oracle


def oracle_checks(cache_dir: Path) -> tuple[list[str], list[str]]:
    """Return (report lines, names of failed strict checks)."""
    lines, failed = [], []
    lines.append("return probability: convolution DP vs Gauss-Legendre quadrature, tolerance 1e-9")
    for d in range(1, 8):
        worst = 0.0
        for k in range(ORACLE_K + 1):
            dp = float(walk_oracle.return_prob_dp(d, k))
            worst = max(worst, abs(dp - walk_oracle.return_prob_quadrature(d, k)))
        ok = worst <= 1e-9
        lines.append(f"  d={d} k<={ORACLE_K} max|diff|={worst:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(f"return_prob mismatch: quadrature d={d}")
    lines.append(f"return probability: cached kernel tables in {cache_dir} vs convolution DP")
    for d in range(1, 8):
        box = BoxSpec.centered(d, ORACLE_CACHE_RADIUS)
        try:
            tab = walk_oracle.kernel_table(d, "torus", ORACLE_K, box, cache_dir=cache_dir)
            series = tab.series((0,) * d, (0,) * d)
        except (walk_oracle.OracleError, ValueError) as exc:
            lines.append(f"  d={d} unreadable cache: {exc} FAIL")
            failed.append(f"return_prob mismatch: cached table d={d} unreadable")
            continue
        worst = max(abs(series[k] - float(walk_oracle.return_prob_dp(d, k))) for k in range(ORACLE_K + 1))
        ok = worst <= 1e-9
        lines.append(f"  d={d} max|diff|={worst:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(f"return_prob mismatch: cached table d={d}")
    box = BoxSpec.centered(3, 2)
    a = expected_loop_counts(box, 10, "box")
    b = walk_oracle.loop_mass_series(box, 10, "box")
    diff = float(np.max(np.abs(a - b)))
    ok = diff <= 1e-12
    lines.append(f"loop mass per length, sampler tables vs kernel traces (d=3 radius-2 box): max|diff|={diff:.3e} {'ok' if ok else 'FAIL'}")
    if not ok:
        failed.append("loop mass identity")
    g = walk_oracle.free_greens(3, (0, 0, 0))
    ok = abs(g - WATSON_G3) <= 1e-9
    lines.append(f"free Green's function G(0,0), d=3: {g:.15f} vs {WATSON_G3} {'ok' if ok else 'FAIL'}")
    if not ok:
        failed.append("free Green's function value")
    lines.append("loop tail sums S(L) / L^(1-d/2), d=7 (diagnostic: bounded ratios)")
    for row in walk_oracle.loop_count_scaling_check(7, [16, 32, 64, 128]):
        lines.append(f"  L={row['L']} S={row['sum']:.6e} ratio={row['ratio']:.4f}")
    return lines, failed


def cmd_oracle(args) -> int:
    cfg = _resolve(args)
    out = _outdir(cfg)
    cache = Path(args.cache) if args.cache else out / "kernel_cache"
    lines, failed = oracle_checks(cache)
    status = "PASS" if not failed else "FAIL: " + "; ".join(failed)
    (out / "oracle_report.txt").write_text("\n".join(lines + [status]) + "\n")
    print("\n".join(lines))
    print(status)
    return EXIT_OK if not failed else EXIT_CHECK


# ---------------------------------------------------------------------------
# sample


def cmd_sample(args) -> int:
    cfg = _resolve(args)
    out = _outdir(cfg)
    lat, run, smp = cfg["lattice"], cfg["run"], cfg["sample"]
    box = BoxSpec.centered(lat["d"], lat["box_radius"])
    rep = smp["replica"]
    kind = args.kind or smp["kind"]
    experiments.write_manifest(out / "sample_manifest.json", None, ["sample"], {"run": cfg.values})
    if kind == "field":
        fld = sample_dgff(box, run["seed"], rep)
        p1 = save_field(fld, out / f"field_{rep}.cgff")
        p2 = write_edge_list(open_edges(fld), out / f"edges_{rep}.txt")
        print(p1, p2)
    elif kind == "loops":
        s = sample_loop_soup(box, lat["K_max"], "box", run["seed"], rep)
        print(write_loop_dump(s, out / f"loops_{rep}.txt"))
    else:
        raise ConfigError("sample.kind", "must be 'field' or 'loops'")
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate / werner


def cmd_estimate(args) -> int:
    cfg = _resolve(args)
    exp = cfg.experiment()
    names = cfg.experiments()
    out = _outdir(cfg)
    est = cfg["estimate"]
    experiments.write_manifest(out / "estimate_manifest.json", exp, names, {"csv": str(out / "estimates.csv")})
    records = []
    for name in names:
        if name == "pi1":
            records += experiments.estimate_pi1(exp)
        elif name == "two_point":
            records += experiments.estimate_two_point(exp)
        elif name == "local_connectivity":
            records += experiments.estimate_local_connectivity(exp, extra_betas=est["extra_betas"])
        elif name == "chemical":
            targets = exp.x_list if est["chemical_mode"] == "point" else exp.r_grid
            records += experiments.estimate_chemical(exp, targets, mode=est["chemical_mode"])
        elif name == "intrinsic_one_arm":
            records += experiments.estimate_intrinsic_one_arm(exp)
    path = experiments.write_records_csv(records, out / "estimates.csv")
    print(path)
    return EXIT_OK


def cmd_werner(args) -> int:
    cfg = _resolve(args)
    exp = cfg.experiment()
    if exp.route != "loops":
        raise ConfigError("run.route", "the loop-deletion experiment runs on the loop route only")
    out = _outdir(cfg)
    w = cfg["werner"]
    experiments.write_manifest(out / "werner_manifest.json", exp, ["werner_gap"],
                               {"werner": w, "csv": str(out / "werner.csv")})
    records = experiments.werner_gap(exp, w["r"], w["beta"], w["b_grid"])
    print(experiments.write_records_csv(records, out / "werner.csv"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# chains


def cmd_chains(args) -> int:
    cfg = _resolve(args)
    out = _outdir(cfg)
    n = cfg.get("chains", "instances")
    t0 = time.time()
    rep = chains.chain_property_suite(n, cfg.get("run", "seed"))
    text = rep.summary() + f"runtime: {time.time() - t0:.1f} s\n"
    (out / "chains_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK if rep.ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# report

TARGETS = {
    "pi1": ("r", -2.0, "one-arm probability decays like r^-2"),
    "intrinsic_one_arm": ("r", -1.0, "intrinsic one-arm probability decays like r^-1"),
    "local_connectivity": ("r", 2.0, "local connectivity sum grows like r^2"),
    "chemical_boundary": ("r", 2.0, "conditional chemical distance to a sphere grows like r^2"),
}


def _read_csvs(out: Path) -> list[dict]:
    rows = []
    for p in sorted(out.glob("*.csv")):
        with p.open() as fh:
            for row in csv.DictReader(fh):
                if set(experiments.CSV_COLUMNS) <= set(row):
                    row["params"] = json.loads(row["param_json"])
                    rows.append(row)
    return rows


def build_report(out: Path) -> str:
    rows = _read_csvs(out)
    if not rows:
        return f"no estimate files in {out}\n"
    lines = []
    groups = defaultdict(list)
    for row in rows:
        key_params = {k: v for k, v in row["params"].items() if k not in ("r", "x", "events", "M", "b", "cutoff")}
        groups[(row["name"], row["d"], row["route"], json.dumps(key_params, sort_keys=True))].append(row)
    for (name, d, route, kp), grp in sorted(groups.items()):
        lines.append(f"{name} d={d} route={route} {kp}")
        for row in grp:
            note = f"  [{row['truncation_note']}]" if "insufficient" in row["truncation_note"] or "warning" in row["truncation_note"] else ""
            lines.append(f"  {json.dumps(row['params'], sort_keys=True)}: {float(row['estimate']):.6g} +/- {float(row['stderr']):.3g} (n={row['n']}){note}")
        if name in TARGETS:
            var, target, statement = TARGETS[name]
            pts = [(row["params"][var], float(row["estimate"]), float(row["stderr"])) for row in grp if var in row["params"]]
            if len(pts) >= 3 and all(p[1] > 0 and math.isfinite(p[2]) for p in pts):
                fit = experiments.fit_exponent([p[0] for p in pts], [p[1] for p in pts], stderr=[p[2] for p in pts])
                lines.append(f"  fitted exponent {fit.gamma:.3f} CI [{fit.ci[0]:.3f}, {fit.ci[1]:.3f}]; target {target} ({statement})")
            else:
                lines.append(f"  target {target} ({statement}); fewer than 3 usable points, no fit")
        if name == "werner_gap":
            lines.append("  gap should shrink as b grows; exponent readings 2 - b(d/2-2) and b(d/2-2) - 2 are both listed in the CSV extras")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    cfg = _resolve(args)
    out = _outdir(cfg)
    text = build_report(out)
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (sections with key = value)")
    common.add_argument("--seed", type=int, help="master seed, overrides run.seed")
    common.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    common.add_argument("--out", help="output directory, overrides run.out")
    common.add_argument("--route", choices=experiments.ROUTES, help="overrides run.route")
    p = argparse.ArgumentParser(prog="cablegff", description="Level-set percolation of the cable-graph free field.")
    sub = p.add_subparsers(dest="command", required=True)
    o = sub.add_parser("oracle", parents=[common], help="kernel and loop-mass self-checks")
    o.add_argument("--cache", help="kernel table cache directory (default OUT/kernel_cache)")
    o.set_defaults(func=cmd_oracle)
    s = sub.add_parser("sample", parents=[common], help="write one field or loop-soup sample")
    s.add_argument("--kind", choices=("field", "loops"), help="overrides sample.kind")
    s.set_defaults(func=cmd_sample)
    sub.add_parser("estimate", parents=[common], help="run the configured estimators").set_defaults(func=cmd_estimate)
    sub.add_parser("werner", parents=[common], help="loop-deletion connectivity gap").set_defaults(func=cmd_werner)
    sub.add_parser("chains", parents=[common], help="random-instance checks of the chain invariants").set_defaults(func=cmd_chains)
    sub.add_parser("report", parents=[common], help="summarize CSVs in the output directory").set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MonotonicityViolation, CheckFailure) as exc:
        print(f"strict check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (MemoryBudgetError, MemoryError, chains.LimitExceeded) as exc:
        print(f"resource budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
