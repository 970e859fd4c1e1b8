"""Command-line front end.

Subcommands: `run` (simulate a scenario and emit plot-ready CSVs),
`verify-formulas` (analytic-vs-Monte-Carlo sweep with a pass/fail table),
`bench-crypto` (local wall-clock medians next to the reference figures).

Exit codes: 0 success, 1 check failure, 2 usage or I/O error. The RHYTHM_LOG
environment variable sets the log level.
"""

import argparse
import json
import logging
import os
import statistics
import sys
import time

from . import analysis, engine
from .credentials import FLAVOR_SELF, FLAVOR_SILENT, FLAVOR_VPKI
from .crypto import (
    CryptoProfile,
    ProviderUnavailable,
    get_provider,
    verify_budget,
)
from .util import fmt_float

log = logging.getLogger("rhythmsim")

GROUP_SIGN_REFERENCE_MS = 56.0
GROUP_VERIFY_REFERENCE_MS = 82.5


def scenario_path(name: str) -> str:
    """Path of a canned scenario shipped with the package."""
    return os.path.join(os.path.dirname(__file__), "scenarios", f"{name}.json")


def _setup_logging(verbose: bool):
    level = os.environ.get("RHYTHM_LOG", "DEBUG" if verbose else "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_scenario(path, args) -> engine.Scenario:
    if not os.path.exists(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    scenario = engine.Scenario.from_json(path)
    for attr, flag in (
        ("seed", "seed"), ("r", "r"), ("p", "p"),
        ("tau_p_s", "tau_p"), ("gamma_s", "gamma"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(scenario, attr, value)
    return scenario


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args.scenario, args)
    except FileNotFoundError as exc:
        print(exc, file=sys.stderr)
        return 2
    issues = scenario.validate()
    if issues:
        for issue in issues:
            print(f"scenario error: {issue}", file=sys.stderr)
        return 2

    trace, obs = engine.run(scenario)

    results = {
        "anonymity_sets": (
            ["slot", "vpki_count", "selfcert_count"],
            [
                (s, *analysis.anonymity_sets(obs, s))
                for s in range(obs.n_slots)
            ],
        ),
    }
    linkage = None
    if obs.n_slots >= 2:
        linkage = analysis.empirical_link_from_log(obs)
        m = sum(1 for c in linkage["classes"].values() if c == "exhausted")
        n = obs.population - m
        refs = {}
        if n >= 1:
            refs["never_join"] = analysis.analytic_link_baseline(n)
            refs["exhausted"] = (
                analysis.analytic_link_self_to_self(n, m, scenario.r) if m else None
            )
        rows = []
        for cls in ("exhausted", "opt_in", "never_join"):
            est = linkage["per_class"].get(cls)
            if est is None:
                continue
            ref = refs.get(cls)
            rows.append(
                (cls, est.trials, est.estimate, est.stderr,
                 "" if ref is None else fmt_float(ref))
            )
        results["linking_estimates"] = (
            ["vehicle_class", "pairs", "estimate", "stderr", "analytic_reference"],
            rows,
        )

    os.makedirs(args.out, exist_ok=True)
    paths = analysis.emit_report(results, args.out)
    obs_path = os.path.join(args.out, "observation_log.csv")
    with open(obs_path, "w") as fh:
        fh.write(obs.to_csv())
    trace_path = os.path.join(args.out, "run_trace.jsonl")
    trace.write(trace_path)

    totals = {FLAVOR_VPKI: 0, FLAVOR_SELF: 0, FLAVOR_SILENT: 0}
    for s in range(obs.n_slots):
        vpki, selfc, silent = obs.flavor_counts(s)
        totals[FLAVOR_VPKI] += vpki
        totals[FLAVOR_SELF] += selfc
        totals[FLAVOR_SILENT] += silent
    print(f"slots: {obs.n_slots}  vehicles: {obs.population}")
    print(
        "slot-flavors: vpki=%d selfcert=%d silent=%d"
        % (totals[FLAVOR_VPKI], totals[FLAVOR_SELF], totals[FLAVOR_SILENT])
    )
    if linkage:
        for cls, est in sorted(linkage["per_class"].items()):
            print(
                f"linking[{cls}]: {fmt_float(est.estimate)} "
                f"(pairs={est.trials}, stderr={fmt_float(est.stderr)})"
            )
    for path in paths + [obs_path, trace_path]:
        print(f"wrote {path}")
    return 0


def _sweep_from_config(config: dict):
    sweep = config.get("sweep", {})
    kinds = tuple(sweep.get("kinds", analysis.LINK_KINDS))
    cells = []
    for kind in kinds:
        for n in sweep.get("N", (2, 10, 100)):
            if kind == "baseline":
                cells.append((kind, analysis.AnalyticalParams(n_vpki=n)))
                continue
            for r in sweep.get("r", (0.1, 0.2, 0.5, 0.9)):
                if kind == "vpki_to_vpki":
                    cells.append((kind, analysis.AnalyticalParams(n_vpki=n, r=r)))
                elif kind == "avg_with_k":
                    ks = sweep.get("K", sorted({0, n // 4, n // 2, n}))
                    for k in ks:
                        cells.append(
                            (kind, analysis.AnalyticalParams(n_vpki=n, r=r, k_never=k))
                        )
                else:
                    for m in sweep.get("M", (0, 1, 10)):
                        if kind == "self_to_self" and m < 1:
                            continue
                        cells.append(
                            (kind, analysis.AnalyticalParams(n_vpki=n, m_exhausted=m, r=r))
                        )
    return cells


def cmd_verify_formulas(args) -> int:
    grid = None
    config = {}
    if args.scenario:
        if not os.path.exists(args.scenario):
            print(f"sweep config not found: {args.scenario}", file=sys.stderr)
            return 2
        with open(args.scenario) as fh:
            config = json.load(fh)
        grid = _sweep_from_config(config)
    rows = analysis.verify_formulas(
        trials=args.trials, seed=args.seed, grid=grid,
        inject_error=args.inject_error,
    )
    header = f"{'formula':<14} {'N':>5} {'M':>4} {'r':>4} {'K':>4} " \
             f"{'analytic':>12} {'empirical':>12} {'4*stderr':>12}  result"
    print(header)
    failures = 0
    for row in rows:
        status = "pass" if row["ok"] else "FAIL"
        if not row["ok"]:
            failures += 1
        print(
            f"{row['kind']:<14} {row['N']:>5} {row['M']:>4} {row['r']:>4} "
            f"{row['K']:>4} {fmt_float(row['analytic']):>12} "
            f"{fmt_float(row['empirical']):>12} {fmt_float(4 * row['stderr']):>12}  {status}"
        )
    print(f"{len(rows) - failures}/{len(rows)} cells within 4 standard errors")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        tables = {
            "verify_formulas": (
                ["kind", "N", "M", "r", "K", "analytic", "empirical", "stderr", "ok"],
                [
                    (r["kind"], r["N"], r["M"], r["r"], r["K"], r["analytic"],
                     r["empirical"], r["stderr"], int(r["ok"]))
                    for r in rows
                ],
            )
        }
        # Single-kind sweeps over one variable also get the compact schema.
        kinds = {r["kind"] for r in rows}
        if len(kinds) == 1:
            for var in ("K", "M"):
                values = [r[var] for r in rows]
                if len(set(values)) == len(values) and len(values) > 1:
                    tables[f"{var.lower()}_sweep"] = (
                        [var, "analytic", "empirical", "stderr"],
                        [(r[var], r["analytic"], r["empirical"], r["stderr"]) for r in rows],
                    )
        for path in analysis.emit_report(tables, args.out):
            print(f"wrote {path}")
    return 1 if failures else 0


def cmd_bench_crypto(args) -> int:
    try:
        provider = get_provider("real")
    except ProviderUnavailable as exc:
        print(f"real crypto provider unavailable ({exc}); nothing to benchmark")
        return 0
    iterations = args.iterations
    if iterations < 200:
        print(f"warning: {iterations} iterations is a low sample count; "
              "medians may be noisy (recommended >= 200)")

    message = b"cam|bench|payload"
    keys = provider.keygen(None)
    gpk, issuing, opening = provider.group_setup(None)
    gsk = provider.group_join(issuing, "bench-vehicle")

    def median_ms(fn):
        times = []
        for _ in range(iterations):
            start = time.perf_counter()
            fn()
            times.append((time.perf_counter() - start) * 1000.0)
        return statistics.median(times)

    signature = provider.sign(keys.private_key, message)
    gsig = provider.group_sign(gsk, message)
    measured = {
        "sign": median_ms(lambda: provider.sign(keys.private_key, message)),
        "verify": median_ms(lambda: provider.verify(keys.public_key, message, signature)),
        "group_sign": median_ms(lambda: provider.group_sign(gsk, message)),
        "group_verify": median_ms(lambda: provider.group_verify(gpk, message, gsig)),
    }
    reference = {"group_sign": GROUP_SIGN_REFERENCE_MS, "group_verify": GROUP_VERIFY_REFERENCE_MS}
    print(f"{'operation':<14} {'median_ms':>12} {'reference_ms':>14}")
    for op, value in measured.items():
        ref = reference.get(op)
        print(f"{op:<14} {value:>12.3f} {'' if ref is None else f'{ref:>14.1f}'}")
    print("reference column: measurements reported for the original OBU platform; "
          "local numbers are hardware-dependent and carry no pass/fail gate.")
    profile = CryptoProfile()
    print(
        "verification budget at reference latencies: "
        f"{verify_budget(profile, 1000.0, 'group_verify'):.1f} group verifications/s, "
        f"{verify_budget(profile, 1000.0, 'verify'):.1f} plain verifications/s"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rhythmsim",
        description="Vehicular pseudonym-privacy simulator and formula checker",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and emit CSV reports")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p_run.add_argument("--r", type=float, default=None, help="override opt-in probability")
    p_run.add_argument("--p", type=float, default=None, help="override exhausted fraction")
    p_run.add_argument("--tau-p", type=float, default=None, help="override tau_P seconds")
    p_run.add_argument("--gamma", type=float, default=None, help="override gamma seconds")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser(
        "verify-formulas", help="analytic vs Monte Carlo linking-probability sweep"
    )
    p_verify.add_argument("--trials", type=int, default=100_000)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--scenario", default=None, help="optional sweep config JSON")
    p_verify.add_argument("--out", default=None, help="optional CSV output directory")
    p_verify.add_argument(
        "--inject-error", action="store_true", help=argparse.SUPPRESS
    )
    p_verify.set_defaults(func=cmd_verify_formulas)

    p_bench = sub.add_parser(
        "bench-crypto", help="measure local signature latencies (wall clock)"
    )
    p_bench.add_argument("--iterations", type=int, default=300)
    p_bench.set_defaults(func=cmd_bench_crypto)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors already
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except engine.ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
