"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 simulation error
(voltage collapse), 3 certification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from dcvrt import __version__
from dcvrt.errors import ConfigError, DcvrtError, NotApplicable, NumericError
from dcvrt.report import (
    compute_metrics,
    delay_sweep,
    run_many,
    write_json,
    write_metrics_csv,
    write_trajectory_csv,
)
from dcvrt.scenario import MANIFEST_KIND, gains_from_dict, gains_to_dict, load_scenario
from dcvrt.sim import VOLTAGE_COLLAPSE, run
from dcvrt.synth import certify, synthesis_problem, synthesize

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SIM = 2
EXIT_UNSTABLE = 3

REPORT_SCENARIOS = (
    "baseline-nocontrol",
    "centralized-50ms",
    "centralized-voltvar",
    "decentralized-5ms",
    "decentralized-voltvar",
)

log = logging.getLogger("dcvrt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _delays(text: str) -> list:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seconds, got {text!r}") from None
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("delays must be >= 0")
    return vals


def _positive(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not val > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return val


def _nonneg(text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if val < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcvrt", description="Data-center ride-through simulation and control.")
    parser.add_argument("--version", action="version", version=f"dcvrt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, default_scenario="default", overrides=True):
        p.add_argument("--scenario", default=default_scenario,
                       help="scenario JSON path, run manifest, or built-in name (default: %(default)s)")
        p.add_argument("--out", default="out", help="output directory (default: %(default)s)")
        if overrides:
            p.add_argument("--seed", type=int, help="workload seed")
            p.add_argument("--dt", type=_positive, help="simulation step in seconds")
            p.add_argument("--controller", choices=("none", "centralized", "decentralized"))
            p.add_argument("--delay", type=_nonneg, help="controller actuation delay in seconds")
            p.add_argument("--curve", help="VRT curve: built-in name or JSON path")
            p.add_argument("--reactive-only", action="store_true", help="volt-var: freeze real power")

    common(sub.add_parser("run", help="simulate one scenario"))
    sw = sub.add_parser("sweep-delay", help="centralized runs over a list of delays")
    common(sw, default_scenario="centralized-50ms")
    sw.add_argument("--delays", type=_delays, default=[0.01, 0.05, 0.1, 0.2],
                    help="comma-separated delays in seconds (default: 0.01,0.05,0.1,0.2)")
    sg = sub.add_parser("synth-gains", help="optimize decentralized gains and write a gains file")
    common(sg, default_scenario="decentralized-5ms")
    cs = sub.add_parser("check-stability", help="certify the decentralized gains of a scenario")
    common(cs, default_scenario="decentralized-5ms")
    cs.add_argument("--gains", help="gains JSON file to certify instead of the scenario's")
    rp = sub.add_parser("report", help="run the reference comparison and write one metrics table")
    rp.add_argument("--scenarios", default=",".join(REPORT_SCENARIOS),
                    help="comma-separated scenario names or paths")
    rp.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    rp.add_argument("--seed", type=int, help="workload seed")
    rp.add_argument("--dt", type=_positive, help="simulation step in seconds")
    return parser


def _load(args):
    over = {}
    for key in ("seed", "dt", "controller", "delay", "curve"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "reactive_only", False):
        over["reactive_only"] = True
    return load_scenario(args.scenario, **over)


def _manifest(sc, command: str, extra: dict) -> dict:
    return {"kind": MANIFEST_KIND, "version": __version__, "command": command, "seed": sc.seed,
            "scenario": sc.to_document(), **extra}


def cmd_run(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    result = run(sc)
    metrics = compute_metrics(result)
    write_trajectory_csv(out / "trajectory.csv", result)
    write_metrics_csv(out / "metrics.csv", [(sc.name, metrics)])
    write_json(out / "manifest.json", _manifest(sc, "run", {
        "status": result.status, "trip_time": result.trip_time,
        "metrics": {k: v for k, v in metrics.__dict__.items()},
    }))
    print(f"{sc.name}: {result.status}, largest deviation {metrics.largest_voltage_deviation:.4f} pu, "
          f"mean {metrics.mean_voltage_deviation:.4f} pu -> {out}")
    return EXIT_SIM if result.status == VOLTAGE_COLLAPSE else EXIT_OK


def cmd_sweep(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    rows = delay_sweep(sc, args.delays)
    write_metrics_csv(out / "metrics.csv", rows)
    write_json(out / "manifest.json", _manifest(sc, "sweep-delay", {"delays_s": list(args.delays)}))
    for label, m in rows:
        print(f"{label}: largest {m.largest_voltage_deviation:.4f} mean {m.mean_voltage_deviation:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    sc = _load(args)
    out = Path(args.out)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = synthesize(sc)
    for w in caught:
        log.warning("%s", w.message)
    gains = gains_to_dict(res.gains, sc.topology)
    write_json(out / "gains.json", gains)
    write_json(out / "manifest.json", _manifest(sc, "synth-gains", {
        "converged": res.converged, "iterations": res.iterations, "message": res.message,
        "initial_cost": res.costs[0], "final_cost": res.costs[-1],
        "certificates": [{"method": c.method, "spectral_radius": c.spectral_radius, "stable": c.stable}
                         for c in res.certificates],
    }))
    print(f"rollout cost {res.costs[0]:.6g} -> {res.costs[-1]:.6g} in {res.iterations} iterations "
          f"({res.message}); gains -> {out / 'gains.json'}")
    return EXIT_OK


def cmd_check(args) -> int:
    sc = _load(args)
    if args.gains:
        try:
            data = json.loads(Path(args.gains).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read gains file {args.gains!r}: {exc}") from None
        gains = gains_from_dict(data, sc.topology)
    else:
        gains = sc.gain_schedule()
    prob = synthesis_problem(sc)
    report = {}
    stable = True
    for label, S in (("network", prob.S), ("grid_coupled", prob.plant)):
        if label == "grid_coupled" and S is prob.S:
            continue
        cert = certify(S, gains, prob.controllable)
        report[label] = {"method": cert.method, "spectral_radius": cert.spectral_radius, "stable": cert.stable}
        stable &= cert.stable
    report["stable"] = stable
    print(json.dumps(report, indent=2))
    return EXIT_OK if stable else EXIT_UNSTABLE


def cmd_report(args) -> int:
    names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    over = {k: getattr(args, k) for k in ("seed", "dt") if getattr(args, k) is not None}
    scenarios = [load_scenario(n, **over) for n in names]
    results = run_many(scenarios)
    rows = []
    failed = False
    for sc, m in zip(scenarios, results):
        if isinstance(m, Exception):
            log.error("%s: %s", sc.name, m)
            failed = True
            continue
        rows.append((sc.name, m))
    out = Path(args.out)
    write_metrics_csv(out / "metrics.csv", rows)
    write_json(out / "manifest.json", {"kind": "dcvrt-report", "version": __version__,
                                       "scenarios": [sc.to_document() for sc in scenarios]})
    for name, m in rows:
        trip = f"trip at {m.trip_time:.3f} s" if m.tripped else "no trip"
        print(f"{name:24s} largest {m.largest_voltage_deviation:.4f} mean {m.mean_voltage_deviation:.4f} "
              f"P {m.avg_real_effort:.2f} MW Q {m.avg_reactive_effort:.2f} MVAr {trip}")
    return EXIT_SIM if failed else EXIT_OK


COMMANDS = {"run": cmd_run, "sweep-delay": cmd_sweep, "synth-gains": cmd_synth,
            "check-stability": cmd_check, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dcvrt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, NotApplicable) as exc:
        print(f"dcvrt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DcvrtError) as exc:
        print(f"dcvrt: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
