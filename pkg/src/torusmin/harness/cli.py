"""Command line entry point: ``torusmin <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from ..errors import ConfigError, InstabilityError, RegionError, TorusminError
from .config import ExperimentConfig
from .run import EXIT_CONFIG, EXIT_UNSTABLE, rerender, run


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="experiment configuration (JSON)")
    p.add_argument("--out", help="output directory for report.json and CSV series")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="override the configured seed")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="torusmin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("metric-info", parents=[common], help="metric constants A, a, curvature bound")
    g = sub.add_parser("geodesic", parents=[common], help="integrate one geodesic, emit path CSV")
    g.add_argument("--x", type=_floats)
    g.add_argument("--theta", type=float)
    g.add_argument("--T", type=float)
    mn = sub.add_parser("minimal", parents=[common], help="minimal geodesics along a direction")
    mn.add_argument("--direction", help="angle in radians or rational slope p/q")
    mn.add_argument("--span", type=float)
    mn.add_argument("--count", type=int)
    sub.add_parser("hedlund", parents=[common], help="deviation table and constant D")
    e = sub.add_parser("entropy", parents=[common], help="separated/spanning series of minimal conditions")
    e.add_argument("--eps", type=float)
    e.add_argument("--T-list", dest="T_list", type=_floats)
    e.add_argument("--population", type=int)
    s = sub.add_parser("spanning", parents=[common], help="P_r construction, packing bound, witnesses")
    s.add_argument("--r-list", dest="r_list", type=_floats)
    s.add_argument("--eps", type=float)
    s.add_argument("--witnesses", type=int)
    t = sub.add_parser("tube", parents=[common], help="separated counts inside mu-tubes")
    t.add_argument("--center-direction", dest="center_direction", type=_floats)
    t.add_argument("--mu", type=float)
    t.add_argument("--delta", type=float)
    t.add_argument("--T-list", dest="T_list", type=_floats)
    sub.add_parser("full", parents=[common], help="spanning + tubes + Bowen verdict")
    rp = sub.add_parser("report", parents=[common], help="re-judge a stored report")
    rp.add_argument("path", nargs="?", help="report.json or its directory (default: --out)")
    return parser


_OVERRIDES = {
    "geodesic": ("x", "theta", "T"),
    "minimal": ("direction", "span", "count"),
    "entropy": ("eps", "T_list", "population"),
    "spanning": ("r_list", "eps", "witnesses"),
    "tube": ("center_direction", "mu", "delta", "T_list"),
}


def _config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.load(args.config).to_dict()
    if args.seed is not None:
        data["seed"] = args.seed
    block = data.setdefault("experiment", {})
    for key in _OVERRIDES.get(args.command, ()):
        val = getattr(args, key, None)
        if val is not None:
            block.setdefault(args.command, {})[key] = val
    return ExperimentConfig.from_dict(data)


def _summary(report) -> str:
    lines = [f"{report.experiment}: {'PASS' if report.passed else 'FAIL'}"]
    for k, v in sorted(report.constants.items()):
        if isinstance(v, (int, float)):
            lines.append(f"  {k} = {v:.6g}")
    for f in report.flags:
        lines.append(f"  [{'ok' if f.passed else 'FAIL'}] {f.name}: {f.value:.6g} vs {f.limit:.6g}")
    if report.instability:
        lines.append(f"  instability: {json.dumps(report.instability)[:400]}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            target = args.path or args.out
            if not target:
                print("report needs a path or --out", file=sys.stderr)
                return EXIT_CONFIG
            report = rerender(target)
        else:
            report = run(_config(args), args.command, out_dir=args.out, jobs=max(1, args.jobs))
    except (ConfigError, RegionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except (TorusminError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(report))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
