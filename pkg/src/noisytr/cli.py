"""Command-line entry point.

Exit codes:
  0  success
  1  a verification suite ran and at least one check failed
  2  invalid configuration or unknown suite (the message names the field)
  3  the run finished but more than half of its replications were censored
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import math
import sys
from pathlib import Path

from . import __version__
from .harness import (
    ExperimentSpec, SpecError, complexity_scaling, event_summary, experiment_summary,
    run_experiment, validate_spec, write_trace_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_CENSORED = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, tuples become lists."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def parse_override(text: str):
    if "=" not in text:
        raise SpecError("override", f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(d: dict, overrides) -> dict:
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        key, value = parse_override(item)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise SpecError(key, "cannot descend into a non-mapping entry")
        node[parts[-1]] = value
    return d


def load_spec(args) -> ExperimentSpec:
    try:
        raw = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise SpecError("config", f"file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise SpecError("config", f"not valid JSON: {exc}") from None
    raw = apply_overrides(raw, args.override)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "replications", None) is not None:
        raw["replications"] = args.replications
    spec = ExperimentSpec.from_dict(raw)
    validate_spec(spec)
    return spec


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def cmd_run(args) -> int:
    spec = load_spec(args)
    started = _now()
    run_dir = Path(args.out) / spec.spec_hash
    run_dir.mkdir(parents=True, exist_ok=True)
    traces = run_experiment(spec, workers=args.workers)
    outputs = []
    for i, tr in enumerate(traces):
        p = run_dir / f"trace_{i:04d}.csv"
        write_trace_csv(p, tr)
        outputs.append(p.name)
    summary = experiment_summary(spec, traces)
    _dump(run_dir / "summary.json", summary)
    _dump(run_dir / "events.json", event_summary(traces))
    outputs += ["summary.json", "events.json"]
    if spec.epsilon_grid is not None:
        table = complexity_scaling(spec, workers=args.workers)
        _dump(run_dir / "scaling.json", {
            "slope": table.slope, "fit_epsilons": table.fit_epsilons,
            "rows": [r.__dict__ for r in table.rows],
        })
        outputs.append("scaling.json")
    manifest = {
        "spec_hash": spec.spec_hash, "version": __version__, "spec": spec.to_dict(),
        "started": started, "finished": _now(), "outputs": outputs,
    }
    _dump(run_dir / "manifest.json", manifest)
    print(run_dir)
    censored = summary["n_eps"]["censored"]
    if censored > 0.5 * spec.replications:
        print(f"warning: {censored}/{spec.replications} replications censored at the budget", file=sys.stderr)
        return EXIT_CENSORED
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = load_spec(args)
    print(spec.to_json())
    print(f"spec hash {spec.spec_hash}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import SUITES

    if args.suite == "regions":
        out = None
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            out = Path(args.out) / "regions.csv"
        checks = SUITES["regions"](out)
    else:
        checks = SUITES[args.suite]()
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    parser = argparse.ArgumentParser(prog="noisytr", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", required=True, help="experiment spec (JSON)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted key, e.g. cfg.eta=0.2 or noise.n0=500 (repeatable)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--replications", type=int, default=None)

    p_run = sub.add_parser("run", help="run an experiment and write traces and summaries")
    config_args(p_run)
    p_run.add_argument("--out", default="runs", help="parent directory for run directories")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate a config")
    config_args(p_val)
    p_val.set_defaults(func=cmd_validate)

    p_ver = sub.add_parser("verify", help="run a named verification suite")
    p_ver.add_argument("suite", choices=sorted(SUITES))
    p_ver.add_argument("--out", default=None, help="directory for suite outputs (regions CSV)")
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
