"""Command-line entry point: ``uura run`` and ``uura trace``.

Values given on the command line override those in the ``--config`` file.
``UURA_LOG`` sets the log level (``DEBUG``, ``INFO``, ``WARNING``, ...).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .errors import ConfigError
from .harness import load_spec, mse_trace_experiment, run_trials, spec_from_dict

EXIT_CONFIG = 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uura", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo error-probability experiment")
    run.add_argument("--config", help="flat JSON config file")
    run.add_argument("--scheme", choices=("integrated", "separate", "coupled"))
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--sweep", help="field=v1,v2,...")
    run.add_argument("--out", help="per-trial CSV path")
    run.add_argument("--report", help="JSON summary path")
    run.add_argument("--workers", type=int, help="worker processes (default: CPU count)")

    trace = sub.add_parser("trace", help="convergence of the proximal iterations versus antennas")
    trace.add_argument("--config", help="flat JSON config file")
    trace.add_argument("--antennas", type=_int_list, default=[16, 32, 64])
    trace.add_argument("--trials", type=int)
    trace.add_argument("--seed", type=int)
    trace.add_argument("--step-decay", type=float, dest="step_decay")
    trace.add_argument("--start", choices=("zero", "ml"), default="zero")
    trace.add_argument("--out", help="per-trial CSV path")
    return p


def _spec(args, extra: dict):
    overrides = {"trials": args.trials, "seed": args.seed, **extra}
    if args.config:
        return load_spec(args.config, overrides)
    return spec_from_dict({}, overrides)


def _run(args) -> int:
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    spec = _spec(args, {"scheme": args.scheme, "sweep": args.sweep, "out": args.out,
                        "report": args.report, "workers": workers})
    result = run_trials(spec)
    name = spec.sweep[0] if spec.sweep else None
    for value in spec.sweep_values:
        rep = result.reports[value]
        label = f"{name}={value:g} " if name else ""
        print(f"{label}P_md={rep.p_md:.4f} P_fa={rep.p_fa:.4f} "
              f"error={rep.error_probability:.4f} DER={rep.der_first_subslot:.4f} "
              f"iterations={rep.mean_iterations:.1f}")
    return 0


def _trace(args) -> int:
    spec = _spec(args, {"step_decay": args.step_decay})
    res = mse_trace_experiment(spec, args.antennas, start=args.start)
    for row in res.rows:
        print(f"M={row.antennas} iterations={row.mean_iterations:.1f} final_mse={row.final_mse:.4g}")
    print(f"ordered trials: {res.ordered_fraction():.2f}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write("trial,antennas,iterations,final_mse\r\n")
            for t in range(res.iterations.shape[0]):
                for i, m in enumerate(args.antennas):
                    fh.write(f"{t},{m},{res.iterations[t, i]!r},{res.final_mse[t, i]!r}\r\n")
    return 0


def main(argv=None) -> int:
    level = os.environ.get("UURA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return _run(args) if args.command == "run" else _trace(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
