"""Command-line interface: ``ensemble-ctrl analyze | synthesize | simulate``.

Exit codes
----------
0  Controllable / steering within epsilon / simulation done
1  NotControllable / steering error above epsilon
2  Inconclusive
3  usage error
4  input or I/O error
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .multidim_verdict import system_verdict
from .report import ReportFile, input_digest
from .spectral import classify
from .synthesis import ControlSchedule, simulate, synthesize
from .system import EnsembleSystem, SystemFileError, load_system
from .verdict import Status

__all__ = ["main", "build_parser", "EXIT_CODES"]

log = logging.getLogger(__name__)

EXIT_CODES = {
    Status.CONTROLLABLE: 0,
    Status.NOT_CONTROLLABLE: 1,
    Status.INCONCLUSIVE: 2,
}
EXIT_USAGE = 3
EXIT_INPUT = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("system", help="system description (JSON)")
    p.add_argument("--output", "-o", help="write the JSON report here (default: stdout)")
    p.add_argument("--grid", type=_positive_int, help="grid points on the parameter interval")
    p.add_argument("--verbose", "-v", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ensemble-ctrl",
                     description="Uniform controllability of parameterised linear ensembles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="decide ensemble controllability")
    _add_common(a)
    a.add_argument("--eta-samples", type=_positive_int, help="drift-value samples (scalar and coincidence)")
    a.add_argument("--channel-samples", type=_positive_int, help="samples per eigenvalue curve")
    a.add_argument("--tuples", type=_positive_int, help="Latin hypercube size above three states")
    a.add_argument("--tol-rank", type=_positive_float)
    a.add_argument("--tol-mono", type=_positive_float)
    a.add_argument("--tol-merge", type=_positive_float)
    a.add_argument("--seed", type=int)
    a.add_argument("--no-refine", action="store_true", help="skip the grid-doubling check")

    s = sub.add_parser("synthesize", help="least-squares steering from x0 to xF")
    _add_common(s)
    s.add_argument("--T", type=_positive_float, required=True, help="horizon")
    s.add_argument("--P", type=_positive_int, required=True, help="number of constant segments")
    s.add_argument("--epsilon", type=_positive_float, required=True, help="uniform error target")
    s.add_argument("--ridge", type=float, help="Tikhonov weight (default 1e-10 |G|_2)")
    s.add_argument("--steps", type=_positive_int, help="RK4 steps per segment")

    m = sub.add_parser("simulate", help="apply a schedule and report x(T)")
    _add_common(m)
    m.add_argument("--schedule", required=True, help="schedule JSON or a synthesize report")
    m.add_argument("--steps", type=_positive_int, help="RK4 steps per segment")
    m.add_argument("--epsilon", type=_positive_float, help="exit 1 if |x(T) - xF| exceeds this")
    return parser


def _system_summary(sys_: EnsembleSystem) -> dict:
    return {"parameter": sys_.parameter, "interval": sys_.interval.as_list(),
            "grid": sys_.n_grid, "n": sys_.n, "m": sys_.m}


def _load(path: str, grid: Optional[int]) -> tuple[EnsembleSystem, str]:
    sys_ = load_system(path, grid)
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return sys_, input_digest(raw)


def run_analyze(args) -> tuple[int, ReportFile]:
    sys_, digest = _load(args.system, args.grid)
    cfg = sys_.config(n_eta=args.eta_samples, n_eta_channel=args.channel_samples,
                      n_tuples=args.tuples, tol_rank=args.tol_rank, tol_mono=args.tol_mono,
                      tol_merge=args.tol_merge, seed=args.seed)
    if args.no_refine:
        cfg = cfg.with_overrides(check_refinement=False)
    verdict = system_verdict(sys_.A, sys_.B, cfg)
    if sys_.n > 1 and "spectrum" not in verdict.sampling:
        verdict.sampling["spectrum"] = classify(sys_.A, cfg).summary()
    code = EXIT_CODES[verdict.status]
    settings = {"grid": sys_.n_grid, **{k: v for k, v in cfg.as_dict().items()}}
    return code, ReportFile("analyze", digest, _system_summary(sys_), settings, code, verdict=verdict)


def _targets(sys_: EnsembleSystem, need_xF: bool):
    if sys_.x0 is None:
        raise SystemFileError("the system file has no x0", "/x0")
    if need_xF and sys_.xF is None:
        raise SystemFileError("the system file has no xF", "/xF")
    return sys_.x0, sys_.xF


def run_synthesize(args) -> tuple[int, ReportFile]:
    sys_, digest = _load(args.system, args.grid)
    x0, xF = _targets(sys_, True)
    sched, rep = synthesize(sys_, x0, xF, args.T, args.P, ridge=args.ridge,
                            epsilon=args.epsilon, steps_per_segment=args.steps)
    code = 0 if rep.converged else 1
    settings = {"grid": sys_.n_grid, "T": args.T, "P": args.P, "epsilon": args.epsilon,
                "ridge": args.ridge, "steps": rep.steps_per_segment}
    body = {"schedule": sched.to_dict(), "report": rep.to_dict()}
    return code, ReportFile("synthesize", digest, _system_summary(sys_), settings, code, synthesis=body)


def _read_schedule(path: str) -> ControlSchedule:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(d, dict) and isinstance(d.get("synthesis"), dict):
        d = d["synthesis"]["schedule"]
    try:
        return ControlSchedule.from_dict(d)
    except (KeyError, TypeError, ValueError) as err:
        raise SystemFileError(f"invalid schedule: {err}") from None


def run_simulate(args) -> tuple[int, ReportFile]:
    sys_, digest = _load(args.system, args.grid)
    x0, xF = _targets(sys_, False)
    sched = _read_schedule(args.schedule)
    xT = simulate(sys_, x0, sched, args.steps)
    out = {"final_state": xT.values[:, :, 0].tolist(), "grid": xT.grid.tolist()}
    code = 0
    if xF is not None:
        err = float(np.max(np.abs(xT.values - xF.values)))
        out["uniform_error"] = err
        if args.epsilon is not None and err > args.epsilon:
            code = 1
    settings = {"grid": sys_.n_grid, "steps": args.steps, "epsilon": args.epsilon,
                "schedule": sched.to_dict()}
    return code, ReportFile("simulate", digest, _system_summary(sys_), settings, code, simulation=out)


_RUNNERS = {"analyze": run_analyze, "synthesize": run_synthesize, "simulate": run_simulate}


def _headline(rep: ReportFile) -> str:
    if rep.verdict is not None:
        reasons = sorted({e.reason.value for e in rep.verdict.evidence})
        return rep.verdict.status.value + (f" ({', '.join(reasons)})" if reasons else "")
    if rep.synthesis is not None:
        r = rep.synthesis["report"]
        return f"simulated uniform error {r['simulated_error']:.3e} (epsilon {r['epsilon']:g})"
    err = rep.simulation.get("uniform_error")
    return "simulated" + (f", uniform error {err:.3e}" if err is not None else "")


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code, rep = _RUNNERS[args.command](args)
        if args.output:
            rep.write(args.output)
            print(_headline(rep))
        else:
            sys.stdout.write(rep.dumps())
    except SystemFileError as err:
        print(f"ensemble-ctrl: input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, json.JSONDecodeError) as err:
        print(f"ensemble-ctrl: cannot read input: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as err:
        # e.g. a state dimension beyond the supported maximum
        print(f"ensemble-ctrl: input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
