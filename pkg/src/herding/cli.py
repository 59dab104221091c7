"""Command-line sweeps for the herding model.

Usage::

    herding scatter  --n 10000 --eta-start 0.05 --eta-end 1 --eta-steps 20 --realizations 10
    herding branches --eta-start 0 --eta-end 1 --eta-steps 101
    herding qmean    --n 200 --eta-start 0.55 --eta-end 1 --eta-steps 10 --realizations 500
    herding nash     --n 10000
    herding langevin --n 200 --eta-start 0.8 --eta-end 0.95 --eta-steps 4 --realizations 2000

Settings come from an optional ``key = value`` file (``--config``) and are
overridden by flags.  CSV goes to ``--out`` (or standard output); diagnostics
go to standard error.  The exit status is 0 only if every realization
converged and no sweep point was flagged.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import kramers, meanfield, model
from .errors import DegenerateRegimeError, HerdingError, ParameterError
from .rng import substream

log = logging.getLogger("herding")

WORKERS_ENV = "HERDING_WORKERS"
EXIT_OK, EXIT_FLAGGED, EXIT_ERROR = 0, 1, 2


@dataclass
class RunConfig:
    p: float = 0.55
    k: int = 11
    n: int = 200
    eta_start: float = 0.05
    eta_end: float = 1.0
    eta_steps: int = 20
    realizations: int = 10
    seed: int = 0
    max_steps: int | None = None
    workers: int = 1
    out: str | None = None
    tol: float = 1e-8
    dt: float = 0.01
    max_time: float = 1e4
    capture: float = 0.0

    def validate(self) -> None:
        if self.eta_start > self.eta_end:
            raise ParameterError("eta-start must not exceed eta-end")
        if not (0.0 <= self.eta_start and self.eta_end <= 1.0):
            raise ParameterError("eta sweep must stay inside [0, 1]")
        if self.eta_steps < 1:
            raise ParameterError("eta-steps must be at least 1")
        if self.realizations < 0:
            raise ParameterError("realizations must be non-negative")
        if self.workers < 1:
            raise ParameterError("workers must be at least 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ParameterError("max-steps must be at least 1")
        meanfield.MeanFieldParams(0.0, self.p, self.k)

    def requested_etas(self) -> np.ndarray:
        if self.eta_steps == 1:
            return np.array([self.eta_start])
        return np.linspace(self.eta_start, self.eta_end, self.eta_steps)

    def effective_etas(self) -> list[float]:
        """Sweep values snapped to an integer number of herders, duplicates kept."""
        return [round(eta * self.n) / self.n for eta in self.requested_etas()]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    if "int" in kind:
        return None if raw.lower() in ("", "none") else int(raw)
    if "float" in kind:
        return float(raw)
    return raw or None


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            name = key.replace("-", "_")
            if name not in _TYPES:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
            values[name] = _coerce(name, raw)
    return values


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".12g")
    return str(value)


class CsvSink:
    """Buffers rows and writes them once, so partial files never appear."""

    def __init__(self, columns):
        self.columns = list(columns)
        self.rows = []

    def add(self, row: dict) -> None:
        self.rows.append([_fmt(row.get(c)) for c in self.columns])

    def render(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        writer.writerows(self.rows)
        return buf.getvalue()

    def write(self, path: str | None) -> None:
        text = self.render()
        if path is None or path == "-":
            sys.stdout.write(text)
            return
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _branch_or_none(eta: float, cfg: RunConfig):
    try:
        return meanfield.find_fixed_points(meanfield.MeanFieldParams(eta, cfg.p, cfg.k))
    except DegenerateRegimeError as exc:
        log.warning("eta=%s: %s", eta, exc)
        return None


SCATTER_COLUMNS = ("eta", "realization", "q_final", "steps", "converged", "basin",
                   "herder_updates", "q_minus", "q_u", "q_plus")


def cmd_scatter(cfg: RunConfig) -> int:
    """One row per realization per sweep point, with the mean-field roots alongside."""
    sink = CsvSink(SCATTER_COLUMNS)
    flagged = 0
    unconverged = 0
    total = 0
    if cfg.realizations < 1:
        raise ParameterError("scatter needs at least one realization")
    for eta in cfg.effective_etas():
        if eta <= 0.0:
            raise ParameterError(f"eta={eta} leaves no herders at N={cfg.n}")
        params = model.ModelParams(cfg.n, eta, cfg.p, cfg.k, cfg.seed)
        branch = _branch_or_none(eta, cfg)
        flagged += branch is None
        outcomes = model.run_ensemble(params, cfg.realizations, cfg.max_steps, branch, cfg.workers)
        for index, outcome in enumerate(outcomes):
            total += 1
            unconverged += not outcome.converged
            sink.add({
                "eta": eta,
                "realization": index,
                "q_final": outcome.q_final,
                "steps": outcome.steps,
                "converged": outcome.converged,
                "basin": outcome.basin.value,
                "herder_updates": outcome.herder_updates,
                "q_minus": branch.q_minus if branch else None,
                "q_u": branch.q_u if branch else None,
                "q_plus": branch.q_plus if branch else None,
            })
    sink.write(cfg.out)
    print(f"# realizations={total} unconverged={unconverged}", file=sys.stderr)
    return EXIT_FLAGGED if flagged or unconverged else EXIT_OK


def cmd_branches(cfg: RunConfig) -> int:
    sink = CsvSink(("eta", "q_minus", "q_u", "q_plus", "regime"))
    flagged = 0
    for eta in cfg.effective_etas():
        branch = _branch_or_none(eta, cfg)
        if branch is None:
            flagged += 1
            sink.add({"eta": eta, "regime": "Degenerate"})
        else:
            sink.add(branch.csv_row())
    sink.write(cfg.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


QMEAN_COLUMNS = ("eta", "N", "regime", "p_minus", "q_mean", "quadrature_converged",
                 "realizations", "q_mean_empirical", "q_mean_se", "lower_fraction")


def cmd_qmean(cfg: RunConfig) -> int:
    """Analytic ``<q>`` next to the Monte Carlo average at each sweep point."""
    sink = CsvSink(QMEAN_COLUMNS)
    flagged = 0
    for eta in cfg.effective_etas():
        row = {"eta": eta, "N": cfg.n, "realizations": cfg.realizations}
        branch = _branch_or_none(eta, cfg) if eta > 0 else None
        if branch is None:
            flagged += 1
            row["regime"] = "Degenerate" if eta > 0 else None
        elif branch.bistable:
            kp = kramers.KramersParams(branch.params, cfg.n, branch)
            result = kramers.p_minus(kp)
            flagged += not result.converged
            row.update(regime=branch.regime.value, p_minus=result.p_minus,
                       q_mean=result.q_mean, quadrature_converged=result.converged)
        else:
            row.update(regime=branch.regime.value, q_mean=branch.q_plus)
        if cfg.realizations > 0 and eta > 0:
            params = model.ModelParams(cfg.n, eta, cfg.p, cfg.k, cfg.seed)
            outcomes = model.run_ensemble(params, cfg.realizations, cfg.max_steps,
                                          branch, cfg.workers)
            flagged += sum(not o.converged for o in outcomes)
            q = np.array([o.q_final for o in outcomes])
            row["q_mean_empirical"] = float(q.mean())
            row["q_mean_se"] = float(q.std(ddof=1) / math.sqrt(q.size)) if q.size > 1 else None
            if branch is not None and branch.bistable:
                row["lower_fraction"] = float(np.mean(
                    [o.basin is model.Basin.LOWER for o in outcomes]))
        sink.add(row)
    sink.write(cfg.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_nash(cfg: RunConfig) -> int:
    eta_c = meanfield.find_eta_c(cfg.p, cfg.k)
    eta_star = kramers.find_nash_eta(cfg.p, cfg.k, cfg.n, tol=cfg.tol)
    q_star = kramers.q_mean_at(eta_star, cfg.p, cfg.k, cfg.n)
    sink = CsvSink(("eta_star", "q_mean", "eta_c", "residual", "N", "p", "K"))
    sink.add({"eta_star": eta_star, "q_mean": q_star, "eta_c": eta_c,
              "residual": abs(q_star - cfg.p), "N": cfg.n, "p": cfg.p, "K": cfg.k})
    sink.write(cfg.out)
    return EXIT_OK


LANGEVIN_COLUMNS = ("eta", "N", "regime", "paths", "lower_fraction", "lower_se",
                    "timeout_fraction", "p_minus")


def cmd_langevin(cfg: RunConfig) -> int:
    """Euler-Maruyama basin fractions against the quadrature splitting probability."""
    if cfg.realizations < 1:
        raise ParameterError("langevin needs at least one path")
    sink = CsvSink(LANGEVIN_COLUMNS)
    flagged = 0
    for index, eta in enumerate(cfg.effective_etas()):
        row = {"eta": eta, "N": cfg.n, "paths": cfg.realizations}
        branch = _branch_or_none(eta, cfg) if eta > 0 else None
        if branch is None or not branch.bistable:
            flagged += branch is None
            row["regime"] = branch.regime.value if branch else "Degenerate"
            sink.add(row)
            continue
        kp = kramers.KramersParams(branch.params, cfg.n, branch)
        q0 = kramers.sample_initial(kp, cfg.realizations, substream(cfg.seed, index, "initial"))
        labels = kramers.langevin_ensemble(kp, q0, cfg.dt, substream(cfg.seed, index, "langevin"),
                                           cfg.max_time, capture=cfg.capture)
        lower = float(np.mean(labels == kramers.LOWER))
        timeout = float(np.mean(labels == kramers.TIMEOUT))
        flagged += timeout > 0
        row.update(regime=branch.regime.value, lower_fraction=lower,
                   lower_se=math.sqrt(lower * (1 - lower) / cfg.realizations),
                   timeout_fraction=timeout, p_minus=kramers.p_minus(kp).p_minus)
        sink.add(row)
    sink.write(cfg.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


COMMANDS = {
    "scatter": cmd_scatter,
    "branches": cmd_branches,
    "qmean": cmd_qmean,
    "nash": cmd_nash,
    "langevin": cmd_langevin,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="herding", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--p", type=float, help="signal accuracy")
    parser.add_argument("--k", type=int, help="peer group size (odd)")
    parser.add_argument("--n", type=int, help="number of agents")
    parser.add_argument("--eta-start", type=float)
    parser.add_argument("--eta-end", type=float)
    parser.add_argument("--eta-steps", type=int)
    parser.add_argument("--realizations", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-steps", type=int)
    parser.add_argument("--workers", type=int, help=f"thread count (default ${WORKERS_ENV} or 1)")
    parser.add_argument("--out", help="output CSV path (default standard output)")
    parser.add_argument("--tol", type=float, help="nash: bisection width")
    parser.add_argument("--dt", type=float, help="langevin: time step")
    parser.add_argument("--max-time", type=float, help="langevin: time cap")
    parser.add_argument("--capture", type=float,
                        help="langevin: capture half-width around the stable roots (default 0)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values = {}
    if environ.get(WORKERS_ENV):
        values["workers"] = int(environ[WORKERS_ENV])
    if args.config:
        values.update(read_config_file(args.config))
    for name in _TYPES:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (HerdingError, OSError, ValueError) as exc:
        print(f"herding {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
