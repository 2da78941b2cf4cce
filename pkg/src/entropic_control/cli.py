"""Command line front end: run experiments from TOML configs and check suites.

::

    entropic-control run --config lq.toml --iterations 20 --out-dir runs/lq
    entropic-control run --problem bridge --particles 20000
    entropic-control oracle entropy

Configuration file layout (every key optional except ``problem.builtin``)::

    [problem]
    builtin = "lq"            # hvac | lq | bridge
    [problem.params]          # fields of LqSpec / HvacParams / BridgeParams
    q = 1.0
    [solver]                  # fields of SolverConfig
    eps = 0.5
    n_paths = 100000
    [solver.regression]       # fields of RegressionConfig
    k = 200
    [output]
    dir = "runs/lq"
    svg = true

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
A JSON summary (or error report) is printed on stdout.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import _kde, checks
from .errors import ConfigError, EntropicControlError, ParameterError, PreconditionError, StructuralError
from .estimate import RegressionConfig
from .problem import (
    BridgeParams,
    ControlProblem,
    HvacParams,
    LqSpec,
    build_bridge_instance,
    build_hvac_instance,
    build_lq_instance,
)
from .solver import RunResult, SolverConfig, run_alternating

log = logging.getLogger("entropic_control")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4

BUILTINS = {
    "hvac": (HvacParams, build_hvac_instance),
    "lq": (LqSpec, build_lq_instance),
    "bridge": (BridgeParams, build_bridge_instance),
}

# solver defaults per builtin, applied before the file's [solver] section
BUILTIN_SOLVER = {
    "hvac": {"eps": 5.0, "n_paths": 100_000, "n_iterations": 100, "check_sandwich": False},
    "lq": {"eps": 0.5, "n_paths": 100_000, "n_iterations": 20},
    "bridge": {"eps": 1.0, "n_paths": 100_000, "n_iterations": 30},
}
BUILTIN_REGRESSION = {
    "hvac": {"n_anchors": 1000, "k": 50, "density": "gaussian"},
    "lq": {"n_anchors": 5000, "k": 1000},
    "bridge": {"n_anchors": 5000, "k": 1000},
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    builtin: str
    params: dict
    solver: SolverConfig
    out_dir: Path
    svg: bool = True

    def build_problem(self) -> ControlProblem:
        cls, build = BUILTINS[self.builtin]
        return build(cls(**self.params))

    def echo(self) -> dict:
        """Every value in effect, defaults included."""
        cls, _ = BUILTINS[self.builtin]
        params = {k: _plain(v) for k, v in dataclasses.asdict(cls(**self.params)).items()}
        solver = dataclasses.asdict(self.solver)
        return {
            "problem": {"builtin": self.builtin, "params": params},
            "solver": {k: _plain(v) for k, v in solver.items()},
            "output": {"dir": str(self.out_dir), "svg": self.svg},
        }


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"[{where}]: unknown field(s) {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")


def _fields(cls) -> list:
    return [f.name for f in dataclasses.fields(cls)]


def load_config(path: Optional[str], overrides: argparse.Namespace) -> ExperimentConfig:
    """Parse a config file (or start from a builtin) and apply flag overrides."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    _check_keys(raw, ("problem", "solver", "output"), "top level")
    prob = dict(raw.get("problem", {}))
    _check_keys(prob, ("builtin", "params"), "problem")
    builtin = getattr(overrides, "problem", None) or prob.get("builtin")
    if builtin is None:
        raise ConfigError("[problem]: field 'builtin' is required (hvac, lq or bridge)")
    if builtin not in BUILTINS:
        raise ConfigError(f"[problem]: builtin must be one of {', '.join(BUILTINS)}, got {builtin!r}")
    params = dict(prob.get("params", {}))
    _check_keys(params, _fields(BUILTINS[builtin][0]), "problem.params")

    solver = dict(BUILTIN_SOLVER[builtin])
    sol_raw = dict(raw.get("solver", {}))
    reg_raw = dict(sol_raw.pop("regression", {}))
    _check_keys(sol_raw, [f for f in _fields(SolverConfig) if f != "regression"], "solver")
    _check_keys(reg_raw, _fields(RegressionConfig), "solver.regression")
    solver.update(sol_raw)
    for flag, key in (("seed", "seed"), ("particles", "n_paths"), ("iterations", "n_iterations"), ("epsilon", "eps")):
        value = getattr(overrides, flag, None)
        if value is not None:
            solver[key] = value
    crn = getattr(overrides, "crn", None)
    if crn is not None:
        solver["common_random_numbers"] = crn == "on"
    regression = dict(BUILTIN_REGRESSION[builtin])
    regression.update(reg_raw)

    out = dict(raw.get("output", {}))
    _check_keys(out, ("dir", "svg"), "output")
    out_dir = getattr(overrides, "out_dir", None) or out.get("dir") or f"runs/{builtin}"
    try:
        cfg = SolverConfig(regression=RegressionConfig(**regression), **solver)
        ec = ExperimentConfig(builtin, params, cfg, Path(out_dir), bool(out.get("svg", True)))
        ec.build_problem()
    except (ParameterError, StructuralError, PreconditionError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return ec


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def iterates_table(result: RunResult) -> str:
    reports = result.reports
    d = len(reports[0].terminal_fit or [])
    header = [
        "k", "J", "J_se", "penalized", "penalized_se", "tolerance", "sandwich",
        "entropy", "expected_cost_q", "ess", "variance_bound",
    ]
    header += [f"ks_{j + 1}" for j in range(d)] + [f"ks_p_{j + 1}" for j in range(d)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in reports:
        row = [r.k] + [_fmt(v) for v in (
            r.J, r.J_se, r.penalized, r.penalized_se, 3 * r.penalized_se, r.sandwich,
            r.entropy, r.expected_cost_q, r.ess, r.variance_bound,
        )]
        row += [_fmt(v) for v in (r.terminal_fit or [])] + [_fmt(v) for v in (r.terminal_fit_p or [])]
        w.writerow(row)
    return buf.getvalue()


def terminal_densities(p: ControlProblem, result: RunResult, n_grid: int = 512) -> list:
    """Per dimension: grid, KDE of P_T, KDE of the weighted Q_T and the target density."""
    xt = result.ensemble.terminal
    w = result.weights.w
    target = p.constraint.target
    out = []
    for j in range(p.state_dim):
        col = xt[:, j]
        h_p = float(_kde.scott_bandwidth(col)[0]) if np.ptp(col) > 0 else 1e-3
        h_q = float(_kde.scott_bandwidth(col, w)[0]) if np.ptp(col) > 0 else 1e-3
        lo, hi = col.min() - 5 * max(h_p, h_q), col.max() + 5 * max(h_p, h_q)
        if target is not None and target.kind == "gaussian":
            sd = np.sqrt(target.var[j])
            lo, hi = min(lo, target.mean[j] - 5 * sd), max(hi, target.mean[j] + 5 * sd)
        grid = np.linspace(lo, hi, n_grid)
        dens_p = _kde.gaussian_kde(col, grid, np.array([h_p]))
        dens_q = _kde.gaussian_kde(col, grid, np.array([h_q]), weights=w)
        if target is not None and target.kind == "gaussian":
            m, v = target.mean[j], target.var[j]
            dens_t = np.exp(-0.5 * (grid - m) ** 2 / v) / np.sqrt(2 * np.pi * v)
        else:
            dens_t = np.full(n_grid, np.nan)
        out.append((grid, dens_p, dens_q, dens_t))
    return out


def density_table(grid, dens_p, dens_q, dens_t) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "p_terminal", "q_terminal", "target"])
    for row in zip(grid, dens_p, dens_q, dens_t):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def svg_lines(series: dict, title: str, xlabel: str, width: int = 640, height: int = 400) -> str:
    """Minimal SVG line chart: ``series`` maps a label to ``(x, y)`` arrays."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    pad = 50
    finite = [(np.asarray(x, float), np.asarray(y, float)) for x, y in series.values()]
    xs = np.concatenate([x[np.isfinite(y)] for x, y in finite])
    ys = np.concatenate([y[np.isfinite(y)] for x, y in finite])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{xlabel}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad - 5}" y="{sy(y0):.1f}" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{pad - 5}" y="{sy(y1):.1f}" text-anchor="end">{y1:.4g}</text>',
        f'<text x="{sx(x0):.1f}" y="{height - pad + 15}" text-anchor="middle">{x0:.4g}</text>',
        f'<text x="{sx(x1):.1f}" y="{height - pad + 15}" text-anchor="middle">{x1:.4g}</text>',
    ]
    for i, (label, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(y)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 140}" y="{pad + 15 * i}" fill="{c}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_artifacts(ec: ExperimentConfig, p: ControlProblem, result: RunResult, wall: float) -> list:
    files = {"iterates.csv": iterates_table(result)}
    dens = terminal_densities(p, result)
    for j, cols in enumerate(dens):
        files[f"terminal_density_{j + 1}.csv"] = density_table(*cols)
    k = result.column("k")
    if ec.svg:
        files["cost.svg"] = svg_lines(
            {"J(P^k)": (k, result.column("J")), "penalized J(Q^k+1, P^k)": (k, result.column("penalized"))},
            f"{ec.builtin}: cost per iteration", "iteration k",
        )
        panels = []
        for j, (grid, dp, dq, dt) in enumerate(dens):
            panels.append(svg_lines(
                {"P_T": (grid, dp), "Q_T": (grid, dq), "target": (grid, dt)},
                f"terminal density, coordinate {j + 1}", "x",
            ))
        files["densities.svg"] = _stack_svg(panels)
    last = result.reports[-1]
    files["run.json"] = json.dumps(
        {
            "config": ec.echo(),
            "seeds": {"base": ec.solver.seed, "common_random_numbers": ec.solver.common_random_numbers},
            "wall_clock_s": wall,
            "phase_s": result.timings,
            "aborted": result.aborted,
            "reason": result.reason,
            "final": _plain(last.as_dict()),
        },
        indent=2,
        allow_nan=True,
    ) + "\n"
    ec.out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        _write_atomic(ec.out_dir / name, text)
    return sorted(files)


def _stack_svg(panels: list, height: int = 400, width: int = 640) -> str:
    body = []
    for i, s in enumerate(panels):
        inner = s.split("\n", 1)[1].rsplit("</svg>", 1)[0]
        body.append(f'<g transform="translate(0,{i * height})">\n{inner}</g>')
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height * len(panels)}" font-family="sans-serif" font-size="12">'
    return head + "\n" + "\n".join(body) + "\n</svg>\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _emit(obj: dict) -> None:
    print(json.dumps(obj, allow_nan=True))


def _error(kind: str, exc: BaseException, code: int, **extra) -> int:
    _emit({"status": "error", "kind": kind, "message": str(exc), **extra})
    return code


def run_command(config_path: Optional[str], overrides: argparse.Namespace) -> int:
    try:
        ec = load_config(config_path, overrides)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    p = ec.build_problem()

    def sink(rep):
        log.info("k=%d J=%.6g penalized=%.6g entropy=%.4g ess=%.0f", rep.k, rep.J, rep.penalized, rep.entropy, rep.ess)

    t0 = time.perf_counter()
    try:
        result = run_alternating(p, ec.solver, callback=sink)
    except EntropicControlError as exc:
        return _error("numerical", exc, EXIT_NUMERICAL, iteration=getattr(exc, "iteration", None))
    wall = time.perf_counter() - t0
    try:
        files = write_artifacts(ec, p, result, wall)
    except OSError as exc:
        return _error("io", exc, EXIT_IO)
    last = result.reports[-1]
    _emit({
        "status": "aborted" if result.aborted else "ok",
        "out_dir": str(ec.out_dir),
        "files": files,
        "iterations": len(result.reports),
        "J": last.J,
        "penalized": last.penalized,
        "entropy": last.entropy,
        "wall_clock_s": wall,
        "reason": result.reason,
    })
    return EXIT_NUMERICAL if result.aborted else EXIT_OK


def oracle_command(suite: str, eps: Optional[float] = None, seed: int = 0) -> int:
    try:
        if suite == "entropy":
            rows = checks.entropy_suite(seed=seed)
        elif suite == "mvi":
            rows = checks.mvi_suite(eps)
        elif suite == "twist":
            rows = checks.twist_suite(eps, seed)
        else:
            raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(checks.SUITES)}")
    except (ConfigError, ParameterError) as exc:
        return _error("parameter", exc, EXIT_CONFIG)
    except EntropicControlError as exc:
        return _error("numerical", exc, EXIT_NUMERICAL)
    failed = [r.name for r in rows if not r.passed]
    _emit({"suite": suite, "passed": not failed, "failures": failed, "checks": [r.as_dict() for r in rows]})
    return EXIT_OK if not failed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="entropic-control", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log one line per iteration to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the alternating solver and write artifacts")
    run.add_argument("--config", help="TOML experiment file")
    run.add_argument("--problem", choices=sorted(BUILTINS), help="builtin problem (overrides the file)")
    run.add_argument("--seed", type=int)
    run.add_argument("--particles", type=int, help="number of simulated paths")
    run.add_argument("--iterations", type=int)
    run.add_argument("--epsilon", type=float, help="entropy penalization")
    run.add_argument("--out-dir", dest="out_dir")
    run.add_argument("--crn", choices=("on", "off"), help="common random numbers across iterations")
    orc = sub.add_parser("oracle", help="run a check suite and print a JSON table")
    orc.add_argument("suite", choices=sorted(checks.SUITES))
    orc.add_argument("--epsilon", type=float)
    orc.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(message)s")
    if args.command == "run":
        if args.config is None and args.problem is None:
            return _error("config", ConfigError("either --config or --problem is required"), EXIT_CONFIG)
        return run_command(args.config, args)
    return oracle_command(args.suite, args.epsilon, args.seed)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
