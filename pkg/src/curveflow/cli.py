"""Command-line front end: ``curveflow {evolve,converge,sweep,render}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys
import tempfile
import time
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    CheckpointMisaligned,
    ConfigError,
    CurveFlowError,
    InvalidCurve,
    InvalidSpec,
    SelfIntersecting,
)
from .harness import (
    DEFAULT_CHECKPOINTS,
    ELLIPSE_REGIMES,
    QUICK_REFERENCE,
    REFERENCE,
    ExperimentPlan,
    convergence_study,
    evolve,
    regime_report,
    structure_sweep,
)
from .metrics import DiagnosticsRow
from .scheme import FlowParams
from .shapes import KINDS, ShapeSpec, generate
from .solver import SolverConfig
from .svgplot import curves_svg, loglog_svg

log = logging.getLogger("curveflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_METRIC = 0, 2, 3, 4

# default frame times for the flower, dumbbell and wavy shapes
SHAPE_FRAMES = {
    "case1": (0.0, 0.05, 0.15, 0.25, 0.4, 1.0),
    "case2": (0.0, 0.05, 0.1, 0.2, 0.4, 1.0),
    "case3": (0.0, 0.05, 0.1, 0.2, 0.5, 1.0),
}
ORDER_WINDOW = (1.7, 2.3)
QUICK_ORDER_WINDOW = (1.5, 2.5)


def parse_rational(value: Any, name: str) -> Fraction:
    """Exact rational from ``"1/3"``, ``"-2"``, ``"0.5"`` or a JSON number."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    try:
        if isinstance(value, float):
            if not math.isfinite(value):
                raise ValueError
            return Fraction(value).limit_denominator(10**9)
        return Fraction(str(value).strip())
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{name}: cannot parse {value!r} as a rational like 1/3 or -2") from None


def rational_label(q: Fraction) -> str:
    return str(q)


_TAU_RULE = re.compile(r"^\s*(?:([0-9eE.+\-/]+)\s*\*\s*)?h\s*(?:\^|\*\*)\s*2\s*$")


def parse_tau_rule(rule: str) -> float:
    """Factor ``c`` of a rule written ``c*h^2`` (``h^2`` means ``c = 1``)."""
    m = _TAU_RULE.match(str(rule))
    if not m:
        raise ConfigError(f"tau rule {rule!r} must look like c*h^2")
    c = float(parse_rational(m.group(1), "tau rule factor")) if m.group(1) else 1.0
    if not c > 0:
        raise ConfigError("tau rule factor must be positive")
    return c


def parse_times(value: Any, name: str) -> tuple[float, ...]:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
    else:
        parts = list(value)
    try:
        out = tuple(float(parse_rational(p, name)) for p in parts)
    except TypeError:
        raise ConfigError(f"{name}: expected a list of numbers") from None
    if any(t < 0 for t in out):
        raise ConfigError(f"{name}: times must be nonnegative")
    return out


@dataclass
class RunConfig:
    """Flat run configuration; JSON keys and long flags share these names."""

    shape: str = "ellipse"
    a: float = 3.0
    b: float = 1.0
    r: float = 1.0
    N: int | None = None
    alpha: str = "1"
    beta: str = "-1"
    tau: float | None = None
    tau_rule: str = "1*h^2"
    tmax: float | None = None
    solver: str = "newton"
    tol: float = 1e-12
    max_iter: int = 50
    checkpoints: Any = None
    levels: Any = (3, 4, 5, 6)  # h = 2^-k
    h_ref: float | None = None
    tau_ref: float | None = None
    tau_factors: Any = ("1", "1/2", "2", "4")
    regimes: Any = None  # [[alpha, beta, t_final], ...]
    out: str = "out"
    jobs: int = 1
    quick: bool = False
    render: bool = False
    frames: Any = None
    snapshot_every: int | None = None
    frame_size: int = 480
    stroke_width: float = 1.5
    overlay: bool = True
    input: str | None = None

    @classmethod
    def from_sources(cls, file_cfg: dict, overrides: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        merged = {}
        for src in (file_cfg, overrides):
            for k, v in src.items():
                key = k.replace("-", "_")
                if key not in names:
                    raise ConfigError(f"unknown config key {k!r}")
                if v is not None:
                    merged[key] = v
        return cls(**merged)

    # resolved pieces

    def flow_exponents(self) -> tuple[Fraction, Fraction]:
        alpha = parse_rational(self.alpha, "alpha")
        beta = parse_rational(self.beta, "beta")
        if not alpha * beta < 0:
            raise ConfigError(f"alpha*beta must be negative, got alpha={alpha}, beta={beta}")
        return alpha, beta

    def shape_spec(self, n: int | None = None) -> ShapeSpec:
        kind, path = self.shape, None
        if kind.startswith("file:"):
            kind, path = "file", kind[5:]
        if kind not in KINDS or kind == "file" and not path:
            raise ConfigError(f"unknown shape {self.shape!r}")
        n = n if n is not None else (self.N or 32)
        if not isinstance(n, int) or isinstance(n, bool):
            raise ConfigError(f"N must be an integer, got {n!r}")
        return ShapeSpec(kind, n, a=float(self.a), b=float(self.b), r=float(self.r), path=path)

    def solver_config(self) -> SolverConfig:
        if self.solver not in ("newton", "picard"):
            raise ConfigError(f"solver must be newton or picard, got {self.solver!r}")
        return SolverConfig(method=self.solver, tol=float(self.tol), max_iter=int(self.max_iter))

    def time_step(self, h: float) -> float:
        if self.tau is not None:
            tau = float(self.tau)
            if not tau > 0:
                raise ConfigError("tau must be positive")
            return tau
        return parse_tau_rule(self.tau_rule) * h * h

    def echo(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")


def atomic_write(path: Path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def diagnostics_csv(rows: Sequence[DiagnosticsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DiagnosticsRow.FIELDS)
    for r in rows:
        w.writerow([_num(v) for v in r.values()])
    return buf.getvalue()


def _json_float(v: float):
    return v if math.isfinite(v) else None


def snapshots_jsonl(states) -> str:
    lines = []
    for s in states:
        lines.append(json.dumps({
            "t": s.t,
            "nodes": s.curve.nodes.tolist(),
            "kappa": np.asarray(s.kappa, dtype=float).tolist(),
            "lambda": _json_float(s.lambda_),
            "iterations": s.iterations,
        }))
    return "\n".join(lines) + "\n"


def read_snapshots(path: Path) -> list[tuple[float, np.ndarray]]:
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                out.append((float(rec["t"]), np.asarray(rec["nodes"], dtype=float)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read snapshots from {path}: {exc}") from None
    if not out:
        raise ConfigError(f"no snapshots in {path}")
    return out


def _snap_to_grid(times, tau: float, t_max: float) -> list[float]:
    """Times moved to the nearest step, dropping those past ``t_max``."""
    out = []
    for t in times:
        if t > t_max + 1e-12:
            continue
        ts = round(t / tau) * tau
        if ts not in out:
            out.append(ts)
    return sorted(out)


def render_frames(snaps: Sequence[tuple[float, np.ndarray]], frame_times, outdir: Path, cfg: RunConfig) -> list[str]:
    """One SVG per frame time plus an ``overlay.svg`` holding all of them."""
    chosen = []
    for t in frame_times:
        t_got, nodes = min(snaps, key=lambda s: abs(s[0] - t))
        if abs(t_got - t) > 1e-9 * max(1.0, t):
            log.warning("no snapshot at t=%g; using t=%g", t, t_got)
        chosen.append((t_got, nodes))
    allnodes = np.concatenate([n for _, n in chosen])
    bounds = (allnodes.min(axis=0), allnodes.max(axis=0))
    initial = snaps[0][1]
    written = []
    for i, (t, nodes) in enumerate(chosen):
        curves = [initial, nodes] if cfg.overlay and i > 0 else [nodes]
        svg = curves_svg(curves, labels=[f"t={t:.6g}"] * len(curves), width=cfg.frame_size, height=cfg.frame_size,
                         stroke_width=cfg.stroke_width, overlay_style=len(curves) > 1,
                         title=f"t = {t:.6g}", bounds=bounds)
        name = f"frame_{i:02d}.svg"
        atomic_write(outdir / name, svg)
        written.append(name)
    svg = curves_svg([n for _, n in chosen], labels=[f"t={t:.6g}" for t, _ in chosen], width=cfg.frame_size,
                     height=cfg.frame_size, stroke_width=cfg.stroke_width, bounds=bounds)
    atomic_write(outdir / "overlay.svg", svg)
    written.append("overlay.svg")
    return written


def _default_frames(cfg: RunConfig, t_max: float, checkpoints) -> tuple[float, ...]:
    kind = cfg.shape if cfg.shape in SHAPE_FRAMES else None
    if kind:
        return SHAPE_FRAMES[kind]
    return tuple(sorted({0.0, *checkpoints, t_max}))


def cmd_evolve(cfg: RunConfig) -> int:
    alpha, beta = cfg.flow_exponents()
    spec = cfg.shape_spec()
    solver = cfg.solver_config()
    out = Path(cfg.out)
    _check_writable(out)
    curve0 = generate(spec)
    h = 1.0 / curve0.n
    tau = cfg.time_step(h)
    params = FlowParams(float(alpha), float(beta), tau)
    t_max = float(cfg.tmax) if cfg.tmax is not None else (1.0 if spec.kind in SHAPE_FRAMES else 2.0)
    cps = parse_times(cfg.checkpoints, "checkpoints") if cfg.checkpoints is not None else DEFAULT_CHECKPOINTS
    cps = tuple(t for t in cps if t <= t_max + 1e-12)
    frame_times = parse_times(cfg.frames, "frames") if cfg.frames is not None else _default_frames(cfg, t_max, cps)
    frame_times = _snap_to_grid(frame_times, tau, t_max)

    t0 = time.perf_counter()
    res = evolve(curve0, params, t_max, solver, checkpoints=tuple(cps) + tuple(frame_times),
                 snapshot_every=cfg.snapshot_every, raise_errors=False)
    elapsed = time.perf_counter() - t0
    atomic_write(out / "diagnostics.csv", diagnostics_csv(res.rows))
    atomic_write(out / "snapshots.jsonl", snapshots_jsonl(res.snapshots))
    written = []
    if cfg.render:
        written = render_frames([(s.t, s.curve.nodes) for s in res.snapshots], frame_times, out / "frames", cfg)
    rep = regime_report(res.rows, alpha, beta, h, tau, res.rows[-1].t,
                        None if res.error is None else str(res.error))
    summary = {
        "command": "evolve",
        "config": cfg.echo(),
        "alpha": rational_label(alpha),
        "beta": rational_label(beta),
        "N": curve0.n,
        "h": h,
        "tau": tau,
        "t_max": t_max,
        "steps": rep.steps,
        "runtime_s": round(elapsed, 3),
        "frames": written,
        "frame_times": frame_times,
        "report": rep.as_dict(),
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    if res.error is not None:
        raise res.error
    log.info("evolve: %d steps in %.2fs, max area loss %.2e", rep.steps, elapsed, rep.max_rel_area_loss)
    return EXIT_OK


def cmd_converge(cfg: RunConfig) -> int:
    alpha, beta = cfg.flow_exponents()
    out = Path(cfg.out)
    _check_writable(out)
    levels = parse_times(cfg.levels, "levels")
    if not levels or any(not float(k).is_integer() for k in levels):
        raise ConfigError("levels must be integers k giving h = 2^-k")
    h_levels = tuple(2.0 ** -int(k) for k in levels)
    defaults_applied = []
    ref_default = QUICK_REFERENCE if cfg.quick else REFERENCE
    h_ref = cfg.h_ref
    tau_ref = cfg.tau_ref
    if h_ref is None:
        h_ref = ref_default[0]
        defaults_applied.append("h_ref")
    if tau_ref is None:
        tau_ref = ref_default[1]
        defaults_applied.append("tau_ref")
    cps = parse_times(cfg.checkpoints, "checkpoints") if cfg.checkpoints is not None else DEFAULT_CHECKPOINTS
    if cfg.checkpoints is None:
        defaults_applied.append("checkpoints")
    taus = (float(cfg.tau),) * len(h_levels) if cfg.tau is not None else None
    plan = ExperimentPlan(
        shape=cfg.shape_spec(3), alpha=float(alpha), beta=float(beta), h_levels=h_levels,
        tau_factor=parse_tau_rule(cfg.tau_rule), taus=taus, checkpoints=cps,
        h_ref=float(h_ref), tau_ref=float(tau_ref), solver=cfg.solver_config(),
    )
    t0 = time.perf_counter()
    rows = convergence_study(plan, jobs=int(cfg.jobs))
    elapsed = time.perf_counter() - t0

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("h", "t", "error", "order"))
    for r in rows:
        w.writerow((_num(r.h), _num(r.t), _num(r.error), "" if r.order is None else _num(r.order)))
    atomic_write(out / "convergence.csv", buf.getvalue())
    series = {}
    for t in cps:
        sel = [r for r in rows if r.t == t]
        series[f"t={t:g}"] = ([r.h for r in sel], [r.error for r in sel])
    atomic_write(out / "convergence.svg", loglog_svg(series, slope=2.0, ylabel="manifold distance"))
    window = QUICK_ORDER_WINDOW if cfg.quick else ORDER_WINDOW
    orders = [r.order for r in rows if r.order is not None]
    summary = {
        "command": "converge",
        "config": cfg.echo(),
        "alpha": rational_label(alpha),
        "beta": rational_label(beta),
        "quick": bool(cfg.quick),
        "h_levels": list(h_levels),
        "taus": list(plan.level_taus()),
        "h_ref": plan.h_ref,
        "tau_ref": plan.tau_ref,
        "checkpoints": list(cps),
        "defaults_applied": defaults_applied,
        "order_window": list(window),
        "orders_in_window": all(window[0] <= o <= window[1] for o in orders),
        "rows": [{"h": r.h, "t": r.t, "error": r.error, "order": r.order} for r in rows],
        "runtime_s": round(elapsed, 3),
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def _sweep_regimes(cfg: RunConfig, explicit: set[str]):
    if cfg.regimes is not None:
        regs = []
        for item in cfg.regimes:
            try:
                a, b, t = item
            except (TypeError, ValueError):
                raise ConfigError(f"regime {item!r} must be [alpha, beta, t_final]") from None
            regs.append((parse_rational(a, "alpha"), parse_rational(b, "beta"), float(t)))
    elif {"alpha", "beta"} & explicit:
        a, b = cfg.flow_exponents()
        regs = [(a, b, float(cfg.tmax) if cfg.tmax is not None else 2.0)]
    else:
        regs = [(a, Fraction(b), t if cfg.tmax is None else min(t, float(cfg.tmax))) for a, b, t in ELLIPSE_REGIMES]
    for a, b, _ in regs:
        if not a * b < 0:
            raise ConfigError(f"alpha*beta must be negative, got alpha={a}, beta={b}")
    return regs


def cmd_sweep(cfg: RunConfig, explicit: set[str] = frozenset()) -> int:
    regs = _sweep_regimes(cfg, explicit)
    out = Path(cfg.out)
    _check_writable(out)
    n = cfg.N or 16
    h = 1.0 / n
    if cfg.tau is not None:
        taus = [float(cfg.tau)]
    else:
        factors = [float(parse_rational(f, "tau factor")) for f in parse_times(cfg.tau_factors, "tau_factors")]
        base = parse_tau_rule(cfg.tau_rule)
        taus = [base * f * h * h for f in factors]
    if not taus or any(not t > 0 for t in taus):
        raise ConfigError("time steps must be positive")
    t0 = time.perf_counter()
    reports = structure_sweep([(float(a), float(b), t) for a, b, t in regs], h, taus,
                              shape=cfg.shape_spec(n), config=cfg.solver_config(), jobs=int(cfg.jobs))
    elapsed = time.perf_counter() - t0
    entries = []
    i = 0
    for a, b, _ in regs:
        for _tau in taus:
            d = reports[i].as_dict()
            d["alpha"], d["beta"] = rational_label(a), rational_label(b)
            entries.append(d)
            i += 1
    summary = {
        "command": "sweep",
        "config": cfg.echo(),
        "N": n,
        "h": h,
        "taus": taus,
        "all_passed": all(r.passed for r in reports),
        "entries": entries,
        "runtime_s": round(elapsed, 3),
    }
    atomic_write(out / "sweep.json", json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_render(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    src = Path(cfg.input) if cfg.input else out / "snapshots.jsonl"
    snaps = read_snapshots(src)
    _check_writable(out)
    times = parse_times(cfg.frames, "frames") if cfg.frames is not None else tuple(t for t, _ in snaps)
    written = render_frames(snaps, times, out / "frames", cfg)
    log.info("render: wrote %d files", len(written))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("run options")
    g.add_argument("--config", help="JSON file with any of the long option names as keys")
    g.add_argument("--shape", help="ellipse, circle, case1, case2, case3 or file:PATH")
    g.add_argument("--a", type=float, help="ellipse semi-axis along x")
    g.add_argument("--b", type=float, help="ellipse semi-axis along y")
    g.add_argument("--r", type=float, help="circle radius")
    g.add_argument("--N", type=int, help="number of nodes (h = 1/N)")
    g.add_argument("--alpha", help="flow exponent, rationals like 1/3 allowed")
    g.add_argument("--beta", help="flow coefficient, rationals allowed")
    g.add_argument("--tau", type=float, help="time step (overrides --tau-rule)")
    g.add_argument("--tau-rule", help="time step rule c*h^2")
    g.add_argument("--tmax", type=float, help="final time")
    g.add_argument("--solver", choices=("newton", "picard"))
    g.add_argument("--tol", type=float, help="nonlinear stopping tolerance")
    g.add_argument("--max-iter", type=int)
    g.add_argument("--checkpoints", help="comma-separated times t1,t2,...")
    g.add_argument("--levels", help="convergence levels k (h = 2^-k), comma-separated")
    g.add_argument("--h-ref", type=float, help="reference mesh size for convergence")
    g.add_argument("--tau-ref", type=float, help="reference time step for convergence")
    g.add_argument("--tau-factors", help="sweep time steps as multiples of the tau rule, e.g. 1,1/2,2,4")
    g.add_argument("--out", help="output directory")
    g.add_argument("--jobs", type=int, help="worker processes")
    g.add_argument("--quick", action="store_true", default=None, help="cheaper convergence reference")
    g.add_argument("--render", action="store_true", default=None, help="write SVG frames")
    g.add_argument("--frames", help="frame times, comma-separated")
    g.add_argument("--snapshot-every", type=int, help="store a snapshot every K steps")
    g.add_argument("--frame-size", type=int)
    g.add_argument("--stroke-width", type=float)
    g.add_argument("--no-overlay", dest="overlay", action="store_false", default=None,
                   help="do not draw the initial curve behind each frame")
    g.add_argument("--input", help="snapshots JSONL to render (default OUT/snapshots.jsonl)")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="curveflow", description="Area-conserved generalized curvature flow of polygons.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="evolve one curve and write diagnostics")
    sub.add_parser("converge", parents=[common], help="spatial convergence study")
    sub.add_parser("sweep", parents=[common], help="area and perimeter checks over regimes and time steps")
    sub.add_parser("render", parents=[common], help="SVG frames from stored snapshots")
    return p


class _ArgParseExit(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _error_payload(exc: BaseException, code: int) -> dict:
    d = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for k in ("step", "t"):
        if hasattr(exc, k):
            d[k] = getattr(exc, k)
    return d


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, SelfIntersecting):
        return EXIT_METRIC
    if isinstance(exc, (ConfigError, InvalidSpec, InvalidCurve, CheckpointMisaligned)):
        return EXIT_CONFIG
    if isinstance(exc, CurveFlowError):
        return EXIT_SOLVER
    return EXIT_CONFIG


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    out_dir = Path(flags.get("out") or "out")
    try:
        file_cfg = _load_config(args.config)
        cfg = RunConfig.from_sources(file_cfg, flags)
        out_dir = Path(cfg.out)
        explicit = {k for k, v in flags.items() if v is not None} | set(file_cfg)
        if args.command == "evolve":
            return cmd_evolve(cfg)
        if args.command == "converge":
            return cmd_converge(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, explicit)
        return cmd_render(cfg)
    except (CurveFlowError, ValueError, TypeError) as exc:
        code = exit_code_for(exc)
        payload = _error_payload(exc, code)
        text = json.dumps(payload)
        print(text, file=sys.stderr)
        try:
            if out_dir.is_dir():
                atomic_write(out_dir / "error.json", text + "\n")
        except OSError:
            pass
        return code


if __name__ == "__main__":
    sys.exit(main())
