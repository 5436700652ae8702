"""Batch runner: config ingestion, runs, sweeps and artifact export.

    python -m epcusp run --config configs/isothermal_eps005.toml --out out/iso
    python -m epcusp run --validate-only --config configs/bad_z0.toml
    python -m epcusp run --config configs/isothermal_eps005.toml --sweep epsilon=0.1,0.05

Exit codes: 0 success, 2 configuration or initial-data error, 3 numerical
abort (partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .diagnostics import (FitRejected, InsufficientData, analyze_trajectory, svg_loglog,
                          svg_margin_strips, write_margin_csv)
from .euler_poisson import ClosureModel, RunAborted, RunSettings, SolverOptions, run_to_blowup
from .initdata import ConstructionError, InitSpec, ZBump, build, initial_modulation, validate_conditions
from .selfsimilar import standard_y_grid

log = logging.getLogger("epcusp")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3

# conditions the construction is meant to guarantee; a failure here stops the run.
# The remaining checks are reported only (see validate_conditions notes).
GATING_CONDITIONS = {
    "z0_C4": "||z0||_C4 bound",
    "w0_minus_z0": "||w0 - z0||_inf <= sqrt(K)/2",
    "init_gen_6": "vacuum margin P- > 0",
    "Zyinit": "|Z_y| <= eps^{3/2}/4",
    "1D2": "W'''(0) = 6",
    "init_w_3": "eps w0_x(0) = -1",
    "dottau_init": "|tau_dot| <= eps",
}

CSV_SCHEMAS = {
    "snapshots/snap_NNN.csv": ["t", "x", "w", "z", "phi"],
    "final_state.csv": ["t", "x", "w", "z", "phi"],
    "rates.csv": ["t", "T_star_minus_t", "max_abs_w_x", "holder_0.3333", "holder_0.6667"],
    "margins.csv": ["s", "inequality_id", "margin", "y", "lhs", "rhs"],
    "residuals.csv": ["s", "max_residual", "residual_per_unit_s"],
    "profile.csv": ["t", "weighted_sup_error", "truncated"],
    "sweep.csv": ["value", "status", "stop_cause", "T_star", "grad_rate_exponent",
                  "grad_rate_half_width", "holder_0.3333", "holder_0.6667", "min_margin",
                  "energy_drift", "error"],
}


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass
class ModelSection:
    closure: str = "isothermal"
    K: float = 1.0
    gamma: float = 2.0
    forcing: bool = True


@dataclass
class DataSection:
    epsilon: list = field(default_factory=lambda: [0.05])
    kappa0: float = 0.0
    z0_amplitude: float = 0.0
    z0_width: float = 1.0
    perturb_delta: float = 0.0
    seed: int = 0


@dataclass
class GridSection:
    h: float = 1e-4
    core_cells: float = 4.0
    y_points: int = 4001
    y_window: float = 50.0


@dataclass
class SolverSection:
    cfl: float = 0.4
    frame_velocity: object = "auto"
    poisson_tol: float = 1e-11
    constraint_tol: float = 1e-4
    snapshot_ds: float = 0.1
    horizon: float = 1.0


@dataclass
class MonitorSection:
    enabled: bool = True
    M: float = 100.0
    bootstrap_samples: int = 2000


@dataclass
class OutputSection:
    dir: str = "out"
    snapshot_stride: int = 8


SECTIONS = {"model": ModelSection, "data": DataSection, "grid": GridSection,
            "solver": SolverSection, "monitor": MonitorSection, "output": OutputSection}


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    monitor: MonitorSection = field(default_factory=MonitorSection)
    output: OutputSection = field(default_factory=OutputSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a table")
        extra = set(raw) - set(SECTIONS)
        if extra:
            raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
        cfg = cls()
        for name, sec_cls in SECTIONS.items():
            body = raw.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"[{name}] must be a table")
            known = {f.name: f for f in dataclasses.fields(sec_cls)}
            bad = set(body) - set(known)
            if bad:
                raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(bad))}")
            sec = getattr(cfg, name)
            for k, v in body.items():
                setattr(sec, k, _coerce(name, k, v, getattr(sec, k)))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        m, d, g, s = self.model, self.data, self.grid, self.solver
        if m.closure not in ("isothermal", "isentropic"):
            raise ConfigError(f"model.closure must be 'isothermal' or 'isentropic', got {m.closure!r}")
        if not m.K > 0:
            raise ConfigError("model.K must be positive")
        if not m.gamma > 1:
            raise ConfigError("model.gamma must exceed 1")
        if not d.epsilon:
            raise ConfigError("data.epsilon must not be empty")
        for e in d.epsilon:
            if not 0 < e <= 0.1:
                raise ConfigError(f"data.epsilon values must lie in (0, 0.1], got {e}")
        if m.closure == "isentropic" and not d.kappa0 > 1:
            raise ConfigError("isentropic runs need data.kappa0 > 1")
        if not d.z0_width > 0:
            raise ConfigError("data.z0_width must be positive")
        if not 0 < g.h <= 1e-2:
            raise ConfigError("grid.h must lie in (0, 1e-2]")
        if not g.core_cells > 0:
            raise ConfigError("grid.core_cells must be positive")
        if g.y_points < 101 or g.y_points % 2 == 0:
            raise ConfigError("grid.y_points must be odd and at least 101")
        if not g.y_window > 0:
            raise ConfigError("grid.y_window must be positive")
        if not 0 < s.cfl <= 1:
            raise ConfigError("solver.cfl must lie in (0, 1]")
        if s.frame_velocity != "auto" and not isinstance(s.frame_velocity, float):
            raise ConfigError("solver.frame_velocity must be 'auto' or a number")
        for k in ("poisson_tol", "constraint_tol", "snapshot_ds", "horizon"):
            if not getattr(s, k) > 0:
                raise ConfigError(f"solver.{k} must be positive")
        if not self.monitor.M > 1:
            raise ConfigError("monitor.M must exceed 1")
        if self.monitor.bootstrap_samples < 10:
            raise ConfigError("monitor.bootstrap_samples must be at least 10")
        if self.output.snapshot_stride < 1:
            raise ConfigError("output.snapshot_stride must be at least 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def closure(self) -> ClosureModel:
        if self.model.closure == "isothermal":
            return ClosureModel.isothermal(self.model.K)
        return ClosureModel.isentropic(self.model.gamma)


def _coerce(section: str, key: str, value, default):
    where = f"{section}.{key}"
    if key == "epsilon":
        vals = value if isinstance(value, list) else [value]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
            raise ConfigError(f"{where} must be a number or a list of numbers")
        return [float(v) for v in vals]
    if key == "frame_velocity":
        if value == "auto":
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{where} must be 'auto' or a number")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    return value


def git_blob_sha1(data: bytes) -> str:
    """Content hash in the form git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def load_config(path) -> tuple[RunConfig, bytes]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".json":
            raw = json.loads(data.decode("utf-8"))
        else:
            raw = tomllib.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(raw), data


# ------------------------------------------------------------------ run

def init_spec(cfg: RunConfig, epsilon: float) -> InitSpec:
    d = cfg.data
    shape = ZBump(d.z0_amplitude, d.z0_width) if d.z0_amplitude != 0.0 else None
    return InitSpec(epsilon, kappa0=d.kappa0, closure=cfg.closure(), z0_shape=shape,
                    h=cfg.grid.h, perturb_delta=d.perturb_delta, perturb_seed=d.seed)


def cusp_speed(state, kappa0: float) -> float:
    """Initial w-characteristic speed at the origin, used for the co-moving grid."""
    cl = state.closure
    i = int(np.argmin(np.abs(state.xs)))
    return kappa0 + cl.r * float(state.z[i]) + cl.c


def gate(report) -> list[str]:
    return [f"{r.name} ({GATING_CONDITIONS[r.name]}): value {r.value:.6g} > bound {r.bound:.6g}"
            for r in report.results if r.name in GATING_CONDITIONS and r.status == "FAIL"]


def _write_json(path: Path, obj) -> None:
    from .diagnostics import _clean
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_state_csv(path: Path, t: float, xs, w, z, phi, stride: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_SCHEMAS["final_state.csv"])
        tr = repr(float(t))
        for i in range(0, xs.size, stride):
            wr.writerow([tr, repr(float(xs[i])), repr(float(w[i])), repr(float(z[i])), repr(float(phi[i]))])


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


@dataclass
class RunResult:
    row: dict
    trajectory: object = None
    analysis: object = None
    validation: object = None


def execute(cfg: RunConfig, epsilon: float, out: Path, config_hash: str = "") -> RunResult:
    """One run with artifacts in ``out``.  Raises ConstructionError for bad
    data and RunAborted (after writing partial artifacts) for numerical
    aborts."""
    out.mkdir(parents=True, exist_ok=True)
    spec = init_spec(cfg, epsilon)
    state = build(spec)
    report = validate_conditions(state, epsilon, kappa0=spec.kappa0, z0_shape=spec.z0_shape)
    _write_json(out / "validation.json", report.to_dict())
    failed = gate(report)
    if failed:
        raise ConstructionError(failed[0].split(" ")[0], "; ".join(failed))
    v = cfg.solver.frame_velocity
    v = cusp_speed(state, spec.kappa0) if v == "auto" else float(v)
    opts = SolverOptions(forcing=cfg.model.forcing, frame_velocity=v,
                         poisson_tol=cfg.solver.poisson_tol)
    settings = RunSettings(cfl=cfg.solver.cfl, core_cells=cfg.grid.core_cells,
                           horizon=cfg.solver.horizon, snapshot_ds=cfg.solver.snapshot_ds,
                           constraint_tol=cfg.solver.constraint_tol)
    manifest = {
        "version": __version__,
        "config_sha1": config_hash,
        "config": cfg.to_dict(),
        "epsilon": epsilon,
        "frame_velocity": v,
        "grid_points": int(state.xs.size),
        "domain": [float(state.xs[0]), float(state.xs[-1])],
        "csv_schemas": CSV_SCHEMAS,
        "numpy": np.__version__,
    }
    aborted = None
    try:
        traj = run_to_blowup(state, settings, opts, initial_modulation(spec))
    except RunAborted as exc:
        aborted = exc
        traj = exc.trajectory
    if traj is None:
        manifest["status"] = f"abort: {aborted}"
        _write_json(out / "manifest.json", manifest)
        raise aborted
    manifest["run"] = traj.manifest()
    manifest["status"] = "aborted" if aborted else "ok"
    _write_trajectory(out, traj, cfg.output.snapshot_stride)
    row = {"status": manifest["status"], "stop_cause": traj.stop_cause}
    an = None
    try:
        ys = standard_y_grid(cfg.grid.y_window, cfg.grid.y_points)
        an = analyze_trajectory(traj, epsilon, cfg.monitor.M, ys, monitor=cfg.monitor.enabled,
                                seed=cfg.data.seed, n_boot=cfg.monitor.bootstrap_samples)
        _write_analysis(out, an)
        row.update(_summary(an))
    except (FitRejected, InsufficientData) as exc:
        manifest["analysis_error"] = str(exc)
        row["error"] = str(exc)
    _write_json(out / "manifest.json", manifest)
    if aborted:
        raise aborted
    return RunResult(row, traj, an, report)


def _write_trajectory(out: Path, traj, stride: int) -> None:
    snapdir = out / "snapshots"
    snapdir.mkdir(exist_ok=True)
    for k, sn in enumerate(traj.snapshots):
        _write_state_csv(snapdir / f"snap_{k:03d}.csv", sn.t, traj.xs, sn.w, sn.z, sn.phi, stride)
    fs = traj.final_state
    if fs is not None:
        _write_state_csv(out / "final_state.csv", fs.t, fs.xs, fs.w, fs.z, fs.phi)


def _write_analysis(out: Path, an) -> None:
    rep = an.report
    rep.to_json(out / "report.json")
    T = rep.T_star
    keys = sorted(an.holder)
    rows = [[t, T - t, g] + [an.holder[k][i] for k in keys]
            for i, (t, g) in enumerate(zip(an.times, an.grads))]
    _write_rows(out / "rates.csv", ["t", "T_star_minus_t", "max_abs_w_x"] + [f"holder_{k}" for k in keys], rows)
    write_margin_csv(out / "margins.csv", an.monitor_records)
    _write_rows(out / "residuals.csv", CSV_SCHEMAS["residuals.csv"], an.residual_rates)
    _write_rows(out / "profile.csv", CSV_SCHEMAS["profile.csv"],
                [(t, sc, int(tr)) for t, sc, tr in an.profile_scores])
    keep = T - an.times > 0
    series = {"max|w_x|": (T - an.times[keep], an.grads[keep])}
    for k in keys:
        series[f"[w]_C^{k}"] = (T - an.times[keep], an.holder[k][keep])
    svg_loglog(out / "rates.svg", series, None)
    svg_margin_strips(out / "margins.svg", an.monitor_records)


def _summary(an) -> dict:
    rep = an.report
    return {
        "T_star": rep.T_star,
        "grad_rate_exponent": rep.grad_rate_exponent,
        "grad_rate_half_width": rep.grad_rate_half_width,
        "holder_0.3333": rep.holder_exponents.get("0.3333", (math.nan,))[0],
        "holder_0.6667": rep.holder_exponents.get("0.6667", (math.nan,))[0],
        "min_margin": min(rep.bootstrap_margins.values(), default=math.nan),
        "energy_drift": rep.energy_drift,
    }


# ------------------------------------------------------------------ sweep

SWEEP_PARAMS = ("epsilon", "resolution")


def parse_sweep(arg: str) -> tuple[str, list[float]]:
    if "=" not in arg:
        raise ConfigError("--sweep expects <param>=<comma separated values>")
    name, vals = arg.split("=", 1)
    name = name.strip()
    if name not in SWEEP_PARAMS:
        raise ConfigError(f"--sweep parameter must be one of {SWEEP_PARAMS}, got {name!r}")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --sweep values: {exc}") from exc
    return name, values


def sweep_config(cfg: RunConfig, param: str, value: float) -> tuple[RunConfig, float]:
    c = copy.deepcopy(cfg)
    eps = c.data.epsilon[0]
    if param == "epsilon":
        eps = value
        c.data.epsilon = [value]
    else:
        if not value > 0:
            raise ConfigError("resolution factors must be positive")
        c.grid.h = cfg.grid.h / value
    c.validate()
    return c, eps


def _sweep_worker(args) -> dict:
    cfg, param, value, out, chash = args
    row = {"value": value, "status": "failed"}
    try:
        c, eps = sweep_config(cfg, param, value)
        row.update(execute(c, eps, Path(out), chash).row)
    except (ConfigError, ConstructionError, RunAborted, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(cfg: RunConfig, param: str, values: list[float], out: Path, threads: int = 1,
          config_hash: str = "") -> list[dict]:
    if not values:
        return []
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, param, v, str(out / f"{param}_{v:g}"), config_hash) for v in values]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]
    header = CSV_SCHEMAS["sweep.csv"]
    _write_rows(out / "sweep.csv", header, [[r.get(k, "") for k in header] for r in rows])
    return rows


# ------------------------------------------------------------------ entry

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epcusp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        r = sub.add_parser(name)
        r.add_argument("--config", required=True, help="TOML or JSON run configuration")
        r.add_argument("--validate-only", action="store_true",
                       help="build and check the initial data, then stop")
        r.add_argument("--sweep", default=None, help="<param>=<csv>, param in epsilon|resolution")
        r.add_argument("--out", default=None, help="output directory (overrides output.dir)")
        r.add_argument("--threads", type=int, default=1, help="parallel runs in a sweep")
        r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, raw = load_config(args.config)
        chash = git_blob_sha1(raw)
        out = Path(args.out or cfg.output.dir)
        if args.command == "sweep" and not args.sweep:
            raise ConfigError("sweep needs --sweep <param>=<csv>")
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.validate_only:
            return _validate_only(cfg)
        if args.sweep:
            param, values = parse_sweep(args.sweep)
            rows = sweep(cfg, param, values, out, args.threads, chash)
            for r in rows:
                print(f"{param}={r['value']:g}: {r['status']} {r.get('error', '')}".rstrip())
            return EXIT_OK
        single = len(cfg.data.epsilon) == 1
        for eps in cfg.data.epsilon:
            target = out if single else out / f"epsilon_{eps:g}"
            row = execute(cfg, eps, target, chash).row
            print(f"epsilon={eps:g}: {row['stop_cause']}, T*={row.get('T_star', math.nan):.6g}, "
                  f"rate={row.get('grad_rate_exponent', math.nan):.4f}, "
                  f"min margin={row.get('min_margin', math.nan):.3g} -> {target}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstructionError as exc:
        print(f"initial data rejected: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


def _validate_only(cfg: RunConfig) -> int:
    code = EXIT_OK
    for eps in cfg.data.epsilon:
        spec = init_spec(cfg, eps)
        state = build(spec)
        rep = validate_conditions(state, eps, kappa0=spec.kappa0, z0_shape=spec.z0_shape)
        for r in rep.results:
            tag = "gate" if r.name in GATING_CONDITIONS else "info"
            print(f"[{tag}] {r.name:14s} {r.status:4s} value={r.value:.6g} bound={r.bound:.6g} {r.note}")
        failed = gate(rep)
        if failed:
            for f in failed:
                print(f"epsilon={eps:g}: FAIL {f}", file=sys.stderr)
            code = EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
