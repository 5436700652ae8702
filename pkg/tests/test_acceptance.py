"""The ten acceptance criteria at their stated tolerances.

Each test records a PASS/FAIL line that is printed in the terminal summary.
The long runs are session fixtures shared between criteria.
"""
import copy
import math
import time
from pathlib import Path

import numpy as np
import pytest

from epcusp.burgers_profile import (
    profile_derivatives,
    profile_value,
    standard_inequality_grid,
    verify_profile_inequalities,
)
from epcusp.cli import execute, git_blob_sha1, load_config
from epcusp.poisson import C1_CONTRACTION, GridField, solve_physical, solve_screened, sup_I

from conftest import ACCEPTANCE

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
EPS = 0.05


def record(n, checks):
    """checks: list of (label, ok, shown value)."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{lab} {val}{'' if good else ' [x]'}" for lab, good, val in checks)
    ACCEPTANCE[n] = (ok, detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


class Run:
    def __init__(self, name, result, out, seconds, raw):
        self.name, self.result, self.out, self.seconds, self.raw = name, result, out, seconds, raw

    @property
    def report(self):
        return self.result.analysis.report

    @property
    def traj(self):
        return self.result.trajectory


def _execute(cfg_name, out, mutate=None):
    cfg, raw = load_config(CONFIGS / cfg_name)
    if mutate is not None:
        cfg = copy.deepcopy(cfg)
        mutate(cfg)
    t0 = time.perf_counter()
    res = execute(cfg, cfg.data.epsilon[0], out, git_blob_sha1(raw))
    return Run(cfg_name, res, out, time.perf_counter() - t0, raw)


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def iso_run(workdir):
    return _execute("isothermal_eps005.toml", workdir / "iso")


@pytest.fixture(scope="session")
def isen_run(workdir):
    return _execute("isentropic_gamma2.toml", workdir / "isen")


@pytest.fixture(scope="session")
def burgers_run(workdir):
    return _execute("burgers_pure.toml", workdir / "burgers")


@pytest.fixture(scope="session")
def coarse_run(workdir):
    def coarsen(cfg):
        cfg.grid.h *= 2
        cfg.monitor.enabled = False
    return _execute("isothermal_eps005.toml", workdir / "coarse", coarsen)


def fmt(v, spec=".3g"):
    return format(float(v), spec)


def test_criterion_01_profile_exactness():
    t0 = time.perf_counter()
    a = np.geomspace(1e-8, 1e8, 50_000)
    y = np.concatenate([-a[::-1], a])
    w = profile_value(y)
    resid = float(np.max(np.abs(y + w + w ** 3)))
    p = profile_derivatives(0.0)
    dt = time.perf_counter() - t0
    record(1, [
        ("max|y+W+W^3|", resid < 1e-12, fmt(resid)),
        ("W'(0)+1", abs(p.d1 + 1) <= 1e-10, fmt(abs(p.d1 + 1))),
        ("W'''(0)-6", abs(p.d3 - 6) <= 1e-10, fmt(abs(p.d3 - 6))),
        ("runtime s", dt < 1.0, fmt(dt, ".2f")),
    ])


def test_criterion_02_profile_inequalities():
    t0 = time.perf_counter()
    tab = verify_profile_inequalities(standard_inequality_grid(100_000))
    summary = tab.summary()
    dt = time.perf_counter() - t0
    worst = min(summary, key=summary.get)
    expected = {"y-w-y2", "W<y", "y-w-y", "Wyybar_bdd", "0605_m_3", "0605_m_5", "0605_m_4",
                "0605_m_7", "0605_m_7p", "far_W"}
    record(2, [
        ("inequalities", set(summary) == expected, len(summary)),
        (f"min margin ({worst})", summary[worst] >= -1e-10, fmt(summary[worst])),
        ("runtime s", dt < 5.0, fmt(dt, ".2f")),
    ])


def test_criterion_03_kernel_bound():
    t0 = time.perf_counter()
    s = sup_I(np.linspace(-100, 100, 2001))
    dt = time.perf_counter() - t0
    record(3, [("sup I", s <= 3.5, fmt(s, ".6f")), ("runtime s", dt < 1.0, fmt(dt, ".2f"))])


# the manufactured forcing is larger than the proven contraction regime
@pytest.mark.filterwarnings("ignore:forcing outside the proven contraction regime")
def test_criterion_04_poisson_solver():
    g = GridField.uniform(6.0, 4096)
    y = g.xs
    ex = 0.1 * np.exp(-y * y)
    f = -0.1 * (4 * y * y - 2) * np.exp(-y * y) + np.expm1(ex)
    err = float(np.max(np.abs(solve_screened(g.with_vals(f), tol=1e-13).phi.vals - ex)))
    g8 = GridField.uniform(8.0, 1024)
    adm = g8.with_vals(0.06 * np.exp(-g8.xs ** 2) / (1 + np.cbrt(g8.xs ** 2)))
    rep = solve_screened(adm, tol=1e-14)
    one = solve_physical(GridField.uniform(6.0, 4096).with_vals(np.ones(4096)))
    flat = float(np.max(np.abs(one.phi.vals)))
    record(4, [
        ("manufactured sup error", err < 1e-6, fmt(err)),
        ("admissible input", rep.admissible, rep.admissible),
        ("contraction", rep.contraction_estimate <= C1_CONTRACTION,
         f"{fmt(rep.contraction_estimate)} <= {C1_CONTRACTION:.7f}"),
        ("rho=1 -> |phi|", flat <= 1e-13, fmt(flat)),
    ])


def test_criterion_05_pure_burgers(burgers_run):
    rep = burgers_run.report
    score = rep.extras["profile_score_final"]
    record(5, [
        ("stop", burgers_run.traj.stop_cause == "gradient_ceiling", burgers_run.traj.stop_cause),
        ("|T*|/eps", abs(rep.T_star) <= 0.02 * EPS, fmt(abs(rep.T_star) / EPS)),
        ("gradient exponent", abs(rep.grad_rate_exponent + 1) <= 0.05, fmt(rep.grad_rate_exponent, ".4f")),
        ("profile error", score < 0.05, fmt(score)),
    ])


def _blowup_checks(run):
    rep = run.report
    return [
        ("stop", run.traj.stop_cause == "gradient_ceiling", run.traj.stop_cause),
        ("T*", math.isfinite(rep.T_star), fmt(rep.T_star)),
    ]


def _holder_checks(run):
    rep = run.report
    e13 = rep.holder_exponents["0.3333"][0]
    e23 = rep.holder_exponents["0.6667"][0]
    var13 = rep.extras["holder_variation_last_decade"]["0.3333"]
    grow23 = rep.extras["holder_growth_last_decade"]["0.6667"]
    return [
        ("C^2/3 exponent", abs(e23 + 0.5) <= 0.15 * abs(e23), fmt(e23, ".4f")),
        ("C^1/3 exponent", abs(e13) <= 0.1, fmt(e13, ".4f")),
        ("C^1/3 variation", var13 < 2.0, fmt(var13, ".3f")),
        ("C^2/3 growth", grow23 >= 8.0, fmt(grow23, ".3f")),
    ]


def test_criterion_06_isothermal_run(iso_run):
    rep = iso_run.report
    ex = rep.extras
    margins = rep.bootstrap_margins
    neg = ", ".join(f"{k} {fmt(v)}" for k, v in sorted(margins.items(), key=lambda kv: kv[1]) if v < 0)
    bound = 4 * EPS ** 2 + 0.02 * EPS
    record(6, _blowup_checks(iso_run) + [
        ("|T*|", abs(rep.T_star) <= bound, f"{fmt(abs(rep.T_star))} <= {fmt(bound)}"),
        ("max|z_x|", ex["max_abs_z_x"] <= 1.0, fmt(ex["max_abs_z_x"])),
        ("max|rho-1|", ex["max_abs_rho_minus_1"] < 0.4, fmt(ex["max_abs_rho_minus_1"])),
        ("monitor margins < 0", not neg, neg or "none"),
        ("constraint rate", ex["max_constraint_rate"] < 1e-3, fmt(ex["max_constraint_rate"])),
        ("runtime s", iso_run.seconds < 180, fmt(iso_run.seconds, ".0f")),
    ])


def test_criterion_07_holder_dichotomy(iso_run):
    record(7, _holder_checks(iso_run))


def test_criterion_08_isentropic_run(isen_run):
    rep = isen_run.report
    cl = isen_run.traj.closure
    # stored as -P_- <= 0
    p_minus = -isen_run.result.validation["init_gen_6"].value
    floor = p_minus * math.exp(-math.sqrt(EPS)) - 1e-3
    gap = rep.extras["min_w_minus_z"]
    record(8, _blowup_checks(isen_run) + [
        ("closure", cl.kind == "isentropic" and cl.gamma == 2.0, cl.kind),
        ("gradient exponent", abs(rep.grad_rate_exponent + 1) <= 0.05, fmt(rep.grad_rate_exponent, ".4f")),
        ("min(w-z)", gap >= floor, f"{fmt(gap, '.4f')} >= {fmt(floor, '.4f')}"),
    ] + _holder_checks(isen_run))


def _ledger(run):
    return np.array(run.traj.manifest()["energy_ledger"], dtype=float)


def test_criterion_09_energy(iso_run, isen_run, coarse_run):
    fine, coarse = _ledger(iso_run), _ledger(coarse_run)
    d_iso = float(np.max(fine[:, 2]))
    d_isen = float(np.max(_ledger(isen_run)[:, 2]))
    t_end = coarse[-1, 0]
    # compare over the common time span; the coarse run stops earlier
    d_fine = float(np.max(fine[fine[:, 0] <= t_end, 2]))
    d_coarse = float(np.max(coarse[:, 2]))
    ratio = d_coarse / d_fine
    record(9, [
        ("drift H", d_iso < 1e-4, fmt(d_iso)),
        ("drift H_gamma", d_isen < 1e-4, fmt(d_isen)),
        ("doubling gain", ratio >= 4.0, f"{fmt(d_coarse)}/{fmt(d_fine)} = {fmt(ratio, '.2f')}"),
    ])


def test_criterion_10_determinism(iso_run, workdir):
    again = _execute("isothermal_eps005.toml", workdir / "iso_repeat")
    files = sorted(p.relative_to(iso_run.out) for p in iso_run.out.rglob("*")
                   if p.is_file() and p.suffix in (".csv", ".json"))
    diff = [str(p) for p in files if (iso_run.out / p).read_bytes() != (again.out / p).read_bytes()]
    missing = [str(p) for p in files if not (again.out / p).is_file()]
    record(10, [
        ("artifacts", len(files) > 10, len(files)),
        ("differing", not diff and not missing, diff[:3] + missing[:3] or 0),
    ])
