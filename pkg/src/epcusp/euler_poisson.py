"""Physical-space evolution of the Euler-Poisson system in Riemann variables.

Both closures are written in the common form

    w_t + (w + r z + c) w_x = -q phi_x
    z_t + (z + r w - c) z_x = -q phi_x
    -phi_xx = rho(w, z) - e^phi

with (r, c, q) = (1, 2 sqrt(K), 2) for the isothermal system on the half-speed
clock, and (r, c, q) = ((1-a)/(1+a), 0, 2/(1+a)) for the isentropic one.
The modulation triple (tau, kappa, xi) is integrated in the same Runge-Kutta
stages as the fields.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from .poisson import GridField, HelmholtzSolver, fixed_point
from .stencils import central6, local_taylor, upwind5


class DomainError(ValueError):
    pass


class StepRejected(RuntimeError):
    pass


class RunAborted(RuntimeError):
    def __init__(self, msg: str, state: "PhysState | None" = None, trajectory=None):
        super().__init__(msg)
        self.state = state
        self.trajectory = trajectory


@dataclass(frozen=True)
class ClosureModel:
    kind: str
    K: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.kind not in ("isothermal", "isentropic"):
            raise ValueError(f"unknown closure {self.kind!r}")
        if self.kind == "isothermal" and not self.K > 0:
            raise ValueError("K must be positive")
        if self.kind == "isentropic" and not self.gamma > 1:
            raise ValueError("gamma must exceed 1")

    @classmethod
    def isothermal(cls, K: float = 1.0) -> "ClosureModel":
        return cls("isothermal", K=K)

    @classmethod
    def isentropic(cls, gamma: float) -> "ClosureModel":
        return cls("isentropic", gamma=gamma)

    @property
    def alpha(self) -> float:
        return 1.0 if self.kind == "isothermal" else 0.5 * (self.gamma - 1.0)

    @property
    def sqrtK(self) -> float:
        return math.sqrt(self.K)

    @property
    def r(self) -> float:
        a = self.alpha
        return 1.0 if self.kind == "isothermal" else (1.0 - a) / (1.0 + a)

    @property
    def c(self) -> float:
        return 2.0 * self.sqrtK if self.kind == "isothermal" else 0.0

    @property
    def q(self) -> float:
        return 2.0 if self.kind == "isothermal" else 2.0 / (1.0 + self.alpha)

    @property
    def clock_factor(self) -> float:
        """Physical time elapsed per unit of the evolution clock."""
        return 2.0 if self.kind == "isothermal" else 2.0 / (1.0 + self.alpha)

    @property
    def far_field(self) -> tuple[float, float]:
        if self.kind == "isothermal":
            return 0.0, 0.0
        return 1.0 / self.alpha, -1.0 / self.alpha

    def rho(self, w, z):
        if self.kind == "isothermal":
            return np.exp((w - z) / (2.0 * self.sqrtK))
        d = np.asarray(w - z)
        if np.any(d <= 0):
            raise DomainError("vacuum: w - z must be positive")
        return (0.5 * self.alpha * d) ** (1.0 / self.alpha)

    def drho(self, w, z, rho):
        """d rho / d(w - z)."""
        if self.kind == "isothermal":
            return rho / (2.0 * self.sqrtK)
        return rho / (self.alpha * (w - z))

    def speeds(self, w, z):
        r, c = self.r, self.c
        return w + r * z + c, z + r * w - c

    def pressure_potential(self, rho):
        """K(rho log rho - rho + 1), or P_gamma(rho)/(gamma-1)."""
        if self.kind == "isothermal":
            p = np.log(rho)
            return self.K * (p * np.expm1(p) - (np.expm1(p) - p))
        g = self.gamma
        lr = np.log(rho)
        pg = np.expm1(g * lr) / g - np.expm1(lr)
        return pg / (g - 1.0)

    def enthalpy(self, rho):
        """Derivative of pressure_potential in rho."""
        if self.kind == "isothermal":
            return self.K * np.log(rho)
        return np.expm1((self.gamma - 1.0) * np.log(rho)) / (self.gamma - 1.0)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "isothermal":
            d["K"] = self.K
        else:
            d["gamma"] = self.gamma
        return d


def riemann_from_primitive(rho, u, closure: ClosureModel):
    rho = np.asarray(rho, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(~(rho > 0)):
        raise DomainError("vacuum: density must be positive")
    if closure.kind == "isothermal":
        s = closure.sqrtK * np.log(rho)
    else:
        s = rho ** closure.alpha / closure.alpha
    return u + s, u - s


def primitive_from_riemann(w, z, closure: ClosureModel):
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    return closure.rho(w, z), 0.5 * (w + z)


@dataclass
class PhysState:
    t: float
    xs: np.ndarray
    w: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    closure: ClosureModel

    @property
    def h(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def grid(self) -> GridField:
        return GridField(self.xs, np.zeros_like(self.xs))

    @property
    def rho(self) -> np.ndarray:
        return self.closure.rho(self.w, self.z)

    @property
    def u(self) -> np.ndarray:
        return 0.5 * (self.w + self.z)

    @property
    def t_physical(self) -> float:
        return self.closure.clock_factor * self.t

    def copy(self) -> "PhysState":
        return replace(self, w=self.w.copy(), z=self.z.copy(), phi=self.phi.copy())


@dataclass
class EnergyLedger:
    t: float
    H: float
    H_relative_drift: float
    boundary_work: float = 0.0


def energy_density(state: PhysState) -> np.ndarray:
    rho = state.rho
    u = state.u
    phi_x = central6(state.phi, 1.0 / state.h, np.empty_like(state.phi))
    em = np.expm1(state.phi)
    well = state.phi * em - (em - state.phi)  # (phi-1)e^phi + 1
    return 0.5 * rho * u * u + state.closure.pressure_potential(rho) + 0.5 * phi_x ** 2 + well


def boundary_power(state: PhysState, frame_velocity: float = 0.0) -> float:
    """dH/dt on the evolution clock due to the two grid ends.

    Ions cross the ends with the physical flux rho u (u^2/2 + Pi'(rho) + phi).
    A grid moving at v also sweeps v (e_f + rho phi - e^phi + phi_x^2/2); the
    phi-dependent part comes from the Poisson coupling, and the electric flux
    phi phi_xt cancels against the exterior tail.
    """
    cl = state.closure
    v = frame_velocity
    out = 0.0
    for i, sign in ((0, 1.0), (-1, -1.0)):
        rho = float(cl.rho(state.w[i], state.z[i]))
        u = 0.5 * float(state.w[i] + state.z[i])
        phi = float(state.phi[i])
        flux = cl.clock_factor * rho * u * (0.5 * u * u + float(cl.enthalpy(rho)) + phi)
        if v != 0.0:
            phi_x = float(local_taylor(state.xs, state.phi, float(state.xs[i]), 1)[1])
            e_f = 0.5 * rho * u * u + float(cl.pressure_potential(rho))
            flux -= v * (e_f + (rho - 1.0) * phi - (math.expm1(phi) - phi) + 0.5 * phi_x * phi_x)
        out += sign * flux
    return out


def energy(state: PhysState, H0: float | None = None, work: float = 0.0) -> EnergyLedger:
    """H over the grid plus the exterior of the decaying potential tail
    (phi ~ phi_edge e^{-|x - x_edge|}, rho = 1, so phi_x^2/2 + phi^2/2 per unit
    length integrates to phi_edge^2 / 2 on each side)."""
    H = float(trapezoid(energy_density(state), state.xs))
    H += 0.5 * (state.phi[0] ** 2 + state.phi[-1] ** 2)
    ref = H if H0 is None else H0
    drift = abs(H - work - ref) / max(abs(ref), 1e-14)
    return EnergyLedger(state.t, H, drift, work)


@dataclass
class ModulationVars:
    tau: float
    kappa: float
    xi: float

    def as_array(self) -> np.ndarray:
        return np.array([self.tau, self.kappa, self.xi])


@dataclass
class SolverOptions:
    forcing: bool = True
    frame_velocity: float = 0.0
    poisson_tol: float = 1e-11
    poisson_max_iter: int = 100
    poisson_bc: str = "decay"
    newton: bool = False
    track_modulation: bool = True
    taylor_points: int = 8


class Evolver:
    """Method-of-lines integrator owning the Helmholtz factorisation and buffers."""

    def __init__(self, xs: np.ndarray, closure: ClosureModel, opts: SolverOptions | None = None):
        self.xs = np.asarray(xs, dtype=float)
        self.h = float(self.xs[1] - self.xs[0])
        self.inv_h = 1.0 / self.h
        self.closure = closure
        self.opts = opts or SolverOptions()
        self.helm = HelmholtzSolver(self.xs.size, self.h, self.opts.poisson_bc)
        n = self.xs.size
        self._wx = np.empty(n)
        self._zx = np.empty(n)
        self._px = np.empty(n)
        self.poisson_iterations = 0
        self.poisson_solves = 0
        self.max_contraction = 0.0

    # -- elliptic part
    def solve_phi(self, w: np.ndarray, z: np.ndarray, guess: np.ndarray | None) -> np.ndarray:
        if not self.opts.forcing:
            return np.zeros_like(w)
        rho = self.closure.rho(w, z)
        f = rho - 1.0
        if self.opts.newton:
            start = self.helm.solve(f) if guess is None else guess
            phi, it, ratios = self.helm.newton(f, start, self.opts.poisson_tol, self.opts.poisson_max_iter)
        else:
            phi, it, ratios = fixed_point(self.helm, f, self.opts.poisson_tol,
                                          self.opts.poisson_max_iter, guess)
        self.poisson_iterations += it
        self.poisson_solves += 1
        if ratios:
            self.max_contraction = max(self.max_contraction, max(ratios))
        return phi

    # -- hyperbolic part
    def rhs(self, w, z, phi):
        lw, lz = self.closure.speeds(w, z)
        v = self.opts.frame_velocity
        if v:
            lw = lw - v
            lz = lz - v
        wx = upwind5(w, lw, self.inv_h, self._wx)
        zx = upwind5(z, lz, self.inv_h, self._zx)
        dw = -lw * wx
        dz = -lz * zx
        if self.opts.forcing:
            px = central6(phi, self.inv_h, self._px)
            qf = self.closure.q * px
            dw -= qf
            dz -= qf
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(dz))):
            raise StepRejected("non-finite right-hand side")
        return dw, dz

    def modulation_rhs(self, t: float, w, z, phi, mod: np.ndarray) -> np.ndarray:
        tau, kappa, xi = mod
        d = tau - t
        if not d > 0:
            raise RunAborted("modulation frame lost: tau - t <= 0")
        cl = self.closure
        npts = self.opts.taylor_points
        tw = local_taylor(self.xs, w, xi, 3, npts)
        tz = local_taylor(self.xs, z, xi, 2, npts)
        r, q = cl.r, cl.q
        if self.opts.forcing:
            tp = local_taylor(self.xs, phi, xi, 1, npts)
            rho = float(cl.rho(tw[0], tz[0]))
            phi_x = tp[1]
            phi_xx = math.exp(tp[0]) - rho
            rho_x = float(cl.drho(tw[0], tz[0], rho)) * (tw[1] - tz[1])
            phi_xxx = math.exp(tp[0]) * phi_x - rho_x
        else:
            phi_x = phi_xx = phi_xxx = 0.0
        w3 = tw[3]
        tau_dot = d * r * tz[1] - q * d * d * phi_xx
        kappa_dot = (-q * phi_xxx / d + r * tz[2] / (d * d)) / w3 - q * phi_x
        xi_dot = (r * tz[0] + cl.c + (q * phi_xxx - r * tz[2] / d) / w3 + kappa
                  - self.opts.frame_velocity)
        return np.array([tau_dot, kappa_dot, xi_dot])

    def cfl_dt(self, w, z, cfl: float) -> float:
        lw, lz = self.closure.speeds(w, z)
        v = self.opts.frame_velocity
        smax = max(float(np.max(np.abs(lw - v))), float(np.max(np.abs(lz - v))), 1e-12)
        return cfl * self.h / smax

    def step(self, state: PhysState, dt: float, mod: np.ndarray | None = None):
        """Classical RK4 for (w, z) and, when given, the modulation triple."""
        t0, w0, z0 = state.t, state.w, state.z
        track = mod is not None and self.opts.track_modulation
        phi = state.phi
        ks_w, ks_z, ks_m = [], [], []
        coeffs = (0.0, 0.5, 0.5, 1.0)
        w, z, m = w0, z0, mod
        for i, a in enumerate(coeffs):
            if i > 0:
                w = w0 + a * dt * ks_w[-1]
                z = z0 + a * dt * ks_z[-1]
                if track:
                    m = mod + a * dt * ks_m[-1]
                phi = self.solve_phi(w, z, phi)
            dw, dz = self.rhs(w, z, phi)
            ks_w.append(dw.copy())
            ks_z.append(dz.copy())
            if track:
                ks_m.append(self.modulation_rhs(t0 + a * dt, w, z, phi, m))
        w_new = w0 + dt / 6.0 * (ks_w[0] + 2.0 * ks_w[1] + 2.0 * ks_w[2] + ks_w[3])
        z_new = z0 + dt / 6.0 * (ks_z[0] + 2.0 * ks_z[1] + 2.0 * ks_z[2] + ks_z[3])
        phi_new = self.solve_phi(w_new, z_new, phi)
        new = PhysState(t0 + dt, self.xs, w_new, z_new, phi_new, self.closure)
        m_new = None
        if track:
            m_new = mod + dt / 6.0 * (ks_m[0] + 2.0 * ks_m[1] + 2.0 * ks_m[2] + ks_m[3])
        return new, m_new


def rhs_eval(state: PhysState, opts: SolverOptions | None = None):
    ev = Evolver(state.xs, state.closure, opts)
    return ev.rhs(state.w, state.z, state.phi)


def cfl_dt(state: PhysState, cfl: float = 0.4, frame_velocity: float = 0.0) -> float:
    lw, lz = state.closure.speeds(state.w, state.z)
    smax = max(float(np.max(np.abs(lw - frame_velocity))), float(np.max(np.abs(lz - frame_velocity))), 1e-12)
    return cfl * state.h / smax


def step(state: PhysState, dt: float, opts: SolverOptions | None = None) -> PhysState:
    ev = Evolver(state.xs, state.closure, opts)
    return ev.step(state, dt)[0]


def max_gradient(w: np.ndarray, inv_h: float) -> tuple[float, int]:
    wx = central6(w, inv_h, np.empty_like(w))
    i = int(np.argmin(wx))
    return float(-wx[i]), i


# ------------------------------------------------------------- run driver

@dataclass
class RunSettings:
    cfl: float = 0.4
    gradient_ceiling: float | None = None  # absolute; default ceiling_factor/h
    ceiling_factor: float = 0.25
    core_cells: float | None = None  # optional cusp-core resolution ceiling
    horizon: float = 1.0
    snapshot_ds: float = 0.1
    snapshot_capacity: int = 128
    energy_abort: float = 1e-2
    vacuum_fraction: float = 0.1
    constraint_tol: float = 1e-4
    recenter_factor: float = 10.0
    max_steps: int = 5_000_000


@dataclass
class Snapshot:
    t: float
    tau: float
    kappa: float
    xi: float
    rates: tuple[float, float, float]
    w: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    max_wx: float
    x_argmin: float
    residuals: tuple[float, float, float]

    @property
    def s(self) -> float:
        return -math.log(self.tau - self.t)


@dataclass
class Trajectory:
    closure: ClosureModel
    xs: np.ndarray
    snapshots: deque
    stop_cause: str = ""
    steps: int = 0
    energy: list[EnergyLedger] = field(default_factory=list)
    H0: float = 0.0
    gradient_series: list[tuple[float, float]] = field(default_factory=list)
    recenter_events: list[dict] = field(default_factory=list)
    min_gap: float = math.inf
    max_zx: float = 0.0
    max_rho_dev: float = 0.0
    ceiling: float = 0.0
    poisson_iterations: int = 0
    poisson_solves: int = 0
    max_contraction: float = 0.0
    final_state: PhysState | None = None
    final_mod: np.ndarray | None = None
    monitor_records: list = field(default_factory=list)

    @property
    def max_energy_drift(self) -> float:
        return max((e.H_relative_drift for e in self.energy), default=0.0)

    def manifest(self) -> dict:
        return {
            "stop_cause": self.stop_cause,
            "steps": self.steps,
            "H0": self.H0,
            "max_energy_drift": self.max_energy_drift,
            "energy_ledger_columns": ["t", "H", "relative_drift", "boundary_work"],
            "energy_ledger": [[e.t, e.H, e.H_relative_drift, e.boundary_work] for e in self.energy],
            "recenter_events": self.recenter_events,
            "gradient_ceiling": self.ceiling,
            "max_abs_z_x": self.max_zx,
            "max_abs_rho_minus_1": self.max_rho_dev,
            "min_w_minus_z": self.min_gap,
            "poisson_iterations": self.poisson_iterations,
            "poisson_solves": self.poisson_solves,
            "poisson_max_contraction": self.max_contraction,
        }


def frame_from_fields(xs: np.ndarray, w: np.ndarray, t: float, xi_guess: float, npts: int = 8):
    """Modulation triple enforcing W(0)=0, W_y(0)=-1, W_yy(0)=0 exactly.

    xi is the zero of w_xx nearest the steepest point, tau = t - 1/w_x(xi),
    kappa = w(xi).
    """
    x = xi_guess
    for _ in range(20):
        c = local_taylor(xs, w, x, 3, npts)
        dx = -c[2] / c[3]
        x += dx
        if abs(dx) < 1e-14 * max(1.0, abs(x)) + 1e-3 * (xs[1] - xs[0]) ** 2:
            break
    c = local_taylor(xs, w, x, 3, npts)
    if not c[1] < 0:
        raise RunAborted("cannot re-centre: w_x >= 0 at the steepest point")
    return np.array([t - 1.0 / c[1], c[0], x])


def constraint_residuals_phys(xs, w, t, mod, npts: int = 8) -> tuple[float, float, float]:
    tau, kappa, xi = mod
    d = tau - t
    c = local_taylor(xs, w, xi, 2, npts)
    return ((c[0] - kappa) / math.sqrt(d), d * c[1] + 1.0, d ** 2.5 * c[2])


def run_to_blowup(init: PhysState, settings: RunSettings | None = None,
                  opts: SolverOptions | None = None,
                  mod0: ModulationVars | None = None,
                  on_snapshot: Callable[[Snapshot, Trajectory], None] | None = None) -> Trajectory:
    """Step until the gradient ceiling, the horizon or an abort condition.

    Snapshots are taken at self-similar times s0 + k * snapshot_ds, where
    s = -log(tau - t) is read from the co-integrated modulation.
    """
    st = settings or RunSettings()
    opts = opts or SolverOptions()
    ev = Evolver(init.xs, init.closure, opts)
    h = ev.h
    ceiling = st.gradient_ceiling if st.gradient_ceiling else st.ceiling_factor / h
    if st.core_cells:
        ceiling = min(ceiling, (st.core_cells * h) ** (-2.0 / 3.0))

    state = init.copy()
    if opts.forcing:
        state.phi = ev.solve_phi(state.w, state.z, None)
    if mod0 is None:
        _, i0 = max_gradient(state.w, ev.inv_h)
        mod = frame_from_fields(state.xs, state.w, state.t, float(state.xs[i0]), opts.taylor_points)
    else:
        mod = mod0.as_array()

    traj = Trajectory(init.closure, init.xs, deque(maxlen=st.snapshot_capacity), ceiling=ceiling)
    e0 = energy(state)
    traj.H0 = e0.H
    traj.energy.append(e0)
    gap0 = float(np.min(state.w - state.z))
    vacuum_floor = st.vacuum_fraction * gap0

    s_next = -math.log(mod[0] - state.t)
    # energy exchanged through the grid ends, trapezoidal in time
    work = 0.0
    power = boundary_power(state, opts.frame_velocity)

    def record(state, mod, grad, imin):
        rates = tuple(float(v) for v in ev.modulation_rhs(state.t, state.w, state.z, state.phi, mod)) \
            if opts.track_modulation else (0.0, 0.0, 0.0)
        res = constraint_residuals_phys(state.xs, state.w, state.t, mod, opts.taylor_points)
        snap = Snapshot(state.t, float(mod[0]), float(mod[1]), float(mod[2]), rates,
                        state.w.copy(), state.z.copy(), state.phi.copy(), grad,
                        float(state.xs[imin]), res)
        traj.snapshots.append(snap)
        led = energy(state, traj.H0, work)
        traj.energy.append(led)
        if on_snapshot is not None:
            on_snapshot(snap, traj)
        return snap, led

    grad, imin = max_gradient(state.w, ev.inv_h)
    last_grad = grad
    record(state, mod, grad, imin)
    s_next += st.snapshot_ds
    try:
        while True:
            if traj.steps >= st.max_steps:
                traj.stop_cause = "max_steps"
                break
            dt = ev.cfl_dt(state.w, state.z, st.cfl)
            d = mod[0] - state.t
            # land on the next snapshot time in s
            dt_snap = d * (1.0 - math.exp(-(s_next + math.log(d))))
            snap_due = False
            if 0 < dt_snap <= dt:
                dt = dt_snap
                snap_due = True
            if state.t + dt > st.horizon:
                dt = st.horizon - state.t
            state, new_mod = ev.step(state, dt, mod)
            if new_mod is not None:
                mod = new_mod
            traj.steps += 1
            p_new = boundary_power(state, opts.frame_velocity)
            work += 0.5 * (power + p_new) * dt
            power = p_new
            grad, imin = max_gradient(state.w, ev.inv_h)
            if grad > 10.0 * last_grad and grad > 10.0:
                raise StepRejected("gradient grew more than tenfold in one step")
            last_grad = grad
            traj.gradient_series.append((state.t, grad))
            zx = central6(state.z, ev.inv_h, np.empty_like(state.z))
            traj.max_zx = max(traj.max_zx, float(np.max(np.abs(zx))))
            rho = state.rho
            traj.max_rho_dev = max(traj.max_rho_dev, float(np.max(np.abs(rho - 1.0))))
            gap = float(np.min(state.w - state.z))
            traj.min_gap = min(traj.min_gap, gap)
            if state.closure.kind == "isentropic" and gap < vacuum_floor:
                raise RunAborted("vacuum floor breached", state)
            if not mod[0] - state.t > 0:
                traj.stop_cause = "frame_lost"
                break
            if snap_due or -math.log(mod[0] - state.t) >= s_next - 1e-12:
                res = constraint_residuals_phys(state.xs, state.w, state.t, mod, opts.taylor_points)
                if max(abs(v) for v in res) > st.recenter_factor * st.constraint_tol:
                    new = frame_from_fields(state.xs, state.w, state.t, float(mod[2]), opts.taylor_points)
                    traj.recenter_events.append({"t": state.t, "residuals": list(res),
                                                 "old": mod.tolist(), "new": new.tolist()})
                    mod = new
                _, led = record(state, mod, grad, imin)
                if opts.forcing and led.H_relative_drift > st.energy_abort:
                    raise RunAborted("energy drift above bound", state)
                s_next = -math.log(mod[0] - state.t) + st.snapshot_ds
            if grad >= ceiling:
                traj.stop_cause = "gradient_ceiling"
                break
            if state.t >= st.horizon - 1e-15:
                traj.stop_cause = "horizon"
                break
    except (RunAborted, StepRejected) as exc:
        traj.stop_cause = f"abort: {exc}"
        traj.final_state, traj.final_mod = state, mod
        _finish(traj, ev)
        raise RunAborted(str(exc), state, traj) from exc
    # closing snapshot at the stop time
    if traj.snapshots and traj.snapshots[-1].t < state.t:
        record(state, mod, grad, imin)
    traj.final_state, traj.final_mod = state, mod
    _finish(traj, ev)
    return traj


def _finish(traj: Trajectory, ev: Evolver) -> None:
    traj.poisson_iterations = ev.poisson_iterations
    traj.poisson_solves = ev.poisson_solves
    traj.max_contraction = ev.max_contraction
