"""Pseudo-spectral integrating-factor RK4 solver for the hydrodynamic GP system.

    d_t eta = d_x(2v - 2 eta v)
    d_t v   = d_x(eta - v^2 - d_x(eta_x / (2(1 - eta))) + eta_x^2 / (4(1 - eta)^2))

The linear part (per mode [[0, 2ik], [ik + ik^3/2, 0]]) is propagated
exactly; the remainder goes through classical RK4 in the interaction
picture (Lawson's scheme).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GuardTripped, NotNonVanishing
from .functionals import energy, localized_momenta, momentum
from .grid import Grid, State


@dataclass
class SolverConfig:
    dt_cfl_factor: float = 0.4
    t_end: float = 1.0
    output_stride: Optional[int] = None
    output_interval: Optional[float] = 0.5
    dealias: bool = True
    guard_threshold: float = 1.0 - 1e-3
    dt: Optional[float] = None  # fixed step; overrides the CFL rule

    def __post_init__(self):
        if not 0 < self.dt_cfl_factor <= 1:
            raise ValueError("dt_cfl_factor must lie in (0, 1]")
        if not self.guard_threshold < 1:
            raise ValueError("guard_threshold must be below 1")
        if self.output_stride is None and self.output_interval is None:
            raise ValueError("set output_stride or output_interval")
        if self.output_stride is not None and self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.output_interval is not None and not self.output_interval > 0:
            raise ValueError("output_interval must be positive")


@dataclass
class TrajectoryRecord:
    times: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    momenta: list = field(default_factory=list)
    localized_momenta: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    dt_history: list = field(default_factory=list)
    modulation_series: object = None
    guard_time: Optional[float] = None

    def append(self, t, s, e, p, q, keep):
        if self.times and not t > self.times[-1] and not t < self.times[-1]:
            raise ValueError("output times must be strictly monotone")
        self.times.append(float(t))
        self.energies.append(float(e))
        self.momenta.append(float(p))
        self.localized_momenta.append(None if q is None else np.asarray(q, dtype=float))
        if keep:
            self.snapshots.append(s)

    def q_array(self) -> np.ndarray:
        return np.array([q for q in self.localized_momenta])


class HGPSolver:
    """Holds the per-grid spectral operators; ``step`` advances by dt."""

    def __init__(self, g: Grid, dealias: bool = True, guard_threshold: float = 1.0 - 1e-3):
        self.g = g
        self.guard = guard_threshold
        k = g.k
        ko = g.k_odd
        self.ik = 1j * ko
        self.k2 = k * k
        self.mask = g.dealias_mask.astype(float) if dealias else np.ones_like(k)
        # linear generator entries: d/dt eta_h = a v_h, d/dt v_h = b eta_h
        self.a = 2j * ko
        self.b = 1j * ko * (1.0 + 0.5 * k * k)
        self.omega = np.abs(ko) * np.sqrt(2.0 + k * k)
        self._cache = {}

    # -- linear part -------------------------------------------------------
    def _propagator(self, h: float):
        key = float(h)
        P = self._cache.get(key)
        if P is None:
            w = self.omega
            C = np.cos(w * h)
            with np.errstate(invalid="ignore", divide="ignore"):
                S = np.where(w > 0, np.sin(w * h) / np.where(w > 0, w, 1.0), h)
            P = (C, S * self.a, S * self.b)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = P
        return P

    def _lin(self, h: float, eh: np.ndarray, vh: np.ndarray):
        C, Sa, Sb = self._propagator(h)
        return C * eh + Sa * vh, Sb * eh + C * vh

    # -- nonlinear remainder ----------------------------------------------
    def _nonlinear(self, eh: np.ndarray, vh: np.ndarray):
        # batched transforms: three inverse, four forward
        eta, v, ex = np.fft.irfft(np.stack((eh, vh, self.ik * eh)), self.g.n)
        mx = eta.max()
        if mx > self.guard:
            raise GuardTripped(f"max eta = {mx:.6g} exceeds guard {self.guard:.6g}", max_eta=float(mx))
        r = 1.0 / (1.0 - eta)
        exr = ex * r
        F = np.fft.rfft(np.stack((eta * v, v * v, 0.25 * exr * exr, 0.5 * eta * exr)))
        ne = (-2.0 * self.mask) * self.ik * F[0]
        nv = self.ik * (F[2] - self.mask * F[1]) + self.k2 * F[3]
        return ne, nv

    def rhs_hat(self, eh: np.ndarray, vh: np.ndarray):
        ne, nv = self._nonlinear(eh, vh)
        return ne + self.a * vh, nv + self.b * eh

    # -- time stepping -----------------------------------------------------
    def step_hat(self, eh: np.ndarray, vh: np.ndarray, h: float):
        hh = 0.5 * h
        k1e, k1v = self._nonlinear(eh, vh)
        Le, Lv = self._lin(hh, eh, vh)
        k2e, k2v = self._nonlinear(*self._lin(hh, eh + hh * k1e, vh + hh * k1v))
        k3e, k3v = self._nonlinear(Le + hh * k2e, Lv + hh * k2v)
        Fe, Fv = self._lin(hh, k3e, k3v)
        Ge, Gv = self._lin(hh, Le, Lv)
        k4e, k4v = self._nonlinear(Ge + h * Fe, Gv + h * Fv)
        # u_new = E(h)u + h/6 [E(h)k1 + 2E(h/2)(k2 + k3) + k4]
        Ae, Av = self._lin(h, eh + (h / 6.0) * k1e, vh + (h / 6.0) * k1v)
        Be, Bv = self._lin(hh, k2e + k3e, k2v + k3v)
        return (Ae + (h / 3.0) * Be + (h / 6.0) * k4e,
                Av + (h / 3.0) * Bv + (h / 6.0) * k4v)

    def to_hat(self, s: State):
        return np.fft.rfft(s.eta), np.fft.rfft(s.v)

    def to_state(self, eh, vh) -> State:
        n = self.g.n
        return State(np.fft.irfft(eh, n), np.fft.irfft(vh, n))

    def cfl_dt(self, s: State, factor: float) -> float:
        g = self.g
        adv = 2.0 + np.max(np.abs(s.v)) + np.max(np.abs(2.0 * s.v * (1.0 - s.eta)))
        wmax = g.k_max * math.sqrt(2.0 + g.k_max**2)
        return factor * min(g.dx / adv, 1.0 / wmax)


def _guarded(s: State, g: Grid, guard: float):
    s.check_grid(g)
    if not s.is_nonvanishing():
        raise NotNonVanishing(f"max eta = {s.max_eta:.6g} >= 1")
    if s.max_eta > guard:
        raise GuardTripped(f"max eta = {s.max_eta:.6g} exceeds guard {guard:.6g}", max_eta=s.max_eta)


def hgp_rhs(s: State, g: Grid, dealias: bool = True, guard_threshold: float = 1.0 - 1e-3) -> State:
    """Time derivative of (eta, v) under the full HGP flow."""
    _guarded(s, g, guard_threshold)
    solver = HGPSolver(g, dealias, guard_threshold)
    de, dv = solver.rhs_hat(*solver.to_hat(s))
    return solver.to_state(de, dv)


def step(s: State, dt: float, g: Grid, cfg: SolverConfig | None = None) -> State:
    cfg = cfg or SolverConfig()
    _guarded(s, g, cfg.guard_threshold)
    solver = HGPSolver(g, cfg.dealias, cfg.guard_threshold)
    return solver.to_state(*solver.step_hat(*solver.to_hat(s), dt))


def integrate_steps(s: State, g: Grid, dt: float, nsteps: int, cfg: SolverConfig | None = None) -> State:
    """Take ``nsteps`` fixed steps (dt may be negative)."""
    cfg = cfg or SolverConfig()
    _guarded(s, g, cfg.guard_threshold)
    solver = HGPSolver(g, cfg.dealias, cfg.guard_threshold)
    eh, vh = solver.to_hat(s)
    for _ in range(nsteps):
        eh, vh = solver.step_hat(eh, vh, dt)
    return solver.to_state(eh, vh)


Observer = Callable[[float, State], None]


def evolve(s0: State, g: Grid, cfg: SolverConfig, observers: Sequence[Observer] = (),
           weights_for: Optional[Callable[[State], object]] = None,
           keep_snapshots: bool = False, direction: float = 1.0) -> TrajectoryRecord:
    """Advance ``s0`` to ``t_end`` recording E, P and (optionally) Q_k at output times.

    ``weights_for(state)`` returns the WeightSet used for Q_k at that output.
    ``direction = -1`` integrates backward in time.
    """
    _guarded(s0, g, cfg.guard_threshold)
    solver = HGPSolver(g, cfg.dealias, cfg.guard_threshold)
    rec = TrajectoryRecord()
    sgn = 1.0 if direction >= 0 else -1.0

    def record(t, s):
        q = None
        if weights_for is not None:
            q = localized_momenta(s, weights_for(s), g)[1]
        rec.append(t, s, energy(s, g), momentum(s, g), q, keep_snapshots)
        for ob in observers:
            ob(t, s)

    t = 0.0
    s = s0
    record(t, s)
    eh, vh = solver.to_hat(s)
    t_end = abs(cfg.t_end)
    while t_end - abs(t) > 1e-12 * max(1.0, t_end):
        remaining = t_end - abs(t)
        dt = cfg.dt if cfg.dt is not None else solver.cfl_dt(s, cfg.dt_cfl_factor)
        if cfg.output_interval is not None:
            span = min(cfg.output_interval, remaining)
            nsub = max(1, math.ceil(span / dt - 1e-9))
            dt = span / nsub
        else:
            nsub = cfg.output_stride
            if nsub * dt > remaining:
                nsub = max(1, math.ceil(remaining / dt - 1e-9))
                dt = remaining / nsub
        rec.dt_history.append(dt)
        try:
            for i in range(nsub):
                eh, vh = solver.step_hat(eh, vh, sgn * dt)
        except GuardTripped as err:
            err.time = sgn * (abs(t) + i * dt)
            rec.guard_time = err.time
            raise
        t = sgn * (abs(t) + nsub * dt)
        if abs(abs(t) - t_end) < 1e-9 * max(1.0, t_end):
            t = sgn * t_end
        s = solver.to_state(eh, vh)
        record(t, s)
    return rec


def conservation_law_check(s0: State, s1: State, dt: float, psi: np.ndarray,
                           g: Grid, psi_x: np.ndarray | None = None,
                           psi_xxx: np.ndarray | None = None) -> float:
    """Residual of the weighted momentum-density balance across one time step.

    Compares (I(t+dt) - I(t))/dt, I = int psi eta v, with the flux pairing
    evaluated at the time-midpoint state. ``psi`` is time independent.
    Derivatives of psi default to spectral ones.
    """
    psi_x = g.diff(psi, 1) if psi_x is None else psi_x
    psi_xxx = g.diff(psi, 3) if psi_xxx is None else psi_xxx
    lhs = (g.integrate(psi * s1.eta * s1.v) - g.integrate(psi * s0.eta * s0.v)) / dt
    mid = State(0.5 * (s0.eta + s1.eta), 0.5 * (s0.v + s1.v))
    eta, v = mid.eta, mid.v
    ex = g.diff(eta, 1)
    flux = (1.0 - 2.0 * eta) * v**2 + 0.5 * eta**2 + (3.0 - 2.0 * eta) * ex**2 / (4.0 * (1.0 - eta) ** 2)
    rhs = -g.integrate(psi_x * flux) - 0.5 * g.integrate(psi_xxx * (eta + np.log1p(-eta)))
    return abs(lhs - rhs)
