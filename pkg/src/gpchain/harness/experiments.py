"""Experiment pipelines and reports behind the command-line harness."""

from __future__ import annotations

import math
import os
import platform
import sys
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import SimpleNamespace
from typing import Optional, Sequence

import numpy as np
import scipy

from .. import __version__
from ..errors import ConfigError, ExperimentFailure, GPChainError, NeedTwoSolitons, NoConvergence
from ..evolution import SolverConfig, TrajectoryRecord, evolve
from ..functionals import build_weights, localized_momenta, smooth_random_perturbation, x_norm
from ..grid import Grid, Perturbation, State
from ..modulation import (ModulationSeries, contraction_solve, fit_modulation, initial_guess_from_peaks,
                          track_modulation)
from ..soliton_forms import (ChainParams, SolitonParams, chain_profile, check_domain, decay_rate,
                             soliton_jet_on_grid, soliton_momentum_closed, soliton_momentum_derivative,
                             soliton_energy_closed)
from ..spectrum import assemble_Hc, assemble_Lc, coercivity_constant, spectrum_report
from ..functionals import energy, momentum
from .config import CHAIN_KINDS, ExperimentConfig
from .io import read_snapshot, write_csv, write_json, write_snapshot

MONO_RAMP_DIVISOR = 16.0
ORBIT_TAIL_DIVISOR = 33.0


# --- assertions -------------------------------------------------------------

@dataclass
class Assertions:
    enabled: bool = True
    items: list = field(default_factory=list)

    def check(self, name: str, value: float, bound: float, relation: str = "<=") -> bool:
        value = float(value)
        bound = float(bound)
        ok = {"<=": value <= bound, ">=": value >= bound, "<": value < bound,
              ">": value > bound, "==": value == bound}[relation]
        self.items.append({"name": name, "value": value, "relation": relation, "bound": bound,
                           "passed": bool(ok)})
        return bool(ok)

    def flag(self, name: str, ok: bool, detail: str = "") -> bool:
        self.items.append({"name": name, "passed": bool(ok), "detail": detail})
        return bool(ok)

    @property
    def passed(self) -> bool:
        return not self.enabled or all(a["passed"] for a in self.items)


@dataclass
class RunResult:
    kind: str
    out_dir: Path
    files: list
    assertions: Assertions
    report: object = None

    @property
    def passed(self) -> bool:
        return self.assertions.passed


# --- building blocks --------------------------------------------------------

def grid_from(cfg: ExperimentConfig) -> Grid:
    return Grid(int(cfg.get("grid", "n")), float(cfg.get("grid", "length")))


def solver_from(cfg: ExperimentConfig):
    sv = cfg.section("solver")
    sc = SolverConfig(dt_cfl_factor=sv["dt_cfl_factor"], t_end=sv["t_end"],
                      output_stride=sv["output_stride"],
                      output_interval=None if sv["output_stride"] is not None else sv["output_interval"],
                      dealias=sv["dealias"], guard_threshold=sv["guard_threshold"], dt=sv["dt"])
    return sc, (1.0 if sv["direction"] == "forward" else -1.0)


def chain_from(cfg: ExperimentConfig) -> ChainParams:
    return ChainParams(tuple(cfg.get("chain", "speeds")), tuple(cfg.get("chain", "positions")))


def resample(f: np.ndarray, n_new: int) -> np.ndarray:
    """Trigonometric interpolation of a periodic sample onto n_new points."""
    n = f.size
    if n_new == n:
        return f.copy()
    F = np.fft.rfft(f)
    m = min(F.size, n_new // 2 + 1)
    G = np.zeros(n_new // 2 + 1, dtype=complex)
    G[:m] = F[:m]
    return np.fft.irfft(G, n_new) * (n_new / n)


def perturbation_from(cfg: ExperimentConfig, g: Grid, seed: Optional[int]) -> Optional[Perturbation]:
    pt = cfg.section("perturbation")
    if pt["type"] == "none" or pt["xnorm"] == 0:
        return None
    seed = pt["seed"] if seed is None else seed
    base_n = pt["base_n"] or g.n
    base = Grid(base_n, g.length)
    p = smooth_random_perturbation(base, seed, pt["xnorm"], k_frac=pt["k_frac"])
    if base_n != g.n:
        p = Perturbation(resample(p.eta, g.n), resample(p.v, g.n))
        p = p.scaled(pt["xnorm"] / x_norm(p, g))
    return p


def initial_state(cfg: ExperimentConfig, g: Grid, seed: Optional[int]):
    """Return (reference chain or None, initial state, alpha0)."""
    ref = chain_from(cfg) if cfg.has("chain") else None
    base = chain_profile(ref, g) if ref is not None else State.vacuum(g)
    p = perturbation_from(cfg, g, seed)
    s0 = base if p is None else State(base.eta + p.eta, base.v + p.v)
    s0.require_nv()
    alpha0 = 0.0 if p is None else x_norm(p, g)
    return ref, s0, alpha0


class PeakWeights:
    """Weights for the in-run Q_k record, centered on the current eta peaks.

    The set is rebuilt only once some peak moved by more than half a cell.
    """

    def __init__(self, n_solitons: int, nu_star: float, g: Grid, tau=None, l1=None):
        self.n, self.nu, self.g = n_solitons, nu_star, g
        self.tau, self.l1 = tau, l1
        self._w = None

    def __call__(self, s: State):
        pos = np.array(initial_guess_from_peaks(s, self.n, self.g).positions)
        if self._w is None or np.max(np.abs(pos - np.array(self._w.positions))) > 0.5 * self.g.dx:
            self._w = build_weights(pos, self.nu, self.tau, self.l1, self.g)
        return self._w


# --- chain runs ---------------------------------------------------------------

@dataclass
class ChainRun:
    grid: Grid
    ref: ChainParams
    s0: State
    alpha0: float
    nu_star: float
    L0: float
    direction: float
    solver: SolverConfig
    traj: TrajectoryRecord
    series: ModulationSeries


def run_chain(cfg: ExperimentConfig, seed: Optional[int] = None) -> ChainRun:
    g = grid_from(cfg)
    ref, s0, alpha0 = initial_state(cfg, g, seed)
    for p in ref.solitons():
        check_domain(p.c, p.a, g)
    sc, direction = solver_from(cfg)
    tau, l1 = cfg.get("weights", "tau"), cfg.get("weights", "l1")
    wf = PeakWeights(ref.n, ref.nu, g, tau, l1)
    traj = evolve(s0, g, sc, weights_for=wf, keep_snapshots=True, direction=direction)
    series = track_modulation(traj, g, guess=ref, ref_speeds=ref.speeds)
    return ChainRun(g, ref, s0, alpha0, ref.nu, ref.min_gap if ref.n > 1 else math.inf,
                    direction, sc, traj, series)


def mono_tolerance(nu_star: float, L0: float, divisor: float = MONO_RAMP_DIVISOR) -> float:
    return 10.0 * math.exp(-nu_star * L0 / divisor) + 1e-6


def _ramp_derivatives(x: np.ndarray, m: float, r: float):
    th = np.tanh(r * (x - m))
    sech2 = 1.0 - th * th
    d1 = 0.5 * r * sech2
    d3 = -(r**3) * sech2 * (sech2 - 2.0 * th * th)
    return d1, d3


def flux_slope(s: State, g: Grid, mid: float, mid_rate: float, rate: float) -> float:
    """d/dt of int Psi(x - m(t)) eta v / 2 predicted by the momentum-density balance."""
    eta, v = s.eta, s.v
    ex = g.diff(eta, 1)
    d1, d3 = _ramp_derivatives(g.x, mid, rate)
    flux = (1.0 - 2.0 * eta) * v**2 + 0.5 * eta**2 + (3.0 - 2.0 * eta) * ex**2 / (4.0 * (1.0 - eta) ** 2)
    transport = -mid_rate * g.integrate(d1 * 0.5 * eta * v)
    balance = 0.5 * (-g.integrate(d1 * flux) - 0.5 * g.integrate(d3 * (eta + np.log1p(-eta))))
    return transport + balance


def _simpson(h0: float, h1: float, f0: float, f1: float, f2: float) -> float:
    """Simpson's rule on two possibly unequal panels."""
    return (h0 + h1) / 6.0 * ((2.0 - h1 / h0) * f0 + (h0 + h1) ** 2 / (h0 * h1) * f1 + (2.0 - h0 / h1) * f2)


def balance_residual(snaps, t, g: Grid, mid: float, rate: float) -> float:
    """|Q(t2) - Q(t0) - int_t0^t2 dQ/dt| / (t2 - t0) for a ramp frozen at ``mid``.

    The time integral of the flux balance uses Simpson's rule on the three outputs.
    """
    psi = 0.5 * (1.0 + np.tanh(rate * (g.x - mid)))
    q0 = g.integrate(psi * 0.5 * snaps[0].eta * snaps[0].v)
    q2 = g.integrate(psi * 0.5 * snaps[2].eta * snaps[2].v)
    f = [flux_slope(s, g, mid, 0.0, rate) for s in snaps]
    integral = _simpson(t[1] - t[0], t[2] - t[1], *f)
    return abs(q2 - q0 - integral) / (t[2] - t[0])


def _centered_slopes(t: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = np.full_like(q, np.nan)
    if t.size >= 3:
        out[1:-1] = (q[2:] - q[:-2]) / (t[2:] - t[:-2])[:, None]
    return out


def _envelope_rate(t: np.ndarray, slope: np.ndarray) -> float:
    ok = np.isfinite(slope) & (slope > 0)
    if ok.sum() < 3:
        return math.nan
    coef = np.polyfit(t[ok], np.log(slope[ok]), 1)
    return float(-coef[0])


@dataclass
class MonotonicityReport:
    times: np.ndarray
    q: np.ndarray               # (T, N), Psi_k weights on the tracked midpoints
    slopes: np.ndarray          # (T, N); column 0 and the end rows are NaN
    flux_slopes: np.ndarray     # (T, N), slope predicted by the flux balance
    max_slope: list             # per k >= 2
    envelope_rate: list
    qk_max_increase: list       # per k >= 2, max of Q_k(t + delta) - Q_k(t)
    floor: float                # max windowed residual of the integrated flux balance
    slope_error: float          # max |centered-difference slope - flux slope|
    tol_mono: float
    tol_mono_33: float
    nu_star: float
    L0: float
    verdict: bool

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if not isinstance(v, np.ndarray)}
        return d

    def rows(self):
        N = self.q.shape[1]
        header = ["t"] + [f"Q_{k + 1}" for k in range(N)] + [f"slope_{k + 1}" for k in range(1, N)] \
            + [f"flux_slope_{k + 1}" for k in range(1, N)]
        body = [[t, *q, *sl[1:], *fs[1:]] for t, q, sl, fs in zip(self.times, self.q, self.slopes, self.flux_slopes)]
        return header, body


def _time_order(times: np.ndarray) -> np.ndarray:
    return np.argsort(times, kind="stable")


def tracked_weights(series: ModulationSeries, i: int, nu_star: float, g: Grid, tau=None, l1=None):
    pos = series.positions[i]
    if not np.all(np.isfinite(pos)):
        return None
    return build_weights(pos, nu_star, tau, l1, g)


def monotonicity_report(traj, series: ModulationSeries, g: Grid, nu_star: Optional[float] = None,
                        L0: Optional[float] = None, tau=None, l1=None) -> MonotonicityReport:
    """Localized momenta on weights centered at the tracked midpoints, their
    centered time differences and the flux-balance prediction of the same slopes.

    Times are physical (negative for backward runs); slopes are d/dt in physical time.
    """
    N = series.n
    if N < 2:
        raise NeedTwoSolitons("monotonicity needs a chain of at least two solitons")
    order = _time_order(np.asarray(series.times))
    t = np.asarray(series.times, dtype=float)[order]
    if nu_star is None:
        nu_star = float(np.min(np.sqrt(2.0 - series.speeds[0] ** 2)))
    if L0 is None:
        L0 = float(np.min(series.separations[0]))
    rate = nu_star / MONO_RAMP_DIVISOR
    T = t.size
    q = np.full((T, N), np.nan)
    fs = np.full((T, N), np.nan)
    pos = series.positions[order]
    mids = 0.5 * (pos[:, :-1] + pos[:, 1:])
    mid_rates = np.gradient(mids, t, axis=0) if T > 1 else np.zeros_like(mids)
    snaps = [traj.snapshots[i] for i in order]
    for i in range(T):
        w = tracked_weights(SimpleNamespace(positions=pos), i, nu_star, g, tau, l1)
        if w is None:
            continue
        q[i] = localized_momenta(snaps[i], w, g)[1]
        for k in range(1, N):
            fs[i, k] = flux_slope(snaps[i], g, mids[i, k - 1], mid_rates[i, k - 1], rate)
    slopes = _centered_slopes(t, q)
    max_slope, env, inc = [], [], []
    for k in range(1, N):
        max_slope.append(float(np.nanmax(slopes[:, k])) if np.any(np.isfinite(slopes[:, k])) else math.nan)
        env.append(_envelope_rate(t, slopes[:, k]))
        inc.append(float(np.nanmax(np.diff(q[:, k]))) if T > 1 else 0.0)
    diff = np.abs(slopes[:, 1:] - fs[:, 1:])
    slope_error = float(np.nanmax(diff)) if np.any(np.isfinite(diff)) else math.nan
    floor = 0.0 if T >= 3 else math.nan
    for i in range(1, T - 1):
        if not np.all(np.isfinite(mids[i - 1:i + 2])):
            continue
        for k in range(1, N):
            floor = max(floor, balance_residual(snaps[i - 1:i + 2], t[i - 1:i + 2], g, mids[i, k - 1], rate))
    tol = mono_tolerance(nu_star, L0)
    verdict = all(m <= tol for m in max_slope)
    return MonotonicityReport(t, q, slopes, fs, max_slope, env, inc, floor, slope_error, tol,
                              mono_tolerance(nu_star, L0, ORBIT_TAIL_DIVISOR), nu_star, L0, bool(verdict))


@dataclass
class TransferReport:
    times: np.ndarray
    delta_p: np.ndarray
    p1: np.ndarray
    q2: np.ndarray
    p_total: np.ndarray
    reference_momentum: float
    max_delta_p: float
    cross_check: float          # max |(dP(t) - dP(0)) - (Q_2(t) - Q_2(0)) + (P(t) - P(0))|
    tol: float
    verdict: bool

    def summary(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not isinstance(v, np.ndarray)}

    def rows(self):
        header = ["t", "delta_P", "P_1", "Q_2", "P"]
        return header, [list(r) for r in zip(self.times, self.delta_p, self.p1, self.q2, self.p_total)]


def momentum_transfer(traj, series: ModulationSeries, g: Grid, w=None, nu_star: Optional[float] = None,
                      L0: Optional[float] = None) -> TransferReport:
    """dP(t) = P(Q_c1(0)) - P_1(t). ``w`` fixes the weights; by default they
    follow the tracked positions."""
    N = series.n
    if N < 2:
        raise NeedTwoSolitons("momentum transfer needs a chain of at least two solitons")
    order = _time_order(np.asarray(series.times))
    t = np.asarray(series.times, dtype=float)[order]
    if nu_star is None:
        nu_star = float(np.min(np.sqrt(2.0 - series.speeds[0] ** 2)))
    if L0 is None:
        L0 = float(np.min(series.separations[0]))
    # the first soliton in the direction of integration carries the initial speed
    c1 = float(series.speeds[0, 0])
    pref = soliton_momentum_closed(c1)
    pos = series.positions[order]
    p1 = np.full(t.size, np.nan)
    q2 = np.full(t.size, np.nan)
    ptot = np.full(t.size, np.nan)
    for j, i in enumerate(order):
        s = traj.snapshots[i]
        wj = w if w is not None else tracked_weights(SimpleNamespace(positions=pos), j, nu_star, g)
        if wj is None:
            continue
        P, Q = localized_momenta(s, wj, g)
        p1[j], q2[j] = P[0], Q[1]
        ptot[j] = momentum(s, g)
    dp = pref - p1
    i0 = int(np.where(order == 0)[0][0])
    cross = np.abs((dp - dp[i0]) - (q2 - q2[i0]) + (ptot - ptot[i0]))
    tol = mono_tolerance(nu_star, L0)
    mx = float(np.nanmax(dp))
    return TransferReport(t, dp, p1, q2, ptot, pref, mx, float(np.nanmax(cross)), tol, bool(mx <= tol))


@dataclass
class StabilityReport:
    alpha0: float
    sup_eps: float
    speed_deviation: float
    qk_max_increase: list
    delta_p: float
    A_measured: float
    orbital_envelope: float     # alpha0 + exp(-nu L0 / 33)
    separation_rates: list
    expected_separation_rates: list
    ordered: bool
    hypotheses_hold: bool
    verdict: str
    gaps: list

    def summary(self) -> dict:
        return asdict(self)


def _ordered(speeds: Sequence[float], direction: float) -> bool:
    d = np.diff(np.asarray(speeds, dtype=float))
    return bool(np.all(d > 0) if direction > 0 else np.all(d < 0))


def stability_report(run: ChainRun, mono: Optional[MonotonicityReport] = None,
                     transfer: Optional[TransferReport] = None, bound_factor: float = 20.0,
                     require_converged: bool = True) -> StabilityReport:
    series = run.series
    if series.gaps and require_converged:
        raise NoConvergence(f"modulation fit failed at t = {series.gaps[0]:g}", time=series.gaps[0])
    t = np.asarray(series.times, dtype=float)
    sup_eps = float(np.nanmax(series.eps_xnorm))
    cref = np.asarray(run.ref.speeds, dtype=float)
    dev = np.sum(np.abs(series.position_rates - cref[None, :]), axis=1)
    speed_dev = float(np.nanmax(dev))
    env = run.alpha0 + math.exp(-run.nu_star * run.L0 / ORBIT_TAIL_DIVISOR)
    rates, expected = [], []
    ok = np.isfinite(series.separations).all(axis=1)
    for k in range(series.n - 1):
        if ok.sum() >= 2:
            rates.append(float(np.polyfit(t[ok], series.separations[ok, k], 1)[0]))
        else:
            rates.append(math.nan)
        expected.append(float(np.nanmean(series.speeds[:, k + 1] - series.speeds[:, k])))
    ordered = _ordered(cref, run.direction) if series.n > 1 else True
    A = sup_eps / env
    stable = A <= bound_factor and all(r >= 0.9 * e for r, e in zip(rates, expected))
    if not ordered:
        verdict = "hypothesis-violated"
    else:
        verdict = "stable" if stable else "unstable"
    return StabilityReport(
        alpha0=run.alpha0, sup_eps=sup_eps, speed_deviation=speed_dev,
        qk_max_increase=list(mono.qk_max_increase) if mono is not None else [],
        delta_p=transfer.max_delta_p if transfer is not None else math.nan,
        A_measured=A, orbital_envelope=env, separation_rates=rates,
        expected_separation_rates=expected, ordered=ordered, hypotheses_hold=ordered,
        verdict=verdict, gaps=list(series.gaps))


# --- output helpers ---------------------------------------------------------

def trajectory_rows(traj: TrajectoryRecord):
    q = traj.localized_momenta
    N = 0 if not q or q[0] is None else len(q[0])
    header = ["t", "E", "P"] + [f"Q_{k + 1}" for k in range(N)]
    rows = []
    for i, t in enumerate(traj.times):
        qi = [] if N == 0 else list(q[i])
        rows.append([t, traj.energies[i], traj.momenta[i], *qi])
    return header, rows


def series_rows(series: ModulationSeries):
    N = series.n
    header = ["t"] + [f"c_{k + 1}" for k in range(N)] + [f"a_{k + 1}" for k in range(N)] \
        + ["eps_xnorm", "converged", "iterations"]
    rows = [[t, *c, *a, e, bool(ok), int(it)] for t, c, a, e, ok, it in
            zip(series.times, series.speeds, series.positions, series.eps_xnorm,
                series.converged, series.iterations)]
    return header, rows


def metadata(cfg: ExperimentConfig, seed, threads, grid: Optional[Grid], dt_history, assertions: Assertions,
             extra: Optional[dict] = None) -> dict:
    return {
        "kind": cfg.kind,
        "config": cfg.to_dict(),
        "config_file": str(cfg.source) if cfg.source else None,
        "versions": {"gpchain": __version__, "python": sys.version.split()[0], "numpy": np.__version__,
                     "scipy": scipy.__version__, "platform": platform.platform()},
        "seed": seed if seed is not None else cfg.get("perturbation", "seed"),
        "threads": threads,
        "grid": None if grid is None else {"n": grid.n, "length": grid.length, "dx": grid.dx},
        "dt_history": list(dt_history or []),
        "assertions_enabled": assertions.enabled,
        "assertions": assertions.items,
        "passed": assertions.passed,
        **(extra or {}),
    }


# --- kinds --------------------------------------------------------------------

def _auto_grid(c: float) -> Grid:
    nu = decay_rate(c)
    half = math.log((2.0 - c * c) / 1e-14) / nu
    length = 2.0 * math.ceil(1.25 * half)
    # resolve the core, where 1 - eta is smallest
    eta0 = 0.5 * nu * nu
    core = (2.0 / nu) * math.sqrt((1.0 - eta0) / eta0)
    h = min(0.1, core / 16.0)
    n = 256
    while length / n > h:
        n *= 2
    return Grid(n, float(length))


def _soliton_table(cfg, ctx):
    speeds = cfg.get("table", "speeds")
    rows = []
    worst = 0.0
    for c in speeds:
        if c == 0:
            raise ConfigError("table.speeds", "the table needs nonzero speeds")
        g = grid_from(cfg) if cfg.has("grid") else _auto_grid(c)
        j = soliton_jet_on_grid(SolitonParams(c, 0.0), g)
        s = State(j.eta, j.v)
        E, P = energy(s, g), momentum(s, g)
        dP = 0.5 * g.integrate(j.eta_c * j.v + j.eta * j.v_c)
        Ec, Pc, dPc = soliton_energy_closed(c), soliton_momentum_closed(c), soliton_momentum_derivative(c)
        errs = [abs(E - Ec) / abs(Ec), abs(P - Pc) / abs(Pc), abs(dP - dPc) / abs(dPc)]
        worst = max(worst, *errs)
        rows.append([c, E, P, dP, Ec, Pc, dPc, g.n, g.length])
    ctx.assertions.check("table_max_relative_error", worst, 1e-12)
    f = write_csv(ctx.out / "soliton_table.csv",
                  ["c", "E", "P", "dP_dc", "E_closed", "P_closed", "dP_dc_closed", "n", "length"], rows)
    return [f], None, {"max_relative_error": worst}


def _spectrum(cfg, ctx):
    g = grid_from(cfg)
    c = cfg.get("spectrum", "speed")
    check_domain(c, 0.0, g)
    out = {}
    for kind in cfg.get("spectrum", "operators"):
        op = assemble_Lc(c, g) if kind == "L" else assemble_Hc(c, g)
        rep = spectrum_report(op, n_eig=cfg.get("spectrum", "n_eig"))
        if kind == "H" and cfg.get("spectrum", "coercivity"):
            rep.coercivity_lambda = coercivity_constant(c, g, op)
            ctx.assertions.check("H.coercivity_lambda", rep.coercivity_lambda, 0.0, ">")
        out[kind] = rep.to_dict()
        ctx.assertions.check(f"{kind}.negative_count", rep.negative_count, 1, "==")
        ctx.assertions.check(f"{kind}.kernel_residual", rep.kernel_residual, 1e-7, "<")
        rel = abs(rep.essential_edge_estimate - rep.essential_edge_exact) / rep.essential_edge_exact
        ctx.assertions.check(f"{kind}.edge_relative_error", rel if math.isfinite(rel) else math.inf, 0.05, "<=")
    f = write_json(ctx.out / "spectrum.json", {"c": c, "n": g.n, "length": g.length, "operators": out})
    return [f], g, out


def _evolve(cfg, ctx):
    g = grid_from(cfg)
    ref, s0, alpha0 = initial_state(cfg, g, ctx.seed)
    sc, direction = solver_from(cfg)
    wf = None
    if ref is not None:
        wf = PeakWeights(ref.n, ref.nu, g, cfg.get("weights", "tau"), cfg.get("weights", "l1"))
    keep = cfg.get("output", "snapshots")
    traj = evolve(s0, g, sc, weights_for=wf, keep_snapshots=keep, direction=direction)
    files = [write_csv(ctx.out / "trajectory.csv", *trajectory_rows(traj))]
    if keep:
        for i, (t, s) in enumerate(zip(traj.times, traj.snapshots)):
            files.append(write_snapshot(ctx.out / "snapshots" / f"snap_{i:05d}.bin", s, g, t))
    E = np.asarray(traj.energies)
    P = np.asarray(traj.momenta)
    ctx.assertions.check("energy_drift", np.max(np.abs(E - E[0])) / max(1.0, abs(E[0])), 1e-8)
    ctx.assertions.check("momentum_drift", np.max(np.abs(P - P[0])) / max(1.0, abs(P[0])), 1e-8)
    ctx.dt_history = traj.dt_history
    return files, g, {"alpha0": alpha0, "n_outputs": len(traj.times)}


def _modulate(cfg, ctx):
    snap = cfg.get("modulate", "snapshot")
    if snap is not None:
        path = Path(snap)
        if not path.is_absolute() and cfg.source is not None:
            path = cfg.source.parent / path
        s, g, t = read_snapshot(path)
    else:
        g = grid_from(cfg)
        _, s, _ = initial_state(cfg, g, ctx.seed)
        t = 0.0
    n = cfg.get("modulate", "n_solitons") or (len(cfg.get("chain", "speeds")) if cfg.has("chain") else None)
    if n is None:
        raise ConfigError("modulate.n_solitons", "needed when fitting a snapshot")
    guess = initial_guess_from_peaks(s, n, g)
    solver = fit_modulation if cfg.get("modulate", "solver") == "newton" else contraction_solve
    r = solver(s, guess, g, raise_on_failure=False)
    ctx.assertions.flag("converged", r.converged)
    res = {"time": t, "speeds": list(r.chain.speeds), "positions": list(r.chain.positions),
           "eps_xnorm": r.eps_xnorm, "ortho_residual": r.ortho_residual, "iterations": r.iterations,
           "converged": r.converged, "residual_history": r.residual_history, "step_ratios": r.step_ratios}
    return [write_json(ctx.out / "fit.json", res)], g, res


def load_trajectory_dir(path: Path):
    files = sorted((Path(path) / "snapshots").glob("snap_*.bin"))
    if not files:
        raise ConfigError("track.trajectory", f"no snapshots found under {path}/snapshots")
    times, snaps, grid = [], [], None
    for f in files:
        s, g, t = read_snapshot(f)
        if grid is None:
            grid = g
        elif g != grid:
            raise ConfigError("track.trajectory", f"{f.name} uses a different grid")
        times.append(t)
        snaps.append(s)
    return SimpleNamespace(times=times, snapshots=snaps, modulation_series=None), grid


def _track(cfg, ctx):
    path = Path(cfg.get("track", "trajectory"))
    if not path.is_absolute() and cfg.source is not None:
        path = cfg.source.parent / path
    traj, g = load_trajectory_dir(path)
    n = cfg.get("track", "n_solitons")
    if n is None:
        meta = path / "metadata.json"
        if meta.exists():
            from .io import read_json
            chain = read_json(meta).get("config", {}).get("chain")
            n = len(chain["speeds"]) if chain else None
    if n is None:
        raise ConfigError("track.n_solitons", "cannot infer the number of solitons")
    series = track_modulation(traj, g, n_solitons=n)
    ctx.assertions.check("fit_gaps", len(series.gaps), 0, "==")
    f = write_csv(ctx.out / "modulation.csv", *series_rows(series))
    return [f], g, {"gaps": series.gaps}


def _chain(cfg, ctx):
    run = run_chain(cfg, ctx.seed)
    ctx.dt_history = run.traj.dt_history
    files = [write_csv(ctx.out / "trajectory.csv", *trajectory_rows(run.traj)),
             write_csv(ctx.out / "modulation.csv", *series_rows(run.series))]
    ctx.assertions.check("fit_gaps", len(run.series.gaps), 0, "==")
    two = run.ref.n >= 2
    mono = monotonicity_report(run.traj, run.series, run.grid, run.nu_star, run.L0) if two else None
    transfer = momentum_transfer(run.traj, run.series, run.grid, nu_star=run.nu_star, L0=run.L0) if two else None
    if cfg.kind != "chain-stability" and not two:
        raise NeedTwoSolitons(f"{cfg.kind} needs a chain of at least two solitons")
    report = {}
    if mono is not None:
        files.append(write_csv(ctx.out / "monotonicity.csv", *mono.rows()))
        report["monotonicity"] = mono.summary()
    if transfer is not None:
        files.append(write_csv(ctx.out / "momentum_transfer.csv", *transfer.rows()))
        report["momentum_transfer"] = transfer.summary()
    if cfg.kind == "chain-stability":
        st = stability_report(run, mono, transfer, bound_factor=cfg.get("assertions", "bound_factor"),
                              require_converged=False)
        report["stability"] = st.summary()
        if st.ordered:
            ctx.assertions.check("orbital_bound", st.A_measured, cfg.get("assertions", "bound_factor"))
            for k, (r, e) in enumerate(zip(st.separation_rates, st.expected_separation_rates)):
                ctx.assertions.check(f"separation_rate_{k + 1}", r / e, 0.9, ">=")
        else:
            ctx.assertions.flag("hypotheses", True, "speeds not ordered: verdict marks the violation")
    elif cfg.kind == "monotonicity":
        for k, m in enumerate(mono.max_slope):
            ctx.assertions.check(f"max_slope_Q_{k + 2}", m, mono.tol_mono)
    else:
        ctx.assertions.check("max_delta_P", transfer.max_delta_p, transfer.tol)
    files.append(write_json(ctx.out / "report.json", report))
    report["run"] = run
    return files, run.grid, report


DISPATCH = {"soliton-table": _soliton_table, "spectrum": _spectrum, "evolve": _evolve,
            "modulate": _modulate, "track": _track}
for _k in CHAIN_KINDS:
    DISPATCH[_k] = _chain


def run_experiment(cfg: ExperimentConfig, out_dir, seed: Optional[int] = None, threads: Optional[int] = None,
                   assertions: bool = True) -> RunResult:
    """Run one experiment, write its files and the run metadata under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError("output.dir", f"cannot create {out}: {err}") from err
    if not os.access(out, os.W_OK):
        raise ConfigError("output.dir", f"{out} is not writable")
    enabled = assertions and cfg.get("assertions", "enabled", True)
    ctx = SimpleNamespace(out=out, seed=seed, assertions=Assertions(enabled), dt_history=[])
    start = _time.perf_counter()
    try:
        files, g, report = DISPATCH[cfg.kind](cfg, ctx)
    except ConfigError:
        raise
    except GPChainError as err:
        raise ExperimentFailure(cfg.kind, "run", err) from err
    extra = {"wall_seconds": _time.perf_counter() - start}
    meta = write_json(out / "metadata.json",
                      metadata(cfg, seed, threads, g, ctx.dt_history, ctx.assertions, extra))
    return RunResult(cfg.kind, out, [*files, meta], ctx.assertions, report)
