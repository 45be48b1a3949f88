"""Modulation fits: write a state as R(c, a) + eps with eps orthogonal to
d_x Q_k (in L2) and to the momentum variation P'(Q_k), for every soliton k.

Unknowns are ordered z = (c_1..c_N, a_1..a_N); the residual Xi has the N
translation pairings first, then the N momentum pairings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (ContractionFailure, DomainTooSmall, InadmissibleRegion, InadmissibleSpeed,
                     NoConvergence, PeakCountMismatch)
from .functionals import x_norm
from .grid import Grid, Perturbation, State
from .soliton_forms import SQRT2, ChainParams, soliton_jet_on_grid


@dataclass
class FitResult:
    chain: ChainParams
    eps: Perturbation
    eps_xnorm: float
    ortho_residual: float
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    step_ratios: list = field(default_factory=list)


def _jets(trial: ChainParams, g: Grid):
    return [soliton_jet_on_grid(p, g) for p in trial.solitons()]


def _eps(s: State, jets) -> tuple[np.ndarray, np.ndarray]:
    e = s.eta - sum(j.eta for j in jets)
    v = s.v - sum(j.v for j in jets)
    return e, v


def _xi(g: Grid, jets, e, v) -> np.ndarray:
    n = len(jets)
    out = np.empty(2 * n)
    for k, j in enumerate(jets):
        out[k] = g.inner(e, j.eta_x) + g.inner(v, j.v_x)
        out[n + k] = 0.5 * (g.inner(e, j.v) + g.inner(v, j.eta))
    return out


def xi_residual(s: State, trial: ChainParams, g: Grid) -> np.ndarray:
    jets = _jets(trial, g)
    return _xi(g, jets, *_eps(s, jets))


def _jacobian(g: Grid, jets, e, v) -> np.ndarray:
    n = len(jets)
    J = np.zeros((2 * n, 2 * n))
    ip = g.inner
    for k, jk in enumerate(jets):
        for j, jj in enumerate(jets):
            # d eps / d c_j = -d_c Q_j ; d eps / d a_j = +d_x Q_j
            J[k, j] = -(ip(jj.eta_c, jk.eta_x) + ip(jj.v_c, jk.v_x))
            J[k, n + j] = ip(jj.eta_x, jk.eta_x) + ip(jj.v_x, jk.v_x)
            J[n + k, j] = -0.5 * (ip(jj.eta_c, jk.v) + ip(jj.v_c, jk.eta))
            J[n + k, n + j] = 0.5 * (ip(jj.eta_x, jk.v) + ip(jj.v_x, jk.eta))
        # the soliton's own fields move with (c_k, a_k): eps-dependent terms
        J[k, k] += ip(e, jk.eta_xc) + ip(v, jk.v_xc)
        J[k, n + k] -= ip(e, jk.eta_xx) + ip(v, jk.v_xx)
        J[n + k, k] += 0.5 * (ip(e, jk.v_c) + ip(v, jk.eta_c))
        J[n + k, n + k] -= 0.5 * (ip(e, jk.v_x) + ip(v, jk.eta_x))
    return J


def xi_jacobian(s: State, trial: ChainParams, g: Grid) -> np.ndarray:
    """d Xi / d(c, a) from analytic pairings."""
    jets = _jets(trial, g)
    return _jacobian(g, jets, *_eps(s, jets))


def _admissible(z: np.ndarray, ref_signs: np.ndarray) -> bool:
    n = z.size // 2
    c = z[:n]
    return bool(np.all(np.abs(c) < SQRT2) and np.all(np.sign(c) == ref_signs) and np.all(c != 0.0))


def _evaluate(s: State, z: np.ndarray, g: Grid, separation: float = 0.0):
    """Residual pieces at z, or None if z leaves the admissible/representable region."""
    try:
        trial = ChainParams.from_vector(z, separation)
        jets = _jets(trial, g)
    except (InadmissibleSpeed, DomainTooSmall, ValueError):
        return None
    e, v = _eps(s, jets)
    return trial, jets, e, v, _xi(g, jets, e, v)


def _finish(s, g, trial, e, v, res, it, ok, hist, ratios=()):
    eps = Perturbation(e, v)
    return FitResult(trial, eps, x_norm(eps, g), float(np.max(np.abs(res))), it, ok, list(hist), list(ratios))


def fit_modulation(s: State, guess: ChainParams, g: Grid, max_iter: int = 30, tol: float = 1e-10,
                   raise_on_failure: bool = True) -> FitResult:
    """Damped Newton on Xi = 0; tol is relative to 1 + |s|_X."""
    s.check_grid(g)
    target = tol * (1.0 + x_norm(s, g))
    z = guess.vector()
    signs = np.sign(z[: guess.n])
    cur = _evaluate(s, z, g)
    if cur is None:
        raise InadmissibleRegion("initial guess outside the admissible region")
    trial, jets, e, v, res = cur
    hist = [float(np.max(np.abs(res)))]
    it = 0
    while hist[-1] >= target and it < max_iter:
        J = _jacobian(g, jets, e, v)
        try:
            dz = np.linalg.solve(J, res)
        except np.linalg.LinAlgError:
            break
        norm0 = np.linalg.norm(res)
        lam = 1.0
        accepted = None
        saw_admissible = False
        for _ in range(9):  # full step plus up to 8 halvings
            zt = z - lam * dz
            if _admissible(zt, signs):
                nxt = _evaluate(s, zt, g)
                if nxt is not None:
                    saw_admissible = True
                    if np.linalg.norm(nxt[4]) < norm0 or lam == 1.0 and norm0 == 0:
                        accepted = (zt, nxt)
                        break
            lam *= 0.5
        it += 1
        if accepted is None:
            if not saw_admissible:
                raise InadmissibleRegion(
                    f"no damped step keeps the speeds admissible (iteration {it})")
            break
        z, (trial, jets, e, v, res) = accepted
        hist.append(float(np.max(np.abs(res))))
    ok = hist[-1] < target
    out = _finish(s, g, trial, e, v, res, it, ok, hist)
    if not ok and raise_on_failure:
        raise NoConvergence(f"Newton stalled at residual {hist[-1]:.3e} after {it} iterations", out)
    return out


def block_diagonal(J: np.ndarray) -> np.ndarray:
    """Keep only the entries coupling each soliton to its own parameters."""
    n = J.shape[0] // 2
    D = np.zeros_like(J)
    for k in range(n):
        idx = [k, n + k]
        D[np.ix_(idx, idx)] = J[np.ix_(idx, idx)]
    return D


def contraction_solve(s: State, guess: ChainParams, g: Grid, max_iter: int = 200, tol: float = 1e-10,
                      raise_on_failure: bool = True) -> FitResult:
    """Fixed-point iteration z <- z - A^{-1} Xi(z).

    A keeps the per-soliton blocks of the Jacobian of the exact sum R at the
    guess and is frozen; the iteration is a contraction when the neglected
    couplings and the guess error are small.
    """
    s.check_grid(g)
    target = tol * (1.0 + x_norm(s, g))
    z = guess.vector()
    cur = _evaluate(s, z, g)
    if cur is None:
        raise InadmissibleRegion("initial guess outside the admissible region")
    trial, jets, e, v, res = cur
    # Jacobian of the exact sum at the guess (eps = 0), per-soliton blocks only
    zero = np.zeros(g.n)
    A = block_diagonal(_jacobian(g, jets, zero, zero))
    hist = [float(np.max(np.abs(res)))]
    ratios = []
    prev = None
    high = 0
    it = 0
    while hist[-1] >= target and it < max_iter:
        dz = np.linalg.solve(A, res)
        z = z - dz
        nxt = _evaluate(s, z, g)
        it += 1
        if nxt is None:
            raise InadmissibleRegion(f"contraction iterate left the admissible region (iteration {it})")
        trial, jets, e, v, res = nxt
        hist.append(float(np.max(np.abs(res))))
        step = float(np.linalg.norm(dz))
        if prev is not None and prev > 0:
            r = step / prev
            ratios.append(r)
            high = high + 1 if r > 0.9 else 0
            if high >= 3:
                raise ContractionFailure("iterate-to-iterate ratio above 0.9 for 3 steps", ratios)
        prev = step
    ok = hist[-1] < target
    out = _finish(s, g, trial, e, v, res, it, ok, hist, ratios)
    if not ok and raise_on_failure:
        raise NoConvergence(f"contraction stalled at residual {hist[-1]:.3e}", out)
    return out


def initial_guess_from_peaks(s: State, expected_n: int, g: Grid, threshold: float = 0.05,
                             min_distance: float = 4.0) -> ChainParams:
    """Speeds and centers read off the largest local maxima of eta."""
    eta = s.eta
    left = np.roll(eta, 1)
    right = np.roll(eta, -1)
    idx = np.nonzero((eta >= left) & (eta > right) & (eta > threshold))[0]
    idx = idx[np.argsort(-eta[idx], kind="stable")]
    chosen: list[int] = []
    for i in idx:
        if all(abs(g.x[i] - g.x[j]) >= min_distance for j in chosen):
            chosen.append(int(i))
        if len(chosen) == expected_n:
            break
    if len(chosen) != expected_n:
        raise PeakCountMismatch(f"found {len(chosen)} peaks above {threshold}, expected {expected_n}")
    chosen.sort(key=lambda i: g.x[i])
    speeds, positions = [], []
    for i in chosen:
        # parabolic refinement of the maximum
        f0, fm, fp = eta[i], eta[i - 1], eta[(i + 1) % g.n]
        den = fm - 2.0 * f0 + fp
        off = 0.5 * (fm - fp) / den if den < 0 else 0.0
        off = float(np.clip(off, -0.5, 0.5))
        peak = f0 - 0.25 * (fm - fp) * off
        peak = min(peak, 1.0 - 1e-6)
        c = math.sqrt(max(2.0 - 2.0 * peak, 1e-12))
        c = min(c, SQRT2 * (1 - 1e-9))
        vp = s.v[i]
        speeds.append(-c if vp > 0 else c)
        positions.append(g.x[i] + off * g.dx)
    return ChainParams(tuple(speeds), tuple(positions))


@dataclass
class ModulationSeries:
    times: np.ndarray
    speeds: np.ndarray          # (T, N); NaN rows mark fit gaps
    positions: np.ndarray       # (T, N)
    eps_xnorm: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    speed_rates: np.ndarray     # c_k'(t)
    position_rates: np.ndarray  # a_k'(t)
    separations: np.ndarray     # (T, N-1)
    separation_growth: np.ndarray  # per gap: a_(k+1) - a_k > initial + sigma* t at every time
    diagnostic_ratio: np.ndarray
    gaps: list

    @property
    def n(self) -> int:
        return self.speeds.shape[1]


def _rates(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    if t.size < 2:
        return np.zeros_like(y)
    return np.gradient(y, t, axis=0, edge_order=2 if t.size > 2 else 1)


def track_modulation(traj, g: Grid, n_solitons: Optional[int] = None, guess: Optional[ChainParams] = None,
                     ref_speeds=None, strict: bool = False, max_iter: int = 30, tol: float = 1e-10
                     ) -> ModulationSeries:
    """Fit every stored snapshot, warm-starting from the previous fit.

    A failed fit leaves a NaN row (a gap) unless ``strict``, in which case
    NoConvergence is raised with the snapshot time attached.
    """
    snaps = traj.snapshots
    times = np.asarray(traj.times, dtype=float)
    if len(snaps) != times.size:
        raise ValueError("trajectory must carry a snapshot at every output time")
    if guess is None:
        if n_solitons is None:
            raise ValueError("give n_solitons or an initial guess")
        guess = initial_guess_from_peaks(snaps[0], n_solitons, g)
    N = guess.n
    T = times.size
    speeds = np.full((T, N), np.nan)
    pos = np.full((T, N), np.nan)
    eps = np.full(T, np.nan)
    conv = np.zeros(T, dtype=bool)
    iters = np.zeros(T, dtype=int)
    gaps = []
    warm = guess
    for i, s in enumerate(snaps):
        try:
            r = fit_modulation(s, warm, g, max_iter=max_iter, tol=tol, raise_on_failure=True)
        except (NoConvergence, InadmissibleRegion) as err:
            if strict:
                raise NoConvergence(f"fit failed at t = {times[i]:g}: {err}",
                                    getattr(err, "result", None), time=float(times[i])) from err
            gaps.append(float(times[i]))
            continue
        speeds[i] = r.chain.speeds
        pos[i] = r.chain.positions
        eps[i] = r.eps_xnorm
        conv[i] = True
        iters[i] = r.iterations
        # extrapolate the positions to the next output time
        if i + 1 < T:
            dt = times[i + 1] - times[i]
            warm = ChainParams(r.chain.speeds, tuple(np.add(r.chain.positions, np.multiply(r.chain.speeds, dt))))
    c_rate = _rates(times, speeds)
    a_rate = _rates(times, pos)
    seps = np.diff(pos, axis=1) if N > 1 else np.zeros((T, 0))
    if N > 1:
        cref = np.asarray(ref_speeds if ref_speeds is not None else speeds[0], dtype=float)
        sigma = 0.5 * float(np.min(np.diff(cref)))
        # initial separation plus sigma* t; strict at t > 0
        lower = seps[0][None, :] + sigma * (times - times[0])[:, None]
        growth = np.all((seps[1:] > lower[1:]) | np.isnan(seps[1:]), axis=0) if T > 1 else np.ones(N - 1, bool)
    else:
        growth = np.zeros(0, dtype=bool)
    nu = np.nanmin(np.sqrt(2.0 - speeds**2), axis=1) if T else np.zeros(0)
    if N > 1:
        lmin = np.min(seps, axis=1)
        tail = lmin * np.exp(-nu * lmin / 2.0)
    else:
        tail = np.zeros(T)
    num = np.sum(np.abs(a_rate - speeds) + np.abs(c_rate), axis=1)
    den = eps + tail
    # an exact single soliton has nothing to compare against: report NaN
    ratio = np.divide(num, den, out=np.full(T, np.nan), where=den > 0)
    series = ModulationSeries(times, speeds, pos, eps, conv, iters, c_rate, a_rate, seps,
                              np.asarray(growth), ratio, gaps)
    traj.modulation_series = series
    return series
