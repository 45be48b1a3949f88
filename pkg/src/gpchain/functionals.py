"""Energy, momentum, energy-space norm, cutoff weights and quadratic forms.

All integrals use the trapezoid rule on the periodic grid and all
derivatives of sampled fields are spectral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.integrate

from .errors import BadWeightParams, NonOrthogonalDirection, NotNonVanishing
from .grid import Grid, Perturbation, State
from .soliton_forms import ChainParams, SolitonParams, chain_profile, soliton_energy_closed, soliton_jet_on_grid

NV_MARGIN = 1e-9


def _require_nv(s: State):
    m = float(np.max(s.eta))
    if not m < 1.0 - NV_MARGIN:
        raise NotNonVanishing(f"max eta = {m:.6g} >= 1 - {NV_MARGIN:g}")


def energy_density(s: State, g: Grid) -> np.ndarray:
    _require_nv(s)
    eta, v = s.eta, s.v
    ex = g.diff(eta, 1)
    return ex**2 / (8.0 * (1.0 - eta)) + 0.5 * (1.0 - eta) * v**2 + 0.25 * eta**2


def energy(s: State, g: Grid) -> float:
    return g.integrate(energy_density(s, g))


def momentum(s: State, g: Grid) -> float:
    return 0.5 * g.integrate(s.eta * s.v)


def x_norm_sq(p: State, g: Grid) -> float:
    # Parseval on rfft coefficients (interior modes count twice)
    n = g.n
    eh = np.fft.rfft(p.eta)
    vh = np.fft.rfft(p.v)
    wgt = np.full(eh.size, 2.0)
    wgt[0] = 1.0
    if n % 2 == 0:
        wgt[-1] = 1.0
    kk = g.k_odd  # same convention as Grid.diff
    tot = np.sum(wgt * ((1.0 + kk**2) * np.abs(eh) ** 2 + np.abs(vh) ** 2))
    return float(tot * g.dx / n)


def x_norm(p: State, g: Grid) -> float:
    """sqrt(|eps_eta|^2_L2 + |d_x eps_eta|^2_L2 + |eps_v|^2_L2)."""
    return math.sqrt(max(x_norm_sq(p, g), 0.0))


# --- first and second variations ------------------------------------------

def energy_variation(s: State, eps: State, g: Grid, eta_x: np.ndarray | None = None) -> float:
    """E'(s)(eps), written with first derivatives only."""
    eta, v = s.eta, s.v
    ex = g.diff(eta, 1) if eta_x is None else eta_x
    r = 1.0 / (1.0 - eta)
    integrand = (0.25 * ex * g.diff(eps.eta, 1) * r
                 + 0.125 * ex**2 * r**2 * eps.eta
                 + 0.5 * (eta - v**2) * eps.eta
                 + (1.0 - eta) * v * eps.v)
    return g.integrate(integrand)


def momentum_variation(s: State, eps: State, g: Grid) -> float:
    """P'(s)(eps) = 1/2 int(eps_eta v + eps_v eta)."""
    return 0.5 * g.integrate(eps.eta * s.v + eps.v * s.eta)


def energy_hessian(s: State, eps: State, g: Grid) -> float:
    """E''(s)(eps, eps)."""
    eta, v = s.eta, s.v
    ex = g.diff(eta, 1)
    de = g.diff(eps.eta, 1)
    r = 1.0 / (1.0 - eta)
    integrand = (0.25 * de**2 * r
                 + 0.5 * ex * eps.eta * de * r**2
                 + 0.25 * ex**2 * r**3 * eps.eta**2
                 - 2.0 * v * eps.eta * eps.v
                 + (1.0 - eta) * eps.v**2
                 + 0.5 * eps.eta**2)
    return g.integrate(integrand)


def quadratic_form_Hc(c: float, p: State, g: Grid) -> float:
    """Quadratic form of E'' + c P'' at the soliton of speed c centered at 0."""
    j = soliton_jet_on_grid(SolitonParams(c, 0.0), g)
    eta = j.eta
    r = 1.0 / (1.0 - eta)
    de = g.diff(p.eta, 1)
    pot = 2.0 - j.eta_xx * r**2 - j.eta_x**2 * r**3
    integrand = (0.25 * de**2 * r
                 + 0.25 * pot * p.eta**2
                 + (1.0 - eta) * p.v**2
                 + (c - 2.0 * j.v) * p.eta * p.v)
    return g.integrate(integrand)


def quadratic_form_Lc(c: float, eps_eta: np.ndarray, g: Grid) -> float:
    eta = soliton_jet_on_grid(SolitonParams(c, 0.0), g).eta
    r = 1.0 / (1.0 - eta)
    de = g.diff(eps_eta, 1)
    pot = (2.0 - c * c - 6.0 * eta + 3.0 * eta**2) * r**2
    return g.integrate(0.25 * de**2 * r + 0.25 * pot * eps_eta**2)


def Hc_decomposed(c: float, p: State, g: Grid) -> float:
    """L_c(eps_eta) + int (1 - eta_c)(eps_v + c eps_eta / (2 (1 - eta_c)^2))^2."""
    eta = soliton_jet_on_grid(SolitonParams(c, 0.0), g).eta
    sq = p.v + c * p.eta / (2.0 * (1.0 - eta) ** 2)
    return quadratic_form_Lc(c, p.eta, g) + g.integrate((1.0 - eta) * sq**2)


# --- cutoff weights --------------------------------------------------------

@dataclass(frozen=True)
class WeightSet:
    """psi[k] = Psi_(k+1), phi[k] = Phi_(k+1), phi_gap[k] = Phi_(k,k+1)."""

    positions: tuple
    psi: np.ndarray
    phi: np.ndarray
    phi_gap: np.ndarray
    nu_star: float
    tau: float
    l1: float

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def half_width(self) -> float:
        return 0.25 * self.l1


def _half_tanh_ramp(x, rate):
    return 0.5 * (1.0 + np.tanh(rate * x))


def build_weights(positions: Sequence[float], nu_star: float, tau: Optional[float], l1: Optional[float],
                  g: Grid) -> WeightSet:
    """Sample the ramp, bump and gap cutoff families on ``g``.

    ``tau`` defaults to nu_star/32 and ``l1`` (the plateau length; its quarter
    is the bump half width) to the smallest gap between positions.
    """
    a = np.asarray(positions, dtype=float)
    N = a.size
    if N == 0:
        raise BadWeightParams("need at least one position")
    if N > 1 and not np.all(np.diff(a) > 0):
        raise BadWeightParams(f"positions must be strictly increasing, got {a}")
    if not nu_star > 0:
        raise BadWeightParams("nu_star must be positive")
    if tau is None:
        tau = nu_star / 32.0
    if not 0 < tau < nu_star / 16.0:
        raise BadWeightParams(f"tau = {tau:g} must lie in (0, nu_star/16 = {nu_star / 16:g})")
    if l1 is None:
        # with a single soliton there is no gap: make the bump flat to roundoff across the domain
        l1 = float(np.min(np.diff(a))) if N > 1 else max(4.0 * g.length, 80.0 / tau)
    if not l1 > 0:
        raise BadWeightParams("l1 must be positive")
    x = g.x
    h = 0.25 * l1

    psi = np.zeros((N + 1, g.n))
    psi[0] = 1.0
    for k in range(1, N):
        psi[k] = _half_tanh_ramp(x - 0.5 * (a[k - 1] + a[k]), nu_star / 16.0)

    th_lo = np.tanh(tau * (x[None, :] - a[:, None] + h))   # rises at a_k - h
    th_hi = np.tanh(tau * (x[None, :] - a[:, None] - h))   # rises at a_k + h
    phi = 0.5 * (th_lo - th_hi)
    gap = np.empty((N + 1, g.n))
    gap[0] = 0.5 * (1.0 - th_lo[0])
    for k in range(1, N):
        gap[k] = 0.5 * (th_hi[k - 1] - th_lo[k])
    gap[N] = 0.5 * (1.0 + th_hi[N - 1])
    for arr in (psi, phi, gap):
        arr.flags.writeable = False
    return WeightSet(tuple(float(t) for t in a), psi, phi, gap, float(nu_star), float(tau), float(l1))


def partition_defect(w: WeightSet) -> float:
    return float(np.max(np.abs(w.phi.sum(axis=0) + w.phi_gap.sum(axis=0) - 1.0)))


def weight_envelope_violations(w: WeightSet, g: Grid, slack: float = 1e-14) -> dict:
    """Count grid points where a weight exceeds its exponential envelope.

    Bumps and gaps decay at rate 2*tau outside their plateaus; the ramp
    differences Psi_k - Psi_(k+1) decay at rate nu/8 beyond the midpoints
    on either side of a_k, and so do their complements.
    """
    x = g.x
    a = np.asarray(w.positions)
    N = a.size
    h = w.half_width

    def decay(rate, z):
        return np.exp(-rate * np.maximum(z, 0.0))

    def count(f, env):
        return int(np.sum(f > env * (1.0 + slack) + slack))

    t2 = 2.0 * w.tau
    out = {"phi": 0, "phi_gap": 0, "psi": 0}
    for k in range(N):
        out["phi"] += count(w.phi[k], decay(t2, np.abs(x - a[k]) - h))
        out["phi"] += count(np.abs(1.0 - w.phi[k]),
                            decay(t2, x - a[k] + h) + decay(t2, a[k] + h - x))
    out["phi_gap"] += count(w.phi_gap[0], decay(t2, x - a[0] + h))
    for k in range(1, N):
        out["phi_gap"] += count(w.phi_gap[k], decay(t2, a[k - 1] + h - x) * decay(t2, x - a[k] + h))
    out["phi_gap"] += count(w.phi_gap[N], decay(t2, a[N - 1] + h - x))

    r = w.nu_star / 8.0
    mid = 0.5 * (a[:-1] + a[1:])
    for k in range(N):
        d = w.psi[k] - w.psi[k + 1]
        left = decay(r, mid[k - 1] - x) if k > 0 else np.ones_like(x)
        right = decay(r, x - mid[k]) if k < N - 1 else np.ones_like(x)
        out["psi"] += count(d, left * right)
        comp = np.zeros_like(x)
        if k > 0:
            comp += decay(r, x - mid[k - 1])
        if k < N - 1:
            comp += decay(r, mid[k] - x)
        out["psi"] += count(np.abs(1.0 - d), comp)
    return out


def localized_momenta(s: State, w: WeightSet, g: Grid):
    """Return (P_1..P_N, Q_1..Q_N); P_k uses Psi_k - Psi_(k+1), Q_k uses Psi_k."""
    p = 0.5 * s.eta * s.v
    Q = np.array([g.integrate(psi_k * p) for psi_k in w.psi[:-1]])
    P = np.array([g.integrate((w.psi[k] - w.psi[k + 1]) * p) for k in range(w.n)])
    return P, Q


def g_functional_forms(s: State, ref_speeds: Sequence[float], w: WeightSet, g: Grid):
    """Both algebraic forms of E + sum c_k* P_k (weighted sum, telescoped)."""
    c = np.asarray(ref_speeds, dtype=float)
    if c.size != w.n:
        raise ValueError("one reference speed per soliton required")
    E = energy(s, g)
    P, Q = localized_momenta(s, w, g)
    direct = E + float(np.dot(c, P))
    tele = E + c[0] * momentum(s, g) + float(np.dot(np.diff(c), Q[1:]))
    return direct, tele


def g_functional(s: State, ref_speeds: Sequence[float], w: WeightSet, g: Grid) -> float:
    return g_functional_forms(s, ref_speeds, w, g)[0]


def f_functional(s: State, fitted_speeds: Sequence[float], w: WeightSet, g: Grid) -> float:
    """Same combination as g_functional with the fitted speeds in place of the references."""
    return g_functional(s, fitted_speeds, w, g)


@dataclass(frozen=True)
class LocalizedPerturbation:
    eps_k: tuple
    eps_gap: tuple

    def norm_sums(self, g: Grid) -> float:
        return sum(x_norm_sq(p, g) for p in self.eps_k) + sum(x_norm_sq(p, g) for p in self.eps_gap)


def localize_perturbation(p: State, w: WeightSet, positions: Sequence[float], g: Grid) -> LocalizedPerturbation:
    """Split eps with square roots of the bump/gap weights; bump pieces are recentered at 0."""
    pieces = []
    for k, a_k in enumerate(positions):
        r = np.sqrt(w.phi[k])
        pieces.append(Perturbation(g.shift(r * p.eta, a_k), g.shift(r * p.v, a_k)))
    gaps = []
    for k in range(w.n + 1):
        r = np.sqrt(w.phi_gap[k])
        gaps.append(Perturbation(r * p.eta, r * p.v))
    return LocalizedPerturbation(tuple(pieces), tuple(gaps))


def interaction_bound_check(a: float, b: float, nu_a: float, nu_b: float, p: float):
    """Lp norm of exp(-nu_a (x-a)^+) exp(-nu_b (x-b)^-) and its upper bound.

    Adaptive quadrature on the three smooth pieces split at the kinks a and b.
    """
    def f(x):
        return math.exp(-nu_a * max(x - a, 0.0) - nu_b * max(b - x, 0.0))

    nu = min(nu_a, nu_b)
    if math.isinf(p):
        # monotone on each piece, so the maximum sits at a kink
        value = max(f(a), f(b))
        bound = math.exp(-nu * (b - a))
    else:
        opts = dict(epsabs=0.0, epsrel=1e-13, limit=200)
        pieces = [(-math.inf, a), (a, b), (b, math.inf)]
        value = sum(scipy.integrate.quad(lambda x: f(x) ** p, lo, hi, **opts)[0] for lo, hi in pieces)
        value = value ** (1.0 / p)
        bound = (2.0 / (p * nu) + b - a) ** (1.0 / p) * math.exp(-nu * (b - a))
    return value, bound


# --- orthogonality directions ---------------------------------------------

def constraint_vectors(cp: ChainParams, g: Grid) -> list[State]:
    """L2 representers of eps -> <eps, d_x Q_k> (first N) and eps -> P'(Q_k)(eps) (last N)."""
    jets = [soliton_jet_on_grid(p, g) for p in cp.solitons()]
    first = [State(j.eta_x, j.v_x) for j in jets]
    second = [State(0.5 * j.v, 0.5 * j.eta) for j in jets]
    return first + second


def orthogonality_pairings(cp: ChainParams, p: State, g: Grid) -> np.ndarray:
    return np.array([g.inner(z.eta, p.eta) + g.inner(z.v, p.v) for z in constraint_vectors(cp, g)])


def project_orthogonal(cp: ChainParams, p: State, g: Grid) -> Perturbation:
    """L2-orthogonal projection of p onto the complement of the 2N constraint directions."""
    Z = np.array([z.stacked() for z in constraint_vectors(cp, g)])
    u = p.stacked()
    G = Z @ Z.T
    coef = np.linalg.solve(G, Z @ u)
    u = u - coef @ Z
    # one refinement pass against roundoff
    u = u - np.linalg.solve(G, Z @ u) @ Z
    return Perturbation(u[: g.n], u[g.n:])


@dataclass(frozen=True)
class ExpansionCheck:
    slope: float
    amplitudes: tuple
    remainders: tuple
    quadratic_terms: tuple
    tail: float


def expansion_order_check(cp: ChainParams, direction: State, amplitudes: Sequence[float], g: Grid,
                          ortho_tol: float = 1e-10) -> ExpansionCheck:
    """Fit the order of E(R + t eps) - sum E(Q_k) - t^2/2 E''(R)(eps, eps) in t."""
    R = chain_profile(cp, g)
    resid = orthogonality_pairings(cp, direction, g)
    scale = 1.0 + x_norm(direction, g)
    if np.max(np.abs(resid)) > ortho_tol * scale:
        raise NonOrthogonalDirection(f"orthogonality residual {np.max(np.abs(resid)):.3e} exceeds tolerance")
    base = sum(soliton_energy_closed(c) for c in cp.speeds)
    tail = energy(R, g) - base
    quad = energy_hessian(R, direction, g)
    ts = [float(t) for t in amplitudes]
    rems, quads = [], []
    for t in ts:
        q = 0.5 * t * t * quad
        rems.append(energy(R + direction.scaled(t), g) - base - q)
        quads.append(q)
    rems_arr = np.abs(np.array(rems))
    if len(ts) >= 2 and np.all(rems_arr > 0):
        slope = float(np.polyfit(np.log(ts), np.log(rems_arr), 1)[0])
    else:
        slope = float("nan")
    return ExpansionCheck(slope, tuple(ts), tuple(rems), tuple(quads), float(tail))


# --- perturbations ---------------------------------------------------------

def smooth_random_perturbation(g: Grid, seed: int, xnorm: float, k_frac: float = 0.125,
                               margin: Optional[float] = None, ramp: float = 1.0) -> Perturbation:
    """Band-limited random pair with |k| <= k_frac * k_max, scaled to a target X-norm.

    A tanh window of width ``ramp`` switches the field off within ``margin``
    (default length/8) of both domain edges so it never wraps around.
    """
    rng = np.random.default_rng(seed)
    kc = k_frac * g.k_max
    m = g.k.size
    sel = g.k <= kc
    fields = []
    for _ in range(2):
        coef = np.zeros(m, dtype=complex)
        nsel = int(sel.sum())
        coef[sel] = rng.standard_normal(nsel) + 1j * rng.standard_normal(nsel)
        coef[0] = coef[0].real
        fields.append(np.fft.irfft(coef, g.n))
    margin = g.length / 8.0 if margin is None else margin
    lo = -0.5 * g.length + margin
    hi = 0.5 * g.length - margin
    win = 0.5 * (np.tanh((g.x - lo) / ramp) - np.tanh((g.x - hi) / ramp))
    p = Perturbation(fields[0] * win, fields[1] * win)
    nrm = x_norm(p, g)
    return p.scaled(xnorm / nrm) if nrm > 0 else p
