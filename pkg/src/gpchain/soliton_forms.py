"""Exact grey-soliton profiles of the hydrodynamic GP system.

With ``nu = sqrt(2 - c^2)`` and ``y = nu*x/2`` the profile is

    eta_c(x) = (nu^2 / 2) sech(y)^2,     v_c = -c eta_c / (2 (1 - eta_c)).

Every derivative below is differentiated by hand; the test suite checks each
one against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainTooSmall, InadmissibleSpeed
from .grid import Grid, State

SQRT2 = math.sqrt(2.0)
TAIL_TOL = 1e-12


def check_speed(c: float, allow_zero: bool = False) -> float:
    c = float(c)
    if not (abs(c) < SQRT2) or (c == 0.0 and not allow_zero):
        raise InadmissibleSpeed(f"speed {c!r} outside 0 < |c| < sqrt(2)")
    return c


def decay_rate(c: float) -> float:
    return math.sqrt(2.0 - c * c)


@dataclass(frozen=True)
class SolitonParams:
    c: float
    a: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "c", check_speed(self.c))
        object.__setattr__(self, "a", float(self.a))

    @property
    def nu(self) -> float:
        return decay_rate(self.c)


@dataclass(frozen=True)
class ChainParams:
    """Speeds and centers of N solitons; positions must exceed one another by ``separation``."""

    speeds: tuple
    positions: tuple
    separation: float = 0.0
    n: int = field(init=False)

    def __post_init__(self):
        speeds = tuple(check_speed(c) for c in np.atleast_1d(self.speeds))
        positions = tuple(float(a) for a in np.atleast_1d(self.positions))
        if len(speeds) != len(positions) or not speeds:
            raise ValueError("speeds and positions must be non-empty and of equal length")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")
        gaps = np.diff(positions)
        if gaps.size and not np.all(gaps > self.separation):
            raise ValueError(
                f"positions {positions} violate a_(k+1) > a_k + {self.separation}")
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "n", len(speeds))

    @property
    def nu(self) -> float:
        return min(decay_rate(c) for c in self.speeds)

    @property
    def mu(self) -> float:
        return min(abs(c) for c in self.speeds)

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.positions))) if self.n > 1 else math.inf

    def solitons(self) -> list[SolitonParams]:
        return [SolitonParams(c, a) for c, a in zip(self.speeds, self.positions)]

    def vector(self) -> np.ndarray:
        """Parameters as (c_1..c_N, a_1..a_N)."""
        return np.array(self.speeds + self.positions)

    @classmethod
    def from_vector(cls, z: Sequence[float], separation: float = 0.0) -> "ChainParams":
        z = np.asarray(z, dtype=float)
        n = z.size // 2
        return cls(tuple(z[:n]), tuple(z[n:]), separation)


def _sech_tanh(y: np.ndarray):
    # overflow-free sech/tanh for large |y|
    e = np.exp(-2.0 * np.abs(y))
    s = 2.0 * np.sqrt(e) / (1.0 + e)
    t = np.sign(y) * (1.0 - e) / (1.0 + e)
    return s, t


class SolitonJet(NamedTuple):
    """Soliton fields with first x/c derivatives and the mixed second ones."""

    eta: np.ndarray
    v: np.ndarray
    eta_x: np.ndarray
    v_x: np.ndarray
    eta_c: np.ndarray
    v_c: np.ndarray
    eta_xx: np.ndarray
    v_xx: np.ndarray
    eta_xc: np.ndarray
    v_xc: np.ndarray


def soliton_jet(c: float, x: np.ndarray) -> SolitonJet:
    """Analytic profile and derivatives at points ``x`` (soliton centered at 0)."""
    c = check_speed(c)
    nu = decay_rate(c)
    x = np.asarray(x, dtype=float)
    s, t = _sech_tanh(0.5 * nu * x)
    s2 = s * s
    s2t = s2 * t

    eta = 0.5 * nu**2 * s2
    eta_x = -0.5 * nu**3 * s2t
    eta_xx = 0.25 * nu**4 * (2.0 * s2 - 3.0 * s2 * s2)
    # d(nu)/dc = -c/nu
    eta_c = -c * s2 + 0.5 * c * nu * x * s2t
    eta_xc = 1.5 * c * nu * s2t + 0.25 * c * nu**2 * x * (s2 * s2 - 2.0 * s2 * t * t)

    # v = -(c/2) g(eta) with g(e) = e/(1-e)
    r = 1.0 / (1.0 - eta)
    g0 = eta * r
    g1 = r * r
    g2 = 2.0 * r**3
    v = -0.5 * c * g0
    v_x = -0.5 * c * g1 * eta_x
    v_xx = -0.5 * c * (g2 * eta_x**2 + g1 * eta_xx)
    v_c = -0.5 * g0 - 0.5 * c * g1 * eta_c
    v_xc = -0.5 * g1 * eta_x - 0.5 * c * (g2 * eta_c * eta_x + g1 * eta_xc)
    return SolitonJet(eta, v, eta_x, v_x, eta_c, v_c, eta_xx, v_xx, eta_xc, v_xc)


def eta_third_derivative(c: float, x: np.ndarray) -> np.ndarray:
    nu = decay_rate(check_speed(c))
    s, t = _sech_tanh(0.5 * nu * np.asarray(x, dtype=float))
    s2 = s * s
    return 0.5 * nu**5 * (3.0 * s2 * s2 - s2) * t


def check_domain(c: float, a: float, g: Grid) -> None:
    nu = decay_rate(c)
    margin = 0.5 * g.length - abs(a)
    if margin <= 0 or nu**2 * math.exp(-nu * margin) >= TAIL_TOL:
        raise DomainTooSmall(
            f"soliton c={c:g} at a={a:g} does not decay below {TAIL_TOL:g} "
            f"inside a domain of length {g.length:g}")


def _centered(g: Grid, a: float) -> np.ndarray:
    # distance to the center, wrapped into [-L/2, L/2)
    return (g.x - a + 0.5 * g.length) % g.length - 0.5 * g.length


def soliton_jet_on_grid(p: SolitonParams, g: Grid) -> SolitonJet:
    check_domain(p.c, p.a, g)
    return soliton_jet(p.c, _centered(g, p.a))


def soliton_profile(p: SolitonParams, g: Grid) -> State:
    j = soliton_jet_on_grid(p, g)
    return State(j.eta, j.v)


class SolitonGradients(NamedTuple):
    eta_x: np.ndarray
    v_x: np.ndarray
    eta_c: np.ndarray
    v_c: np.ndarray


def soliton_gradients(p: SolitonParams, g: Grid) -> SolitonGradients:
    j = soliton_jet_on_grid(p, g)
    return SolitonGradients(j.eta_x, j.v_x, j.eta_c, j.v_c)


def chain_profile(cp: ChainParams, g: Grid) -> State:
    eta = np.zeros(g.n)
    v = np.zeros(g.n)
    for p in cp.solitons():
        q = soliton_profile(p, g)
        eta += q.eta
        v += q.v
    return State(eta, v)


def soliton_energy_closed(c: float) -> float:
    c = check_speed(c, allow_zero=True)
    return (2.0 - c * c) ** 1.5 / 3.0


def soliton_momentum_closed(c: float) -> float:
    c = check_speed(c)
    nu = decay_rate(c)
    return math.atan(c / nu) + 0.5 * c * nu - math.copysign(0.5 * math.pi, c)


def soliton_momentum_derivative(c: float) -> float:
    """d/dc of the soliton momentum."""
    return decay_rate(check_speed(c, allow_zero=True))


def soliton_ode_residual(c: float, g: Grid) -> float:
    """Max norm of eta'' - (2 - c^2) eta + 3 eta^2 with spectral eta''."""
    eta = soliton_profile(SolitonParams(c, 0.0), g).eta
    res = g.diff(eta, 2) - (2.0 - c * c) * eta + 3.0 * eta**2
    return float(np.max(np.abs(res)))
