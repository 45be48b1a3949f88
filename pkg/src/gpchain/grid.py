"""Periodic grid, hydrodynamic state container and spectral helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotNonVanishing


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-length/2, length/2)."""

    n: int
    length: float
    x: np.ndarray = field(init=False, repr=False, compare=False)
    k: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"grid length must be positive, got {self.length}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "length", float(self.length))
        dx = self.length / n
        x = -0.5 * self.length + dx * np.arange(n)
        # rfft wavenumbers; the last one is the Nyquist mode
        k = 2.0 * np.pi * np.fft.rfftfreq(n, d=dx)
        x.flags.writeable = False
        k.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "k", k)

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def wavenumbers(self) -> np.ndarray:
        """Full periodic wavenumber set in FFT ordering."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    @property
    def k_odd(self) -> np.ndarray:
        """rfft wavenumbers with the Nyquist mode removed (for odd derivatives)."""
        k = self.k.copy()
        k[-1] = 0.0
        return k

    @property
    def k_max(self) -> float:
        return float(self.k[-1])

    @property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask on rfft modes."""
        return np.abs(self.k) < (2.0 / 3.0) * self.k_max

    def diff(self, f: np.ndarray, order: int = 1) -> np.ndarray:
        """Spectral derivative of a real periodic field."""
        if order == 0:
            return np.array(f, dtype=float)
        kk = self.k_odd if order % 2 else self.k
        fh = np.fft.rfft(f) * (1j * kk) ** order
        return np.fft.irfft(fh, n=self.n)

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoid rule on the periodic grid."""
        return float(np.sum(f) * self.dx)

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(f, g) * self.dx)

    def shift(self, f: np.ndarray, h: float) -> np.ndarray:
        """Return f(x + h) by Fourier interpolation."""
        fh = np.fft.rfft(f) * np.exp(1j * self.k_odd * h)
        if self.n % 2 == 0:
            fh[-1] *= np.cos(self.k[-1] * h)
        return np.fft.irfft(fh, n=self.n)


@dataclass(frozen=True)
class State:
    """Hydrodynamic pair (eta, v) sampled on a grid."""

    eta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if eta.ndim != 1 or eta.shape != v.shape:
            raise ValueError("eta and v must be 1-D arrays of equal length")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "v", v)

    @classmethod
    def vacuum(cls, g: Grid) -> "State":
        return cls(np.zeros(g.n), np.zeros(g.n))

    @property
    def max_eta(self) -> float:
        return float(np.max(self.eta))

    def is_nonvanishing(self) -> bool:
        return self.max_eta < 1.0

    def check_grid(self, g: Grid) -> None:
        if self.eta.shape != (g.n,):
            raise ValueError(f"state has {self.eta.size} samples, grid has {g.n}")

    def require_nv(self, margin: float = 1e-9) -> None:
        m = self.max_eta
        if not m < 1.0 - margin:
            raise NotNonVanishing(f"max eta = {m:.6g} is not below 1 - {margin:g}")

    def __add__(self, other: "State") -> "State":
        return type(self)(self.eta + other.eta, self.v + other.v)

    def __sub__(self, other: "State") -> "State":
        return type(self)(self.eta - other.eta, self.v - other.v)

    def scaled(self, t: float) -> "State":
        return type(self)(t * self.eta, t * self.v)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.eta, self.v])


class Perturbation(State):
    """Difference field eps = (eps_eta, eps_v); no NV requirement."""

    @property
    def eps_eta(self) -> np.ndarray:
        return self.eta

    @property
    def eps_v(self) -> np.ndarray:
        return self.v

    @classmethod
    def of(cls, s: State) -> "Perturbation":
        return cls(s.eta, s.v)
