"""Dense Fourier discretizations of the linearized operators around a soliton.

Matrices act on nodal values and represent the operator itself, so the
quadratic form of a field u is ``dx * u @ M @ u``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import EigSolverFailure
from .grid import Grid
from .soliton_forms import SolitonParams, check_speed, soliton_jet_on_grid


@dataclass
class OperatorDiscretization:
    kind: str                 # "L" (scalar) or "H" (eta/v block)
    c: float
    grid: Grid
    entries: np.ndarray
    metric: Optional[np.ndarray] = None   # None means the identity

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def form(self, u: np.ndarray) -> float:
        return float(self.grid.dx * (u @ (self.entries @ u)))


def diff_matrix(g: Grid, order: int = 1) -> np.ndarray:
    """Dense Fourier differentiation matrix (real, n x n)."""
    eye = np.eye(g.n)
    kk = g.k_odd if order % 2 else g.k
    return np.fft.irfft(((1j * kk) ** order)[:, None] * np.fft.rfft(eye, axis=0), n=g.n, axis=0)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _lc_matrix(c: float, g: Grid, eta: np.ndarray) -> np.ndarray:
    D = diff_matrix(g, 1)
    r = 1.0 / (1.0 - eta)
    M = D.T @ (0.25 * r[:, None] * D)
    M[np.diag_indices_from(M)] += 0.25 * (2.0 - c * c - 6.0 * eta + 3.0 * eta**2) * r**2
    return _sym(M)


def assemble_Lc(c: float, g: Grid) -> OperatorDiscretization:
    """-d_x(u_x / (4(1 - eta_c))) + (2 - c^2 - 6 eta_c + 3 eta_c^2) / (4 (1 - eta_c)^2) u."""
    c = check_speed(c)
    eta = soliton_jet_on_grid(SolitonParams(c, 0.0), g).eta
    return OperatorDiscretization("L", c, g, _lc_matrix(c, g, eta))


def assemble_Hc(c: float, g: Grid) -> OperatorDiscretization:
    """Block operator on (eps_eta, eps_v) whose form is E'' + c P'' at Q_c."""
    c = check_speed(c)
    eta = soliton_jet_on_grid(SolitonParams(c, 0.0), g).eta
    n = g.n
    r = 1.0 / (1.0 - eta)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = _lc_matrix(c, g, eta)
    M[:n, :n][np.diag_indices(n)] += 0.25 * c * c * r**3
    coup = 0.5 * c * r
    idx = np.arange(n)
    M[idx, n + idx] = coup
    M[n + idx, idx] = coup
    M[n + idx, n + idx] = 1.0 - eta
    return OperatorDiscretization("H", c, g, M)


def kernel_direction(op: OperatorDiscretization) -> np.ndarray:
    """Translation mode d_x Q_c (eta part only for the scalar operator)."""
    j = soliton_jet_on_grid(SolitonParams(op.c, 0.0), op.grid)
    return j.eta_x.copy() if op.kind == "L" else np.concatenate([j.eta_x, j.v_x])


def ipr(vec: np.ndarray) -> float:
    w = vec**2
    return float(np.sum(w**2) / np.sum(w) ** 2)


def essential_edge_exact(kind: str, c: float) -> float:
    if kind == "L":
        return 0.25 * (2.0 - c * c)
    return (2.0 - c * c) / (3.0 + math.sqrt(1.0 + 4.0 * c * c))


@dataclass
class SpectrumReport:
    negative_count: int
    lowest_eigenvalues: list
    kernel_residual: float
    essential_edge_estimate: float
    coercivity_lambda: Optional[float] = None
    essential_edge_exact: Optional[float] = None
    kernel_alignment: Optional[float] = None
    norm_estimate: Optional[float] = None
    eigenvectors: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("eigenvectors")
        return d


def _norm_estimate(M: np.ndarray, iters: int = 60) -> float:
    # power iteration; deterministic start vector
    x = np.cos(np.arange(M.shape[0]) * 0.7) + 1.0
    lam = 0.0
    for _ in range(iters):
        y = M @ x
        lam = float(np.linalg.norm(y) / np.linalg.norm(x))
        x = y / np.linalg.norm(y)
    return lam


def _lowest(M: np.ndarray, count: int, B: Optional[np.ndarray] = None):
    count = min(count, M.shape[0])
    try:
        return scipy.linalg.eigh(M, B, subset_by_index=[0, count - 1], driver="evr" if B is None else "gvx")
    except (np.linalg.LinAlgError, ValueError) as err:
        raise EigSolverFailure(str(err)) from err


def spectrum_report(op: OperatorDiscretization, kernel_candidate: Optional[np.ndarray] = None,
                    n_eig: int = 24, ipr_factor: float = 4.0) -> SpectrumReport:
    """Low-lying spectrum with the unresolved eta Nyquist mode removed.

    The essential edge is the first eigenvalue whose eigenvector has inverse
    participation ratio below ipr_factor / n.
    """
    M = op.entries
    defl = Deflation(nyquist_vector(op)[:, None])
    Mc = defl.compress(M)
    Bc = None if op.metric is None else defl.compress(op.metric)

    def solve(count):
        w, W = _lowest(Mc, count, Bc)
        return w, defl.expand(W)

    vals, vecs = solve(n_eig)
    nrm = _norm_estimate(M)
    neg = int(np.sum(vals < -1e-7 * nrm))
    kc = kernel_direction(op) if kernel_candidate is None else np.asarray(kernel_candidate, dtype=float)
    kres = float(np.linalg.norm(M @ kc) / np.linalg.norm(kc))
    # the eigenvector closest to zero should be the translation mode
    i0 = int(np.argmin(np.abs(vals)))
    align = float(abs(vecs[:, i0] @ kc) / (np.linalg.norm(vecs[:, i0]) * np.linalg.norm(kc)))
    thr = ipr_factor / op.grid.n
    edge = math.nan
    m = n_eig
    while True:
        deloc = [i for i in range(vals.size) if ipr(vecs[:, i]) < thr]
        if deloc or m >= min(Mc.shape[0], 400):
            break
        m = min(2 * m, Mc.shape[0])
        vals, vecs = solve(m)
    if deloc:
        edge = float(vals[deloc[0]])
    return SpectrumReport(
        negative_count=neg,
        lowest_eigenvalues=[float(v) for v in vals[:10]],
        kernel_residual=kres,
        essential_edge_estimate=edge,
        essential_edge_exact=essential_edge_exact(op.kind, op.c),
        kernel_alignment=align,
        norm_estimate=nrm,
        eigenvectors=vecs[:, :10],
    )


# --- constrained coercivity ----------------------------------------------

def _metric_scale(g: Grid) -> np.ndarray:
    """Fourier multiplier sqrt(1 + k^2) of the H1 part of the energy norm.

    The Nyquist mode uses k = 0, matching the first-derivative matrix.
    """
    return np.sqrt(1.0 + g.k_odd**2)


def _apply_eta_multiplier(A: np.ndarray, mult: np.ndarray, g: Grid, axis: int) -> np.ndarray:
    """Apply a Fourier multiplier to the eta block along ``axis`` of a (2n, ...) array."""
    n = g.n
    A = np.array(A, dtype=float, copy=True)
    sl = [slice(None)] * A.ndim
    sl[axis] = slice(0, n)
    part = A[tuple(sl)]
    shape = [1] * A.ndim
    shape[axis] = -1
    A[tuple(sl)] = np.fft.irfft(np.fft.rfft(part, axis=axis) * mult.reshape(shape), n=n, axis=axis)
    return A


class Deflation:
    """Orthogonal complement of span(Y) realized by Householder reflectors.

    ``compress`` restricts a symmetric matrix to the complement (each
    reflector is applied as a rank-two update); ``expand`` maps complement
    coordinates back to full vectors.
    """

    def __init__(self, Y: np.ndarray):
        Y = np.array(Y, dtype=float, copy=True)
        self.dim, self.m = Y.shape
        self.reflectors = []
        for j in range(self.m):
            y = Y[j:, j]
            alpha = -math.copysign(np.linalg.norm(y), y[0] if y[0] != 0 else 1.0)
            v = y.copy()
            v[0] -= alpha
            v /= np.linalg.norm(v)
            self.reflectors.append(v)
            Y[j:, j + 1:] -= 2.0 * np.outer(v, v @ Y[j:, j + 1:])

    def compress(self, K: np.ndarray) -> np.ndarray:
        K = np.array(K, dtype=float, copy=True)
        for j, v in enumerate(self.reflectors):
            Ks = K[j:, j:]
            Kv = Ks @ v
            vKv = v @ Kv
            Ks -= 2.0 * np.outer(v, Kv) + 2.0 * np.outer(Kv, v) - 4.0 * vKv * np.outer(v, v)
            K[j:, :j] -= 2.0 * np.outer(v, v @ K[j:, :j])
            K[:j, j:] = K[j:, :j].T
        return _sym(K[self.m:, self.m:])

    def expand(self, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(W.T).T
        U = np.zeros((self.dim, W.shape[1]))
        U[self.m:] = W
        for j in reversed(range(self.m)):
            v = self.reflectors[j]
            U[j:] -= 2.0 * np.outer(v, v @ U[j:])
        return U


def nyquist_vector(op: OperatorDiscretization) -> np.ndarray:
    """Alternating eta field: the mode the first-derivative matrix cannot see."""
    z = np.zeros(op.dim)
    z[: op.grid.n] = (-1.0) ** np.arange(op.grid.n)
    return z


def constrained_minimum(op: OperatorDiscretization, constraints: Sequence[np.ndarray], count: int = 1,
                        metric: str = "X") -> np.ndarray:
    """Lowest generalized Rayleigh quotients of the H block operator on
    {u : <u, z> = 0 for z in constraints} (L2 pairings), against the energy norm.
    """
    if op.kind != "H":
        raise ValueError("constrained minimum is defined for the block operator")
    g = op.grid
    zs = [nyquist_vector(op)] + [np.asarray(z, float) for z in constraints]
    if metric == "X":
        inv = 1.0 / _metric_scale(g)
        K = _apply_eta_multiplier(op.entries, inv, g, axis=0)
        K = _sym(_apply_eta_multiplier(K, inv, g, axis=1))
        Y = np.column_stack([_apply_eta_multiplier(z, inv, g, axis=0) for z in zs])
    else:
        K = op.entries
        Y = np.column_stack(zs)
    vals, _ = _lowest(Deflation(Y).compress(K), count)
    return vals


def coercivity_constraints(c: float, g: Grid) -> list[np.ndarray]:
    """Translation direction and the momentum-variation representer 1/2 (v_c, eta_c)."""
    j = soliton_jet_on_grid(SolitonParams(c, 0.0), g)
    return [np.concatenate([j.eta_x, j.v_x]), 0.5 * np.concatenate([j.v, j.eta])]


def coercivity_constant(c: float, g: Grid, op: Optional[OperatorDiscretization] = None) -> float:
    """min H_c(eps) / |eps|_X^2 over eps orthogonal to d_x Q_c and with P'(Q_c)(eps) = 0."""
    op = op if op is not None else assemble_Hc(c, g)
    return float(constrained_minimum(op, coercivity_constraints(c, g), 1)[0])
