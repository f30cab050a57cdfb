"""Complex geometric optics solutions ``u = exp(i ζ·(x - c)) (1 + r)``.

The remainder solves ``(-Δ - 2i ζ·∇) r = -q (1 + r)`` on a periodic cell
twice the side of the enlarged box Ω~.  It is represented in the shifted
Fourier basis ``exp(i m·(x - c))``, ``m = (2π/L)(j + s)``, with a half-step
shift ``s`` chosen so that ``|m|^2 + 2 ζ·m`` stays away from zero.  The
fixed point ``r <- -G_ζ[q (1 + r)]`` contracts once ``a`` is large compared
to ``L ||q||_∞``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .errors import CGOError, ConfigError
from .forward import Potential
from .geometry import Grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ZetaPair:
    xi: np.ndarray
    k: float
    a: float
    omega1: np.ndarray
    omega2: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray

    @property
    def beta(self) -> float:
        return float(np.sqrt(self.k ** 2 + self.a ** 2 - 0.25 * float(self.xi @ self.xi)))

    def describe(self) -> dict:
        return {"xi": self.xi.tolist(), "k": self.k, "a": self.a,
                "omega1": self.omega1.tolist(), "omega2": self.omega2.tolist()}


def auto_frame(xi) -> tuple:
    """Two orthonormal vectors orthogonal to ``xi`` (Gram-Schmidt of e1, e2, e3)."""
    xi = np.asarray(xi, dtype=float)
    basis = []
    nx = np.linalg.norm(xi)
    if nx > 0:
        basis.append(xi / nx)
    frame = []
    for e in np.eye(3):
        v = e.copy()
        for _ in range(2):      # second pass restores orthogonality lost to cancellation
            for b in basis:
                v -= (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 0.2:
            v /= nv
            basis.append(v)
            frame.append(v)
        if len(frame) == 2:
            break
    return frame[0], frame[1]


def make_zeta_pair(xi, k: float, a: float, frame=None, tol: float = 1e-12) -> ZetaPair:
    xi = np.asarray(xi, dtype=float).reshape(3)
    k, a = float(k), float(a)
    if k <= 0 or a <= 0:
        raise ConfigError(f"need k > 0 and a > 0, got k={k}, a={a}")
    b2 = k * k + a * a - 0.25 * float(xi @ xi)
    if b2 < 0:
        raise ConfigError(f"|xi| = {np.linalg.norm(xi):.4g} exceeds 2 sqrt(k^2 + a^2)")
    if frame is None:
        w1, w2 = auto_frame(xi)
    else:
        w1, w2 = (np.asarray(f, dtype=float).reshape(3) for f in frame)
        scale = max(1.0, np.linalg.norm(xi))
        if (abs(w1 @ w1 - 1) > tol or abs(w2 @ w2 - 1) > tol or abs(w1 @ w2) > tol
                or abs(w1 @ xi) > tol * scale or abs(w2 @ xi) > tol * scale):
            raise ConfigError("frame must be orthonormal and orthogonal to xi")
    beta = np.sqrt(b2)
    z1 = -0.5 * xi + beta * w1 + 1j * a * w2
    z2 = -xi - z1
    return ZetaPair(xi, k, a, w1, w2, z1, z2)


def zeta_dot(z, w) -> complex:
    """Bilinear (unconjugated) product."""
    return complex(np.sum(np.asarray(z) * np.asarray(w)))


def lattice_symbol(zeta, h: float) -> complex:
    """Symbol of the 7-point ``-Δ_h`` on ``exp(i ζ·x)``."""
    z = np.asarray(zeta, dtype=complex)
    return complex(np.sum(2.0 - 2.0 * np.cos(z * h)) / h ** 2)


def lattice_zeta_pair(pair: ZetaPair, h: float, tol: float = 1e-13, max_iter: int = 50) -> ZetaPair:
    """Perturb a pair so both exponentials solve the 7-point Helmholtz equation exactly.

    Keeps ``ζ1 + ζ2 = -ξ`` and the ``ω2`` component ``i a``; the correction moves
    along ``ω1`` and along the third frame direction, both with complex coefficients.
    """
    xi, k = pair.xi, pair.k
    w1, w2 = pair.omega1, pair.omega2
    w3 = np.cross(w1, w2)
    dirs = [w1, 1j * w1, w3, 1j * w3]
    base = 1j * pair.a * w2

    def eta(z):
        return base + sum(c * d for c, d in zip(z, dirs))

    def resid(z):
        e = eta(z)
        r1 = lattice_symbol(-0.5 * xi + e, h) - k * k
        r2 = lattice_symbol(-0.5 * xi - e, h) - k * k
        return np.array([r1.real, r1.imag, r2.real, r2.imag])

    def jac(z):
        e = eta(z)
        d1 = (2.0 / h) * np.sin((-0.5 * xi + e) * h)
        d2 = -(2.0 / h) * np.sin((-0.5 * xi - e) * h)
        J = np.empty((4, 4))
        for c, d in enumerate(dirs):
            g1 = complex(np.sum(d1 * d))
            g2 = complex(np.sum(d2 * d))
            J[:, c] = [g1.real, g1.imag, g2.real, g2.imag]
        return J

    z = np.array([pair.beta, 0.0, 0.0, 0.0])
    scale = max(k * k + pair.a ** 2, 1.0)
    for _ in range(max_iter):
        F = resid(z)
        if np.max(np.abs(F)) <= tol * scale:
            break
        step = np.linalg.lstsq(jac(z), -F, rcond=None)[0]
        z = z + step
    else:
        raise CGOError("could not solve the discrete dispersion relation", residual=float(np.max(np.abs(F))))
    e = eta(z)
    z1 = -0.5 * xi + e
    z2 = -xi - z1
    return ZetaPair(xi, k, pair.a, w1, w2, z1, z2)


@dataclass(frozen=True)
class CGOCell:
    """Periodic cell for the remainder.

    A continuous cell uses the Fourier multiplier of ``-Δ - 2iζ·∇``.  A
    lattice cell shares the spacing and node positions of a forward grid and
    uses the symbol of the 7-point stencil, so that the sampled solution is an
    exact discrete solution on that grid.
    """

    center: tuple
    side: float
    n: int
    half_enlarged: float
    start: tuple = None
    spacing_h: float = 0.0
    grid_offset: int = -1

    @property
    def discrete(self) -> bool:
        return self.grid_offset >= 0

    @property
    def spacing(self) -> float:
        return self.side / self.n

    @cached_property
    def coords(self) -> list:
        start = self.start or tuple(c - 0.5 * self.side for c in self.center)
        return [s0 + self.spacing * np.arange(self.n) for s0 in start]

    @cached_property
    def enlarged_mask(self) -> np.ndarray:
        m = [np.abs(x - c) <= self.half_enlarged + 1e-12 for x, c in zip(self.coords, self.center)]
        return m[0][:, None, None] & m[1][None, :, None] & m[2][None, None, :]

    @property
    def circumradius(self) -> float:
        return float(np.sqrt(3) * self.half_enlarged)


def cgo_cell_for(grid: Grid, n: int = 64, dilation: float = 1.25) -> CGOCell:
    """Continuous periodic cell twice the side of Ω dilated by ``dilation``."""
    if dilation <= 1:
        raise ConfigError("dilation must exceed 1")
    half = 0.5 * dilation * grid.extent
    return CGOCell(tuple(float(c) for c in grid.center), 4 * half, int(n), half)


def lattice_cell_for(grid: Grid, dilation: float = 1.25) -> CGOCell:
    """Cell on the forward grid's node lattice covering twice the enlarged box."""
    if dilation <= 1:
        raise ConfigError("dilation must exceed 1")
    h = grid.spacing
    half = 0.5 * dilation * grid.extent
    n = int(np.ceil(4 * half / h - 1e-9))
    n += n % 2
    off = (n - (grid.n_axis - 1)) // 2
    start = tuple(float(grid.origin - off * h) for _ in range(3))
    return CGOCell(tuple(float(c) for c in grid.center), n * h, n, half, start, h, off)


def _primitive_direction(w, max_den=64):
    """Integer vector parallel to ``w`` if ``w`` is a rational direction, else None."""
    w = np.asarray(w, dtype=float)
    i = int(np.argmax(np.abs(w)))
    r = w / w[i]
    fr = [Fraction(float(v)).limit_denominator(max_den) for v in r]
    if max(abs(float(f) - v) for f, v in zip(fr, r)) > 1e-10:
        return None
    den = np.lcm.reduce([f.denominator for f in fr])
    p = np.array([int(f * den) for f in fr])
    g = np.gcd.reduce(np.abs(p[p != 0]))
    return p // g


def lattice_shift(omega2) -> np.ndarray:
    """Half-step shift (lattice units) keeping ``ω2·(j + s)`` away from zero."""
    p = _primitive_direction(omega2)
    if p is None:
        return 0.5 * np.asarray(omega2, dtype=float)
    i = int(np.flatnonzero(p % 2)[0])
    s = np.zeros(3)
    s[i] = 0.5
    return s


def _sample_potential(q: Potential, cell: CGOCell) -> np.ndarray:
    grid = q.grid
    x = cell.coords
    lo, hi = grid.origin, grid.origin + grid.extent
    inside = [(xi >= lo - 1e-12) & (xi <= hi + 1e-12) for xi in x]
    mask = inside[0][:, None, None] & inside[1][None, :, None] & inside[2][None, None, :]
    X, Y, Z = np.meshgrid(*x, indexing="ij")
    if q.func is not None:
        vals = np.asarray(q.func(X, Y, Z), dtype=complex)
        vals = np.broadcast_to(vals, X.shape).astype(complex)
    else:
        from scipy.interpolate import RegularGridInterpolator

        ax = grid.axis_coords
        f = RegularGridInterpolator((ax, ax, ax), q.values, bounds_error=False, fill_value=0.0)
        pts = np.stack([np.clip(X, lo, hi), np.clip(Y, lo, hi), np.clip(Z, lo, hi)], axis=-1)
        vals = f(pts).astype(complex)
    return np.where(mask, vals, 0.0)


@dataclass
class CGOSolution:
    zeta: np.ndarray
    cell: CGOCell
    shift: np.ndarray
    coeffs: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    residual_l2: float
    r_l2: float
    iterations: int
    min_symbol: float
    q_key: str = ""

    def _axis_matrices(self, grid: Grid, deriv_axis=None):
        cell = self.cell
        L, n = cell.side, cell.n
        j = np.fft.fftfreq(n, d=1.0 / n)
        mats = []
        for ax in range(3):
            x = grid.axis_coords
            c = cell.center[ax]
            x0 = cell.coords[ax][0]
            m = 2 * np.pi * (j + self.shift[ax]) / L
            sigma = 2 * np.pi * self.shift[ax] / L
            E = np.exp(1j * sigma * (x[:, None] - c) + 1j * (2 * np.pi / L) * j[None, :] * (x[:, None] - x0))
            if ax == deriv_axis:
                E = E * (1j * m[None, :])
            mats.append(E)
        return mats

    def _evaluate(self, grid: Grid, deriv_axis=None) -> np.ndarray:
        Ex, Ey, Ez = self._axis_matrices(grid, deriv_axis)
        F = self.coeffs
        T = np.tensordot(Ex, F, axes=(1, 0))
        T = np.tensordot(T, Ey, axes=(1, 1))
        T = np.tensordot(T, Ez, axes=(1, 1))
        return T / self.cell.n ** 3

    def _on_lattice(self, grid: Grid) -> bool:
        c = self.cell
        if not c.discrete or abs(grid.spacing - c.spacing) > 1e-12 * c.spacing:
            return False
        return abs(grid.origin - c.coords[0][c.grid_offset]) <= 1e-9 * c.spacing and \
            c.grid_offset + grid.n_axis <= c.n

    def sample_r(self, grid: Grid) -> np.ndarray:
        """r on a node grid: exact node values on the cell lattice, else trigonometric interpolation."""
        if self._on_lattice(grid):
            o, n = self.cell.grid_offset, grid.n_axis
            return self.r[o:o + n, o:o + n, o:o + n].copy()
        return self._evaluate(grid)

    def exponential(self, grid: Grid) -> np.ndarray:
        x = grid.axis_coords
        c = self.cell.center
        e = [np.exp(1j * self.zeta[ax] * (x - c[ax])) for ax in range(3)]
        return e[0][:, None, None] * e[1][None, :, None] * e[2][None, None, :]

    def sample(self, grid: Grid) -> np.ndarray:
        return self.exponential(grid) * (1.0 + self.sample_r(grid))

    def gradient(self, grid: Grid) -> np.ndarray:
        e = self.exponential(grid)
        r = self.sample_r(grid)
        return np.stack([e * (1j * self.zeta[ax] * (1 + r) + self._evaluate(grid, ax)) for ax in range(3)])

    def growth_bound(self) -> float:
        return float(np.exp(np.linalg.norm(self.zeta.imag) * self.cell.circumradius))


def cgo_remainder(q: Potential, zeta, cell: CGOCell, tol: float = 1e-10, max_iter: int = 500,
                  symbol_floor: float = 1e-12) -> CGOSolution:
    zeta = np.asarray(zeta, dtype=complex)
    a = float(np.linalg.norm(zeta.imag))
    if a <= 0:
        raise ConfigError("zeta must have a nonzero imaginary part")
    omega2 = zeta.imag / a
    s = lattice_shift(omega2)
    L, n = cell.side, cell.n
    j = np.fft.fftfreq(n, d=1.0 / n)
    m = [2 * np.pi * (j + s[ax]) / L for ax in range(3)]
    m2 = m[0][:, None, None] ** 2 + m[1][None, :, None] ** 2 + m[2][None, None, :] ** 2
    zm = (zeta[0] * m[0][:, None, None] + zeta[1] * m[1][None, :, None] + zeta[2] * m[2][None, None, :])
    if cell.discrete:
        h = cell.spacing
        c0 = np.cos(zeta * h)
        symbol = (2.0 / h ** 2) * sum(
            (c0[ax] - np.cos((zeta[ax] + m[ax]) * h)).reshape([-1 if i == ax else 1 for i in range(3)])
            for ax in range(3))
    else:
        symbol = m2 + 2 * zm
    min_sym = float(np.min(np.abs(symbol)))
    if min_sym < symbol_floor:
        raise CGOError("Faddeev symbol vanishes on the shifted lattice", min_symbol=min_sym)
    x = cell.coords
    ph = [np.exp(-2j * np.pi * s[ax] / L * (x[ax] - cell.center[ax])) for ax in range(3)]
    phase = ph[0][:, None, None] * ph[1][None, :, None] * ph[2][None, None, :]

    if cell.discrete:
        if abs(q.grid.spacing - cell.spacing) > 1e-12 * cell.spacing:
            raise ConfigError("lattice cell spacing differs from the potential's grid")
        qc = np.zeros((n,) * 3, dtype=complex)
        o, ng = cell.grid_offset, q.grid.n_axis
        qc[o:o + ng, o:o + ng, o:o + ng] = q.values
    else:
        qc = _sample_potential(q, cell)

    def forward(f):
        return np.fft.fftn(f * phase)

    def inverse(F):
        return np.fft.ifftn(F) / phase

    r = np.zeros(qc.shape, dtype=complex)
    R = np.zeros_like(r)
    prev = np.inf
    grow = 0
    it = 0
    for it in range(1, max_iter + 1):
        R = -forward(qc * (1.0 + r)) / symbol
        r_new = inverse(R)
        upd = float(np.linalg.norm(r_new - r))
        size = float(np.linalg.norm(r_new))
        r = r_new
        if size == 0.0 or upd <= tol * size:
            break
        grow = grow + 1 if upd > prev else 0
        if grow >= 3 or not np.isfinite(upd):
            raise CGOError("fixed-point iteration is not contracting; increase a",
                           iterations=it, update=upd)
        prev = upd
    else:
        raise CGOError("fixed-point iteration did not reach tolerance", iterations=it, update=upd)
    res = inverse(symbol * R) + qc * (1.0 + r)
    mask = cell.enlarged_mask
    dv = cell.spacing ** 3
    qn = np.sqrt(np.sum(np.abs(qc[mask]) ** 2) * dv)
    rn = float(np.sqrt(np.sum(np.abs(res[mask]) ** 2) * dv))
    residual = rn / qn if qn > 0 else rn
    r_l2 = float(np.sqrt(np.sum(np.abs(r[mask]) ** 2) * dv))
    return CGOSolution(zeta, cell, s, R, r, float(residual), r_l2, it, min_sym, q.key())


def cgo_field(sol: CGOSolution, grid: Grid) -> np.ndarray:
    return sol.sample(grid)
