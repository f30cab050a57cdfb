"""Discrete Sobolev norms: interior H^s, boundary H^{±1/2} and periodic H^{-1}.

Boundary norms are spectral.  With ``L`` the unit-weight graph Laplacian of
the surface node graph and ``W`` the lumped surface weights, the generalised
eigenpairs ``L φ = λ W φ`` give

    G_s = W^{1/2} (I + L~)^s W^{1/2},    L~ = W^{-1/2} L W^{-1/2},

and ``||f||_s^2 = f^T G_s f``.  On a patch P the H~^{1/2}(P) norm (zero
extension) uses the block ``G_{1/2}[P, P]`` and H^{-1/2}(P) is its dual,
``W_P G_{1/2}[P, P]^{-1} W_P``.
"""
from __future__ import annotations

from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .geometry import BoundaryPatch, Grid


def grid_sobolev_norm(u, grid: Grid, order: int, mask=None) -> float:
    """H^order norm (order 0, 1 or 2) from central differences and trapezoid weights."""
    if order not in (0, 1, 2):
        raise ConfigError(f"order must be 0, 1 or 2, got {order}")
    u = np.asarray(u).reshape(grid.shape)
    w = grid.volume_weights if mask is None else grid.volume_weights * mask
    h = grid.spacing
    total = np.sum(w * np.abs(u) ** 2)
    if order >= 1:
        grads = np.gradient(u, h, edge_order=2)
        total += sum(np.sum(w * np.abs(g) ** 2) for g in grads)
        if order == 2:
            for g in grads:
                total += sum(np.sum(w * np.abs(gg) ** 2) for gg in np.gradient(g, h, edge_order=2))
    return float(np.sqrt(total))


class BoundarySpectrum:
    """Eigen-decomposition of the weighted surface graph Laplacian of a grid."""

    def __init__(self, grid: Grid, eig_count: int | None = None):
        self.grid = grid
        nb = grid.boundary_ids.size
        e = grid.surface_edges
        L = sp.coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(nb, nb))
        L = L + L.T
        L = sp.diags(np.asarray(L.sum(axis=1)).ravel()) - L
        self.L = L.tocsr()
        self.w = grid.surface_weights
        self.sqrt_w = np.sqrt(self.w)
        Lt = sp.diags(1 / self.sqrt_w) @ self.L @ sp.diags(1 / self.sqrt_w)
        if eig_count is None or eig_count >= nb - 1:
            self.eigvals, self.eigvecs = np.linalg.eigh(Lt.toarray())
            self.truncated = False
        else:
            v0 = np.random.default_rng(7).standard_normal(nb)
            vals, vecs = spla.eigsh(Lt.tocsc(), k=eig_count, sigma=-1e-3, v0=v0)
            order = np.argsort(vals)
            self.eigvals, self.eigvecs = vals[order], vecs[:, order]
            self.truncated = True
        self.eigvals = np.maximum(self.eigvals, 0.0)

    def gram(self, s: float, positions=None) -> np.ndarray:
        """``G_s`` restricted to the given boundary positions (all if None)."""
        V = self.eigvecs if positions is None else self.eigvecs[positions]
        sw = self.sqrt_w if positions is None else self.sqrt_w[positions]
        d = (1.0 + self.eigvals) ** s
        if self.truncated:
            dc = d[-1]
            G = (V * (d - dc)) @ V.T + dc * np.eye(V.shape[0])
        else:
            G = (V * d) @ V.T
        G = sw[:, None] * G * sw[None, :]
        return 0.5 * (G + G.T)

    def norm(self, f, s: float) -> float:
        c = self.eigvecs.T @ (self.sqrt_w * np.asarray(f))
        return float(np.sqrt(np.sum((1.0 + self.eigvals) ** s * np.abs(c) ** 2)))


@lru_cache(maxsize=2)
def boundary_spectrum(grid: Grid, eig_count: int | None = None) -> BoundarySpectrum:
    return BoundarySpectrum(grid, eig_count)


class BoundaryNormOperator:
    """Patch norm of order +1/2 (zero extension) or -1/2 (dual) as a whitening map.

    ``||f|| = ||Q f||``.  On the full surface ``Q = D^{s/2} V^T W^{1/2}`` comes
    straight from the eigenpairs; on a proper patch ``Q`` is the upper Cholesky
    factor of the patch Gram matrix.
    """

    def __init__(self, patch: BoundaryPatch, order: float, eig_count: int | None = None):
        if order not in (0.5, -0.5):
            raise ConfigError(f"boundary norm order must be ±1/2, got {order}")
        self.patch, self.order, self.eig_count = patch, order, eig_count
        self.spectrum = boundary_spectrum(patch.grid, eig_count)
        self.spectral = patch.is_full and not self.spectrum.truncated

    @cached_property
    def gram(self) -> np.ndarray:
        spec = self.spectrum
        pos = self.patch.positions
        if self.spectral:
            return spec.gram(self.order, pos)
        g_half = spec.gram(0.5, pos)
        if self.order > 0:
            return g_half
        wp = self.patch.grid.surface_weights[pos]
        c = sla.cho_factor(g_half, lower=False)
        g = wp[:, None] * sla.cho_solve(c, np.diag(wp))
        return 0.5 * (g + g.T)

    @cached_property
    def chol(self) -> np.ndarray:
        return sla.cholesky(self.gram, lower=False)

    @cached_property
    def _eig(self):
        spec = self.spectrum
        d = (1.0 + spec.eigvals) ** (0.5 * self.order)
        return d, spec.eigvecs, spec.sqrt_w

    def whiten(self, x):
        if self.spectral:
            d, V, sw = self._eig
            y = V.T @ (sw[:, None] * x if x.ndim == 2 else sw * x)
            return d[:, None] * y if y.ndim == 2 else d * y
        return self.chol @ x

    def unwhiten(self, y):
        if self.spectral:
            d, V, sw = self._eig
            x = V @ (y / d[:, None] if y.ndim == 2 else y / d)
            return x / sw[:, None] if x.ndim == 2 else x / sw
        return sla.solve_triangular(self.chol, y, lower=False)

    def whiten_T(self, y):
        if self.spectral:
            d, V, sw = self._eig
            x = V @ (d[:, None] * y if y.ndim == 2 else d * y)
            return sw[:, None] * x if x.ndim == 2 else sw * x
        return self.chol.T @ y

    def unwhiten_T(self, x):
        if self.spectral:
            d, V, sw = self._eig
            y = V.T @ (x / sw[:, None] if x.ndim == 2 else x / sw)
            return y / d[:, None] if y.ndim == 2 else y / d
        return sla.solve_triangular(self.chol, x, trans="T", lower=False)

    def norm(self, trace) -> float:
        """Norm of a full-surface or patch-length trace; order +1/2 needs support in the patch."""
        trace = np.asarray(trace)
        nb = self.patch.grid.boundary_ids.size
        if trace.shape[0] == nb and not self.patch.is_full:
            if self.order > 0:
                off = ~self.patch.boundary_mask
                scale = max(np.max(np.abs(trace)), 1e-300)
                if np.any(np.abs(trace[off]) > 1e-12 * scale):
                    raise ConfigError("trace is not supported in the patch")
            trace = trace[self.patch.positions]
        elif trace.shape[0] != self.patch.size:
            raise ConfigError(f"trace length {trace.shape[0]} matches neither the surface nor the patch")
        return float(np.linalg.norm(self.whiten(trace)))


def boundary_norm(trace, op: BoundaryNormOperator) -> float:
    return op.norm(trace)


class PeriodBox:
    """Periodic box of side ``pad * extent`` sharing the grid spacing.

    Fourier coefficients use the phase origin at the grid centre ``c``:
    ``ĝ(ξ) = h^3 Σ_j g(x_j) exp(-i ξ·(x_j - c))`` on the lattice ``ξ ∈ (2π/L) Z^3``.
    ``pad = 1`` is the unpadded case: the grid itself must be periodic and its
    last node plane is dropped.
    """

    def __init__(self, grid: Grid, pad: int = 2):
        pad = int(pad)
        if pad < 1:
            raise ConfigError("pad factor must be >= 1")
        self.grid, self.pad = grid, pad
        self.h = grid.spacing
        m = grid.n_axis - 1
        self.N = pad * m
        self.L = self.N * self.h
        self.offset = 0 if pad == 1 else (self.N - grid.n_axis) // 2
        self.x0 = grid.origin - self.offset * self.h
        self.c = grid.center
        j = np.fft.fftfreq(self.N, d=1.0 / self.N)
        self.freq1d = 2 * np.pi * j / self.L
        self.phase1d = np.exp(-1j * self.freq1d * (self.x0 - self.c[0]))

    @cached_property
    def xi2(self) -> np.ndarray:
        f2 = self.freq1d ** 2
        return f2[:, None, None] + f2[None, :, None] + f2[None, None, :]

    def lattice_index(self, xi) -> tuple:
        """FFT index of a lattice frequency (raises if ``xi`` is off the lattice)."""
        m = np.asarray(xi, dtype=float) * self.L / (2 * np.pi)
        mi = np.rint(m)
        if np.max(np.abs(m - mi)) > 1e-8:
            raise ConfigError(f"frequency {xi} is not on the period lattice")
        return tuple(int(v) % self.N for v in mi)

    def embed(self, g) -> np.ndarray:
        g = np.asarray(g).reshape(self.grid.shape)
        if self.pad == 1:
            scale = max(np.max(np.abs(g)), 1e-300)
            for ax in range(3):
                a = np.take(g, 0, axis=ax)
                b = np.take(g, -1, axis=ax)
                if np.max(np.abs(a - b)) > 1e-9 * scale:
                    raise ConfigError("unpadded H^-1 norm needs a periodic field")
            return g[:-1, :-1, :-1].astype(complex)
        out = np.zeros((self.N,) * 3, dtype=complex)
        o, n = self.offset, self.grid.n_axis
        out[o:o + n, o:o + n, o:o + n] = g
        return out

    def restrict(self, G) -> np.ndarray:
        if self.pad == 1:
            G = np.pad(G, ((0, 1),) * 3, mode="wrap")
            return G
        o, n = self.offset, self.grid.n_axis
        return G[o:o + n, o:o + n, o:o + n]

    def phase(self) -> np.ndarray:
        p = self.phase1d
        return p[:, None, None] * p[None, :, None] * p[None, None, :]

    def coefficients(self, g) -> np.ndarray:
        return self.h ** 3 * np.fft.fftn(self.embed(g)) * self.phase()

    def synthesize(self, coeffs) -> np.ndarray:
        """Field on the period box from lattice coefficients."""
        return (self.N ** 3 / self.L ** 3) * np.fft.ifftn(coeffs * np.conj(self.phase()))

    def h_minus1_from_coefficients(self, coeffs) -> float:
        return float(np.sqrt(np.sum(np.abs(coeffs) ** 2 / (1.0 + self.xi2)) / self.L ** 3))

    def h_minus1(self, g) -> float:
        return self.h_minus1_from_coefficients(self.coefficients(g))


def h_minus1_norm(g, grid: Grid, pad_factor: int = 2) -> float:
    """H^{-1} norm of a grid field extended by zero to a periodic box."""
    return PeriodBox(grid, pad_factor).h_minus1(g)
