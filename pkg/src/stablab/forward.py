"""Finite-difference Schrödinger/Helmholtz forward solver on box grids.

The operator ``-Δ - k^2 + q`` is assembled in edge form,

    (K u)_i = sum_j c_ij (u_i - u_j) + m_i (q_i - k^2) u_i,

with dual-cell edge weights ``c_ij`` and trapezoid masses ``m_i``.  On
interior nodes ``K u / m`` is the usual 7-point stencil.  On boundary nodes
``(K u)_b / w_b`` (``w_b`` the lumped surface weight) is a second-order
normal-derivative flux, and it makes the discrete Green identity exact:

    sum_b v_b (K u)_b = sum_b u_b (K v)_b   whenever K u = K v = 0 inside.
"""
from __future__ import annotations

import hashlib
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, ResonanceError, SolverError
from .geometry import FACES, Grid, NeighborhoodChain

log = logging.getLogger(__name__)

MAX_KH = 0.6
DIRECT_LIMIT = 40 ** 3


@dataclass(frozen=True)
class Potential:
    grid: Grid
    values: np.ndarray
    linf_bound: float
    vanishes_in_O: bool = False
    func: Optional[Callable] = field(default=None, compare=False, repr=False)
    tag: str = ""

    @classmethod
    def from_function(cls, grid: Grid, func, *, chain: NeighborhoodChain | None = None,
                      linf_bound: float | None = None, tag: str = "") -> "Potential":
        X, Y, Z = grid.mesh()
        vals = np.asarray(func(X, Y, Z), dtype=complex)
        if vals.shape != grid.shape:
            vals = np.broadcast_to(vals, grid.shape).astype(complex)
        return cls.from_values(grid, vals, chain=chain, linf_bound=linf_bound, func=func, tag=tag)

    @classmethod
    def from_values(cls, grid: Grid, values, *, chain=None, linf_bound=None, func=None, tag=""):
        vals = np.array(values, dtype=complex).reshape(grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("potential has non-finite values")
        sup = float(np.max(np.abs(vals))) if vals.size else 0.0
        if linf_bound is None:
            linf_bound = sup
        elif sup > linf_bound * (1 + 1e-12):
            raise ConfigError(f"potential exceeds its bound: max|q| = {sup:g} > {linf_bound:g}")
        vanish = False
        if chain is not None:
            vanish = bool(np.all(vals[chain.layer(0)] == 0))
        vals.setflags(write=False)
        return cls(grid, vals, float(linf_bound), vanish, func, tag)

    @classmethod
    def zeros(cls, grid: Grid, tag="zero"):
        return cls.from_values(grid, np.zeros(grid.shape), func=lambda x, y, z: 0.0 * x, tag=tag)

    @classmethod
    def constant(cls, grid: Grid, c: float, tag="const"):
        return cls.from_values(grid, np.full(grid.shape, c), func=lambda x, y, z: c + 0.0 * x, tag=tag)

    @property
    def is_real(self) -> bool:
        return not np.any(self.values.imag)

    def key(self) -> str:
        h = hashlib.sha256(self.grid.key().encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()[:16]

    def __sub__(self, other: "Potential") -> np.ndarray:
        return self.values - other.values


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """Edge-form Laplacian with dual-face weights (area/length)."""
    n, h = grid.n_axis, grid.spacing
    ids = np.arange(grid.size).reshape(grid.shape)
    fac = np.ones(n)
    fac[[0, -1]] = 0.5
    rows, cols, vals = [], [], []
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, n - 1)
        hi[axis] = slice(1, n)
        f = [fac, fac, fac]
        f[axis] = np.ones(n - 1)
        c = h * f[0][:, None, None] * f[1][None, :, None] * f[2][None, None, :]
        a = ids[tuple(lo)].ravel()
        b = ids[tuple(hi)].ravel()
        c = np.broadcast_to(c, ids[tuple(lo)].shape).ravel()
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [c, c, -c, -c]
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    return K.tocsr()


_STIFFNESS: dict = {}


def _stiffness(grid: Grid):
    key = grid.key()
    if key not in _STIFFNESS:
        _STIFFNESS.clear()
        _STIFFNESS[key] = stiffness_matrix(grid)
    return _STIFFNESS[key]


@dataclass
class GapReport:
    gap: float
    threshold: float
    passed: bool
    nearest: np.ndarray
    note: str = ""


class HelmholtzSolver:
    """Factorised ``-Δ_h - k^2 + q`` with Dirichlet data on the box surface."""

    def __init__(self, q: Potential, k: float, *, max_kh: float = MAX_KH, override: bool = False,
                 method: str = "auto", gap_constant: float = 0.01, check_gap: bool = True):
        grid = q.grid
        self.grid, self.q, self.k = grid, q, float(k)
        if not np.isfinite(self.k) or self.k <= 0:
            raise ConfigError(f"wavenumber must be positive, got {k}")
        if self.k * grid.spacing > max_kh and not override:
            raise ConfigError(
                f"k*h = {self.k * grid.spacing:.3f} exceeds the pollution limit {max_kh}; "
                "refine the grid or pass an override")
        self.override = override
        self.gap_constant = gap_constant
        self.check_gap = check_gap and not override
        m = grid.volume_weights.ravel()
        qv = q.values.ravel()
        diag = m * (qv - self.k ** 2)
        if q.is_real:
            diag = diag.real
        self.K = (_stiffness(grid) + sp.diags(diag)).tocsr()
        self.I = grid.interior_ids
        self.B = grid.boundary_ids
        self.A_II = self.K[self.I][:, self.I].tocsc()
        self.A_IB = self.K[self.I][:, self.B].tocsr()
        self.K_BI = self.K[self.B][:, self.I].tocsr()
        self.K_BB = self.K[self.B][:, self.B].tocsr()
        self.w = grid.surface_weights
        self.m = m
        if method == "auto":
            method = "direct" if self.I.size <= DIRECT_LIMIT else "krylov"
        if method not in ("direct", "krylov"):
            raise ConfigError(f"unknown solver method {method!r}")
        self.method = method
        self._lu = None
        self._gap = None
        self.is_real = bool(np.isrealobj(self.K.data))

    # -- linear algebra -------------------------------------------------
    def _factor(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.A_II, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"sparse factorisation failed: {exc}", stage="factorise") from exc
        return self._lu

    def _krylov(self, b):
        ilu = spla.spilu(self.A_II, drop_tol=1e-4, fill_factor=20)
        M = spla.LinearOperator(self.A_II.shape, ilu.solve, dtype=self.A_II.dtype)
        out = np.empty_like(b)
        for j in range(b.shape[1]):
            x, info = spla.gmres(self.A_II, b[:, j], M=M, rtol=1e-10, restart=200, maxiter=50)
            if info != 0:
                res = np.linalg.norm(self.A_II @ x - b[:, j]) / max(np.linalg.norm(b[:, j]), 1e-300)
                raise SolverError("Krylov solver did not converge", stage="krylov",
                                  iterations=info, residual=float(res))
            out[:, j] = x
        return out

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A_II x = rhs`` for one or many right-hand sides."""
        self.ensure_gap()
        rhs = np.asarray(rhs)
        vec = rhs.ndim == 1
        b = rhs[:, None] if vec else rhs
        if self.method == "krylov":
            x = self._krylov(b.astype(np.result_type(b, self.A_II.dtype)))
        else:
            lu = self._factor()
            if self.is_real and np.iscomplexobj(b):
                x = lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
            else:
                bb = b if not self.is_real else b.astype(float)
                x = lu.solve(np.ascontiguousarray(bb.astype(np.result_type(bb, self.A_II.dtype))))
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution", stage="solve")
        return x[:, 0] if vec else x

    # -- public solves --------------------------------------------------
    def solve_dirichlet(self, f) -> np.ndarray:
        """Solution on the full grid (flat) with boundary values ``f``."""
        f = np.asarray(f)
        if f.shape[0] != self.B.size:
            raise ConfigError(f"boundary data has {f.shape[0]} entries, grid has {self.B.size} boundary nodes")
        uI = self.solve_interior(-(self.A_IB @ f))
        dtype = np.result_type(uI, f)
        u = np.zeros((self.grid.size,) + f.shape[1:], dtype=dtype)
        u[self.I] = uI
        u[self.B] = f
        return u

    def solve_source(self, src) -> np.ndarray:
        """Solve ``(-Δ_h - k^2 + q) u = src`` inside with ``u = 0`` on the surface."""
        src = np.asarray(src).reshape(self.grid.size)
        uI = self.solve_interior(self.m[self.I] * src[self.I])
        u = np.zeros(self.grid.size, dtype=uI.dtype)
        u[self.I] = uI
        return u

    def flux(self, u) -> np.ndarray:
        """Normal-derivative flux ``(K u)_b / w_b`` on boundary nodes."""
        u = np.asarray(u)
        if u.ndim >= 3 and u.shape[:3] == self.grid.shape:
            u = u.reshape((self.grid.size,) + u.shape[3:])
        g = self.K_BI @ u[self.I] + self.K_BB @ u[self.B]
        return g / (self.w[:, None] if g.ndim == 2 else self.w)

    def apply(self, u) -> np.ndarray:
        """Pointwise residual ``(-Δ_h - k^2 + q) u`` on interior nodes (0 on the surface)."""
        u = np.asarray(u).reshape(self.grid.size)
        r = np.zeros(self.grid.size, dtype=np.result_type(u, self.K.dtype))
        r[self.I] = (self.K[self.I] @ u) / self.m[self.I]
        return r

    # -- resonance check ------------------------------------------------
    def spectral_gap(self, nev: int = 8) -> GapReport:
        if self._gap is None:
            self._gap = self._compute_gap(nev)
        return self._gap

    def _compute_gap(self, nev):
        h3 = self.grid.spacing ** 3
        N = self.I.size
        nev = min(nev, N - 2)
        k2 = self.k ** 2
        thr = self.gap_constant * self.k ** (2 - 3)
        A = (self.A_II / h3 + k2 * sp.identity(N, format="csc")).tocsc()
        lu = self._factor() if self.method == "direct" else spla.splu(self.A_II)
        if self.is_real:
            op = spla.LinearOperator((N, N), matvec=lambda x: h3 * lu.solve(np.asarray(x, dtype=float)),
                                     dtype=float)
        else:
            op = spla.LinearOperator((N, N), matvec=lambda x: h3 * lu.solve(np.asarray(x, dtype=complex)),
                                     dtype=complex)
        v0 = np.random.default_rng(20240601).standard_normal(N)
        try:
            if self.is_real:
                vals = spla.eigsh(A, k=nev, sigma=k2, OPinv=op, v0=v0, return_eigenvectors=False,
                                  tol=1e-10, maxiter=5000)
            else:
                vals = spla.eigs(A, k=nev, sigma=k2, OPinv=op, v0=v0, return_eigenvectors=False,
                                 tol=1e-10, maxiter=5000)
        except spla.ArpackNoConvergence as exc:
            return GapReport(0.0, thr, False, np.array(exc.eigenvalues), note="eigensolver did not converge")
        vals = np.sort_complex(np.asarray(vals)) if not self.is_real else np.sort(vals)
        gap = float(np.min(np.abs(vals - k2)))
        return GapReport(gap, thr, gap > thr, vals)

    def ensure_gap(self):
        if not self.check_gap or self._gap_checked:
            return
        self._gap_checked = True
        rep = self.spectral_gap()
        if not rep.passed:
            raise ResonanceError(
                f"k^2 = {self.k ** 2:.6g} is within {rep.gap:.3g} of the Dirichlet spectrum "
                f"(threshold {rep.threshold:.3g}){'; ' + rep.note if rep.note else ''}",
                gap=rep.gap, threshold=rep.threshold)

    _gap_checked = False


_SOLVERS: "OrderedDict" = OrderedDict()
SOLVER_CACHE_SIZE = 2


def get_solver(q: Potential, k: float, **opts) -> HelmholtzSolver:
    """Cached solver lookup keyed by grid, potential contents, wavenumber and options."""
    key = (q.key(), float(k), tuple(sorted(opts.items())))
    s = _SOLVERS.get(key)
    if s is None:
        s = HelmholtzSolver(q, k, **opts)
        _SOLVERS[key] = s
        while len(_SOLVERS) > SOLVER_CACHE_SIZE:
            _SOLVERS.popitem(last=False)
    else:
        _SOLVERS.move_to_end(key)
    return s


def clear_solver_cache():
    _SOLVERS.clear()


def solve_dirichlet(q: Potential, k: float, f, **opts) -> np.ndarray:
    """Full-grid solution (shape ``grid.shape``) with boundary values ``f``."""
    s = get_solver(q, k, **opts)
    return s.solve_dirichlet(f).reshape(q.grid.shape)


def solve_source(q: Potential, k: float, src, **opts) -> np.ndarray:
    s = get_solver(q, k, **opts)
    return s.solve_source(src).reshape(q.grid.shape)


def spectral_gap(q: Potential, k: float, c: float = 0.01, nev: int = 8, override: bool = True) -> GapReport:
    """Distance from ``k^2`` to the nearest Dirichlet eigenvalues of ``-Δ_h + q``."""
    s = HelmholtzSolver(q, k, gap_constant=c, override=override, check_gap=False)
    return s.spectral_gap(nev)


def normal_derivative(grid: Grid, u, method: str = "one_sided") -> np.ndarray:
    """Outward normal derivative on boundary nodes from a full-grid field.

    ``one_sided`` uses the second-order 3-point difference on each face;
    nodes on several faces average the face values with the face weights.
    The flux form lives on ``HelmholtzSolver.flux`` since it needs ``q`` and ``k``.
    """
    if method != "one_sided":
        raise ConfigError(f"unknown normal-derivative method {method!r}")
    u = np.asarray(u).reshape(grid.shape)
    h = grid.spacing
    n = grid.n_axis
    fac = np.ones(n)
    fac[[0, -1]] = 0.5
    face_w = np.outer(fac, fac)
    acc = np.zeros(grid.shape, dtype=u.dtype)
    wsum = np.zeros(grid.shape)
    for face, (axis, end) in FACES.items():
        v = np.moveaxis(u, axis, 0)
        if end == 0:
            d = (3 * v[0] - 4 * v[1] + v[2]) / (2 * h)
            idx = 0
        else:
            d = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
            idx = n - 1
        a = np.moveaxis(acc, axis, 0)
        ws = np.moveaxis(wsum, axis, 0)
        a[idx] += face_w * d
        ws[idx] += face_w
    out = acc.ravel()[grid.boundary_ids] / wsum.ravel()[grid.boundary_ids]
    return out


def regularity_ratio(k: float, u, grid: Grid, l2_enlarged: float, gradient=None) -> float:
    """``||u||_{H^1(Ω)} / ((1 + k) ||u||_{L^2(Ω~)})``.

    ``u`` is sampled on ``grid`` (Ω); ``gradient`` (optional, shape ``(3,) + grid.shape``)
    replaces finite differences when an exact gradient is available.
    """
    from .norms import grid_sobolev_norm

    if l2_enlarged <= 0:
        raise ConfigError("enlarged-box norm must be positive")
    u = np.asarray(u).reshape(grid.shape)
    if gradient is None:
        h1 = grid_sobolev_norm(u, grid, 1)
    else:
        wv = grid.volume_weights
        h1 = np.sqrt(np.sum(wv * (np.abs(u) ** 2 + np.sum(np.abs(gradient) ** 2, axis=0))))
    return float(h1 / ((1.0 + k) * l2_enlarged))
