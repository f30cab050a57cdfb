"""Partial Dirichlet-to-Neumann maps and their operator-norm distance."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError
from .forward import Potential, get_solver
from .geometry import BoundaryPatch
from .io import Cache, content_key, read_field, write_field
from .norms import BoundaryNormOperator

log = logging.getLogger(__name__)


@dataclass
class DtNMatrix:
    """Dense partial map: column j is the flux on Γ_N for the hat datum at Γ_D node j."""

    entries: np.ndarray
    k: float
    gd: BoundaryPatch
    gn: BoundaryPatch
    q_tag: str = ""
    q_key: str = ""
    meta: dict = field(default_factory=dict)

    def apply(self, f) -> np.ndarray:
        """Apply to data on Γ_D (patch-length vector)."""
        return self.entries @ f

    def save(self, path):
        write_field(path, self.entries, "dtn", self.gd.grid.n_axis, dtype="complex128",
                    k=self.k, q_tag=self.q_tag, q_key=self.q_key,
                    gd=self.gd.node_ids.tolist(), gn=self.gn.node_ids.tolist())

    @classmethod
    def load(cls, path, grid):
        from .geometry import build_patch

        vals, hdr = read_field(path)
        gd = build_patch(grid, {"nodes": hdr["gd"]})
        gn = build_patch(grid, {"nodes": hdr["gn"]})
        if np.all(vals.imag == 0):
            vals = vals.real
        return cls(vals, hdr["k"], gd, gn, hdr["q_tag"], hdr["q_key"])


def dtn_columns(q: Potential, k: float, gd: BoundaryPatch, gn: BoundaryPatch, chunk: int = 256,
                solver_opts=None) -> np.ndarray:
    s = get_solver(q, k, **(solver_opts or {}))
    nb = q.grid.boundary_ids.size
    dpos, npos = gd.positions, gn.positions
    out = np.empty((npos.size, dpos.size), dtype=float if s.is_real else complex)
    for start in range(0, dpos.size, chunk):
        cols = dpos[start:start + chunk]
        F = np.zeros((nb, cols.size))
        F[cols, np.arange(cols.size)] = 1.0
        uI = s.solve_interior(-(s.A_IB @ F))
        flux = (s.K_BI[npos] @ uI + s.K_BB[npos] @ F) / s.w[npos, None]
        out[:, start:start + cols.size] = flux
    return out


def assemble_partial_dtn(q: Potential, k: float, gd: BoundaryPatch, gn: BoundaryPatch, *,
                         chunk: int = 256, solver_opts=None, cache: Cache | None = None) -> DtNMatrix:
    if gd.grid != q.grid or gn.grid != q.grid:
        raise ConfigError("patches and potential live on different grids")
    key = content_key("dtn", q.key(), float(k), gd.key(), gn.key(), sorted((solver_opts or {}).items()))
    hit = cache.load("dtn", key) if cache is not None else None
    if hit is not None:
        vals = hit[0]
        if q.is_real:
            vals = vals.real.copy()
        log.info("dtn cache hit %s", key)
        return DtNMatrix(vals, float(k), gd, gn, q.tag, q.key(), {"cache": "hit"})
    vals = dtn_columns(q, k, gd, gn, chunk, solver_opts)
    if cache is not None:
        cache.store("dtn", key, vals, n_axis=q.grid.n_axis)
    return DtNMatrix(vals, float(k), gd, gn, q.tag, q.key(), {"cache": "miss"})


def _largest_singular_value(T: np.ndarray) -> float:
    if min(T.shape) <= 400:
        return float(np.linalg.norm(T, 2))
    v0 = np.ones(T.shape[1]) / np.sqrt(T.shape[1])
    v0 = v0 + 0.01 * np.cos(np.arange(T.shape[1]))
    s = spla.svds(T, k=1, v0=v0, tol=1e-10, return_singular_vectors=False)
    return float(s[0])


def whitened_difference(A: DtNMatrix, B: DtNMatrix, eig_count=None) -> np.ndarray:
    """``Q_N (A - B) Q_D^{-1}`` where ``||.|| = ||Q .||`` are the patch norms."""
    check_compatible(A, B)
    X = A.entries - B.entries
    qd = BoundaryNormOperator(A.gd, 0.5, eig_count)
    qn = BoundaryNormOperator(A.gn, -0.5, eig_count)
    Y = qn.whiten(X)
    # Y Q_D^{-1} = (Q_D^{-T} Y^T)^T
    return qd.unwhiten_T(Y.T).T


def check_compatible(A, B):
    if A.k != B.k:
        raise ConfigError(f"DtN maps at different wavenumbers ({A.k} vs {B.k})")
    if not (A.gd.same_nodes(B.gd) and A.gn.same_nodes(B.gn)):
        raise ConfigError("DtN maps use different boundary patches")


def dtn_distance(A: DtNMatrix, B: DtNMatrix, eig_count=None) -> float:
    """Operator norm of ``A - B`` from H~^{1/2}(Γ_D) to H^{-1/2}(Γ_N)."""
    T = whitened_difference(A, B, eig_count)
    if not np.any(T):
        return 0.0
    return _largest_singular_value(T)


class DtNOperator:
    """Matrix-free partial DtN map applied through the cached forward solver."""

    def __init__(self, q: Potential, k: float, gd: BoundaryPatch, gn: BoundaryPatch, solver_opts=None):
        if gd.grid != q.grid or gn.grid != q.grid:
            raise ConfigError("patches and potential live on different grids")
        self.q, self.k, self.gd, self.gn = q, float(k), gd, gn
        self.solver_opts = dict(solver_opts or {})

    @property
    def solver(self):
        return get_solver(self.q, self.k, **self.solver_opts)

    def full_flux(self, f_boundary):
        s = self.solver
        return s.flux(s.solve_dirichlet(f_boundary))

    def apply(self, f):
        """Flux on Γ_N for data ``f`` on Γ_D (patch-length, 1D or 2D)."""
        nb = self.q.grid.boundary_ids.size
        F = np.zeros((nb,) + f.shape[1:], dtype=f.dtype)
        F[self.gd.positions] = f
        return self.full_flux(F)[self.gn.positions]

    def apply_T(self, g):
        """Transpose map, using the symmetry of ``W Λ`` on the full surface."""
        w = self.q.grid.surface_weights
        nb = w.size
        npos, dpos = self.gn.positions, self.gd.positions
        F = np.zeros((nb,) + g.shape[1:], dtype=g.dtype)
        F[npos] = g / (w[npos, None] if g.ndim == 2 else w[npos])
        out = self.full_flux(F)[dpos]
        return out * (w[dpos, None] if g.ndim == 2 else w[dpos])


class DtNDifference:
    """``Λ_1 - Λ_2`` from two operators (or dense matrices) on the same patches."""

    def __init__(self, first, second):
        check_compatible(first, second)
        self.first, self.second = first, second
        self.gd, self.gn, self.k = first.gd, first.gn, first.k

    def apply(self, f):
        return self.first.apply(f) - self.second.apply(f)

    def apply_T(self, g):
        if isinstance(self.first, DtNMatrix):
            return self.first.entries.T @ g - self.second.entries.T @ g
        return self.first.apply_T(g) - self.second.apply_T(g)


def dtn_distance_operator(diff: DtNDifference, eig_count=None, tol: float = 1e-10) -> float:
    """Matrix-free δ: largest singular value of ``Q_N (Λ1 - Λ2) Q_D^{-1}`` by Lanczos."""
    qd = BoundaryNormOperator(diff.gd, 0.5, eig_count)
    qn = BoundaryNormOperator(diff.gn, -0.5, eig_count)
    nd, nn = diff.gd.size, diff.gn.size

    def mv(v):
        return qn.whiten(diff.apply(qd.unwhiten(np.asarray(v).reshape(nd))))

    def rmv(u):
        return qd.unwhiten_T(diff.apply_T(qn.whiten_T(np.asarray(u).reshape(nn))))

    def mm(V):
        return qn.whiten(diff.apply(qd.unwhiten(np.asarray(V))))

    def rmm(U):
        return qd.unwhiten_T(diff.apply_T(qn.whiten_T(np.asarray(U))))

    T = spla.LinearOperator((nn, nd), matvec=mv, rmatvec=rmv, matmat=mm, rmatmat=rmm, dtype=float)
    probe = mv(np.ones(nd) / np.sqrt(nd) + 0.01 * np.cos(np.arange(nd)))
    if not np.any(probe):
        return 0.0
    m = min(nn, nd)
    v0 = np.ones(m) / np.sqrt(m) + 0.01 * np.cos(np.arange(m))
    s = spla.svds(T, k=1, v0=v0, tol=tol, return_singular_vectors=False)
    return float(s[0])
