"""Runge approximation by Tikhonov-regularised least squares.

Given a local solution ``v`` on Ω∖Ō₂ we look for boundary data ``f``
supported on Γ_D whose solution ``S f`` matches ``v`` on Ω₁ = Ω∖Ō₁:

    min ||S f - v||²_{L²(Ω₁)} + λ ||f||²_{H~^{1/2}(Γ_D)}.

With ``y = Q_D f`` (``Q_D`` the patch whitening map) this is a standard
Tikhonov problem for ``K = M^{1/2} S Q_D^{-1}``.  Dense mode takes one SVD
of ``K`` and evaluates every λ from its filter factors; matrix-free mode runs
damped LSQR with solver-applied ``S`` and ``S^T``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .forward import Potential, get_solver
from .geometry import BoundaryPatch, NeighborhoodChain
from .norms import BoundaryNormOperator, grid_sobolev_norm

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(np.logspace(-2, -12, 6))
MATRIX_FREE_ABOVE = 24 ** 3


@dataclass
class RungeResult:
    f: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    eps_achieved: float
    data_cost: float
    lam: float
    residual_l2: float
    v_norm: float
    k: float = 0.0
    info: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"lambda": self.lam, "eps_achieved": self.eps_achieved,
                "data_cost": self.data_cost, "k": self.k}


class RungeProblem:
    """Boundary-to-interior map from Γ_D data to the solution on Ω₁."""

    def __init__(self, q: Potential, k: float, gd: BoundaryPatch, chain: NeighborhoodChain, *,
                 mode: str = "auto", solver_opts=None, eig_count=None, chunk: int = 256):
        if gd.grid != q.grid or chain.grid != q.grid:
            raise ConfigError("patch, chain and potential must share a grid")
        if mode not in ("auto", "dense", "matrix_free"):
            raise ConfigError(f"unknown Runge mode {mode!r}")
        if mode == "auto":
            mode = "matrix_free" if q.grid.size > MATRIX_FREE_ABOVE else "dense"
        self.q, self.k, self.gd, self.chain, self.mode = q, float(k), gd, chain, mode
        self.grid = q.grid
        self.solver = get_solver(q, k, **(solver_opts or {}))
        self.fit_mask = chain.outside(1)
        self.v_mask = chain.outside(2)
        self.qd = BoundaryNormOperator(gd, 0.5, eig_count)
        s = self.solver
        # fit nodes are all interior; map them to interior-unknown positions
        pos = np.full(self.grid.size, -1)
        pos[self.grid.interior_ids] = np.arange(self.grid.interior_ids.size)
        self.fit_ids = np.flatnonzero(self.fit_mask.ravel())
        self.fit_rows = pos[self.fit_ids]
        if np.any(self.fit_rows < 0):
            raise ConfigError("fit region touches the boundary")
        self.sqrt_m = np.sqrt(self.grid.volume_weights.ravel()[self.fit_ids])
        self._svd = None
        self.chunk = chunk
        self.is_real = s.is_real

    # --- S and its transpose -------------------------------------------------
    def _boundary_data(self, f):
        nb = self.grid.boundary_ids.size
        F = np.zeros((nb,) + f.shape[1:], dtype=f.dtype)
        F[self.gd.positions] = f
        return F

    def apply_S(self, f):
        """Solution on the fit nodes for patch data ``f``."""
        s = self.solver
        uI = s.solve_interior(-(s.A_IB @ self._boundary_data(f)))
        return uI[self.fit_rows]

    def apply_ST(self, g):
        s = self.solver
        rhs = np.zeros((self.solver.A_II.shape[0],) + g.shape[1:], dtype=g.dtype)
        rhs[self.fit_rows] = g
        # A_II is symmetric, so S^T g = -A_IB^T A_II^{-1} R^T g
        z = s.solve_interior(rhs)
        return -(s.A_IB.T @ z)[self.gd.positions]

    def matrix(self) -> np.ndarray:
        n = self.gd.size
        cols = []
        for start in range(0, n, self.chunk):
            E = np.zeros((n, min(self.chunk, n - start)))
            E[start + np.arange(E.shape[1]), np.arange(E.shape[1])] = 1.0
            cols.append(self.apply_S(E))
        return np.hstack(cols)

    @property
    def svd(self):
        if self._svd is None:
            S = self.matrix()
            K = self.sqrt_m[:, None] * self.qd.unwhiten_T(S.T).T
            U, sig, Vt = np.linalg.svd(K, full_matrices=False)
            self._svd = (U, sig, Vt)
        return self._svd

    # --- solves ---------------------------------------------------------------
    def _target(self, v):
        v = np.asarray(v).reshape(self.grid.shape)
        return v.ravel()[self.fit_ids]

    def _v_norm(self, v):
        return grid_sobolev_norm(np.asarray(v).reshape(self.grid.shape), self.grid, 1, self.v_mask)

    def _finish(self, y, v, lam, info) -> RungeResult:
        f_patch = self.qd.unwhiten(y)
        f = self._boundary_data(f_patch)
        u = self.solver.solve_dirichlet(f)
        diff = (u[self.fit_ids] - self._target(v)) * self.sqrt_m
        res = float(np.linalg.norm(diff))
        vn = self._v_norm(v)
        eps = res / vn if vn > 0 else 0.0
        return RungeResult(f, u.reshape(self.grid.shape), eps, float(np.linalg.norm(y)), float(lam),
                           res, vn, self.k, info)

    def approximate(self, v, lam: float) -> RungeResult:
        return self.sweep(v, [lam])[0]

    def sweep(self, v, lambdas=DEFAULT_LAMBDAS, lsqr_tol: float = 1e-12) -> list:
        lambdas = [float(x) for x in lambdas]
        if any(x <= 0 for x in lambdas):
            raise ConfigError("Tikhonov weights must be positive")
        b = self.sqrt_m * self._target(v)
        out = []
        if not np.any(b):
            z = np.zeros(self.gd.size)
            return [self._finish(z, v, lam, {"degenerate": True}) for lam in lambdas]
        if self.mode == "dense":
            U, sig, Vt = self.svd
            beta = U.T @ b
            tail = max(float(np.linalg.norm(b) ** 2 - np.linalg.norm(beta) ** 2), 0.0)
            for lam in lambdas:
                filt = sig / (sig ** 2 + lam)
                y = Vt.T @ (filt * beta)
                model_res = float(np.sqrt(np.sum((lam / (sig ** 2 + lam)) ** 2 * np.abs(beta) ** 2) + tail))
                out.append(self._finish(y, v, lam, {"model_residual": model_res,
                                                    "sigma_max": float(sig[0]),
                                                    "sigma_min": float(sig[-1])}))
            return out
        for lam in lambdas:
            out.append(self._lsqr(b, v, lam, lsqr_tol))
        return out

    def _lsqr(self, b, v, lam, tol):
        nd, nr = self.gd.size, self.fit_ids.size

        def mv(y):
            return self.sqrt_m * self.apply_S(self.qd.unwhiten(np.asarray(y).ravel()))

        def rmv(g):
            return self.qd.unwhiten_T(self.apply_ST(self.sqrt_m * np.asarray(g).ravel()))

        parts = [b.real, b.imag] if np.iscomplexobj(b) else [b]
        ys = []
        history = []
        for part in parts:
            op = spla.LinearOperator((nr, nd), matvec=mv, rmatvec=rmv, dtype=float)
            res = spla.lsqr(op, part, damp=np.sqrt(lam), atol=tol, btol=tol, iter_lim=20 * nd)
            istop, itn = res[1], res[2]
            history.append({"istop": int(istop), "iterations": int(itn), "residual": float(res[3])})
            if istop == 7:
                raise SolverError("LSQR reached its iteration limit", stage="runge", lam=lam,
                                  history=history)
            ys.append(res[0])
        y = ys[0] + 1j * ys[1] if len(ys) == 2 else ys[0]
        return self._finish(y, v, lam, {"lsqr": history})


def runge_approximate(q: Potential, k: float, v, gd: BoundaryPatch, chain: NeighborhoodChain,
                      lam: float, **opts) -> RungeResult:
    return RungeProblem(q, k, gd, chain, **opts).approximate(v, lam)


def runge_sweep(q: Potential, k: float, v, gd: BoundaryPatch, chain: NeighborhoodChain,
                lambdas=DEFAULT_LAMBDAS, **opts) -> list:
    return RungeProblem(q, k, gd, chain, **opts).sweep(v, lambdas)


def check_tradeoff(results) -> dict:
    """Strict monotonicity of eps (decreasing) and cost (increasing) along decreasing λ."""
    rs = sorted(results, key=lambda r: -r.lam)
    eps = np.array([r.eps_achieved for r in rs])
    cost = np.array([r.data_cost for r in rs])
    return {"eps_decreasing": bool(np.all(np.diff(eps) < 0)),
            "cost_increasing": bool(np.all(np.diff(cost) > 0))}


def fit_runge_exponent(points, min_points: int = 5, min_decades: float = 2.0):
    """Slope of ``log(cost)`` against ``log(1/eps)`` and the fit's R².

    ``points`` holds RungeResults or ``(eps, cost)`` pairs.
    """
    pts = [(r.eps_achieved, r.data_cost) if isinstance(r, RungeResult) else tuple(r) for r in points]
    eps = np.array([p[0] for p in pts], dtype=float)
    cost = np.array([p[1] for p in pts], dtype=float)
    ok = (eps > 0) & (cost > 0) & np.isfinite(eps) & np.isfinite(cost)
    eps, cost = eps[ok], cost[ok]
    if eps.size < min_points:
        raise ConfigError(f"need at least {min_points} usable sweep points, got {eps.size}")
    span = np.log10(eps.max() / eps.min())
    if span < min_decades:
        raise ConfigError(f"eps spans {span:.2f} decades; need {min_decades:g}")
    x = np.log(1.0 / eps)
    y = np.log(cost)
    A = np.vstack([x, np.ones_like(x)]).T
    (mu, c), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ np.array([mu, c])
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(mu), float(r2)
