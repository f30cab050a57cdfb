"""Fourier probing of ``q2 - q1`` with CGO pairs and truncated reconstruction.

Frequencies live on the lattice of a zero-padded period box (``PeriodBox``),
and transforms use the phase origin at the grid centre, so that

    F(g)(ξ) = Σ_j m_j g(x_j) exp(-i ξ·(x_j - c)).

Full-data mode estimates ``F(q2 - q1)(ξ)`` blind from the boundary pairing
``-<(Λ1 - Λ2) u2, u1>``.  The partial-data tracer runs every stage of the
stability argument (Runge approximation, the difference solution ``u``,
the cutoff commutator) and evaluates each error term by quadrature.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .cgo import (CGOCell, CGOSolution, ZetaPair, cgo_cell_for, cgo_remainder, lattice_cell_for,
                  lattice_zeta_pair, make_zeta_pair)
from .dtn import DtNDifference, DtNOperator, dtn_distance_operator
from .errors import CGOError, ConfigError, StabLabError
from .forward import Potential, _stiffness, get_solver
from .geometry import BoundaryPatch, CutoffPair, Grid, NeighborhoodChain, build_patch
from .norms import BoundaryNormOperator, PeriodBox, h_minus1_norm

log = logging.getLogger(__name__)

SPACE_DIM = 3
TAU_EXPONENT = 2.0 / (SPACE_DIM + 2)


@dataclass
class ProbeRecord:
    xi: np.ndarray
    fhat_true: complex
    fhat_est: complex
    R1: complex
    R2: complex
    R3: complex
    commutator_term: complex
    a: float
    k: float
    eps: float = 0.0
    mode: str = "full"
    identity_residual: float = 0.0
    extra: dict = field(default_factory=dict)

    def triangle_gap(self) -> float:
        """``|R1|+|R2|+|R3| - |fhat_true - fhat_est|`` (non-negative when the decomposition holds)."""
        return abs(self.R1) + abs(self.R2) + abs(self.R3) - abs(self.fhat_true - self.fhat_est)

    def row(self) -> dict:
        return {"xi1": float(self.xi[0]), "xi2": float(self.xi[1]), "xi3": float(self.xi[2]),
                "fhat_true_re": self.fhat_true.real, "fhat_true_im": self.fhat_true.imag,
                "fhat_est_re": self.fhat_est.real, "fhat_est_im": self.fhat_est.imag,
                "R1_re": self.R1.real, "R1_im": self.R1.imag,
                "R2_re": self.R2.real, "R2_im": self.R2.imag,
                "R3_re": self.R3.real, "R3_im": self.R3.imag,
                "a": self.a, "k": self.k}


PROBE_COLUMNS = ["xi1", "xi2", "xi3", "fhat_true_re", "fhat_true_im", "fhat_est_re", "fhat_est_im",
                 "R1_re", "R1_im", "R2_re", "R2_im", "R3_re", "R3_im", "a", "k"]


# --- schedules -----------------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    c_a: float = 0.1
    c_k: float = 1.0
    C0: float = 2.0
    mu: float = 2.0

    def a(self, delta: float, k: float, M: float) -> float:
        if not 0 < delta < 1:
            raise ConfigError(f"schedule needs 0 < delta < 1, got {delta}")
        return self.c_a * math.log(1.0 / delta) + self.c_k * k + self.C0 * M + 1.0

    def tau(self, a: float) -> float:
        return a ** TAU_EXPONENT

    def eps(self, delta: float) -> float:
        return delta ** (1.0 / (self.mu + 2.0))


def fourier_phase(grid: Grid, xi) -> np.ndarray:
    x = grid.axis_coords
    c = grid.center
    e = [np.exp(-1j * xi[ax] * (x - c[ax])) for ax in range(3)]
    return e[0][:, None, None] * e[1][None, :, None] * e[2][None, None, :]


def fourier_coefficient(g, grid: Grid, xi) -> complex:
    """Trapezoid quadrature of ``∫ g(x) exp(-i ξ·(x - c)) dx`` over Ω."""
    return complex(np.sum(grid.volume_weights * np.asarray(g).reshape(grid.shape) * fourier_phase(grid, xi)))


def probe_frequencies(box: PeriodBox, tau: float) -> np.ndarray:
    """Lattice frequencies with ``|ξ| <= τ``, in a fixed lexicographic order."""
    step = 2 * np.pi / box.L
    m = int(np.floor(tau / step + 1e-12))
    r = np.arange(-m, m + 1)
    M = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    xi = M * step
    keep = np.linalg.norm(xi, axis=1) <= tau * (1 + 1e-12)
    return xi[keep]


# --- CGO pairs -------------------------------------------------------------------

@dataclass
class CGOPair:
    pair: ZetaPair
    u1: CGOSolution
    u2: CGOSolution


def build_cgo_pair(q1: Potential, q2: Potential, xi, k: float, a: float, *, lattice: bool = True,
                   cell: CGOCell | None = None, tol: float = 1e-10, dilation: float = 1.25) -> CGOPair:
    """CGO solutions ``u1`` (for q1, ζ1) and ``u2`` (for q2, ζ2) with ``ζ1 + ζ2 = -ξ``.

    With ``lattice`` the pair is corrected to the discrete dispersion relation
    and the remainders use the 7-point symbol, so both fields are exact
    discrete solutions on the forward grid.
    """
    grid = q1.grid
    pair = make_zeta_pair(np.asarray(xi, dtype=float), k, a)
    if lattice:
        pair = lattice_zeta_pair(pair, grid.spacing)
        cell = cell or lattice_cell_for(grid, dilation)
    else:
        cell = cell or cgo_cell_for(grid, dilation=dilation)
    s1 = cgo_remainder(q1, pair.zeta1, cell, tol=tol)
    s2 = cgo_remainder(q2, pair.zeta2, cell, tol=tol)
    return CGOPair(pair, s1, s2)


def _r_term(dq, grid: Grid, xi, cp: CGOPair) -> complex:
    r1 = cp.u1.sample_r(grid)
    r2 = cp.u2.sample_r(grid)
    return -fourier_coefficient(dq * (r1 + r2 + r1 * r2), grid, xi)


def probe_full_data(diff: DtNDifference, pair: ZetaPair, cgo1: CGOSolution, cgo2: CGOSolution) -> complex:
    """Blind estimate of ``F(q2 - q1)(ξ)`` from ``-∫ ((Λ1 - Λ2) u2) u1 dS`` on the full surface."""
    if not (diff.gd.is_full and diff.gn.is_full):
        raise ConfigError("full-data probing needs Γ_D = Γ_N = the whole surface")
    grid = diff.gd.grid
    B = grid.boundary_ids
    u1 = cgo1.sample(grid).ravel()[B]
    u2 = cgo2.sample(grid).ravel()[B]
    w = grid.surface_weights
    return complex(-np.sum(w * u1 * diff.apply(u2)))


def full_data_record(q1: Potential, q2: Potential, diff: DtNDifference, cp: CGOPair, k: float,
                     a: float) -> ProbeRecord:
    grid = q1.grid
    xi = cp.pair.xi
    dq = (q2.values - q1.values)
    est = probe_full_data(diff, cp.pair, cp.u1, cp.u2)
    true = fourier_coefficient(dq, grid, xi)
    u1 = cp.u1.sample(grid)
    u2 = cp.u2.sample(grid)
    R1 = complex(np.sum(grid.volume_weights * dq * u1 * u2))
    R3 = _r_term(dq, grid, xi, cp)
    scale = max(abs(R1), abs(true), 1e-300)
    return ProbeRecord(np.array(xi, dtype=float), true, est, R1, 0j, R3, 0j, float(a), float(k),
                       mode="full", identity_residual=abs(est - R1) / scale)


# --- partial-data tracer -----------------------------------------------------------

def laplacian_apply(grid: Grid, u) -> np.ndarray:
    """Discrete ``-Δ_h u`` at interior nodes (zero on the surface)."""
    K = _stiffness(grid)
    m = grid.volume_weights.ravel()
    out = (K @ np.asarray(u).ravel()) / m
    out[grid.boundary_ids] = 0
    return out.reshape(grid.shape)


def commutator(grid: Grid, chi, u) -> np.ndarray:
    """``[-Δ_h, χ] u = -Δ_h(χ u) - χ (-Δ_h u)``."""
    chi = np.asarray(chi).reshape(grid.shape)
    u = np.asarray(u).reshape(grid.shape)
    return laplacian_apply(grid, chi * u) - chi * laplacian_apply(grid, u)


def trace_partial_identity(q1: Potential, q2: Potential, cp: CGOPair, gd: BoundaryPatch,
                           gn: BoundaryPatch, chain: NeighborhoodChain, cutoffs: CutoffPair, *,
                           lam: float = 1e-8, u2_target=None, delta: float | None = None,
                           runge=None, eig_count=None) -> ProbeRecord:
    """Run every stage of the partial-data estimate and evaluate each term.

    ``u2_target`` replaces the Runge approximant ``ũ2`` (any q2-solution with
    data on Γ_D satisfies the identity); by default ``ũ2`` comes from a
    Runge fit of the CGO ``u2`` with Tikhonov weight ``lam``.
    """
    from .runge import RungeProblem

    grid = q1.grid
    k = cp.pair.k
    xi = cp.pair.xi
    dq = q2.values - q1.values
    if np.any(dq[chain.layer(0)] != 0):
        raise ConfigError("the potentials must agree on the boundary layer O")
    stage = "cgo"
    try:
        u1 = cp.u1.sample(grid)
        u2 = cp.u2.sample(grid)
        stage = "runge"
        s2 = get_solver(q2, k)
        eps = 0.0
        if u2_target is None:
            rp = runge or RungeProblem(q2, k, gd, chain)
            rr = rp.approximate(u2, lam)
            f = rr.f
            ut2 = rr.u
            eps = rr.eps_achieved
        else:
            ut2 = np.asarray(u2_target).reshape(grid.shape)
            f = ut2.ravel()[grid.boundary_ids]
            off = ~gd.boundary_mask
            if np.any(np.abs(f[off]) > 1e-12 * max(np.max(np.abs(f)), 1e-300)):
                raise ConfigError("target data is not supported on Γ_D")
        stage = "forward"
        s1 = get_solver(q1, k)
        v = s1.solve_dirichlet(f).reshape(grid.shape)
        u = v - ut2
        stage = "quadrature"
        m = grid.volume_weights
        C = commutator(grid, cutoffs.chi2, u)
        comm = complex(np.sum(m * C * u1))
        R1 = complex(np.sum(m * dq * u1 * ut2))
        R2 = complex(np.sum(m * dq * u1 * (u2 - ut2)))
        R3 = _r_term(dq, grid, xi, cp)
        true = fourier_coefficient(dq, grid, xi)
        # ∫(q2 - q1) u1 ũ2 = -∫[-Δ, χ2]u u1
        est = -comm
        scale = max(abs(R1), abs(comm), 1e-300)
        resid = abs(R1 + comm) / scale
        dn = s1.flux(u.ravel())[gn.positions]
        dn_norm = BoundaryNormOperator(gn, -0.5, eig_count).norm(dn)
        f_norm = BoundaryNormOperator(gd, 0.5, eig_count).norm(f[gd.positions])
    except StabLabError as exc:
        exc.stage = getattr(exc, "stage", stage)
        raise
    extra = {"dn_norm": dn_norm, "f_norm": f_norm, "u_l2": float(np.sqrt(np.sum(m * np.abs(u) ** 2))),
             "u1_l2": float(np.sqrt(np.sum(m * np.abs(u1) ** 2))),
             "ut2_l2": float(np.sqrt(np.sum(m * np.abs(ut2) ** 2))),
             "identity_abs": abs(R1 + comm)}
    if delta is not None:
        extra["delta"] = float(delta)
        extra["delta_bound"] = float(delta) * f_norm
    return ProbeRecord(np.array(xi, dtype=float), true, est, R1, R2, R3, comm, float(cp.pair.a),
                       float(k), float(eps), "partial", float(resid), extra)


# --- reconstruction ----------------------------------------------------------------

def reconstruct_diff(probes, box: PeriodBox, tau: float, values=None):
    """Band-limited synthesis from probe estimates at all lattice ξ with ``|ξ| <= τ``.

    Returns ``(field on Ω, coefficient array)``.  ``values`` overrides the
    estimates (e.g. the true coefficients for oracle mode).
    """
    need = probe_frequencies(box, tau)
    have = {}
    for i, p in enumerate(probes):
        idx = box.lattice_index(p.xi)
        have[idx] = p.fhat_est if values is None else values[i]
    missing = [tuple(float(v) for v in xi) for xi in need if box.lattice_index(xi) not in have]
    if missing:
        raise ConfigError(f"probe set misses {len(missing)} frequencies inside tau: {missing[:6]}")
    C = np.zeros((box.N,) * 3, dtype=complex)
    for xi in need:
        idx = box.lattice_index(xi)
        C[idx] = have[idx]
    field_box = box.synthesize(C)
    return box.restrict(field_box), C


def truncate_fourier(g, box: PeriodBox, tau: float) -> np.ndarray:
    """Direct low-pass of a zero-extended field: FFT, zero ``|ξ| > τ``, inverse FFT."""
    G = np.fft.fftn(box.embed(g))
    G[np.sqrt(box.xi2) > tau * (1 + 1e-12)] = 0
    return box.restrict(np.fft.ifftn(G))


def linf_report(recon, truth, grid: Grid, pad: int = 2):
    """``(L∞ error on Ω, H^{-1} norm of the zero-extended error)``."""
    err = np.asarray(recon).reshape(grid.shape) - np.asarray(truth).reshape(grid.shape)
    return float(np.max(np.abs(err))), h_minus1_norm(err, grid, pad)


# --- the sweep ------------------------------------------------------------------------

@dataclass
class SweepSettings:
    n_axis: int = 32
    extent: float = 1.0
    widths: tuple = (5, 4, 3, 2)
    q1: dict = field(default_factory=lambda: {"type": "bump", "center": [0.5, 0.5, 0.5],
                                              "radius": 0.24, "amplitude": 0.5})
    dq: dict = field(default_factory=lambda: {"type": "plateau", "center": [0.5, 0.5, 0.5],
                                              "half_width": 0.25, "ramp": 0.08,
                                              "amplitude": 0.02})
    ks: tuple = (2.0, 4.0, 6.0, 8.0)
    schedule: Schedule = field(default_factory=Schedule)
    pad: int = 6
    lattice_cgo: bool = True
    cgo_tol: float = 1e-10
    dilation: float = 1.25
    gap_c: float = 0.01
    max_kh: float = 0.6
    override: bool = False
    r3_a: tuple = (4.0, 8.0, 16.0, 32.0)
    r3_k: float = 2.0
    r3_tau: float = 2.0
    eig_count: int | None = None
    delta_tol: float = 1e-10
    seed: int = 0

    def constants(self) -> dict:
        d = asdict(self.schedule)
        d.update(pad=self.pad, lattice_cgo=self.lattice_cgo, gap_c=self.gap_c)
        return d


@dataclass
class StabilityReport:
    rows: list
    fits: dict
    caveats: list
    skipped: list
    r3_table: list
    constants: dict
    grid: dict
    probes: list = field(default_factory=list, repr=False)
    timings: dict = field(default_factory=dict, repr=False)

    ROW_COLUMNS = ["k", "delta", "h_minus1_error", "linf_error", "a_used", "tau_used", "eps_used",
                   "n_probes", "oracle_h_minus1", "truth_h_minus1", "max_triangle_violation",
                   "max_identity_residual"]

    def to_dict(self) -> dict:
        return {"rows": self.rows, "fits": self.fits, "caveats": self.caveats, "skipped": self.skipped,
                "r3_table": self.r3_table, "constants": self.constants, "grid": self.grid}


CAVEATS = [
    "domain is a unit box with edges and corners, not a smooth domain",
    "boundary H^{±1/2} norms are graph-Laplacian surrogates of the trace norms",
    "H^{-1} norms use a zero-padded periodic box",
    "schedule constants stand in for non-constructive constants and are not fitted",
    "probing uses full boundary data (blind mode)",
]


def fit_loglog(x, y):
    """Least-squares slope and R² of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    lx, ly = np.log(x[ok]), np.log(y[ok])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1 - float(np.sum((ly - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(coef[0]), float(r2)


def sweep_potentials(s: SweepSettings):
    from .geometry import build_neighborhoods, make_grid
    from .potentials import make_profile

    grid = make_grid(s.n_axis, s.extent)
    chain = build_neighborhoods(grid, s.widths)
    f1 = make_profile(s.q1)
    fd = make_profile(s.dq)
    q1 = Potential.from_function(grid, f1, chain=chain, tag="q1")
    q2 = Potential.from_function(grid, lambda x, y, z: f1(x, y, z) + fd(x, y, z), chain=chain, tag="q2")
    if np.any((q2.values - q1.values)[chain.layer(0)] != 0):
        raise ConfigError("q2 - q1 must vanish on the boundary layer O")
    return grid, chain, q1, q2


def r3_decay_table(q1: Potential, q2: Potential, box: PeriodBox, s: SweepSettings) -> list:
    grid = q1.grid
    dq = q2.values - q1.values
    xis = probe_frequencies(box, s.r3_tau)
    rows = []
    for a in s.r3_a:
        vals = []
        for xi in xis:
            cp = build_cgo_pair(q1, q2, xi, s.r3_k, a, lattice=s.lattice_cgo, tol=s.cgo_tol,
                                dilation=s.dilation)
            vals.append(abs(_r_term(dq, grid, xi, cp)))
        rows.append({"a": float(a), "max_abs_R3": float(max(vals)), "n_xi": int(len(xis))})
    return rows


def stability_sweep(s: SweepSettings, progress=None) -> StabilityReport:
    grid, chain, q1, q2 = sweep_potentials(s)
    box = PeriodBox(grid, s.pad)
    full = build_patch(grid, "full")
    dq = (q2.values - q1.values)
    truth_h = h_minus1_norm(dq, grid, s.pad)
    M = max(q1.linf_bound, q2.linf_bound)
    rows, skipped, all_probes = [], [], []
    timings = {}
    solver_opts = {"gap_constant": s.gap_c, "max_kh": s.max_kh, "override": s.override}
    for k in s.ks:
        t0 = time.perf_counter()
        try:
            A = DtNOperator(q1, k, full, full, solver_opts)
            B = DtNOperator(q2, k, full, full, solver_opts)
            diff = DtNDifference(A, B)
            delta = dtn_distance_operator(diff, s.eig_count, tol=s.delta_tol)
            if delta <= 0:
                skipped.append({"k": float(k), "reason": "delta = 0: schedule undefined"})
                continue
            if delta >= 1:
                skipped.append({"k": float(k), "reason": f"delta = {delta:.6g} >= 1"})
                continue
            a = s.schedule.a(delta, k, M)
            tau = s.schedule.tau(a)
            xis = probe_frequencies(box, tau)
            probes = []
            for xi in xis:
                cp = build_cgo_pair(q1, q2, xi, k, a, lattice=s.lattice_cgo, tol=s.cgo_tol,
                                    dilation=s.dilation)
                probes.append(full_data_record(q1, q2, diff, cp, k, a))
            recon, C = reconstruct_diff(probes, box, tau)
            recon_real = recon.real if q1.is_real and q2.is_real else recon
            linf, herr = linf_report(recon_real, dq.real if q1.is_real else dq, grid, s.pad)
            oracle, _ = reconstruct_diff(probes, box, tau, values=[p.fhat_true for p in probes])
            _, oracle_h = linf_report(oracle.real if q1.is_real else oracle, dq.real if q1.is_real else dq,
                                      grid, s.pad)
        except StabLabError as exc:
            skipped.append({"k": float(k), "reason": f"{type(exc).__name__}: {exc}",
                            "stage": getattr(exc, "stage", "")})
            continue
        viol = max(max(-p.triangle_gap(), 0.0) for p in probes)
        rows.append({"k": float(k), "delta": float(delta), "h_minus1_error": herr, "linf_error": linf,
                     "a_used": float(a), "tau_used": float(tau), "eps_used": s.schedule.eps(delta),
                     "n_probes": len(probes), "oracle_h_minus1": oracle_h, "truth_h_minus1": truth_h,
                     "max_triangle_violation": viol,
                     "max_identity_residual": max(p.identity_residual for p in probes)})
        all_probes.extend(probes)
        timings[f"k={k:g}"] = time.perf_counter() - t0
        if progress:
            progress(rows[-1])
    fits = {}
    if len(rows) >= 2:
        x = [r["k"] + math.log(1 / r["delta"]) for r in rows]
        fits["h_minus1_slope"], fits["h_minus1_r2"] = fit_loglog(x, [r["h_minus1_error"] for r in rows])
        fits["linf_slope"], fits["linf_r2"] = fit_loglog(x, [r["linf_error"] for r in rows])
        fits["reference_slope"] = -TAU_EXPONENT
    r3 = r3_decay_table(q1, q2, box, s) if s.r3_a else []
    if len(r3) >= 2:
        fits["r3_slope"], fits["r3_r2"] = fit_loglog([r["a"] for r in r3], [r["max_abs_R3"] for r in r3])
    return StabilityReport(rows, fits, list(CAVEATS), skipped, r3, s.constants(), grid.describe(),
                           all_probes, timings)
