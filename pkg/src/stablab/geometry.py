"""Box grids, boundary patches, nested boundary layers and smooth cutoffs.

All grids are uniform node grids on the cube ``[origin, origin + extent]^3``.
Fields live on nodes in C order, so the flat index of node ``(i, j, l)`` is
``(i * n + j) * n + l``.  Boundary traces are vectors ordered like
``Grid.boundary_ids``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError

INTERIOR, BOUNDARY, EXTERIOR = 0, 1, 2

# face name -> (axis, which end)
FACES = {
    "x0": (0, 0), "x1": (0, 1),
    "y0": (1, 0), "y1": (1, 1),
    "z0": (2, 0), "z1": (2, 1),
}


def smoothstep(s):
    """Quintic ramp: 0 for s <= 0, 1 for s >= 1, C^2 in between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class Grid:
    n_axis: int
    extent: float = 1.0
    origin: float = 0.0

    def __post_init__(self):
        if int(self.n_axis) != self.n_axis or self.n_axis < 4:
            raise GeometryError(f"n_axis must be an integer >= 4, got {self.n_axis}")
        if not np.isfinite(self.extent) or self.extent <= 0:
            raise GeometryError(f"extent must be positive, got {self.extent}")

    @property
    def spacing(self) -> float:
        return self.extent / (self.n_axis - 1)

    @property
    def shape(self):
        return (self.n_axis,) * 3

    @property
    def size(self) -> int:
        return self.n_axis ** 3

    @property
    def center(self) -> np.ndarray:
        return np.full(3, self.origin + 0.5 * self.extent)

    @cached_property
    def axis_coords(self) -> np.ndarray:
        return self.origin + self.spacing * np.arange(self.n_axis)

    def mesh(self):
        x = self.axis_coords
        return np.meshgrid(x, x, x, indexing="ij")

    @cached_property
    def axis_distance(self) -> np.ndarray:
        """Per-axis cell distance to the nearest end, ``min(i, n-1-i)``."""
        i = np.arange(self.n_axis)
        return np.minimum(i, self.n_axis - 1 - i)

    @cached_property
    def cell_distance(self) -> np.ndarray:
        """Chebyshev distance (in cells) from each node to the box surface."""
        d = self.axis_distance
        return np.minimum(np.minimum(d[:, None, None], d[None, :, None]), d[None, None, :])

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        return self.cell_distance == 0

    @cached_property
    def boundary_ids(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask.ravel())

    @cached_property
    def interior_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask.ravel())

    @cached_property
    def boundary_position(self) -> np.ndarray:
        """Map flat node index -> position in ``boundary_ids`` (-1 if interior)."""
        pos = np.full(self.size, -1, dtype=np.int64)
        pos[self.boundary_ids] = np.arange(self.boundary_ids.size)
        return pos

    @cached_property
    def node_class(self) -> np.ndarray:
        return np.where(self.boundary_mask.ravel(), BOUNDARY, INTERIOR).astype(np.uint8)

    def _end_factor(self):
        f = np.ones(self.n_axis)
        f[0] = f[-1] = 0.5
        return f

    @cached_property
    def volume_weights(self) -> np.ndarray:
        """Trapezoid quadrature weights on the node grid (shape ``grid.shape``)."""
        f = self._end_factor()
        return self.spacing ** 3 * f[:, None, None] * f[None, :, None] * f[None, None, :]

    def face_mask(self, face: str) -> np.ndarray:
        axis, end = FACES[face]
        m = np.zeros(self.shape, dtype=bool)
        idx = [slice(None)] * 3
        idx[axis] = 0 if end == 0 else self.n_axis - 1
        m[tuple(idx)] = True
        return m

    @cached_property
    def surface_weights(self) -> np.ndarray:
        """Lumped surface-area weights per boundary node, summed over faces."""
        f = self._end_factor()
        face_w = self.spacing ** 2 * np.outer(f, f)
        w = np.zeros(self.shape)
        for face, (axis, end) in FACES.items():
            idx = [slice(None)] * 3
            idx[axis] = 0 if end == 0 else self.n_axis - 1
            w[tuple(idx)] += face_w
        return w.ravel()[self.boundary_ids]

    @cached_property
    def surface_edges(self) -> np.ndarray:
        """Pairs of boundary positions joined by a grid edge lying on the surface."""
        n = self.n_axis
        ids = np.arange(self.size).reshape(self.shape)
        bm = self.boundary_mask
        pos = self.boundary_position
        pairs = []
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(0, n - 1)
            hi[axis] = slice(1, n)
            both = bm[tuple(lo)] & bm[tuple(hi)]
            a = ids[tuple(lo)][both]
            b = ids[tuple(hi)][both]
            pairs.append(np.stack([pos[a], pos[b]], axis=1))
        return np.concatenate(pairs, axis=0)

    def key(self) -> str:
        txt = f"grid:{self.n_axis}:{self.extent!r}:{self.origin!r}"
        return hashlib.sha256(txt.encode()).hexdigest()[:16]

    def describe(self) -> dict:
        return {"n_axis": self.n_axis, "extent": self.extent, "origin": self.origin}


def make_grid(n_axis: int, extent: float = 1.0) -> Grid:
    return Grid(int(n_axis), float(extent))


@dataclass(frozen=True)
class BoundaryPatch:
    grid: Grid
    node_ids: np.ndarray
    area_weights: np.ndarray
    descriptor: object = field(default="full", compare=False)

    @cached_property
    def positions(self) -> np.ndarray:
        """Positions of the patch nodes inside ``grid.boundary_ids``."""
        return self.grid.boundary_position[self.node_ids]

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.grid.boundary_ids.size, dtype=bool)
        m[self.positions] = True
        return m

    @property
    def size(self) -> int:
        return int(self.node_ids.size)

    @property
    def area(self) -> float:
        return float(self.area_weights.sum())

    @property
    def is_full(self) -> bool:
        return self.size == self.grid.boundary_ids.size

    def same_nodes(self, other: "BoundaryPatch") -> bool:
        return self.grid == other.grid and np.array_equal(self.node_ids, other.node_ids)

    def key(self) -> str:
        h = hashlib.sha256(self.grid.key().encode())
        h.update(np.ascontiguousarray(self.node_ids, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def _face_rect_patch(grid: Grid, face: str, rect) -> BoundaryPatch:
    if face not in FACES:
        raise GeometryError(f"unknown face {face!r}; expected one of {sorted(FACES)}")
    axis, end = FACES[face]
    others = [a for a in range(3) if a != axis]
    x = grid.axis_coords
    tol = 1e-9 * grid.extent
    ranges = []
    for (lo, hi), a in zip(rect, others):
        sel = np.flatnonzero((x >= lo - tol) & (x <= hi + tol))
        if sel.size < 2:
            raise GeometryError(
                f"rectangle [{lo}, {hi}] on face {face} covers fewer than two nodes along axis {a}")
        ranges.append(sel)
    fix = 0 if end == 0 else grid.n_axis - 1
    h2 = grid.spacing ** 2
    wu = np.ones(ranges[0].size)
    wu[[0, -1]] = 0.5
    wv = np.ones(ranges[1].size)
    wv[[0, -1]] = 0.5
    idx = np.zeros((ranges[0].size, ranges[1].size, 3), dtype=np.int64)
    idx[..., axis] = fix
    idx[..., others[0]] = ranges[0][:, None]
    idx[..., others[1]] = ranges[1][None, :]
    flat = np.ravel_multi_index((idx[..., 0].ravel(), idx[..., 1].ravel(), idx[..., 2].ravel()), grid.shape)
    weights = h2 * np.outer(wu, wv).ravel()
    order = np.argsort(flat)
    return flat[order], weights[order]


def build_patch(grid: Grid, spec) -> BoundaryPatch:
    """Build a boundary patch.

    ``spec`` is ``"full"``, ``{"face": "x1"}``, ``{"face": "x1", "rect": [[u0, u1], [v0, v1]]}``
    (face coordinates are the two remaining axes in increasing order), or
    ``{"nodes": [flat ids]}``.
    """
    if isinstance(spec, BoundaryPatch):
        return spec
    if spec == "full" or spec == {"face": "all"}:
        ids = grid.boundary_ids.copy()
        return BoundaryPatch(grid, ids, grid.surface_weights.copy(), "full")
    if not isinstance(spec, dict):
        raise GeometryError(f"unrecognised patch description {spec!r}")
    unknown = set(spec) - {"face", "rect", "nodes"}
    if unknown:
        raise GeometryError(f"unknown patch keys {sorted(unknown)}")
    if "nodes" in spec:
        ids = np.unique(np.asarray(spec["nodes"], dtype=np.int64))
        if ids.size == 0:
            raise GeometryError("empty patch")
        if ids.min() < 0 or ids.max() >= grid.size:
            raise GeometryError("patch node index out of range")
        if np.any(grid.boundary_position[ids] < 0):
            raise GeometryError("patch contains interior nodes")
        w = grid.surface_weights[grid.boundary_position[ids]]
        return BoundaryPatch(grid, ids, w, {"nodes": ids.tolist()})
    face = spec.get("face")
    rect = spec.get("rect")
    if rect is None:
        lo, hi = grid.origin, grid.origin + grid.extent
        rect = [[lo, hi], [lo, hi]]
    rect = [[float(r[0]), float(r[1])] for r in rect]
    if len(rect) != 2 or any(r[0] > r[1] for r in rect):
        raise GeometryError(f"malformed rectangle {rect}")
    ids, w = _face_rect_patch(grid, face, rect)
    if np.any(w <= 0):
        raise GeometryError("degenerate patch weights")
    return BoundaryPatch(grid, ids, w, {"face": face, "rect": rect})


@dataclass(frozen=True)
class NeighborhoodChain:
    """Nested boundary layers ``O = O_0 ⊃ O_1 ⊃ O_2 ⊃ O_3``.

    Layer ``j`` holds the nodes at Chebyshev cell distance ``< widths[j]`` from
    the surface; its closure adds the nodes at distance exactly ``widths[j]``.
    """

    grid: Grid
    widths: tuple

    def layer(self, j: int) -> np.ndarray:
        return self.grid.cell_distance < self.widths[j]

    def closure(self, j: int) -> np.ndarray:
        return self.grid.cell_distance <= self.widths[j]

    def outside(self, j: int) -> np.ndarray:
        """Omega minus the closure of layer j."""
        return self.grid.cell_distance > self.widths[j]

    def annulus(self, outer: int, inner: int) -> np.ndarray:
        """Layer ``outer`` minus layer ``inner``."""
        return self.layer(outer) & ~self.layer(inner)

    @property
    def gamma_sharp(self) -> np.ndarray:
        """Inner boundary of O (nodes at distance exactly ``widths[0]``)."""
        return self.grid.cell_distance == self.widths[0]


def build_neighborhoods(grid: Grid, widths, min_width: int = 2) -> NeighborhoodChain:
    widths = tuple(int(w) for w in widths)
    if len(widths) != 4:
        raise GeometryError(f"need four layer widths, got {len(widths)}")
    if any(a <= b for a, b in zip(widths, widths[1:])):
        raise GeometryError(f"layer widths must be strictly decreasing, got {widths}")
    if widths[-1] < min_width:
        raise GeometryError(f"smallest layer width {widths[-1]} < {min_width} cells")
    if widths[0] > grid.n_axis / 4:
        raise GeometryError(
            f"largest layer width {widths[0]} exceeds n_axis/4 = {grid.n_axis / 4:g}")
    return NeighborhoodChain(grid, widths)


@dataclass(frozen=True)
class CutoffPair:
    chi1: np.ndarray
    chi2: np.ndarray
    w_sharp: np.ndarray
    w_sharp_star: np.ndarray
    transition: float


def build_cutoffs(chain: NeighborhoodChain, transition: float = 2, min_transition: float = 2) -> CutoffPair:
    """Smooth cutoffs built as products of 1D quintic ramps along each axis.

    ``chi2`` is 0 on O_3 and 1 off O_2; ``chi1`` is 1 on O_1 (hence on O minus
    W#) and 0 on W#* (nodes at distance >= w1 + transition, which contains the
    inner boundary of O).  W# is the set of nodes at distance > w1.
    """
    w0, w1, w2, w3 = chain.widths
    t = float(transition)
    if t < min_transition:
        raise GeometryError(f"cutoff transition {t:g} < {min_transition:g} cells")
    if t > w2 - w3 or t > w0 - w1:
        raise GeometryError(
            f"cutoff transition {t:g} does not fit between layers {chain.widths}")
    d = chain.grid.axis_distance.astype(float)
    s2 = smoothstep((d - w3) / t)
    s1 = smoothstep((d - w1) / t)
    chi2 = s2[:, None, None] * s2[None, :, None] * s2[None, None, :]
    chi1 = 1.0 - s1[:, None, None] * s1[None, :, None] * s1[None, None, :]
    cd = chain.grid.cell_distance
    return CutoffPair(chi1=chi1, chi2=chi2, w_sharp=cd > w1, w_sharp_star=cd >= w1 + t, transition=t)


def gradient_support(chi: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    """Nodes where a central-difference gradient of ``chi`` is nonzero."""
    g = np.gradient(chi)
    return np.max(np.abs(np.stack(g)), axis=0) > tol
