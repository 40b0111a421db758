"""Areal supports, overlap tables and partition (aggregation) matrices.

A partition matrix maps values on the fine partition scale to area-weighted
averages on a coarse support. Entry ``(i, l)`` is ``|A_l| / |B_i|`` when the
fine unit ``A_l`` lies in the coarse unit ``B_i`` and zero otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DisjointnessError, InconsistentOverlapError, InvalidArgument

AREA_RTOL = 1e-9
ROW_SUM_TOL = 1e-9
OFFDIAG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ArealSupport:
    """An ordered collection of areal units.

    Parameters
    ----------
    ids : sequence of str
        Unique unit identifiers; their order fixes the vector layout.
    areas : (n,) array
        Strictly positive areas.
    centroids : (n, 2) array
    adjacency : (n, n) bool array
        Symmetric with a zero diagonal.
    rectangles : (n, 4) array, optional
        ``(x0, x1, y0, y1)`` per unit for rectilinear supports. Only used to
        compute exact overlaps for generated geometries.
    """

    ids: tuple
    areas: np.ndarray
    centroids: np.ndarray
    adjacency: np.ndarray
    rectangles: Optional[np.ndarray] = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = tuple(str(u) for u in self.ids)
        areas = np.asarray(self.areas, dtype=float).reshape(-1)
        centroids = np.asarray(self.centroids, dtype=float).reshape(-1, 2)
        adjacency = np.asarray(self.adjacency, dtype=bool)
        n = len(ids)
        if n == 0:
            raise InvalidArgument("support must contain at least one unit")
        if len(set(ids)) != n:
            raise InvalidArgument("unit ids must be unique")
        if areas.shape != (n,) or centroids.shape != (n, 2):
            raise InvalidArgument("areas/centroids do not match the number of units")
        if adjacency.shape != (n, n):
            raise InvalidArgument(f"adjacency must be {n}x{n}")
        if not np.all(np.isfinite(areas)) or np.any(areas <= 0):
            raise InvalidArgument("all areas must be strictly positive")
        if not np.array_equal(adjacency, adjacency.T):
            raise InvalidArgument("adjacency must be symmetric")
        if np.any(np.diag(adjacency)):
            raise InvalidArgument("adjacency must have a zero diagonal")
        for name, value in (("ids", ids), ("areas", areas),
                            ("centroids", centroids), ("adjacency", adjacency)):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)
        if self.rectangles is not None:
            rects = np.asarray(self.rectangles, dtype=float).reshape(n, 4)
            rects.setflags(write=False)
            object.__setattr__(self, "rectangles", rects)
        object.__setattr__(self, "_index", {u: i for i, u in enumerate(ids)})

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self, unit_id) -> int:
        try:
            return self._index[str(unit_id)]
        except KeyError:
            raise InvalidArgument(f"unknown unit id {unit_id!r}") from None

    def weights(self) -> np.ndarray:
        """Adjacency as a float 0/1 matrix ``W``."""
        return self.adjacency.astype(float)

    def degrees(self) -> np.ndarray:
        """Row sums ``w_{i+}`` of the adjacency matrix."""
        return self.adjacency.sum(axis=1).astype(float)

    def edges(self) -> list[tuple[str, str]]:
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return [(self.ids[a], self.ids[b]) for a, b in zip(i, j)]


@dataclass(frozen=True)
class OverlapTable:
    """Rows of ``(fine_id, coarse_id, overlap_area)``."""

    fine_ids: tuple
    coarse_ids: tuple
    overlap_areas: np.ndarray

    def __post_init__(self):
        fine = tuple(str(u) for u in self.fine_ids)
        coarse = tuple(str(u) for u in self.coarse_ids)
        areas = np.asarray(self.overlap_areas, dtype=float).reshape(-1)
        if not (len(fine) == len(coarse) == areas.size):
            raise InvalidArgument("overlap table columns have different lengths")
        if not np.all(np.isfinite(areas)) or np.any(areas <= 0):
            raise InvalidArgument("overlap areas must be strictly positive")
        seen = set()
        for f in fine:
            if f in seen:
                raise DisjointnessError(
                    f"fine unit {f!r} appears with more than one coarse unit")
            seen.add(f)
        areas.setflags(write=False)
        object.__setattr__(self, "fine_ids", fine)
        object.__setattr__(self, "coarse_ids", coarse)
        object.__setattr__(self, "overlap_areas", areas)

    @classmethod
    def from_rows(cls, rows):
        rows = list(rows)
        if not rows:
            return cls((), (), np.empty(0))
        fine, coarse, area = zip(*rows)
        return cls(fine, coarse, np.array(area, dtype=float))

    def rows(self):
        return list(zip(self.fine_ids, self.coarse_ids, self.overlap_areas.tolist()))

    def __len__(self):
        return len(self.fine_ids)


@dataclass(frozen=True, eq=False)
class PartitionMatrix:
    """Aggregation operator of shape ``(n_coarse, n_fine)``."""

    matrix: np.ndarray
    fine: Optional[ArealSupport] = None
    coarse: Optional[ArealSupport] = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InvalidArgument("partition matrix must be 2-D")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise InvalidArgument("partition matrix entries must be finite and non-negative")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.fine is not None and self.fine.n != m.shape[1]:
            raise InvalidArgument("fine support size does not match matrix columns")
        if self.coarse is not None and self.coarse.n != m.shape[0]:
            raise InvalidArgument("coarse support size does not match matrix rows")

    @property
    def shape(self):
        return self.matrix.shape

    def check(self) -> None:
        """Raise unless rows sum to one and columns have at most one nonzero."""
        sums = self.matrix.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            i = int(bad[0])
            name = self.coarse.ids[i] if self.coarse is not None else i
            raise InconsistentOverlapError(name, float(sums[i]), 1.0)
        if np.any((self.matrix > 0).sum(axis=0) > 1):
            raise DisjointnessError("a fine unit belongs to more than one coarse unit")

    def aggregate(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float)


def build_grid_support(rows: int, cols: int, bounds=(0.0, 1.0, 0.0, 1.0)) -> ArealSupport:
    """Regular ``rows x cols`` grid with rook adjacency.

    ``bounds`` is ``(x0, x1, y0, y1)``. Units are ordered row-major starting
    from the lower-left cell; ids are ``r{row}c{col}``.
    """
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise InvalidArgument("rows and cols must be positive integers")
    x0, x1, y0, y1 = map(float, bounds)
    if not (np.isfinite([x0, x1, y0, y1]).all() and x1 > x0 and y1 > y0):
        raise InvalidArgument(f"degenerate bounds {bounds!r}")
    xs = np.linspace(x0, x1, cols + 1)
    ys = np.linspace(y0, y1, rows + 1)
    rects = np.array([(xs[c], xs[c + 1], ys[r], ys[r + 1])
                      for r in range(rows) for c in range(cols)])
    ids = [f"r{r}c{c}" for r in range(rows) for c in range(cols)]
    support = rectangle_support(ids, rects)
    return support


def rectangle_support(ids: Sequence, rects) -> ArealSupport:
    """Support made of axis-aligned rectangles ``(x0, x1, y0, y1)``.

    Two units are neighbours when they share a boundary segment of positive
    length (rook contiguity).
    """
    rects = np.asarray(rects, dtype=float).reshape(-1, 4)
    areas = (rects[:, 1] - rects[:, 0]) * (rects[:, 3] - rects[:, 2])
    centroids = np.column_stack([(rects[:, 0] + rects[:, 1]) / 2,
                                 (rects[:, 2] + rects[:, 3]) / 2])
    return ArealSupport(ids, areas, centroids, _rook_adjacency(rects), rectangles=rects)


def _rook_adjacency(rects: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    x0, x1, y0, y1 = (rects[:, k] for k in range(4))
    # overlap lengths of the projections on each axis
    ox = np.minimum(x1[:, None], x1[None, :]) - np.maximum(x0[:, None], x0[None, :])
    oy = np.minimum(y1[:, None], y1[None, :]) - np.maximum(y0[:, None], y0[None, :])
    touch_x = (np.abs(x1[:, None] - x0[None, :]) < tol) | (np.abs(x0[:, None] - x1[None, :]) < tol)
    touch_y = (np.abs(y1[:, None] - y0[None, :]) < tol) | (np.abs(y0[:, None] - y1[None, :]) < tol)
    adj = (touch_x & (oy > tol)) | (touch_y & (ox > tol))
    np.fill_diagonal(adj, False)
    return adj


def rectangle_overlaps(coarse: ArealSupport, fine: ArealSupport, tol: float = 1e-15) -> OverlapTable:
    """Exact overlap table between two rectilinear supports."""
    if coarse.rectangles is None or fine.rectangles is None:
        raise InvalidArgument("both supports need rectangle geometry")
    c, f = coarse.rectangles, fine.rectangles
    ox = np.minimum(f[:, None, 1], c[None, :, 1]) - np.maximum(f[:, None, 0], c[None, :, 0])
    oy = np.minimum(f[:, None, 3], c[None, :, 3]) - np.maximum(f[:, None, 2], c[None, :, 2])
    area = np.clip(ox, 0, None) * np.clip(oy, 0, None)
    rows = [(fine.ids[l], coarse.ids[i], area[l, i])
            for l, i in zip(*np.nonzero(area > tol))]
    return OverlapTable.from_rows(rows)


def build_partition_matrix(coarse: ArealSupport, fine: ArealSupport,
                           overlaps: OverlapTable, clip: bool = False) -> PartitionMatrix:
    """Partition matrix from an overlap table.

    With ``clip=True`` rows are normalised by the total observed overlap of
    each coarse unit instead of its full area, for coarse units that extend
    past the modelled region. Coarse units without any overlap are an error
    either way.
    """
    m = np.zeros((coarse.n, fine.n))
    for f_id, c_id, area in overlaps.rows():
        m[coarse.index(c_id), fine.index(f_id)] += area
    totals = m.sum(axis=1)
    for i in range(coarse.n):
        expected = totals[i] if clip else coarse.areas[i]
        if totals[i] <= 0 or abs(totals[i] - expected) > AREA_RTOL * expected:
            raise InconsistentOverlapError(coarse.ids[i], float(totals[i]), float(coarse.areas[i]))
    denom = totals if clip else coarse.areas
    pm = PartitionMatrix(m / denom[:, None], fine=fine, coarse=coarse)
    pm.check()
    return pm


def assemble_block_partition(P1: PartitionMatrix, P2: PartitionMatrix) -> PartitionMatrix:
    """Block-diagonal ``[[P1, 0], [0, P2]]`` acting on stacked fine vectors."""
    if P1.shape[1] != P2.shape[1] or (
            P1.fine is not None and P2.fine is not None and P1.fine is not P2.fine
            and P1.fine.ids != P2.fine.ids):
        raise InvalidArgument("P1 and P2 must target the same fine support")
    n1, n3 = P1.shape
    n2 = P2.shape[0]
    m = np.zeros((n1 + n2, 2 * n3))
    m[:n1, :n3] = P1.matrix
    m[n1:, n3:] = P2.matrix
    return PartitionMatrix(m)


def diag_ppt(P) -> np.ndarray:
    """Diagonal of ``P P'``, checking that the off-diagonal part vanishes."""
    m = P.matrix if isinstance(P, PartitionMatrix) else np.asarray(P, dtype=float)
    ppt = m @ m.T
    d = np.diag(ppt).copy()
    off = ppt - np.diag(d)
    if off.size and np.max(np.abs(off)) >= OFFDIAG_TOL:
        raise DisjointnessError(
            f"P P' has off-diagonal entries up to {np.max(np.abs(off)):.3g}")
    if np.any(d <= 0):
        raise DisjointnessError("P P' has a non-positive diagonal entry (empty row)")
    return d
