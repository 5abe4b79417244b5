"""Node clouds, collar tagging, horizon bond graphs and pre-notches."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INTERIOR = "INTERIOR"


class GeometryError(ValueError):
    pass


class NodeFormatError(ValueError):
    """Malformed node CSV; ``row`` is the 1-based data row (header is row 0)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        prefix = f"row {row}: " if row is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Rectangle:
    width: float
    height: float
    origin: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class LShape:
    """A ``width x height`` box with one ``cut_width x cut_height`` corner removed.

    ``corner`` names the removed quadrant, e.g. ``"lower-right"``.
    """

    width: float
    height: float
    cut_width: float
    cut_height: float
    corner: str = "lower-right"
    origin: tuple[float, float] = (0.0, 0.0)

    def contains(self, points: np.ndarray) -> np.ndarray:
        x = points[:, 0] - self.origin[0]
        y = points[:, 1] - self.origin[1]
        vert, horiz = self.corner.split("-")
        in_x = x > self.width - self.cut_width if horiz == "right" else x < self.cut_width
        in_y = y < self.cut_height if vert == "lower" else y > self.height - self.cut_height
        return ~(in_x & in_y)


@dataclass
class NodeSet:
    """Point cloud with per-node volume and collar tag."""

    positions: np.ndarray
    volumes: np.ndarray
    tags: np.ndarray = None
    dimension: int = 2

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, self.dimension)
        self.volumes = np.asarray(self.volumes, dtype=float).reshape(-1)
        n = len(self.positions)
        if self.tags is None:
            self.tags = np.full(n, INTERIOR, dtype=object)
        else:
            self.tags = np.asarray(self.tags, dtype=object).reshape(-1)
        if len(self.volumes) != n or len(self.tags) != n:
            raise GeometryError("positions, volumes and tags differ in length")
        if np.any(~(self.volumes > 0)):
            raise GeometryError("volumes must be strictly positive")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def interior(self) -> np.ndarray:
        return self.tags == INTERIOR

    def group(self, name: str) -> np.ndarray:
        return self.tags == name

    def with_tags(self, tags) -> "NodeSet":
        return NodeSet(self.positions.copy(), self.volumes.copy(), np.asarray(tags, dtype=object), self.dimension)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)


def _grid_axis(start: float, length: float, h: float) -> np.ndarray:
    count = int(round(length / h))
    if count < 1 or abs(count * h - length) > 1e-9 * max(length, 1.0):
        # incommensurate extents: cover with floor(length / h) cells
        count = max(int(np.floor(length / h + 1e-12)), 1)
    return start + h * (np.arange(count) + 0.5)


def build_regular_grid(shape: Rectangle | LShape, h: float) -> NodeSet:
    """Cell-centred grid of spacing ``h`` covering ``shape``; every volume is ``h^2``."""
    if not h > 0:
        raise GeometryError(f"grid spacing must be positive, got {h!r}")
    if not (shape.width > 0 and shape.height > 0):
        raise GeometryError("shape extents must be positive")
    if isinstance(shape, LShape):
        if not (0 < shape.cut_width < shape.width and 0 < shape.cut_height < shape.height):
            raise GeometryError("L-shape cut-out must be strictly inside the box")
        if shape.corner not in ("lower-right", "lower-left", "upper-right", "upper-left"):
            raise GeometryError(f"unknown L-shape corner {shape.corner!r}")
    xs = _grid_axis(shape.origin[0], shape.width, h)
    ys = _grid_axis(shape.origin[1], shape.height, h)
    # row-major, y outer: node index = iy * nx + ix
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    if isinstance(shape, LShape):
        pts = pts[shape.contains(pts)]
    return NodeSet(pts, np.full(len(pts), h * h))


# ---------------------------------------------------------------------------
# CSV node format: header ``x,y,volume,tag``
# ---------------------------------------------------------------------------

NODE_HEADER = ["x", "y", "volume", "tag"]


def load_point_cloud(source) -> NodeSet:
    """Parse the ``x,y,volume,tag`` CSV node format from bytes, text or a stream."""
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise NodeFormatError("empty node file", 0) from None
    if [c.strip() for c in header] != NODE_HEADER:
        raise NodeFormatError(f"expected header {','.join(NODE_HEADER)}", 0)
    pos, vol, tags = [], [], []
    seen: dict[tuple[float, float], int] = {}
    for row_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise NodeFormatError(f"expected 4 fields, got {len(row)}", row_no)
        try:
            x, y, v = (float(c) for c in row[:3])
        except ValueError as exc:
            raise NodeFormatError(str(exc), row_no) from None
        if not all(np.isfinite([x, y, v])):
            raise NodeFormatError("non-finite value", row_no)
        if not v > 0:
            raise NodeFormatError(f"volume must be positive, got {v!r}", row_no)
        tag = row[3].strip()
        if not tag:
            raise NodeFormatError("empty tag", row_no)
        if (x, y) in seen:
            raise NodeFormatError(f"duplicate coordinates of row {seen[(x, y)]}", row_no)
        seen[(x, y)] = row_no
        pos.append((x, y))
        vol.append(v)
        tags.append(tag)
    return NodeSet(np.array(pos, dtype=float).reshape(-1, 2), np.array(vol, dtype=float), np.array(tags, dtype=object))


def write_point_cloud(nodes: NodeSet, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(NODE_HEADER)
    for (x, y), v, t in zip(nodes.positions, nodes.volumes, nodes.tags):
        writer.writerow([repr(float(x)), repr(float(y)), repr(float(v)), t])


# ---------------------------------------------------------------------------
# Collar tagging
# ---------------------------------------------------------------------------

EDGES = ("top", "bottom", "left", "right")


@dataclass(frozen=True)
class CollarRegion:
    """A named collar group: a band of thickness eps along a bounding-box edge, or a box.

    ``box`` is ``(x0, y0, x1, y1)`` with inclusive bounds.
    """

    name: str
    edge: str | None = None
    box: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        if (self.edge is None) == (self.box is None):
            raise GeometryError(f"collar {self.name!r}: give exactly one of edge or box")
        if self.edge is not None and self.edge not in EDGES:
            raise GeometryError(f"collar {self.name!r}: unknown edge {self.edge!r}")
        if self.name == INTERIOR:
            raise GeometryError(f"{INTERIOR} is reserved")

    def select(self, positions: np.ndarray, eps: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        x, y = positions[:, 0], positions[:, 1]
        eps = eps * (1.0 + 1e-12)
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        # lo/hi are the outer cell faces, so distances are to the physical edge
        if self.edge == "top":
            return hi[1] - y <= eps
        if self.edge == "bottom":
            return y - lo[1] <= eps
        if self.edge == "left":
            return x - lo[0] <= eps
        return hi[0] - x <= eps


def _domain_extent(nodes: NodeSet) -> tuple[np.ndarray, np.ndarray]:
    """Bounding box of the material, padded by half a cell (sqrt of the mean volume)."""
    lo, hi = nodes.bounding_box()
    pad = 0.5 * np.sqrt(np.mean(nodes.volumes)) if len(nodes) else 0.0
    return lo - pad, hi + pad


def tag_collar(nodes: NodeSet, regions: Sequence[CollarRegion], eps: float) -> NodeSet:
    """Tag nodes within ``eps`` of each region's edge; the first matching region wins."""
    if not eps > 0:
        raise GeometryError("horizon must be positive")
    tags = np.full(len(nodes), INTERIOR, dtype=object)
    if len(nodes) == 0:
        return nodes.with_tags(tags)
    lo, hi = _domain_extent(nodes)
    free = np.ones(len(nodes), dtype=bool)
    for region in regions:
        hit = region.select(nodes.positions, eps, lo, hi) & free
        if not hit.any():
            logger.warning("collar group %r contains no nodes", region.name)
        tags[hit] = region.name
        free &= ~hit
    return nodes.with_tags(tags)


# ---------------------------------------------------------------------------
# Bond graph
# ---------------------------------------------------------------------------


@dataclass
class BondGraph:
    """Horizon adjacency stored once per unordered pair.

    ``pairs[b] = (k, l)`` with ``k < l``; ``intact[b]`` is the single flag both
    directions share, so symmetry holds by construction.
    """

    pairs: np.ndarray
    intact: np.ndarray
    horizon: float
    n_nodes: int
    reference_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.intact = np.asarray(self.intact, dtype=bool).reshape(-1)
        self.reference_counts = np.bincount(self.pairs.ravel(), minlength=self.n_nodes)
        self._csr = None

    def __len__(self) -> int:
        return len(self.pairs)

    def copy(self) -> "BondGraph":
        g = BondGraph(self.pairs, self.intact.copy(), self.horizon, self.n_nodes)
        g._csr = self._csr
        # topology is shared, so derived per-bond caches stay valid
        for name, val in vars(self).items():
            if name.endswith("_cache"):
                setattr(g, name, val)
        return g

    @property
    def n_broken(self) -> int:
        return int(np.count_nonzero(~self.intact))

    def intact_counts(self) -> np.ndarray:
        return np.bincount(self.pairs[self.intact].ravel(), minlength=self.n_nodes)

    def _adjacency(self):
        if self._csr is None:
            k, l = self.pairs[:, 0], self.pairs[:, 1]
            ids = np.arange(len(self.pairs))
            src = np.concatenate([k, l])
            dst = np.concatenate([l, k])
            bid = np.concatenate([ids, ids])
            order = np.lexsort((dst, src))
            indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
            np.cumsum(np.bincount(src, minlength=self.n_nodes), out=indptr[1:])
            self._csr = (indptr, dst[order], bid[order])
        return self._csr

    def neighbors(self, k: int, intact_only: bool = False) -> np.ndarray:
        """Sorted neighbour indices I_k of node ``k``."""
        indptr, dst, bid = self._adjacency()
        sl = slice(indptr[k], indptr[k + 1])
        if intact_only:
            return dst[sl][self.intact[bid[sl]]]
        return dst[sl]

    def bond_index(self, k: int, l: int) -> int:
        """Position of the bond {k, l} in ``pairs``; ``KeyError`` if absent."""
        indptr, dst, bid = self._adjacency()
        sl = slice(indptr[k], indptr[k + 1])
        j = np.searchsorted(dst[sl], l)
        if j < indptr[k + 1] - indptr[k] and dst[sl][j] == l:
            return int(bid[sl][j])
        raise KeyError((k, l))

    def is_intact(self, k: int, l: int) -> bool:
        return bool(self.intact[self.bond_index(k, l)])


def build_bond_graph(nodes: NodeSet, eps: float) -> BondGraph:
    """All pairs with ``0 < |X_l - X_k| <= eps``, found by hashing into cells of size eps."""
    if not eps > 0:
        raise GeometryError("horizon must be positive")
    X = nodes.positions
    n = len(X)
    if n == 0:
        return BondGraph(np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=bool), eps, 0)
    cell = np.floor((X - X.min(axis=0)) / eps).astype(np.int64)
    ncx = int(cell[:, 0].max()) + 1
    key = cell[:, 1] * ncx + cell[:, 0]
    order = np.argsort(key, kind="stable")
    sorted_keys = key[order]
    uniq, starts = np.unique(sorted_keys, return_index=True)
    ends = np.append(starts[1:], len(order))
    bucket = {int(kk): order[s:e] for kk, s, e in zip(uniq, starts, ends)}
    tol = eps * (1.0 + 1e-12)
    chunks = []
    for kk, members in bucket.items():
        cy, cx = divmod(kk, ncx)
        # forward half-stencil so each cell pair is visited once
        for dy, dx in ((0, 0), (0, 1), (1, -1), (1, 0), (1, 1)):
            nx_, ny_ = cx + dx, cy + dy
            if nx_ < 0 or nx_ >= ncx:
                continue
            other = bucket.get(ny_ * ncx + nx_)
            if other is None:
                continue
            a = np.repeat(members, len(other))
            b = np.tile(other, len(members))
            if dx == 0 and dy == 0:
                keep = a < b
                a, b = a[keep], b[keep]
            d = np.linalg.norm(X[b] - X[a], axis=1)
            keep = (d <= tol) & (d > 0)
            a, b = a[keep], b[keep]
            chunks.append(np.column_stack([np.minimum(a, b), np.maximum(a, b)]))
    pairs = np.concatenate(chunks) if chunks else np.empty((0, 2), dtype=np.int64)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return BondGraph(pairs, np.ones(len(pairs), dtype=bool), eps, n)


# ---------------------------------------------------------------------------
# Pre-notch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrenotchSpec:
    segments: tuple[tuple[tuple[float, float], tuple[float, float]], ...]

    def __post_init__(self):
        segs = tuple(tuple(tuple(float(c) for c in p) for p in seg) for seg in self.segments)
        for p, q in segs:
            if p == q:
                raise GeometryError("pre-notch segment has zero length")
        object.__setattr__(self, "segments", segs)


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segments_intersect(p1, p2, q1, q2, tol: float = 1e-12) -> np.ndarray:
    """Vectorized closed-segment intersection test of ``p1p2`` against one segment ``q1q2``.

    Touching (shared endpoint or endpoint on the other segment) counts as
    intersecting; collinear overlap counts too.
    """
    p1 = np.atleast_2d(p1)
    p2 = np.atleast_2d(p2)
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    s = q2 - q1
    scale = tol * max(1.0, float(np.max(np.abs(np.concatenate([p1.ravel(), p2.ravel(), q1, q2])))) ** 2)

    def orient(a, b, c):
        return _cross(b[..., 0] - a[..., 0], b[..., 1] - a[..., 1], c[..., 0] - a[..., 0], c[..., 1] - a[..., 1])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1[None, :])
    d4 = orient(p1, p2, q2[None, :])
    s1 = np.where(np.abs(d1) <= scale, 0, np.sign(d1))
    s2 = np.where(np.abs(d2) <= scale, 0, np.sign(d2))
    s3 = np.where(np.abs(d3) <= scale, 0, np.sign(d3))
    s4 = np.where(np.abs(d4) <= scale, 0, np.sign(d4))
    hit = (s1 * s2 <= 0) & (s3 * s4 <= 0)
    # collinear case: require overlapping projections
    col = (s1 == 0) & (s2 == 0)
    if np.any(col):
        axis = np.where(np.abs(s[0]) >= np.abs(s[1]), 0, 1)
        pa = np.minimum(p1[:, axis], p2[:, axis])
        pb = np.maximum(p1[:, axis], p2[:, axis])
        qa, qb = min(q1[axis], q2[axis]), max(q1[axis], q2[axis])
        hit = np.where(col, (pb >= qa) & (pa <= qb), hit)
    return hit


def apply_prenotch(graph: BondGraph, nodes: NodeSet, notch: PrenotchSpec) -> BondGraph:
    """Break every bond whose segment meets a notch segment (touching included)."""
    out = graph.copy()
    if len(graph) == 0:
        return out
    X = nodes.positions
    a = X[graph.pairs[:, 0]]
    b = X[graph.pairs[:, 1]]
    for q1, q2 in notch.segments:
        out.intact &= ~segments_intersect(a, b, q1, q2)
    return out


def iter_bonds(graph: BondGraph, intact_only: bool = True) -> Iterable[tuple[int, int]]:
    sel = graph.intact if intact_only else slice(None)
    for k, l in graph.pairs[sel]:
        yield int(k), int(l)
