"""Set machinery for candidate sets and failure sets.

Hyperrectangles in any dimension, convex polygons in the plane, and the
cross product of a polygon (in two chosen coordinates) with a box in the
remaining coordinates.  Everything here is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TOL = 1e-9
MAX_REJECTION_ATTEMPTS = 1_000_000


class GeometryError(ValueError):
    """Raised for degenerate or empty geometric objects."""


class SamplingBudgetError(RuntimeError):
    """Rejection sampling could not produce the requested draws."""

    def __init__(self, message: str, attempts: int, accepted: int):
        super().__init__(f"{message} (attempts={attempts}, accepted={accepted}, "
                         f"acceptance_rate={accepted / max(attempts, 1):.3g})")
        self.attempts = attempts
        self.accepted = accepted


def _as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


@dataclass(frozen=True)
class HyperRect:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise GeometryError("lower and upper must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError("box bounds must be finite")
        if np.any(lo >= hi):
            raise GeometryError(f"degenerate box: lower={lo}, upper={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def bounds(self) -> "HyperRect":
        return self

    def contains(self, x) -> np.ndarray | bool:
        pts = _as_points(x, self.dim)
        inside = np.all((pts >= self.lower - TOL) & (pts <= self.upper + TOL), axis=-1)
        return bool(inside) if inside.ndim == 0 else inside

    def project(self, dims: Sequence[int]) -> "HyperRect":
        dims = list(dims)
        return HyperRect(self.lower[dims], self.upper[dims])

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        n = 1 if size is None else size
        out = self.lower + rng.random((n, self.dim)) * self.widths
        return out[0] if size is None else out

    def as_polytope(self) -> "Polytope2D":
        if self.dim != 2:
            raise GeometryError("only 2-D boxes convert to polygons")
        (x0, y0), (x1, y1) = self.lower, self.upper
        return Polytope2D([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _shoelace(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True)
class Polytope2D:
    """Convex polygon with counterclockwise vertices.

    The half-space form is derived from the vertices: row ``i`` of
    ``normals`` is the unit outward normal of edge ``v[i] -> v[i+1]`` and the
    polygon is ``{x : normals @ x <= offsets}``.
    """

    vertices: np.ndarray
    normals: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("a polygon needs at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polygon vertices must be finite")
        area = _shoelace(v)
        if area <= 0:
            raise GeometryError("vertices must be counterclockwise with positive area")
        k = len(v)
        for i in range(k):
            if _cross(v[i], v[(i + 1) % k], v[(i + 2) % k]) < -TOL * max(1.0, area):
                raise GeometryError("vertices do not form a convex polygon")
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        if np.any(lengths <= 0):
            raise GeometryError("polygon has repeated vertices")
        normals = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
        offsets = np.einsum("ij,ij->i", normals, v)
        for arr in (v, normals, offsets):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def halfspaces(self) -> list[tuple[np.ndarray, float]]:
        return [(n.copy(), float(b)) for n, b in zip(self.normals, self.offsets)]

    @property
    def area(self) -> float:
        return area(self)

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        cr = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = cr.sum() / 2.0
        return np.array([((v[:, 0] + w[:, 0]) * cr).sum(), ((v[:, 1] + w[:, 1]) * cr).sum()]) / (6 * a)

    def bounding_box(self) -> HyperRect:
        return HyperRect(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def contains(self, x) -> np.ndarray | bool:
        return contains(self, x)

    def ring(self) -> np.ndarray:
        """Vertices as a closed ring (first vertex repeated last)."""
        return np.vstack([self.vertices, self.vertices[:1]])


def convex_hull(points) -> Polytope2D:
    """Convex hull by Andrew's monotone chain.

    Collinear boundary points are dropped, so the result has strictly convex
    corners.  Raises :class:`GeometryError` for fewer than three points or a
    collinear input.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise GeometryError("convex_hull expects an (n, 2) array of points")
    if len(pts) < 3:
        raise GeometryError(f"degenerate hull: need at least 3 points, got {len(pts)}")
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        raise GeometryError("degenerate hull: fewer than 3 distinct points")

    def half(seq):
        chain: list[tuple[float, float]] = []
        for p in seq:
            while len(chain) >= 2 and _cross(chain[-2], chain[-1], p) <= 0:
                chain.pop()
            chain.append(p)
        return chain

    lower = half(uniq)
    upper = half(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3 or _shoelace(np.array(hull)) <= 0:
        raise GeometryError("degenerate hull: all points are collinear")
    return Polytope2D(hull)


def area(p: Polytope2D) -> float:
    """Shoelace area of the vertex polygon."""
    return _shoelace(p.vertices)


def contains(p: Polytope2D, x) -> np.ndarray | bool:
    """Membership test; boundary points (within 1e-9) count as inside."""
    pts = _as_points(x, 2)
    viol = pts @ p.normals.T - p.offsets
    inside = np.all(viol <= TOL, axis=-1)
    return bool(inside) if inside.ndim == 0 else inside


def clip(p: Polytope2D, window: Polytope2D) -> Polytope2D:
    """Intersection of two convex polygons (Sutherland-Hodgman)."""
    out = [tuple(v) for v in p.vertices]
    for n, b in zip(window.normals, window.offsets):
        if not out:
            break
        src, out = out, []
        for i, cur in enumerate(src):
            prev = src[i - 1]
            dc = n @ cur - b
            dp = n @ prev - b
            if dc <= 0:
                if dp > 0:
                    t = dp / (dp - dc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif dp <= 0:
                t = dp / (dp - dc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    try:
        return convex_hull(out)
    except GeometryError as exc:
        raise GeometryError("empty intersection: polygons do not overlap with positive area") from exc


def clip_to_box(p: Polytope2D, box: HyperRect) -> Polytope2D:
    return clip(p, box.as_polytope())


def inflate(p: Polytope2D, margin: float) -> Polytope2D:
    """Push every edge outward by ``margin`` along its normal (mitred corners)."""
    if margin == 0:
        return p
    if margin < 0:
        raise GeometryError("margin must be nonnegative")
    n, b = p.normals, p.offsets + margin
    k = len(n)
    verts = []
    for i in range(k):
        # vertex i is shared by edges i-1 and i
        a = np.array([n[i - 1], n[i]])
        verts.append(np.linalg.solve(a, [b[i - 1], b[i]]))
    return Polytope2D(verts)


@dataclass(frozen=True)
class PolytopeCross:
    """Polygon in coordinates ``dims`` times the box ``ambient`` elsewhere.

    ``ambient`` also bounds the two polygon coordinates; a polygon reaching
    outside the ambient projection is clipped on construction.
    """

    polytope: Polytope2D
    dims: tuple[int, int]
    ambient: HyperRect

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 2 or dims[0] == dims[1] or not all(0 <= d < self.ambient.dim for d in dims):
            raise GeometryError(f"invalid projection dims {self.dims} for a {self.ambient.dim}-D box")
        object.__setattr__(self, "dims", dims)
        window = self.ambient.project(dims)
        if not np.all(window.contains(self.polytope.vertices)):
            object.__setattr__(self, "polytope", clip_to_box(self.polytope, window))

    @property
    def dim(self) -> int:
        return self.ambient.dim

    @property
    def other_dims(self) -> list[int]:
        return [d for d in range(self.dim) if d not in self.dims]

    @property
    def volume(self) -> float:
        rest = self.ambient.widths[self.other_dims]
        return self.polytope.area * float(np.prod(rest))

    @property
    def bounds(self) -> HyperRect:
        lo = self.ambient.lower.copy()
        hi = self.ambient.upper.copy()
        bb = self.polytope.bounding_box()
        lo[list(self.dims)] = bb.lower
        hi[list(self.dims)] = bb.upper
        return HyperRect(lo, hi)

    def contains(self, x) -> np.ndarray | bool:
        pts = _as_points(x, self.dim)
        inside = np.asarray(self.ambient.contains(pts)) & np.asarray(
            self.polytope.contains(pts[..., list(self.dims)]))
        return bool(inside) if inside.ndim == 0 else inside

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Uniform draws by rejection from the polygon's bounding box."""
        n = 1 if size is None else size
        bb = self.polytope.bounding_box()
        out = self.ambient.sample(rng, n)
        # exact acceptance probability of a bounding-box draw
        rate = max(self.polytope.area / bb.volume, 1e-6)
        got = 0
        attempts = 0
        budget = MAX_REJECTION_ATTEMPTS * n
        while got < n:
            batch = max(64, int(1.1 * (n - got) / rate) + 16)
            batch = min(batch, budget - attempts, 1 << 20)
            if batch <= 0:
                raise SamplingBudgetError("polygon rejection sampler exhausted its budget", attempts, got)
            cand = bb.sample(rng, batch)
            attempts += batch
            acc = cand[self.polytope.contains(cand)]
            take = min(len(acc), n - got)
            out[got:got + take, list(self.dims)] = acc[:take]
            got += take
        return out[0] if size is None else out


@dataclass(frozen=True)
class FailureSet:
    """Learned failure-prone set: a polygon over two coordinates of C."""

    projection_dims: tuple[int, int]
    polytope: Polytope2D
    ambient: HyperRect

    def region(self) -> PolytopeCross:
        return PolytopeCross(self.polytope, self.projection_dims, self.ambient)

    def to_dict(self) -> dict:
        return {
            "projection_dims": list(self.projection_dims),
            "vertices": self.polytope.vertices.tolist(),
            "ambient_lower": self.ambient.lower.tolist(),
            "ambient_upper": self.ambient.upper.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FailureSet":
        return cls(tuple(d["projection_dims"]), Polytope2D(d["vertices"]),
                   HyperRect(d["ambient_lower"], d["ambient_upper"]))
