"""Boxes, rigid transforms, BEV overlap, and L-shape box fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class DegenerateInputError(ValueError):
    """Input has too few points, or a shape the routine cannot work with."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    r = math.fmod(theta + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


def as_points(points: np.ndarray) -> np.ndarray:
    """Validate an (N, 3) array of finite coordinates, returned as float64."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected points with shape (N, 3), got {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError("points contain non-finite coordinates")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set sharing one timestamp, with per-point sensor ids."""

    xyz: np.ndarray
    timestamp: float = 0.0
    sensor_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        xyz = as_points(self.xyz)
        object.__setattr__(self, "xyz", xyz)
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        sid = self.sensor_ids
        if sid is None:
            sid = np.zeros(len(xyz), dtype=np.int32)
        else:
            sid = np.asarray(sid, dtype=np.int32)
            if sid.shape != (len(xyz),):
                raise ValueError("sensor_ids must have one entry per point")
        object.__setattr__(self, "sensor_ids", sid)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def select(self, mask: np.ndarray) -> "PointCloud":
        """Sub-cloud at the same timestamp (boolean mask or index array)."""
        return PointCloud(self.xyz[mask], self.timestamp, self.sensor_ids[mask])

    @staticmethod
    def empty(timestamp: float = 0.0) -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), timestamp)


@dataclass(frozen=True)
class BoundingBox:
    """Yaw-oriented 3D box.

    `l` runs along the heading axis (yaw `theta`), `w` across it, `h` up.
    `(vx, vy)` is the ground-plane velocity of the box center.
    """

    cx: float
    cy: float
    cz: float
    w: float
    l: float
    h: float
    theta: float
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self) -> None:
        vals = (self.cx, self.cy, self.cz, self.w, self.l, self.h,
                self.theta, self.vx, self.vy)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("box fields must be finite")
        if self.w <= 0 or self.l <= 0 or self.h <= 0:
            raise ValueError("box dimensions must be positive")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def corners_bev(self) -> np.ndarray:
        """Footprint corners as a (4, 2) array, counterclockwise."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        hu = np.array([c, s]) * (0.5 * self.l)
        hv = np.array([-s, c]) * (0.5 * self.w)
        center = np.array([self.cx, self.cy])
        return np.stack([center + hu + hv, center - hu + hv,
                         center - hu - hv, center + hu - hv])

    def volume(self) -> float:
        return self.w * self.l * self.h


@dataclass(frozen=True)
class RigidTransform:
    """Homogeneous 4x4 rigid transform (proper rotation plus translation)."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError("transform matrix must be 4x4")
        if not np.array_equal(m[3], np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValueError("bottom row must be [0, 0, 0, 1]")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("rotation block is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation block must have determinant +1")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(4))

    @staticmethod
    def from_yaw_translation(theta: float, tx: float, ty: float,
                             tz: float = 0.0) -> "RigidTransform":
        c, s = math.cos(theta), math.sin(theta)
        m = np.array([
            [c, -s, 0.0, tx],
            [s, c, 0.0, ty],
            [0.0, 0.0, 1.0, tz],
            [0.0, 0.0, 0.0, 1.0],
        ])
        return RigidTransform(m)

    @staticmethod
    def from_rotation_translation(rotation: np.ndarray,
                                  translation: np.ndarray) -> "RigidTransform":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = np.asarray(translation, dtype=np.float64)
        return RigidTransform(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @property
    def yaw(self) -> float:
        return math.atan2(self.matrix[1, 0], self.matrix[0, 0])

    def inverse(self) -> "RigidTransform":
        r = self.rotation.T
        return RigidTransform.from_rotation_translation(r, -r @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        """Composition: ``(a @ b).apply(p) == a.apply(b.apply(p))``."""
        return RigidTransform(self.matrix @ other.matrix)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation


def box_to_transform(box: BoundingBox) -> RigidTransform:
    """Body-to-world transform of a box: yaw about z, then center translation."""
    return RigidTransform.from_yaw_translation(box.theta, box.cx, box.cy, box.cz)


def apply_transform(transform: RigidTransform, points: np.ndarray) -> np.ndarray:
    return transform.apply(points)


def box_membership(points: np.ndarray, box: BoundingBox,
                   margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside the box, boundary inclusive.

    `margin` expands every half-extent; negative values shrink the box.
    """
    pts = as_points(points)
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = pts[:, 0] - box.cx
    dy = pts[:, 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    dz = pts[:, 2] - box.cz
    return ((np.abs(u) <= 0.5 * box.l + margin)
            & (np.abs(v) <= 0.5 * box.w + margin)
            & (np.abs(dz) <= 0.5 * box.h + margin))


def points_in_box(points: np.ndarray, box: BoundingBox,
                  margin: float = 0.0) -> np.ndarray:
    """Points falling inside the box (see `box_membership`)."""
    pts = as_points(points)
    return pts[box_membership(pts, box, margin)]


def _polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon by a CCW convex polygon."""
    out = subject
    n = len(clip)
    for i in range(n):
        if len(out) == 0:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = b - a
        # signed z-cross: >= 0 means left of the edge, i.e. inside for CCW
        cr = edge[0] * (out[:, 1] - a[1]) - edge[1] * (out[:, 0] - a[0])
        keep: list[np.ndarray] = []
        m = len(out)
        for j in range(m):
            k = (j + 1) % m
            p_in = cr[j] >= -1e-12
            q_in = cr[k] >= -1e-12
            if p_in:
                keep.append(out[j])
            if p_in != q_in:
                t = cr[j] / (cr[j] - cr[k])
                keep.append(out[j] + t * (out[k] - out[j]))
        out = np.asarray(keep) if keep else np.zeros((0, 2))
    return out


def bev_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Bird's-eye-view IoU of two box footprints (z extents ignored)."""
    # cheap reject: footprints cannot overlap beyond circumcircles
    reach = 0.5 * (math.hypot(a.l, a.w) + math.hypot(b.l, b.w))
    if math.hypot(a.cx - b.cx, a.cy - b.cy) > reach:
        return 0.0
    ca, cb = a.corners_bev(), b.corners_bev()
    inter = _polygon_area(_clip_convex(ca, cb))
    union = a.l * a.w + b.l * b.w - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def _edge_split_cost(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Variance criterion for candidate headings, vectorized over rows.

    For each heading row, points are assigned to whichever projected edge
    pair (along-axis or across-axis) they sit closer to, and the cost is
    the sum of the two population variances of those edge distances.
    """
    du = np.minimum(u - u.min(axis=1, keepdims=True),
                    u.max(axis=1, keepdims=True) - u)
    dv = np.minimum(v - v.min(axis=1, keepdims=True),
                    v.max(axis=1, keepdims=True) - v)
    use_u = du < dv
    cost = np.zeros(u.shape[0])
    for d, m in ((du, use_u), (dv, ~use_u)):
        cnt = m.sum(axis=1)
        safe = np.maximum(cnt, 1)
        s1 = np.where(m, d, 0.0).sum(axis=1)
        s2 = np.where(m, d * d, 0.0).sum(axis=1)
        var = s2 / safe - (s1 / safe) ** 2
        var[cnt == 0] = 0.0
        cost += np.maximum(var, 0.0)
    return cost


def fit_box_lshape(points: np.ndarray, grid_deg: float = 1.0) -> BoundingBox:
    """Fit a yaw-oriented box to a cluster by L-shape heading search.

    Headings are scanned on a [0, 90) degree grid; each candidate scores
    the closeness of points to the implied box edges (variance criterion)
    and the best heading takes the minimal enclosing rectangle. The longer
    footprint side defines `l` and the returned yaw. Height spans the full
    z extent of the cluster. Velocity fields are zero.

    Raises `DegenerateInputError` for < 3 points or a collinear footprint.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise DegenerateInputError("box fitting needs at least 3 points")
    if grid_deg <= 0 or grid_deg > 45:
        raise ValueError("grid_deg must be in (0, 45]")
    xy = pts[:, :2]
    centered = xy - xy.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1.0):
        raise DegenerateInputError("collinear footprint cannot pin a box heading")

    grid = np.deg2rad(np.arange(0.0, 90.0, grid_deg))
    cos_g, sin_g = np.cos(grid), np.sin(grid)
    u = np.outer(cos_g, xy[:, 0]) + np.outer(sin_g, xy[:, 1])
    v = np.outer(-sin_g, xy[:, 0]) + np.outer(cos_g, xy[:, 1])
    best = int(np.argmin(_edge_split_cost(u, v)))

    theta = float(grid[best])
    ub, vb = u[best], v[best]
    u_lo, u_hi = float(ub.min()), float(ub.max())
    v_lo, v_hi = float(vb.min()), float(vb.max())
    uc, vc = 0.5 * (u_lo + u_hi), 0.5 * (v_lo + v_hi)
    c, s = math.cos(theta), math.sin(theta)
    cx = uc * c - vc * s
    cy = uc * s + vc * c
    len_u, len_v = u_hi - u_lo, v_hi - v_lo
    if len_u >= len_v:
        l, w, yaw = len_u, len_v, theta
    else:
        l, w, yaw = len_v, len_u, theta + 0.5 * math.pi

    z_lo = float(pts[:, 2].min())
    z_hi = float(pts[:, 2].max())
    h = max(z_hi - z_lo, 0.01)
    cz = 0.5 * (z_lo + z_hi)
    return BoundingBox(cx=cx, cy=cy, cz=cz, w=max(w, 1e-6), l=max(l, 1e-6),
                       h=h, theta=wrap_angle(yaw))
