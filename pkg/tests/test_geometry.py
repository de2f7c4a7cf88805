"""Tests for boxes, rigid transforms, BEV IoU, and L-shape fitting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsulabel.geometry import (
    BoundingBox,
    DegenerateInputError,
    PointCloud,
    RigidTransform,
    apply_transform,
    bev_iou,
    box_membership,
    box_to_transform,
    fit_box_lshape,
    points_in_box,
    wrap_angle,
)


def make_box(rng, span=5.0):
    return BoundingBox(
        cx=rng.uniform(-span, span),
        cy=rng.uniform(-span, span),
        cz=rng.uniform(-1.0, 3.0),
        w=rng.uniform(0.5, 4.0),
        l=rng.uniform(0.5, 6.0),
        h=rng.uniform(0.5, 3.0),
        theta=rng.uniform(-math.pi, math.pi),
    )


def rect_perimeter(rng, length, width, n=400, z_span=1.5):
    """Dense samples along the perimeter of an axis-aligned rectangle."""
    t = rng.uniform(0.0, 1.0, n)
    side = rng.integers(0, 4, n)
    hx, hy = 0.5 * length, 0.5 * width
    x = np.where(side == 0, -hx + length * t,
                 np.where(side == 1, hx, np.where(side == 2, -hx + length * t, -hx)))
    y = np.where(side == 0, -hy,
                 np.where(side == 1, -hy + width * t,
                          np.where(side == 2, hy, -hy + width * t)))
    return np.stack([x, y, rng.uniform(0.0, z_span, n)], axis=1)


def rotate_xy(points, angle):
    c, s = math.cos(angle), math.sin(angle)
    out = points.copy()
    out[:, 0] = c * points[:, 0] - s * points[:, 1]
    out[:, 1] = s * points[:, 0] + c * points[:, 1]
    return out


# ---------------------------------------------------------------- angles


@given(st.floats(min_value=-50.0, max_value=50.0))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    # same direction up to 2*pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-12)
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-12)


def test_wrap_angle_edges():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


# ------------------------------------------------------------ transforms


def test_transform_matrix_layout():
    theta, tx, ty, tz = 0.31, 1.5, -2.0, 0.25
    m = RigidTransform.from_yaw_translation(theta, tx, ty, tz).matrix
    c, s = math.cos(theta), math.sin(theta)
    expected = np.array([
        [c, -s, 0.0, tx],
        [s, c, 0.0, ty],
        [0.0, 0.0, 1.0, tz],
        [0.0, 0.0, 0.0, 1.0],
    ])
    np.testing.assert_allclose(m, expected, atol=0.0)


def test_transform_apply_matches_manual():
    rng = np.random.default_rng(7)
    t = RigidTransform.from_yaw_translation(0.8, 2.0, -1.0, 0.5)
    pts = rng.normal(size=(50, 3))
    manual = pts @ t.rotation.T + t.translation
    np.testing.assert_allclose(t.apply(pts), manual, atol=1e-12)


def test_box_transform_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        box = make_box(rng)
        t = box_to_transform(box)
        err = np.abs((t @ t.inverse()).matrix - np.eye(4)).max()
        assert err < 1e-9
        err = np.abs((t.inverse() @ t).matrix - np.eye(4)).max()
        assert err < 1e-9


def test_transform_compose_order():
    a = RigidTransform.from_yaw_translation(0.5, 1.0, 0.0)
    b = RigidTransform.from_yaw_translation(-0.2, 0.0, 2.0)
    pts = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose((a @ b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


def test_transform_rejects_bad_matrix():
    m = np.eye(4)
    m[3, 0] = 1.0
    with pytest.raises(ValueError):
        RigidTransform(m)
    m = np.eye(4)
    m[0, 0] = 2.0
    with pytest.raises(ValueError):
        RigidTransform(m)
    # reflection: orthonormal but det -1
    m = np.eye(4)
    m[0, 0] = -1.0
    with pytest.raises(ValueError):
        RigidTransform(m)


def test_apply_transform_function():
    t = RigidTransform.from_yaw_translation(0.0, 1.0, 2.0, 3.0)
    out = apply_transform(t, np.zeros((1, 3)))
    np.testing.assert_allclose(out, [[1.0, 2.0, 3.0]])


# ----------------------------------------------------------- membership


def membership_oracle(points, box, margin):
    """Per-point scalar reimplementation of the box test."""
    out = []
    for x, y, z in points:
        dx, dy = x - box.cx, y - box.cy
        u = math.cos(box.theta) * dx + math.sin(box.theta) * dy
        v = -math.sin(box.theta) * dx + math.cos(box.theta) * dy
        out.append(abs(u) <= box.l / 2 + margin
                   and abs(v) <= box.w / 2 + margin
                   and abs(z - box.cz) <= box.h / 2 + margin)
    return np.array(out)


def test_membership_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        box = make_box(rng)
        pts = rng.uniform(-8, 8, size=(200, 3))
        for margin in (0.0, 0.25):
            np.testing.assert_array_equal(
                box_membership(pts, box, margin), membership_oracle(pts, box, margin))


def test_boundary_point_is_inside():
    box = BoundingBox(cx=0, cy=0, cz=0, w=2, l=4, h=2, theta=0.0)
    corner = np.array([[2.0, 1.0, 1.0]])  # exactly on the box surface
    assert box_membership(corner, box)[0]
    assert points_in_box(corner, box).shape == (1, 3)


def test_membership_monotone_in_margin():
    rng = np.random.default_rng(13)
    box = make_box(rng)
    pts = rng.uniform(-8, 8, size=(500, 3))
    inner = box_membership(pts, box, 0.0)
    outer = box_membership(pts, box, 0.5)
    assert np.all(outer[inner])  # growing margin never evicts a point


# -------------------------------------------------------------- BEV IoU


def shapely_iou(a, b):
    from shapely.geometry import Polygon

    pa, pb = Polygon(a.corners_bev()), Polygon(b.corners_bev())
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0 else 0.0


def test_iou_identical_box():
    rng = np.random.default_rng(17)
    for _ in range(20):
        box = make_box(rng)
        assert bev_iou(box, box) == pytest.approx(1.0, abs=1e-12)


def test_iou_unit_squares_offset():
    a = BoundingBox(cx=0, cy=0, cz=0, w=1, l=1, h=1, theta=0)
    b = BoundingBox(cx=0.5, cy=0, cz=0, w=1, l=1, h=1, theta=0)
    assert bev_iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_iou_disjoint():
    a = BoundingBox(cx=0, cy=0, cz=0, w=1, l=1, h=1, theta=0.3)
    b = BoundingBox(cx=10, cy=0, cz=0, w=1, l=1, h=1, theta=-0.6)
    assert bev_iou(a, b) == 0.0


def test_iou_contained_box():
    outer = BoundingBox(cx=0, cy=0, cz=0, w=4, l=4, h=1, theta=0.25)
    inner = BoundingBox(cx=0, cy=0, cz=0, w=2, l=2, h=1, theta=0.25)
    assert bev_iou(outer, inner) == pytest.approx(4.0 / 16.0, abs=1e-12)


def test_iou_matches_polygon_oracle():
    rng = np.random.default_rng(19)
    for _ in range(200):
        a, b = make_box(rng, span=2.0), make_box(rng, span=2.0)
        assert bev_iou(a, b) == pytest.approx(shapely_iou(a, b), abs=1e-9)


def test_iou_symmetry_and_rigid_invariance():
    rng = np.random.default_rng(23)
    for _ in range(50):
        a, b = make_box(rng, span=2.0), make_box(rng, span=2.0)
        assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-9)
        dx, dy, dth = rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-3, 3)

        def moved(box):
            c, s = math.cos(dth), math.sin(dth)
            return BoundingBox(cx=c * box.cx - s * box.cy + dx,
                               cy=s * box.cx + c * box.cy + dy,
                               cz=box.cz, w=box.w, l=box.l, h=box.h,
                               theta=box.theta + dth)

        assert bev_iou(moved(a), moved(b)) == pytest.approx(bev_iou(a, b), abs=1e-9)


# ------------------------------------------------------- L-shape fitting


def heading_oracle(xy, grid_deg=0.1):
    """Plain-loop fine-grid search with the same edge-variance criterion."""
    best_cost, best_theta = None, None
    for deg in np.arange(0.0, 90.0, grid_deg):
        th = math.radians(deg)
        u = xy[:, 0] * math.cos(th) + xy[:, 1] * math.sin(th)
        v = -xy[:, 0] * math.sin(th) + xy[:, 1] * math.cos(th)
        du = np.minimum(u - u.min(), u.max() - u)
        dv = np.minimum(v - v.min(), v.max() - v)
        m = du < dv
        cost = 0.0
        if m.any():
            cost += float(np.var(du[m]))
        if (~m).any():
            cost += float(np.var(dv[~m]))
        if best_cost is None or cost < best_cost:
            best_cost, best_theta = cost, th
    return best_theta


def angle_mod(a, b, mod):
    d = abs(a - b) % mod
    return min(d, mod - d)


def test_lshape_axis_aligned_rectangle():
    rng = np.random.default_rng(29)
    pts = rect_perimeter(rng, 4.0, 2.0)
    fit = fit_box_lshape(pts)
    assert angle_mod(fit.theta, 0.0, math.pi) < 0.05
    assert fit.l == pytest.approx(4.0, abs=0.05)
    assert fit.w == pytest.approx(2.0, abs=0.05)
    assert fit.l >= fit.w
    assert fit.vx == 0.0 and fit.vy == 0.0


def test_lshape_rotated_rectangle_matches_fine_grid_oracle():
    rng = np.random.default_rng(31)
    pts = rotate_xy(rect_perimeter(rng, 4.0, 2.0), math.radians(30.0))
    fit = fit_box_lshape(pts, grid_deg=1.0)
    # heading recovered modulo the 90-degree side ambiguity, within the grid
    assert angle_mod(fit.theta, math.radians(30.0), math.pi / 2) < math.radians(1.01)
    oracle_theta = heading_oracle(pts[:, :2])
    assert angle_mod(fit.theta, oracle_theta, math.pi / 2) < math.radians(1.01)
    assert fit.l == pytest.approx(4.0, abs=0.1)
    assert fit.w == pytest.approx(2.0, abs=0.1)


def test_lshape_contains_footprint():
    rng = np.random.default_rng(37)
    for _ in range(20):
        n = rng.integers(10, 120)
        pts = rng.uniform(-3, 3, size=(int(n), 3))
        fit = fit_box_lshape(pts)
        bev = pts.copy()
        bev[:, 2] = fit.cz  # footprint check only
        assert box_membership(bev, fit, margin=1e-6).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=89), st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_lshape_rotation_property(deg, seed):
    rng = np.random.default_rng(seed)
    pts = rect_perimeter(rng, 4.0, 2.0, n=300)
    base = fit_box_lshape(pts)
    rot = fit_box_lshape(rotate_xy(pts, math.radians(deg)))
    assert angle_mod(rot.theta, base.theta + math.radians(deg), math.pi / 2) < math.radians(1.01)
    assert rot.l == pytest.approx(base.l, abs=0.05)
    assert rot.w == pytest.approx(base.w, abs=0.05)


def test_lshape_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        fit_box_lshape(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    line = np.stack([np.linspace(0, 5, 40), np.zeros(40), np.zeros(40)], axis=1)
    with pytest.raises(DegenerateInputError):
        fit_box_lshape(line)


def test_lshape_height_spans_z_extent():
    rng = np.random.default_rng(41)
    pts = rect_perimeter(rng, 4.0, 2.0, n=1000, z_span=2.0)
    fit = fit_box_lshape(pts)
    z = pts[:, 2]
    assert fit.h == pytest.approx(z.max() - z.min())
    assert fit.cz == pytest.approx(0.5 * (z.max() + z.min()))
    assert fit.cz - fit.h / 2 <= z.min() and z.max() <= fit.cz + fit.h / 2


# ------------------------------------------------------------ PointCloud


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud(np.array([[1.0, np.nan, 0.0]]))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 2)))
    cloud = PointCloud(np.zeros((3, 3)), timestamp=1.5)
    assert len(cloud) == 3
    assert cloud.sensor_ids.tolist() == [0, 0, 0]


def test_point_cloud_select():
    cloud = PointCloud(np.arange(12.0).reshape(4, 3), 2.0, np.array([0, 1, 0, 1]))
    sub = cloud.select(cloud.sensor_ids == 1)
    assert len(sub) == 2
    assert sub.timestamp == 2.0
    np.testing.assert_array_equal(sub.sensor_ids, [1, 1])


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(cx=0, cy=0, cz=0, w=0.0, l=1, h=1, theta=0)
    with pytest.raises(ValueError):
        BoundingBox(cx=math.inf, cy=0, cz=0, w=1, l=1, h=1, theta=0)
    box = BoundingBox(cx=0, cy=0, cz=0, w=1, l=1, h=1, theta=7.0)
    assert -math.pi < box.theta <= math.pi
