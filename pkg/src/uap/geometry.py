"""Planar geometry: oriented rectangles, separating-axis overlap, segments.

All overlap tests treat shapes as closed sets, so touching counts as contact.
Most functions broadcast over leading array dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class OrientedRectangle:
    x: float
    y: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"rectangle sides must be positive, got {self.length}x{self.width}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def area(self) -> float:
        return self.length * self.width

    def corners(self) -> np.ndarray:
        """Corners in counter-clockwise order starting at front-left, shape (4, 2)."""
        return rect_corners(self.x, self.y, self.heading, self.length, self.width)

    def contains(self, px: float, py: float, tol: float = 0.0) -> bool:
        c, s = np.cos(self.heading), np.sin(self.heading)
        dx, dy = px - self.x, py - self.y
        lon = c * dx + s * dy
        lat = -s * dx + c * dy
        return bool(abs(lon) <= self.length / 2 + tol and abs(lat) <= self.width / 2 + tol)


def rect_corners(x, y, heading, length, width) -> np.ndarray:
    """Vectorised corners; returns array of shape (..., 4, 2)."""
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width))
    )
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2, width / 2
    signs = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=float)
    lon = signs[:, 0] * hl[..., None]
    lat = signs[:, 1] * hw[..., None]
    cx = x[..., None] + c[..., None] * lon - s[..., None] * lat
    cy = y[..., None] + s[..., None] * lon + c[..., None] * lat
    return np.stack([cx, cy], axis=-1)


def _project(corners: np.ndarray, axes: np.ndarray):
    # corners (..., n, 2), axes (..., m, 2) -> min/max (..., m)
    p = np.einsum("...nd,...md->...mn", corners, axes)
    return p.min(axis=-1), p.max(axis=-1)


def rects_overlap(a, b) -> np.ndarray:
    """Separating-axis test between oriented rectangles.

    ``a`` and ``b`` are tuples ``(x, y, heading, length, width)`` of broadcastable
    arrays. Returns a boolean array; contact on the boundary counts as overlap.
    """
    ca = rect_corners(*a)
    cb = rect_corners(*b)
    ha = np.asarray(a[2], dtype=float)
    hb = np.asarray(b[2], dtype=float)
    ha, hb = np.broadcast_arrays(ha, hb)
    axes = np.stack(
        [
            np.stack([np.cos(ha), np.sin(ha)], -1),
            np.stack([-np.sin(ha), np.cos(ha)], -1),
            np.stack([np.cos(hb), np.sin(hb)], -1),
            np.stack([-np.sin(hb), np.cos(hb)], -1),
        ],
        axis=-2,
    )
    ca, cb, axes = np.broadcast_arrays(ca, cb, axes)
    amin, amax = _project(ca, axes)
    bmin, bmax = _project(cb, axes)
    eps = 1e-12
    separated = (amax < bmin - eps) | (bmax < amin - eps)
    return ~separated.any(axis=-1)


def rect_segments_intersect(rect, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Closed intersection test between rectangles and line segments.

    ``rect`` is ``(x, y, heading, length, width)`` with leading shape ``R``;
    ``seg_a``/``seg_b`` are segment endpoints of shape ``(S, 2)``.
    Returns a boolean array of shape ``R + (S,)``.
    """
    x, y, h, ln, wd = (np.asarray(v, dtype=float)[..., None] for v in rect)
    c, s = np.cos(h), np.sin(h)
    # segment endpoints in each rectangle's frame
    def local(p):
        dx = p[:, 0] - x
        dy = p[:, 1] - y
        return c * dx + s * dy, -s * dx + c * dy

    ax, ay = local(seg_a)
    bx, by = local(seg_b)
    hl, hw = ln / 2, wd / 2
    eps = 1e-12
    # axis-aligned box vs segment in local frame: SAT with box axes and segment normal
    sep_x = (np.maximum(ax, bx) < -hl - eps) | (np.minimum(ax, bx) > hl + eps)
    sep_y = (np.maximum(ay, by) < -hw - eps) | (np.minimum(ay, by) > hw + eps)
    nx, ny = -(by - ay), bx - ax
    proj_seg = nx * ax + ny * ay
    radius = np.abs(nx) * hl + np.abs(ny) * hw
    sep_n = np.abs(proj_seg) > radius + eps * (1.0 + np.abs(proj_seg))
    return ~(sep_x | sep_y | sep_n)


def segments_intersect(p1, p2, q1, q2) -> bool:
    """Closed segment-segment intersection, including collinear overlap."""
    p1, p2, q1, q2 = (np.asarray(v, dtype=float) for v in (p1, p2, q1, q2))

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) - 1e-12 <= c[0] <= max(a[0], b[0]) + 1e-12
            and min(a[1], b[1]) - 1e-12 <= c[1] <= max(a[1], b[1]) + 1e-12
        )

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and on_segment(q1, q2, p1):
        return True
    if d2 == 0 and on_segment(q1, q2, p2):
        return True
    if d3 == 0 and on_segment(p1, p2, q1):
        return True
    if d4 == 0 and on_segment(p1, p2, q2):
        return True
    return False


def polyline_segments(polylines) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a list of polylines into segment start/end arrays of shape (S, 2)."""
    starts, ends = [], []
    for line in polylines:
        pts = np.asarray(line, dtype=float)
        if len(pts) < 2:
            continue
        starts.append(pts[:-1])
        ends.append(pts[1:])
    if not starts:
        return np.zeros((0, 2)), np.zeros((0, 2))
    return np.concatenate(starts), np.concatenate(ends)
