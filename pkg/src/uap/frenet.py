"""Reference-path (Frenet) geometry, polynomial candidates and feasibility.

The reference path is a polyline parametrised by arc length. Normals are
interpolated linearly between vertex normals, so the map (s, d) -> (x, y)

    x(s, d) = P_i + u * D_i + d * ((1 - u) n_i + u n_{i+1}),  u = (s - s_i) / L_i

is continuous across vertices and can be inverted exactly segment by segment.
Lateral offset d is positive to the left of the direction of travel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import wrap_angle
from .scenario import AgentState


class FrenetError(ValueError):
    pass


class ReferencePath:
    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise FrenetError("reference path needs >= 2 points")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0):
            raise FrenetError("reference path has repeated points")
        self.points = pts
        self.seg = seg
        self.seg_len = lengths
        self.s = np.concatenate([[0.0], np.cumsum(lengths)])
        tang = seg / lengths[:, None]
        seg_normals = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
        vn = np.empty_like(pts)
        vn[0] = seg_normals[0]
        vn[-1] = seg_normals[-1]
        if len(pts) > 2:
            avg = seg_normals[:-1] + seg_normals[1:]
            vn[1:-1] = avg / np.linalg.norm(avg, axis=1, keepdims=True)
        self.normals = vn

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def _locate(self, s: np.ndarray):
        i = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seg) - 1)
        u = (s - self.s[i]) / self.seg_len[i]
        return i, u

    def frame(self, s, d):
        """Position and first/second partial derivatives of the (s, d) map.

        Returns ``(pos, J_s, n_interp, D)`` where ``J_s = dx/ds``,
        ``n_interp = dx/dd`` and ``D = d2x/(ds dd)``; all arrays have a trailing
        axis of size 2. Outside [0, length] the end segments are extended
        linearly with a frozen normal.
        """
        s = np.asarray(s, dtype=float)
        d = np.asarray(d, dtype=float)
        i, u = self._locate(s)
        inside = (u >= 0.0) & (u <= 1.0)
        uc = np.clip(u, 0.0, 1.0)
        n0 = self.normals[i]
        n1 = self.normals[i + 1]
        e = n1 - n0
        n = n0 + uc[..., None] * e
        L = self.seg_len[i][..., None]
        D = np.where(inside[..., None], e / L, 0.0)
        pos = self.points[i] + u[..., None] * self.seg[i] + d[..., None] * n
        J_s = self.seg[i] / L + d[..., None] * D
        return pos, J_s, n, D

    def to_cartesian(self, s, sd, sdd, d, dd, ddd):
        """Vectorised Frenet -> Cartesian (x, y, v, heading, a)."""
        pos, J_s, n, D = self.frame(s, d)
        sd = np.asarray(sd, dtype=float)[..., None]
        dd = np.asarray(dd, dtype=float)[..., None]
        vel = J_s * sd + n * dd
        acc = J_s * np.asarray(sdd, dtype=float)[..., None] + n * np.asarray(ddd, dtype=float)[..., None]
        acc = acc + 2.0 * D * sd * dd
        v = np.hypot(vel[..., 0], vel[..., 1])
        moving = v > 1e-9
        heading = np.where(
            moving,
            np.arctan2(vel[..., 1], vel[..., 0]),
            np.arctan2(J_s[..., 1], J_s[..., 0]),
        )
        # tangential acceleration; at standstill project onto the path tangent
        tx = np.where(moving, vel[..., 0], J_s[..., 0])
        ty = np.where(moving, vel[..., 1], J_s[..., 1])
        a = (acc[..., 0] * tx + acc[..., 1] * ty) / np.hypot(tx, ty)
        return pos[..., 0], pos[..., 1], v, wrap_angle(heading), a

    def project_point(self, px: float, py: float) -> tuple[float, float]:
        """Invert the (s, d) map; among valid segment solutions pick the smallest |d|."""
        p = np.array([px, py], dtype=float)
        best = None
        nseg = len(self.seg)
        for i in range(nseg):
            P, Dl, L = self.points[i], self.seg[i], self.seg_len[i]
            n0, n1 = self.normals[i], self.normals[i + 1]
            e = n1 - n0
            w = p - P
            cross = lambda a, b: a[0] * b[1] - a[1] * b[0]  # noqa: E731
            A = -cross(Dl, e)
            B = cross(w, e) - cross(Dl, n0)
            C = cross(w, n0)
            roots = []
            if abs(A) < 1e-14 * max(1.0, abs(B)):
                if B != 0:
                    roots.append(-C / B)
            else:
                disc = B * B - 4 * A * C
                if disc >= 0:
                    sq = math.sqrt(disc)
                    # numerically stable pair
                    q = -0.5 * (B + math.copysign(sq, B))
                    roots.append(q / A)
                    if q != 0:
                        roots.append(C / q)
            cand = []
            for u in roots:
                if -1e-12 <= u <= 1 + 1e-12:
                    cand.append(min(max(u, 0.0), 1.0) if abs(u) < 1e-12 or abs(u - 1) < 1e-12 else u)
            # linear extension before the start / after the end
            if i == 0:
                u = cross(w, n0) / cross(Dl, n0)
                if u < 0:
                    cand.append(u)
            if i == nseg - 1:
                u = cross(w - Dl, n1) / cross(Dl, n1) + 1.0
                if u > 1:
                    cand.append(u)
            for u in cand:
                uc = min(max(u, 0.0), 1.0)
                n = n0 + uc * e
                r = w - u * Dl
                dval = float(r @ n / (n @ n))
                sval = float(self.s[i] + u * L)
                if best is None or abs(dval) < abs(best[1]) - 1e-12:
                    best = (sval, dval)
        if best is None:
            raise FrenetError(f"could not project point ({px}, {py})")
        return best


@dataclass(frozen=True)
class FrenetState:
    s: float
    s_d: float
    s_dd: float
    d: float
    d_d: float
    d_dd: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.s, self.s_d, self.s_dd, self.d, self.d_d, self.d_dd)):
            raise ValueError("non-finite Frenet state")


def project_to_frenet(path: ReferencePath, state: AgentState, corridor: float = 20.0) -> FrenetState:
    s, d = path.project_point(state.x, state.y)
    if abs(d) > corridor or s < -corridor or s > path.length + corridor:
        raise FrenetError(f"state ({state.x:.2f}, {state.y:.2f}) is outside the {corridor} m corridor")
    _, J_s, n, D = path.frame(np.array(s), np.array(d))
    J = np.column_stack([J_s, n])
    vel = state.velocity
    sd, dd = np.linalg.solve(J, vel)
    acc = state.a * np.array([math.cos(state.heading), math.sin(state.heading)]) - 2.0 * D * sd * dd
    sdd, ddd = np.linalg.solve(J, acc)
    return FrenetState(float(s), float(sd), float(sdd), float(d), float(dd), float(ddd))


def frenet_to_cartesian(path: ReferencePath, fs: FrenetState, extrapolate: bool = False) -> AgentState:
    if not extrapolate and not (0.0 <= fs.s <= path.length):
        raise FrenetError(f"s={fs.s} outside [0, {path.length}]")
    x, y, v, h, a = path.to_cartesian(fs.s, fs.s_d, fs.s_dd, fs.d, fs.d_d, fs.d_dd)
    return AgentState(float(x), float(y), float(v), float(h), float(a))


# ---------------------------------------------------------------------------
# polynomials


@dataclass(frozen=True)
class Polynomial:
    """Polynomial in t with ascending coefficients, valid on [0, duration]."""

    coefficients: tuple[float, ...]
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, t, order: int = 0):
        c = np.polynomial.polynomial.polyder(np.asarray(self.coefficients), order) if order else np.asarray(self.coefficients)
        return np.polynomial.polynomial.polyval(t, c)


def _boundary_rows(T: np.ndarray, degree: int, orders: Sequence[int]) -> np.ndarray:
    """Rows of d^k/dt^k [1, t, ..., t^degree] evaluated at T, shape (..., len(orders), degree+1)."""
    T = np.asarray(T, dtype=float)
    rows = []
    for k in orders:
        row = []
        for j in range(degree + 1):
            if j < k:
                row.append(np.zeros_like(T))
            else:
                row.append(math.perm(j, k) * T ** (j - k))
        rows.append(np.stack(row, axis=-1))
    return np.stack(rows, axis=-2)


def _solve_boundary(start: np.ndarray, end: np.ndarray, T: np.ndarray, degree: int, end_orders):
    # start: (..., 3) value/rate/accel at t=0; end: (..., len(end_orders)) at t=T
    zero = np.zeros_like(T)
    A = np.concatenate([_boundary_rows(zero, degree, (0, 1, 2)), _boundary_rows(T, degree, end_orders)], axis=-2)
    b = np.concatenate([start, end], axis=-1)
    return np.linalg.solve(A, b[..., None])[..., 0]


def _check_inputs(*vals):
    if not all(np.all(np.isfinite(np.asarray(v, dtype=float))) for v in vals):
        raise FrenetError("non-finite boundary conditions")


def fit_longitudinal_quartic(start, end, T: float) -> Polynomial:
    """Quartic matching (s, s_d, s_dd) at t=0 and (s_d, s_dd) at t=T; end position free."""
    _check_inputs(start, end, T)
    if not T > 0:
        raise FrenetError("T must be > 0")
    c = _solve_boundary(np.asarray(start, float), np.asarray(end, float), np.asarray(T, float), 4, (1, 2))
    return Polynomial(tuple(float(v) for v in c), float(T))


def fit_lateral_quintic(start, end, T: float) -> Polynomial:
    """Quintic matching (d, d_d, d_dd) at both t=0 and t=T."""
    _check_inputs(start, end, T)
    if not T > 0:
        raise FrenetError("T must be > 0")
    c = _solve_boundary(np.asarray(start, float), np.asarray(end, float), np.asarray(T, float), 5, (0, 1, 2))
    return Polynomial(tuple(float(v) for v in c), float(T))


def _horner(coef: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    for j in range(coef.shape[1] - 1, -1, -1):
        out = out * t + coef[:, j, None]
    return out


def _eval_with_hold(coef: np.ndarray, T: np.ndarray, t: np.ndarray, hold_rate: bool):
    """Evaluate polynomials (C, n) at times t, continuing after T.

    ``t`` is either shared (steps,) or per polynomial (C, steps). With
    ``hold_rate`` the first derivative is held (constant-velocity
    continuation), otherwise the value is held.
    """
    t = np.asarray(t, dtype=float)
    t2 = np.broadcast_to(t, (len(coef), t.shape[-1])) if t.ndim == 1 else t
    Tc = T[:, None]
    tt = np.minimum(t2, Tc)
    n = coef.shape[1]
    d1c = coef[:, 1:] * np.arange(1, n)
    d2c = d1c[:, 1:] * np.arange(1, n - 1)
    val = _horner(coef, tt)
    rate = _horner(d1c, tt)
    acc = _horner(d2c, tt)
    after = t2 > Tc
    if hold_rate:
        val = np.where(after, val + rate * (t2 - Tc), val)
    else:
        rate = np.where(after, 0.0, rate)
    acc = np.where(after, 0.0, acc)
    return val, rate, acc


# ---------------------------------------------------------------------------
# candidates

PRIMARY, BRAKE, ACCEL = "primary", "emergency-brake", "emergency-accel"


@dataclass(frozen=True)
class CandidateGrid:
    lateral_offsets: tuple[float, ...] = tuple(np.round(np.arange(-2.0, 2.01, 0.5), 10))
    speed_offsets: tuple[float, ...] = (-4.0, -2.0, 0.0, 2.0, 4.0)
    durations: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)

    def __post_init__(self):
        if not (self.lateral_offsets and self.speed_offsets and self.durations):
            raise FrenetError("candidate grid has an empty axis")
        if any(t <= 0 for t in self.durations):
            raise FrenetError("durations must be > 0")

    @property
    def size(self) -> int:
        return len(self.lateral_offsets) * len(self.speed_offsets) * len(self.durations)


@dataclass(frozen=True)
class DynamicLimits:
    v_max: float = 15.0
    a_max: float = 6.0
    kappa_max: float = 0.2

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0 and self.kappa_max > 0):
            raise ValueError("dynamic limits must be positive")


@dataclass(frozen=True)
class CandidateTrajectory:
    """One candidate; arrays hold samples at t = dt, 2dt, ..., t_f*dt."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    heading: np.ndarray
    a: np.ndarray
    s: np.ndarray
    s_d: np.ndarray
    s_dd: np.ndarray
    d: np.ndarray
    d_d: np.ndarray
    d_dd: np.ndarray
    kind: str = PRIMARY
    index: int = 0
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)  # (d_T, v_T, T)

    @property
    def states(self) -> list[AgentState]:
        return [
            AgentState(float(x), float(y), max(float(v), 0.0), float(h), float(a))
            for x, y, v, h, a in zip(self.x, self.y, self.v, self.heading, self.a)
        ]

    @property
    def frenet_states(self) -> list[FrenetState]:
        return [
            FrenetState(*map(float, row))
            for row in zip(self.s, self.s_d, self.s_dd, self.d, self.d_d, self.d_dd)
        ]

    def frenet_at(self, k: int) -> FrenetState:
        return FrenetState(
            float(self.s[k]), float(self.s_d[k]), float(self.s_dd[k]),
            float(self.d[k]), float(self.d_d[k]), float(self.d_dd[k]),
        )


_FIELDS = ("x", "y", "v", "heading", "a", "s", "s_d", "s_dd", "d", "d_d", "d_dd")


@dataclass(frozen=True)
class CandidateSet:
    """Immutable batch of candidates stored as (n_candidates, n_steps) arrays."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    heading: np.ndarray
    a: np.ndarray
    s: np.ndarray
    s_d: np.ndarray
    s_dd: np.ndarray
    d: np.ndarray
    d_d: np.ndarray
    d_dd: np.ndarray
    kind: tuple[str, ...]
    target: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> CandidateTrajectory:
        return CandidateTrajectory(
            self.t, *(getattr(self, f)[i] for f in _FIELDS),
            kind=self.kind[i], index=i, target=tuple(float(v) for v in self.target[i]),
        )

    def __iter__(self) -> Iterator[CandidateTrajectory]:
        return (self[i] for i in range(len(self)))

    def concat(self, other: "CandidateSet") -> "CandidateSet":
        return CandidateSet(
            self.t,
            *(np.concatenate([getattr(self, f), getattr(other, f)]) for f in _FIELDS),
            kind=self.kind + other.kind,
            target=np.concatenate([self.target, other.target]),
        )


def _times(dt: float, t_f: int) -> np.ndarray:
    return dt * np.arange(1, t_f + 1)


def _build(path: ReferencePath, t, s, sd, sdd, d, dd, ddd, kinds, target) -> CandidateSet:
    x, y, v, h, a = path.to_cartesian(s, sd, sdd, d, dd, ddd)
    return CandidateSet(t, x, y, v, h, a, s, sd, sdd, d, dd, ddd, tuple(kinds), np.asarray(target, float))


def end_speeds(v0: float, offsets: Sequence[float], v_max: float) -> np.ndarray:
    """Target speeds around v0, shifted (not clipped) to stay inside [0, v_max]."""
    vals = v0 + np.asarray(offsets, dtype=float)
    if vals.min() < 0:
        vals = vals - vals.min()
    if vals.max() > v_max:
        vals = vals - (vals.max() - v_max)
    return np.clip(vals, 0.0, v_max)


def generate_candidates(
    path: ReferencePath,
    ego: FrenetState,
    grid: CandidateGrid,
    dt: float,
    t_f: int,
    v_max: float = 15.0,
) -> CandidateSet:
    """One quartic/quintic candidate per (lateral offset, end speed, duration) cell."""
    if grid.size == 0:
        raise FrenetError("empty grid")
    t = _times(dt, t_f)
    speeds = end_speeds(ego.s_d, grid.speed_offsets, v_max)
    cells = [(d_T, v_T, T) for d_T in grid.lateral_offsets for v_T in speeds for T in grid.durations]
    cells = np.array(cells, dtype=float)
    n = len(cells)
    T = cells[:, 2]
    lon_start = np.tile([ego.s, ego.s_d, ego.s_dd], (n, 1))
    lon_end = np.column_stack([cells[:, 1], np.zeros(n)])
    lon = _solve_boundary(lon_start, lon_end, T, 4, (1, 2))
    lat_start = np.tile([ego.d, ego.d_d, ego.d_dd], (n, 1))
    lat_end = np.column_stack([cells[:, 0], np.zeros(n), np.zeros(n)])
    lat = _solve_boundary(lat_start, lat_end, T, 5, (0, 1, 2))
    s, sd, sdd = _eval_with_hold(lon, T, t, hold_rate=True)
    d, dd, ddd = _eval_with_hold(lat, T, t, hold_rate=False)
    return _build(path, t, s, sd, sdd, d, dd, ddd, [PRIMARY] * n, cells)


def emergency_lateral_targets(d0: float) -> tuple[float, ...]:
    return (d0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)


def _bang_profile(s0: float, v0, accel, v_end, t: np.ndarray):
    """Constant acceleration from v0 until v_end is reached, then constant speed.

    ``accel`` and ``v_end`` may be arrays (n,); results then have shape (n, steps).
    """
    accel = np.atleast_1d(np.asarray(accel, dtype=float))[:, None]
    v_end = np.atleast_1d(np.asarray(v_end, dtype=float))[:, None]
    v0 = np.where(accel > 0, np.minimum(v0, v_end), v0)
    t_sw = np.abs(v_end - v0) / np.abs(accel)
    before = t[None, :] <= t_sw
    s_sw = s0 + v0 * t_sw + 0.5 * accel * t_sw**2
    s = np.where(before, s0 + v0 * t + 0.5 * accel * t**2, s_sw + v_end * (t - t_sw))
    v = np.where(before, v0 + accel * t, v_end)
    a = np.where(before, accel, 0.0)
    return s, v, a


def _emergency_batch(ego, t, accel, v_end, d_T, window):
    """Bang profiles along s with lateral quintics parametrised by travelled distance."""
    v0 = max(ego.s_d, 0.0)
    s, sd, sdd = _bang_profile(ego.s, v0, accel, v_end, t)
    window = np.maximum(window, 1.0)
    n = len(window)
    slope0 = ego.d_d / v0 if v0 > 0.1 else 0.0
    start = np.tile([ego.d, slope0, 0.0], (n, 1))
    end = np.column_stack([d_T, np.zeros(n), np.zeros(n)])
    coef = _solve_boundary(start, end, window, 5, (0, 1, 2))
    d, d1, d2 = _eval_with_hold(coef, window, s - ego.s, hold_rate=False)
    return s, sd, sdd, d, d1 * sd, d2 * sd**2 + d1 * sdd


def generate_emergency(
    path: ReferencePath,
    ego: FrenetState,
    limits: DynamicLimits,
    dt: float,
    t_f: int,
    lateral_duration: float = 3.0,
) -> CandidateSet:
    """Eight maximal-braking and eight maximal-acceleration candidates.

    The longitudinal acceleration is the largest magnitude (up to ``a_max``)
    whose resulting tangential acceleration stays within ``a_max``.
    """
    t = _times(dt, t_f)
    lat = np.array(emergency_lateral_targets(ego.d), dtype=float)
    m = len(lat)
    v0 = max(ego.s_d, 0.0)
    kinds = (BRAKE,) * m + (ACCEL,) * m
    sign = np.concatenate([-np.ones(m), np.ones(m)])
    d_T = np.concatenate([lat, lat])
    # braking finishes the lateral shift where the vehicle stops
    w_acc = max(v0, 1.0) * lateral_duration
    # peak slope of a quintic lateral shift is 15/8 * |shift| / window
    slope = 1.875 * np.abs(lat - ego.d) / w_acc + abs(ego.d_d) / max(v0, 1.0)
    v_target = np.concatenate([np.zeros(m), limits.v_max / np.sqrt(1.0 + slope**2)])
    mag = np.full(2 * m, limits.a_max)
    for _ in range(4):
        window = np.where(sign < 0, v0**2 / (2 * mag), w_acc)
        prof = _emergency_batch(ego, t, sign * mag, v_target, d_T, window)
        peak = np.max(np.abs(path.to_cartesian(*prof)[4]), axis=1)
        over = peak > limits.a_max * (1 + 1e-9)
        if not over.any():
            break
        mag = np.where(over, mag * limits.a_max / np.maximum(peak, 1e-12) * (1 - 1e-9), mag)
    target = np.column_stack([d_T, v_target, np.full(2 * m, lateral_duration)])
    return _build(path, t, *prof, kinds, target)


# ---------------------------------------------------------------------------
# feasibility


def heading_curvature(heading: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference curvature d(heading)/d(arc length), arc length from speed."""
    dh = wrap_angle(np.diff(heading, axis=-1))
    ds = 0.5 * (v[..., 1:] + v[..., :-1]) * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(ds > 1e-3, dh / ds, 0.0)
    return k


def feasible_mask(c: CandidateSet | CandidateTrajectory, limits: DynamicLimits, dt: float | None = None) -> np.ndarray:
    dt = float(c.t[1] - c.t[0]) if dt is None and len(c.t) > 1 else (dt or 1.0)
    v = np.atleast_2d(c.v)
    a = np.atleast_2d(c.a)
    h = np.atleast_2d(c.heading)
    tol = 1e-9
    ok = (v <= limits.v_max + tol).all(-1) & (v >= -tol).all(-1) & (np.abs(a) <= limits.a_max + 1e-6).all(-1)
    if v.shape[-1] > 1:
        ok &= (np.abs(heading_curvature(h, v, dt)) <= limits.kappa_max + tol).all(-1)
    return ok


def dynamic_feasible(c: CandidateTrajectory, limits: DynamicLimits) -> bool:
    return bool(feasible_mask(c, limits)[0])
