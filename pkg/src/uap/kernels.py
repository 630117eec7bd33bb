"""Compiled inner loops for risk and collision checks over candidate batches.

Shapes: C candidates, G agent hypotheses (agent x member x mode), T steps.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .bvn import _W6, _W12, _W20, _X6, _X12, _X20, _bvnu

PRUNE_SIGMAS = 8.0
# cells whose marginal mass bound falls below this are skipped
MASS_EPS = 1e-7
# boxes narrower than this many conditional standard deviations use a 3x3 Gauss-Legendre rule
GL_HALF_WIDTH = 0.5
_GL_X = math.sqrt(0.6)
_GL_W = (5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0)


@numba.njit(cache=True)
def _box_mass(x0, x1, y0, y1, mx, my, sx, sy, r, x6, w6, x12, w12, x20, w20):
    a0 = (x0 - mx) / sx
    a1 = (x1 - mx) / sx
    b0 = (y0 - my) / sy
    b1 = (y1 - my) / sy
    if a0 > PRUNE_SIGMAS or a1 < -PRUNE_SIGMAS or b0 > PRUNE_SIGMAS or b1 < -PRUNE_SIGMAS:
        return 0.0
    q = 1.0 - r * r
    lim = GL_HALF_WIDTH * math.sqrt(q)
    ha = 0.5 * (a1 - a0)
    hb = 0.5 * (b1 - b0)
    if ha <= lim and hb <= lim:
        # density is smooth on the box scale: tensor Gauss-Legendre (abs. error < 2e-6)
        ac = 0.5 * (a0 + a1)
        bc = 0.5 * (b0 + b1)
        tot = 0.0
        for i in range(3):
            a = ac + ha * (i - 1) * _GL_X
            wi = _GL_W[i]
            for j in range(3):
                b = bc + hb * (j - 1) * _GL_X
                tot += wi * _GL_W[j] * math.exp(-(a * a - 2.0 * r * a * b + b * b) / (2.0 * q))
        return ha * hb * tot / (2.0 * math.pi * math.sqrt(q))
    a0 = max(a0, -40.0)
    b0 = max(b0, -40.0)
    a1 = min(a1, 40.0)
    b1 = min(b1, 40.0)
    p = (
        _bvnu(a0, b0, r, x6, w6, x12, w12, x20, w20)
        - _bvnu(a1, b0, r, x6, w6, x12, w12, x20, w20)
        - _bvnu(a0, b1, r, x6, w6, x12, w12, x20, w20)
        + _bvnu(a1, b1, r, x6, w6, x12, w12, x20, w20)
    )
    return max(p, 0.0)


@numba.njit(cache=True)
def _phi_range(lo, hi):
    return 0.5 * (math.erf(hi / math.sqrt(2.0)) - math.erf(lo / math.sqrt(2.0)))


@numba.njit(cache=True)
def _pc_kernel(ex, ey, eh, evx, evy, e_len, e_wid,
               mx, my, sx, sy, rho, ah, avx, avy, a_len, mass_ratio, v_ref,
               P, H, x6, w6, x12, w12, x20, w20):
    C, T = ex.shape
    G = mx.shape[0]
    third = e_len / 3.0
    hx = e_len / 6.0
    hy = e_wid / 2.0
    r_ego = third + math.sqrt(hx * hx + hy * hy)
    for c in range(C):
        for g in range(G):
            half_a = 0.5 * a_len[g]
            for t in range(T):
                P[c, g, t] = 0.0
                dvx = evx[c, t] - avx[g, t]
                dvy = evy[c, t] - avy[g, t]
                h = mass_ratio[g] * (dvx * dvx + dvy * dvy) / (v_ref * v_ref)
                H[c, g, t] = min(1.0, h)
                sxx = sx[g, t]
                syy = sy[g, t]
                dx = ex[c, t] - mx[g, t]
                dy = ey[c, t] - my[g, t]
                reach = r_ego + half_a + PRUNE_SIGMAS * max(sxx, syy)
                if dx * dx + dy * dy > reach * reach:
                    continue
                ce = math.cos(eh[c, t])
                se = math.sin(eh[c, t])
                ca = math.cos(ah[g, t])
                sa = math.sin(ah[g, t])
                # marginal upper bound on the mass over the ego bounding box
                bx = third * abs(ce) + hx
                by = third * abs(se) + hy
                bound = 0.0
                for j in range(3):
                    gx = mx[g, t] + (j - 1) * half_a * ca
                    gy = my[g, t] + (j - 1) * half_a * sa
                    px = _phi_range((ex[c, t] - bx - gx) / sxx, (ex[c, t] + bx - gx) / sxx)
                    py = _phi_range((ey[c, t] - by - gy) / syy, (ey[c, t] + by - gy) / syy)
                    bound += min(px, py)
                if bound < MASS_EPS:
                    continue
                total = 0.0
                for j in range(3):
                    gx = mx[g, t] + (j - 1) * half_a * ca
                    gy = my[g, t] + (j - 1) * half_a * sa
                    for k in range(3):
                        rx = ex[c, t] + (k - 1) * third * ce
                        ry = ey[c, t] + (k - 1) * third * se
                        total += _box_mass(rx - hx, rx + hx, ry - hy, ry + hy, gx, gy, sxx, syy, rho[g, t],
                                           x6, w6, x12, w12, x20, w20)
                P[c, g, t] = min(1.0, max(0.0, total / 3.0))


def collision_prob_tensor(ego, agents, v_ref: float):
    """P_c and harm for every (candidate, hypothesis, step).

    ``ego``: dict with x, y, heading, vx, vy arrays (C, T) and floats length, width.
    ``agents``: dict with mx, my, sx, sy, rho, heading, vx, vy arrays (G, T) and
    length, mass_ratio arrays (G,).
    """
    C, T = ego["x"].shape
    G = agents["mx"].shape[0]
    P = np.zeros((C, G, T))
    H = np.zeros((C, G, T))
    if C == 0 or G == 0:
        return P, H
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    _pc_kernel(
        f(ego["x"]), f(ego["y"]), f(ego["heading"]), f(ego["vx"]), f(ego["vy"]),
        float(ego["length"]), float(ego["width"]),
        f(agents["mx"]), f(agents["my"]), f(agents["sx"]), f(agents["sy"]), f(agents["rho"]),
        f(agents["heading"]), f(agents["vx"]), f(agents["vy"]), f(agents["length"]), f(agents["mass_ratio"]),
        float(v_ref), P, H, _X6, _W6, _X12, _W12, _X20, _W20,
    )
    return P, H


@numba.njit(cache=True)
def _sat(ax, ay, ah, al, aw, bx, by, bh, bl, bw):
    # separating-axis test for two oriented rectangles; touching counts as overlap
    eps = 1e-12
    dx = bx - ax
    dy = by - ay
    ca, sa = math.cos(ah), math.sin(ah)
    cb, sb = math.cos(bh), math.sin(bh)
    for i in range(4):
        if i == 0:
            ux, uy = ca, sa
        elif i == 1:
            ux, uy = -sa, ca
        elif i == 2:
            ux, uy = cb, sb
        else:
            ux, uy = -sb, cb
        ra = 0.5 * al * abs(ca * ux + sa * uy) + 0.5 * aw * abs(-sa * ux + ca * uy)
        rb = 0.5 * bl * abs(cb * ux + sb * uy) + 0.5 * bw * abs(-sb * ux + cb * uy)
        if abs(dx * ux + dy * uy) > ra + rb + eps:
            return False
    return True


@numba.njit(cache=True)
def _overlap_kernel(ex, ey, eh, e_len, e_wid, ax, ay, ah, a_len, a_wid, out):
    C, T = ex.shape
    G = ax.shape[0]
    reach_e = 0.5 * math.sqrt(e_len * e_len + e_wid * e_wid)
    for c in range(C):
        for g in range(G):
            reach = reach_e + 0.5 * math.sqrt(a_len[g] * a_len[g] + a_wid[g] * a_wid[g])
            hit = False
            for t in range(T):
                dx = ex[c, t] - ax[g, t]
                dy = ey[c, t] - ay[g, t]
                if dx * dx + dy * dy > reach * reach:
                    continue
                if _sat(ex[c, t], ey[c, t], eh[c, t], e_len, e_wid, ax[g, t], ay[g, t], ah[g, t], a_len[g], a_wid[g]):
                    hit = True
                    break
            out[c, g] = hit


def overlap_any(ego, agents) -> np.ndarray:
    """(C, G) booleans: does candidate c overlap hypothesis g at any step."""
    C = ego["x"].shape[0]
    G = agents["mx"].shape[0]
    out = np.zeros((C, G), dtype=np.bool_)
    if C == 0 or G == 0:
        return out
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    _overlap_kernel(
        f(ego["x"]), f(ego["y"]), f(ego["heading"]), float(ego["length"]), float(ego["width"]),
        f(agents["mx"]), f(agents["my"]), f(agents["heading"]), f(agents["length"]), f(agents["width"]), out,
    )
    return out
