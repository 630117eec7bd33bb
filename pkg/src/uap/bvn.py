"""Bivariate normal CDF and rectangle probabilities.

Implements Genz's (2004) adaptation of the Drezner-Wesolowsky method: Gauss-
Legendre quadrature of Plackett's identity for |rho| < 0.925 and an asymptotic
expansion plus quadrature for strongly correlated cases. Absolute accuracy is
close to machine precision for all rho in [-1, 1].
"""

from __future__ import annotations

import math

import numba
import numpy as np


def _half_rule(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    keep = x > 0
    return np.ascontiguousarray(x[keep]), np.ascontiguousarray(w[keep])


_X6, _W6 = _half_rule(6)
_X12, _W12 = _half_rule(12)
_X20, _W20 = _half_rule(20)
_TWO_PI = 2.0 * math.pi


@numba.njit(cache=True)
def _phi(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@numba.njit(cache=True)
def _bvnu(dh, dk, r, x6, w6, x12, w12, x20, w20):
    """P(X > dh, Y > dk) for standard bivariate normal with correlation r."""
    if dh == np.inf or dk == np.inf:
        return 0.0
    if dh == -np.inf:
        return 1.0 if dk == -np.inf else _phi(-dk)
    if dk == -np.inf:
        return _phi(-dh)
    ar = abs(r)
    if ar < 0.3:
        x, w = x6, w6
    elif ar < 0.75:
        x, w = x12, w12
    else:
        x, w = x20, w20
    h = dh
    k = dk
    hk = h * k
    bvn = 0.0
    if ar < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r) / 2.0
        for i in range(x.shape[0]):
            sn = math.sin(asr * (1.0 - x[i]))
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
            sn = math.sin(asr * (1.0 + x[i]))
            bvn += w[i] * math.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = bvn * asr / _TWO_PI + _phi(-h) * _phi(-k)
    else:
        if r < 0:
            k = -k
            hk = -hk
        if ar < 1.0:
            as_ = (1.0 - r) * (1.0 + r)
            a = math.sqrt(as_)
            bs = (h - k) ** 2
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 16.0
            asr = -(bs / as_ + hk) / 2.0
            if asr > -100.0:
                bvn = a * math.exp(asr) * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0)
            if hk > -100.0:
                b = math.sqrt(bs)
                sp = math.sqrt(_TWO_PI) * _phi(-b / a)
                bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            a = a / 2.0
            for sgn in (-1.0, 1.0):
                for i in range(x.shape[0]):
                    xs = (a + a * sgn * x[i]) ** 2
                    rs = math.sqrt(1.0 - xs)
                    asr = -(bs / xs + hk) / 2.0
                    if asr > -100.0:
                        sp = 1.0 + c * xs * (1.0 + d * xs)
                        ep = math.exp(-hk * xs / (2.0 * (1.0 + rs) ** 2)) / rs
                        bvn += a * w[i] * math.exp(asr) * (ep - sp)
            bvn = -bvn / _TWO_PI
        if r > 0:
            bvn += _phi(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0:
                L = _phi(k) - _phi(h)
            else:
                L = _phi(-h) - _phi(-k)
            bvn = L - bvn
    return max(0.0, min(1.0, bvn))


@numba.njit(cache=True)
def _cdf_lower(h, k, r, x6, w6, x12, w12, x20, w20):
    # P(X < h, Y < k) = P(-X > -h, -Y > -k)
    return _bvnu(-h, -k, r, x6, w6, x12, w12, x20, w20)


@numba.njit(cache=True)
def _rect_kernel(x0, x1, y0, y1, r, out, x6, w6, x12, w12, x20, w20):
    for i in range(out.shape[0]):
        if x1[i] <= x0[i] or y1[i] <= y0[i]:
            out[i] = 0.0
            continue
        # P(x0<X<x1, y0<Y<y1) = P(X>x0, Y>y0) - P(X>x1, Y>y0) - P(X>x0, Y>y1) + P(X>x1, Y>y1)
        p = (
            _bvnu(x0[i], y0[i], r[i], x6, w6, x12, w12, x20, w20)
            - _bvnu(x1[i], y0[i], r[i], x6, w6, x12, w12, x20, w20)
            - _bvnu(x0[i], y1[i], r[i], x6, w6, x12, w12, x20, w20)
            + _bvnu(x1[i], y1[i], r[i], x6, w6, x12, w12, x20, w20)
        )
        out[i] = min(1.0, max(0.0, p))


@numba.njit(cache=True)
def _cdf_kernel(h, k, r, out, x6, w6, x12, w12, x20, w20):
    for i in range(out.shape[0]):
        out[i] = _cdf_lower(h[i], k[i], r[i], x6, w6, x12, w12, x20, w20)


def bvn_cdf(h, k, rho) -> np.ndarray:
    """Standard bivariate normal CDF P(X < h, Y < k) with correlation ``rho``."""
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (h, k, rho)))
    shape = h.shape
    out = np.empty(h.size)
    _cdf_kernel(h.ravel().copy(), k.ravel().copy(), rho.ravel().copy(), out, _X6, _W6, _X12, _W12, _X20, _W20)
    return out.reshape(shape) if shape else float(out[0])


def standard_rect_prob(x0, x1, y0, y1, rho) -> np.ndarray:
    """Probability of the standardised box [x0, x1] x [y0, y1] (vectorised)."""
    arrs = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x0, x1, y0, y1, rho)))
    shape = arrs[0].shape
    flat = [a.ravel().copy() for a in arrs]
    out = np.empty(flat[0].size)
    _rect_kernel(*flat, out, _X6, _W6, _X12, _W12, _X20, _W20)
    return out.reshape(shape) if shape else float(out[0])


def check_covariance(cov: np.ndarray) -> None:
    cov = np.asarray(cov, dtype=float)
    sym = np.allclose(cov, np.swapaxes(cov, -1, -2), rtol=1e-9, atol=1e-12)
    det = cov[..., 0, 0] * cov[..., 1, 1] - cov[..., 0, 1] * cov[..., 1, 0]
    if not sym or np.any(cov[..., 0, 0] <= 0) or np.any(det <= 0):
        raise ValueError("covariance must be symmetric positive definite")


def gaussian_rect_integral(mean, cov, lower, upper, check: bool = True) -> np.ndarray:
    """Mass of N(mean, cov) inside axis-aligned boxes [lower, upper] (vectorised).

    ``mean``, ``lower``, ``upper`` have a trailing axis of size 2 and ``cov`` a
    trailing (2, 2); leading dimensions broadcast.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if check:
        check_covariance(cov)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sx = np.sqrt(cov[..., 0, 0])
    sy = np.sqrt(cov[..., 1, 1])
    rho = np.clip(cov[..., 0, 1] / (sx * sy), -1.0, 1.0)
    with np.errstate(invalid="ignore"):
        x0 = (lower[..., 0] - mean[..., 0]) / sx
        x1 = (upper[..., 0] - mean[..., 0]) / sx
        y0 = (lower[..., 1] - mean[..., 1]) / sy
        y1 = (upper[..., 1] - mean[..., 1]) / sy
    return standard_rect_prob(x0, x1, y0, y1, rho)
